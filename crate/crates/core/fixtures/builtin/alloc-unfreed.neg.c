#include <stdlib.h>
#include <string.h>

char *make_copy(const char *src)
{
    char *copy = malloc(strlen(src) + 1);
    if (copy != NULL) {
        strcpy(copy, src);
    }
    return copy;
}

int main(void)
{
    int *values = calloc(8, sizeof(int));
    if (values == NULL) {
        return 1;
    }
    values[0] = 1;
    free(values);
    return 0;
}
