#include <stdlib.h>
#include <string.h>

int main(void)
{
    char *copy = (char *)malloc(16);
    if (copy == NULL) {
        return 1;
    }
    strcpy(copy, "hello");
    return 0;
}
