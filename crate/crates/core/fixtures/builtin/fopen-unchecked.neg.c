#include <stdio.h>

int main(void)
{
    FILE *out = fopen("result.txt", "w");
    if (out == NULL) {
        perror("fopen");
        return 1;
    }
    fprintf(out, "done\n");
    fclose(out);
    return 0;
}
