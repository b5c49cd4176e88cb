#include <stdio.h>
#include <stdlib.h>
#include <string.h>

int read_config(const char *path)
{
    char name[16];
    int count;
    FILE *fp = fopen(path, "r");
    fscanf(fp, "%s", name);
    char *buf = malloc(64);
    strcpy(buf, name);
    if (count > 3) {
        return 1;
    }
    char small[4];
    small[4] = 'x';
    return 0;
}

int main(void)
{
    char line[8];
    gets(line);
    return read_config(line);
}
