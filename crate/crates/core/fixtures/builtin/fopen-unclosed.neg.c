#include <stdio.h>

int count_lines(const char *path)
{
    int lines = 0;
    int c;
    FILE *in = fopen(path, "r");
    if (!in) {
        return -1;
    }
    while ((c = fgetc(in)) != EOF) {
        if (c == '\n') {
            lines++;
        }
    }
    fclose(in);
    return lines;
}
