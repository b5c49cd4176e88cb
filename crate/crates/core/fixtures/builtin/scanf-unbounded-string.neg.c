#include <stdio.h>

int main(void)
{
    char word[32];
    int n;
    /* scanf("%s", word) would overflow */
    if (scanf("%d %31s%%", &n, word) != 2) {
        return 1;
    }
    printf("%s\n", "%s");
    return 0;
}
