#include <stdio.h>

int main(void)
{
    char word[32];
    int n;
    if (scanf("%d %s", &n, word) != 2) {
        return 1;
    }
    printf("%d %s\n", n, word);
    return 0;
}
