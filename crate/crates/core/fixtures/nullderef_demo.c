#include <stdlib.h>
#include <string.h>

struct node {
    int value;
    struct node *next;
};

int main(void)
{
    struct node *head = malloc(sizeof(struct node));
    head->value = 1;
    head->next = NULL;
    char *name = malloc(16);
    strcpy(name, "head");
    return head->value;
}
