#include <stdio.h>
#include <errno.h>
#include <string.h>
int main(void){
  char reference[50], query[50]; 
  printf("\n Enter reference genome file name:  ");
  scanf("%s", reference);
  printf("\n Enter query genome file name:  ");
  scanf("%s", query);
  return 0;
}
