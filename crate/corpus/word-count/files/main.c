#include <stdio.h>

int main(void)
{
    char word[32];
    int count = 0;

    while (scanf("%s", word) == 1)
        count++;
    printf("%d\n", count);
    return 0;
}
