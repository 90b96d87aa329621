#include <stdio.h>

#define COUNT 5

int main(void)
{
    int scores[COUNT];
    int total = 0;

    for (int i = 0; i < COUNT; i++)
        if (scanf("%d", &scores[i]) != 1)
            return 1;
    for (int i = 0; i < COUNT; i++)
        total += scores[i];
    printf("%d\n", total);
    return 0;
}
