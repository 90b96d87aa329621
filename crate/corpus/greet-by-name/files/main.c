#include <stdio.h>

char *gets(char *s);

int main(void)
{
    char name[32];

    if (gets(name) == NULL)
        return 1;
    printf("Hello, %s!\n", name);
    return 0;
}
