#include <stdio.h>
#include <string.h>

static void print_badge(const char *input)
{
    char name[16];

    strcpy(name, input);
    printf("[ %s ]\n", name);
}

int main(void)
{
    char line[8192];

    if (fgets(line, sizeof line, stdin) == NULL)
        return 1;
    line[strcspn(line, "\n")] = '\0';
    print_badge(line);
    return 0;
}
