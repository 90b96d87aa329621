#include <stdio.h>
#include <string.h>

#define WIDTH 16

int main(void)
{
    char line[256];
    char tag[WIDTH];

    if (fgets(line, sizeof line, stdin) == NULL)
        return 1;
    line[strcspn(line, "\n")] = '\0';
    strncpy(tag, line, WIDTH);
    tag[WIDTH] = '\0';
    printf("%s\n", tag);
    return 0;
}
