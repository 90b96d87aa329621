#include <ctype.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

static char *shout(const char *text)
{
    size_t len = strlen(text);
    char *copy = malloc(len + 1);

    memcpy(copy, text, len + 1);
    for (size_t i = 0; i < len; i++)
        copy[i] = (char)toupper((unsigned char)copy[i]);
    return copy;
}

int main(void)
{
    char line[512];

    while (fgets(line, sizeof line, stdin) != NULL) {
        char *loud = shout(line);

        fputs(loud, stdout);
        free(loud);
    }
    return 0;
}
