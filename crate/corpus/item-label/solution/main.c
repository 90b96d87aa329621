#include <stdio.h>
#include <string.h>

int main(void)
{
    char line[1024];
    char label[24];

    while (fgets(line, sizeof line, stdin) != NULL) {
        line[strcspn(line, "\n")] = '\0';
        snprintf(label, sizeof label, "item-%s", line);
        puts(label);
    }
    return 0;
}
