#include <stdio.h>
#include <stdlib.h>

int main(void)
{
    size_t rows, cols;
    long long sum = 0;

    if (scanf("%zu %zu", &rows, &cols) != 2)
        return 1;
    int *grid = malloc(rows * cols * sizeof *grid);
    if (grid == NULL)
        return 1;
    for (size_t r = 0; r < rows; r++)
        for (size_t c = 0; c < cols; c++)
            grid[r * cols + c] = (int)(r + c);
    for (size_t k = 0; k < rows * cols; k++)
        sum += grid[k];
    printf("%lld\n", sum);
    free(grid);
    return 0;
}
