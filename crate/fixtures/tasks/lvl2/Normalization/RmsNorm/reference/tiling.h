#ifndef KB_TILING_H
#define KB_TILING_H

#include <stdint.h>

typedef struct {
    int64_t total_length;
    int64_t tile_length;
    int64_t rows;
    int64_t cols;
    double epsilon;
} KbTiling;

#endif
