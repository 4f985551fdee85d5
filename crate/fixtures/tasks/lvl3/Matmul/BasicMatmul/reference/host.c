#include "kb_shim.h"

int kb_compute_tiling(const KbTensor *inputs, int n_inputs, const KbAttrs *attrs, KbTiling *tiling) {
    (void)attrs;
    if (n_inputs != 2 || inputs[0].ndim != 2 || inputs[1].ndim != 2) {
        return 1;
    }
    if (inputs[0].dims[1] != inputs[1].dims[0]) {
        return 2;
    }
    tiling->m = inputs[0].dims[0];
    tiling->k = inputs[0].dims[1];
    tiling->n = inputs[1].dims[1];
    tiling->total_length = tiling->m * tiling->n;
    tiling->tile_length = 16;
    return 0;
}
