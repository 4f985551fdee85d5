#include "kb_shim.h"

int kb_compute_tiling(const KbTensor *inputs, int n_inputs, const KbAttrs *attrs, KbTiling *tiling) {
    if (n_inputs != 2 || inputs[0].ndim < 1) {
        return 1;
    }
    int64_t cols = inputs[0].dims[inputs[0].ndim - 1];
    if (cols <= 0 || inputs[1].numel != cols) {
        return 2;
    }
    tiling->cols = cols;
    tiling->rows = inputs[0].numel / cols;
    tiling->total_length = inputs[0].numel;
    tiling->tile_length = cols;
    tiling->epsilon = kb_attr(attrs, "epsilon", 1e-6);
    return 0;
}
