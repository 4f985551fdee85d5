#include "kb_shim.h"

int run_kernel(const KbTensor *inputs, int n_inputs, KbTensor *outputs, int n_outputs,
               const KbAttrs *attrs, const KbTiling *tiling) {
    (void)attrs;
    if (n_inputs != 2 || n_outputs != 1) {
        return 1;
    }
    const int32_t *x0 = inputs[0].data, *x1 = inputs[1].data;
    int32_t *y = outputs[0].data;
    int64_t total = tiling->total_length;
    int64_t tile = tiling->tile_length > 0 ? tiling->tile_length : total;
    for (int64_t start = 0; start < total; start += tile) {
        int64_t end = start + tile < total ? start + tile : total;
        for (int64_t i = start; i < end; i++) {
            y[i] = x0[i] == x1[i] ? 1 : 0;
        }
    }
    return 0;
}
