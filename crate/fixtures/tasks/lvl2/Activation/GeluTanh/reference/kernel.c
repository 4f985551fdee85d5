#include "kb_shim.h"

int run_kernel(const KbTensor *inputs, int n_inputs, KbTensor *outputs, int n_outputs,
               const KbAttrs *attrs, const KbTiling *tiling) {
    (void)attrs;
    if (n_inputs != 1 || n_outputs != 1) {
        return 1;
    }
    const float *x0 = inputs[0].data;
    float *y = outputs[0].data;
    int64_t total = tiling->total_length;
    int64_t tile = tiling->tile_length > 0 ? tiling->tile_length : total;
    for (int64_t start = 0; start < total; start += tile) {
        int64_t end = start + tile < total ? start + tile : total;
        for (int64_t i = start; i < end; i++) {
            double x = x0[i];
            y[i] = (float)(0.5 * x * (1.0 + tanh(0.7978845608028654 * (x + 0.044715 * x * x * x))));
        }
    }
    return 0;
}
