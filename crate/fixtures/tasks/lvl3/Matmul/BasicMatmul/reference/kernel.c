#include "kb_shim.h"

int run_kernel(const KbTensor *inputs, int n_inputs, KbTensor *outputs, int n_outputs,
               const KbAttrs *attrs, const KbTiling *tiling) {
    (void)attrs;
    if (n_inputs != 2 || n_outputs != 1) {
        return 1;
    }
    const float *a = inputs[0].data, *b = inputs[1].data;
    float *c = outputs[0].data;
    int64_t m = tiling->m, k = tiling->k, n = tiling->n;
    for (int64_t i = 0; i < m; i++) {
        for (int64_t j = 0; j < n; j++) {
            double acc = 0.0;
            for (int64_t p = 0; p < k; p++) {
                acc += (double)a[i * k + p] * b[p * n + j];
            }
            c[i * n + j] = (float)acc;
        }
    }
    return 0;
}
