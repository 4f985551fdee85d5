#include "kb_shim.h"

int run_kernel(const KbTensor *inputs, int n_inputs, KbTensor *outputs, int n_outputs,
               const KbAttrs *attrs, const KbTiling *tiling) {
    if (n_inputs != 1 || n_outputs != 2) {
        return 1;
    }
    const float *x = inputs[0].data;
    float *vals = outputs[0].data;
    int64_t *idx = outputs[1].data;
    int64_t cols = tiling->tile_length;
    int64_t k = (int64_t)kb_attr(attrs, "k", 1.0);
    if (k < 1 || k > cols) {
        return 2;
    }
    int64_t rows = tiling->total_length / cols;
    for (int64_t r = 0; r < rows; r++) {
        const float *row = x + r * cols;
        for (int64_t s = 0; s < k; s++) {
            int64_t best = -1;
            for (int64_t c = 0; c < cols; c++) {
                int taken = 0;
                for (int64_t q = 0; q < s; q++) {
                    if (idx[r * k + q] == c) {
                        taken = 1;
                        break;
                    }
                }
                if (!taken && (best < 0 || row[c] > row[best])) {
                    best = c;
                }
            }
            idx[r * k + s] = best;
            vals[r * k + s] = row[best];
        }
    }
    return 0;
}
