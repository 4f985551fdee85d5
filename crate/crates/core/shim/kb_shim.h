/* Harness ABI seen by candidate code.
 *
 * Tensors cross the boundary as flat row-major buffers: f16 and f32 both
 * arrive as float (f16 values are pre-rounded to half precision), i32 as
 * int32_t and i64 as int64_t. Outputs are allocated by the driver.
 */
#ifndef KB_SHIM_H
#define KB_SHIM_H

#include <math.h>
#include <stddef.h>
#include <stdint.h>

#include "kb_tiling.h"

typedef enum { KB_F16 = 0, KB_F32 = 1, KB_I32 = 2, KB_I64 = 3 } KbDType;

#define KB_MAX_DIMS 8
#define KB_MAX_ATTRS 32
#define KB_MAX_KEY 64

typedef struct {
    void *data;
    KbDType dtype;
    int32_t ndim;
    int64_t dims[KB_MAX_DIMS];
    int64_t numel;
} KbTensor;

typedef struct {
    int32_t count;
    char keys[KB_MAX_ATTRS][KB_MAX_KEY];
    double values[KB_MAX_ATTRS];
} KbAttrs;

/* Value of attribute `key`, or `fallback` when absent. */
double kb_attr(const KbAttrs *attrs, const char *key, double fallback);

/* Host side: derive tiling parameters from input shapes. Returns 0 on success. */
int kb_compute_tiling(const KbTensor *inputs, int n_inputs, const KbAttrs *attrs, KbTiling *tiling);

/* Kernel side: fill `outputs`. Returns 0 on success. */
int run_kernel(const KbTensor *inputs, int n_inputs, KbTensor *outputs, int n_outputs,
               const KbAttrs *attrs, const KbTiling *tiling);

#endif
