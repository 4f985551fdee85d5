/* Harness driver linked with every candidate.
 *
 *   artifact run   <input> <output>
 *   artifact bench <input> <warmup> <runs>
 *
 * Input file ("KBIN"): u32 n_in, n_in tensors, u32 n_out, n_out specs,
 * u32 n_attrs, attrs. A tensor is u32 dtype, u32 ndim, i64 dims[ndim]
 * followed by its payload; a spec omits the payload; an attr is u32 key
 * length, key bytes, f64 value. Output file ("KBOUT"): u32 n_out, then
 * n_out tensors. All integers are little-endian.
 */
#define _POSIX_C_SOURCE 199309L
#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <time.h>

#include "kb_shim.h"

#define KB_MAX_TENSORS 16

double kb_attr(const KbAttrs *attrs, const char *key, double fallback) {
    if (attrs == NULL) return fallback;
    for (int i = 0; i < attrs->count; i++) {
        if (strcmp(attrs->keys[i], key) == 0) return attrs->values[i];
    }
    return fallback;
}

static size_t elem_size(KbDType d) { return d == KB_I64 ? 8 : 4; }

static int read_exact(FILE *f, void *p, size_t n) { return fread(p, 1, n, f) == n; }

static int read_spec(FILE *f, KbTensor *t) {
    uint32_t dtype, ndim;
    if (!read_exact(f, &dtype, 4) || !read_exact(f, &ndim, 4)) return 0;
    if (dtype > 3 || ndim == 0 || ndim > KB_MAX_DIMS) return 0;
    t->dtype = (KbDType)dtype;
    t->ndim = (int32_t)ndim;
    t->numel = 1;
    for (uint32_t i = 0; i < ndim; i++) {
        if (!read_exact(f, &t->dims[i], 8) || t->dims[i] <= 0) return 0;
        t->numel *= t->dims[i];
    }
    t->data = calloc((size_t)t->numel, elem_size(t->dtype));
    return t->data != NULL;
}

static int load(const char *path, KbTensor *in, int *n_in, KbTensor *out, int *n_out,
                KbAttrs *attrs) {
    FILE *f = fopen(path, "rb");
    if (!f) return 0;
    char magic[4];
    uint32_t n;
    int ok = read_exact(f, magic, 4) && memcmp(magic, "KBIN", 4) == 0 && read_exact(f, &n, 4) &&
             n <= KB_MAX_TENSORS;
    *n_in = ok ? (int)n : 0;
    for (int i = 0; ok && i < *n_in; i++) {
        ok = read_spec(f, &in[i]) &&
             read_exact(f, in[i].data, (size_t)in[i].numel * elem_size(in[i].dtype));
    }
    ok = ok && read_exact(f, &n, 4) && n <= KB_MAX_TENSORS;
    *n_out = ok ? (int)n : 0;
    for (int i = 0; ok && i < *n_out; i++) ok = read_spec(f, &out[i]);
    ok = ok && read_exact(f, &n, 4) && n <= KB_MAX_ATTRS;
    attrs->count = ok ? (int32_t)n : 0;
    for (int i = 0; ok && i < attrs->count; i++) {
        uint32_t len;
        ok = read_exact(f, &len, 4) && len < KB_MAX_KEY && read_exact(f, attrs->keys[i], len) &&
             read_exact(f, &attrs->values[i], 8);
        if (ok) attrs->keys[i][len] = '\0';
    }
    fclose(f);
    return ok;
}

static int store(const char *path, const KbTensor *out, int n_out) {
    FILE *f = fopen(path, "wb");
    if (!f) return 0;
    uint32_t n = (uint32_t)n_out;
    int ok = fwrite("KBOUT", 1, 5, f) == 5 && fwrite(&n, 4, 1, f) == 1;
    for (int i = 0; ok && i < n_out; i++) {
        uint32_t dtype = (uint32_t)out[i].dtype, ndim = (uint32_t)out[i].ndim;
        ok = fwrite(&dtype, 4, 1, f) == 1 && fwrite(&ndim, 4, 1, f) == 1 &&
             fwrite(out[i].dims, 8, ndim, f) == ndim &&
             fwrite(out[i].data, elem_size(out[i].dtype), (size_t)out[i].numel, f) ==
                 (size_t)out[i].numel;
    }
    return fclose(f) == 0 && ok;
}

static double now_ms(void) {
    struct timespec ts;
    clock_gettime(CLOCK_MONOTONIC, &ts);
    return (double)ts.tv_sec * 1e3 + (double)ts.tv_nsec / 1e6;
}

int main(int argc, char **argv) {
    static KbTensor in[KB_MAX_TENSORS], out[KB_MAX_TENSORS];
    static KbAttrs attrs;
    KbTiling tiling;
    int n_in, n_out;

    int bench = argc == 5 && strcmp(argv[1], "bench") == 0;
    if (!bench && !(argc == 4 && strcmp(argv[1], "run") == 0)) {
        fprintf(stderr, "usage: %s run <in> <out> | bench <in> <warmup> <runs>\n", argv[0]);
        return 2;
    }
    if (!load(argv[2], in, &n_in, out, &n_out, &attrs)) {
        fprintf(stderr, "kb_driver: malformed input file %s\n", argv[2]);
        return 2;
    }
    memset(&tiling, 0, sizeof tiling);
    int rc = kb_compute_tiling(in, n_in, &attrs, &tiling);
    if (rc != 0) {
        fprintf(stderr, "kb_driver: kb_compute_tiling returned %d\n", rc);
        return 4;
    }

    if (!bench) {
        rc = run_kernel(in, n_in, out, n_out, &attrs, &tiling);
        if (rc != 0) {
            fprintf(stderr, "kb_driver: run_kernel returned %d\n", rc);
            return 3;
        }
        if (!store(argv[3], out, n_out)) {
            fprintf(stderr, "kb_driver: cannot write %s\n", argv[3]);
            return 2;
        }
        return 0;
    }

    long warmup = strtol(argv[3], NULL, 10), runs = strtol(argv[4], NULL, 10);
    for (long i = 0; i < warmup; i++) {
        if ((rc = run_kernel(in, n_in, out, n_out, &attrs, &tiling)) != 0) {
            fprintf(stderr, "kb_driver: run_kernel returned %d during warmup\n", rc);
            return 3;
        }
    }
    for (long i = 0; i < runs; i++) {
        double t0 = now_ms();
        rc = run_kernel(in, n_in, out, n_out, &attrs, &tiling);
        double t1 = now_ms();
        if (rc != 0) {
            fprintf(stderr, "kb_driver: run_kernel returned %d on timed run %ld\n", rc, i);
            return 3;
        }
        printf("%.9f\n", t1 - t0);
    }
    return fflush(stdout) == 0 ? 0 : 2;
}
