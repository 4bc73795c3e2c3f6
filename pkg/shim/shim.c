/* Host-side replay harness for an emitted model bundle.
 *
 * Compiles together with the generated model.c/model.h, replays every
 * record in a golden vector file through tb_model_run and demands
 * bit-exact output. No heap, no floating point: all buffers are static.
 *
 * Exit codes: 0 all records match, 1 any mismatch, 2 malformed golden file.
 */

#include <stdint.h>
#include <stdio.h>
#include <string.h>

#include "model.h"

#define SHIM_MAX_INPUT 65536
#define SHIM_MAX_OUTPUT 4096

static signed char g_input[SHIM_MAX_INPUT];
static signed char g_expected[SHIM_MAX_OUTPUT];
static signed char g_actual[SHIM_MAX_OUTPUT];

static int read_u32(FILE *fh, uint32_t *out)
{
    unsigned char b[4];
    if (fread(b, 1, 4, fh) != 4) {
        return -1;
    }
    *out = (uint32_t)b[0] | ((uint32_t)b[1] << 8) | ((uint32_t)b[2] << 16)
           | ((uint32_t)b[3] << 24);
    return 0;
}

int main(int argc, char **argv)
{
    FILE *fh;
    unsigned char magic[4];
    uint32_t version, count, in_len, out_len, rec, i;

    if (argc != 2) {
        fprintf(stderr, "usage: %s <golden.bin>\n", argv[0]);
        return 2;
    }
    fh = fopen(argv[1], "rb");
    if (fh == NULL) {
        fprintf(stderr, "cannot open %s\n", argv[1]);
        return 2;
    }
    if (fread(magic, 1, 4, fh) != 4 || memcmp(magic, "GLD1", 4) != 0) {
        fprintf(stderr, "bad golden magic\n");
        fclose(fh);
        return 2;
    }
    if (read_u32(fh, &version) || read_u32(fh, &count) || read_u32(fh, &in_len)
        || read_u32(fh, &out_len)) {
        fprintf(stderr, "truncated golden header\n");
        fclose(fh);
        return 2;
    }
    if (version != 1u) {
        fprintf(stderr, "unsupported golden version %u\n", (unsigned)version);
        fclose(fh);
        return 2;
    }
    if (count == 0u || in_len != (uint32_t)TB_MODEL_INPUT_LEN
        || out_len != (uint32_t)TB_MODEL_OUTPUT_LEN || in_len > SHIM_MAX_INPUT
        || out_len > SHIM_MAX_OUTPUT) {
        fprintf(stderr, "golden geometry %u/%u does not match model %d/%d\n",
                (unsigned)in_len, (unsigned)out_len,
                TB_MODEL_INPUT_LEN, TB_MODEL_OUTPUT_LEN);
        fclose(fh);
        return 2;
    }

    for (rec = 0; rec < count; ++rec) {
        uint32_t expected_class;
        int got_class;
        if (fread(g_input, 1, in_len, fh) != in_len
            || fread(g_expected, 1, out_len, fh) != out_len
            || read_u32(fh, &expected_class)) {
            fprintf(stderr, "truncated record %u\n", (unsigned)rec);
            fclose(fh);
            return 2;
        }
        got_class = tb_model_run(g_input, g_actual);
        for (i = 0; i < out_len; ++i) {
            if (g_actual[i] != g_expected[i]) {
                fprintf(stderr,
                        "mismatch: record %u byte %u expected %d actual %d\n",
                        (unsigned)rec, (unsigned)i, (int)g_expected[i],
                        (int)g_actual[i]);
                fclose(fh);
                return 1;
            }
        }
        if ((uint32_t)got_class != expected_class) {
            fprintf(stderr, "mismatch: record %u class expected %u actual %d\n",
                    (unsigned)rec, (unsigned)expected_class, got_class);
            fclose(fh);
            return 1;
        }
    }
    if (fgetc(fh) != EOF) {
        fprintf(stderr, "trailing bytes after %u records\n", (unsigned)count);
        fclose(fh);
        return 2;
    }
    fclose(fh);
    printf("golden replay: %u records, all bit-exact\n", (unsigned)count);
    return 0;
}
