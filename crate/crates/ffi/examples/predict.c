/* Classify a 32x32 24-bit BMP with a saved checkpoint.
 *
 *   cc -Icrates/ffi/include crates/ffi/examples/predict.c \
 *      target/release/libtgocr_ffi.a -lpthread -ldl -lm -o predict
 *   ./predict model.ckpt digit.bmp
 */
#include <stdio.h>
#include <stdlib.h>

#include "tgocr.h"

static unsigned char *read_file(const char *path, size_t *len) {
    FILE *f = fopen(path, "rb");
    if (!f) return NULL;
    fseek(f, 0, SEEK_END);
    long n = ftell(f);
    fseek(f, 0, SEEK_SET);
    unsigned char *buf = malloc(n > 0 ? (size_t)n : 1);
    if (buf && fread(buf, 1, (size_t)n, f) != (size_t)n) {
        free(buf);
        buf = NULL;
    }
    fclose(f);
    *len = (size_t)n;
    return buf;
}

int main(int argc, char **argv) {
    if (argc != 3) {
        fprintf(stderr, "usage: %s CHECKPOINT IMAGE.bmp\n", argv[0]);
        return 2;
    }
    TgocrModel *model = NULL;
    if (tgocr_model_load(argv[1], &model) != TGOCR_STATUS_OK) {
        fprintf(stderr, "load failed: %s\n", tgocr_last_error());
        return 1;
    }
    size_t len = 0;
    unsigned char *bytes = read_file(argv[2], &len);
    if (!bytes) {
        fprintf(stderr, "cannot read %s\n", argv[2]);
        tgocr_model_free(model);
        return 1;
    }
    float probs[TGOCR_CLASSES];
    uint32_t best = 0;
    TgocrStatus st = tgocr_predict_bitmap(model, bytes, len, probs, &best);
    free(bytes);
    if (st != TGOCR_STATUS_OK) {
        fprintf(stderr, "predict failed (%d): %s\n", (int)st, tgocr_last_error());
        tgocr_model_free(model);
        return 1;
    }
    printf("predicted: %u\n", best);
    for (int i = 0; i < TGOCR_CLASSES; i++) printf("%d: %.9f\n", i, probs[i]);
    tgocr_model_free(model);
    return 0;
}
