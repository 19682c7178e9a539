#include <stdio.h>
#include <string.h>

#include "topowmamba.h"

int main(int argc, char **argv) {
    TwmModel *model = NULL;
    const char *path = argc > 1 ? argv[1] : "missing.twmb";
    TwmStatus st = twm_model_load(path, &model);
    if (st != TWM_STATUS_OK) {
        printf("load %d %s\n", (int)st, twm_last_error_message());
    } else {
        TwmModelInfo info;
        twm_model_info(model, &info);
        printf("model %u classes %ux%u\n", info.num_classes, info.height, info.width);
        twm_model_free(model);
    }

    uint8_t gt[16], pred[16];
    for (int i = 0; i < 16; i++) {
        gt[i] = i < 8 ? 1 : 0;
        pred[i] = i < 4 ? 1 : 0;
    }
    TwmClassMetrics m[1];
    st = twm_mask_metrics(pred, gt, 4, 4, 2, 1.0, 1.0, m, 1);
    if (st != TWM_STATUS_OK) {
        return 1;
    }
    printf("dice %.4f iou %.4f hd95 %.4f\n", m[0].dice, m[0].iou, m[0].hd95);
    return 0;
}
