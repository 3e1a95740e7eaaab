#include <stdio.h>
#include <string.h>

#include "rokdeepc.h"

#define CHECK(call)                                                   \
    do {                                                              \
        RkStatus s_ = (call);                                         \
        if (s_ != RK_STATUS_OK) {                                     \
            char msg[256];                                            \
            rk_last_error(msg, sizeof msg);                           \
            fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_, msg);   \
            return 1;                                                 \
        }                                                             \
    } while (0)

int main(void) {
    RkConfig *cfg = NULL;
    RkTrajectory *clean = NULL, *measured = NULL;
    RkPredictor *pred = NULL;
    CHECK(rk_config_example1(&cfg));
    CHECK(rk_collect(cfg, 1, 0.0, &clean, &measured));
    CHECK(rk_predictor_fit_kernel(clean, 1, 5, RK_KERNEL_KIND_GAUSSIAN, 0.4, 0.0, 0.01, &pred));

    double u_ini[1] = {0.0}, y_ini[1] = {0.0};
    double u[5] = {0.01, 0.01, 0.01, 0.01, 0.01};
    double y[5];
    CHECK(rk_predictor_predict(pred, u_ini, 1, y_ini, 1, u, 5, y, 5));

    if (rk_predictor_predict(pred, u_ini, 1, y_ini, 1, u, 5, y, 2) != RK_STATUS_BUFFER_TOO_SMALL) {
        return 2;
    }
    for (int i = 0; i < 5; i++) {
        printf("%.17g\n", y[i]);
    }
    rk_predictor_free(pred);
    rk_trajectory_free(clean);
    rk_trajectory_free(measured);
    rk_config_free(cfg);
    return 0;
}
