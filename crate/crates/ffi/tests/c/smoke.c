#include <math.h>
#include <stdio.h>
#include "ccslab.h"

#define CHECK(call)                                                                 \
    do {                                                                            \
        CcsStatus s_ = (call);                                                      \
        if (s_ != CCS_STATUS_OK) {                                                  \
            fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_, ccs_last_error_message()); \
            return 1;                                                               \
        }                                                                           \
    } while (0)

int main(void) {
    CcsSchedule *sched = NULL;
    CcsModel *model = NULL;
    CcsLab *lab = NULL;
    double x0[4] = {0.3, -1.2, 0.7, 2.0};
    double noise[4], back[4];

    CHECK(ccs_schedule_default(&sched));
    CHECK(ccs_model_standard_normal(4, &model));
    CHECK(ccs_ddim_invert(sched, model, x0, 4, ccs_schedule_steps(sched), 50, noise));
    CHECK(ccs_ddim_sample(sched, model, noise, 4, back));
    for (int i = 0; i < 4; i++) {
        if (fabs(back[i] - x0[i]) > 1e-10) {
            fprintf(stderr, "round trip error at %d\n", i);
            return 1;
        }
    }

    double samples[3 * 4], residuals[3];
    CHECK(ccs_lab_new(sched, model, 50, &lab));
    CHECK(ccs_lab_ccs_full_sample(lab, x0, 4, 0.3, 3, 7, samples, residuals));

    double c0 = 0.0;
    if (ccs_c0_for_distance(1.0, 5.0, 0.05, &c0) != CCS_STATUS_OUT_OF_RANGE) {
        return 1;
    }
    if (ccs_last_error_message() == NULL) {
        return 1;
    }

    ccs_lab_free(lab);
    ccs_model_free(model);
    ccs_schedule_free(sched);
    printf("ok %s\n", ccs_version());
    return 0;
}
