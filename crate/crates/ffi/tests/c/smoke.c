#include <math.h>
#include <stdio.h>
#include "sve.h"

#define CHECK(cond)                                          \
    do {                                                     \
        if (!(cond)) {                                       \
            fprintf(stderr, "check failed: %s\n", #cond);    \
            return 1;                                        \
        }                                                    \
    } while (0)

int main(int argc, char **argv) {
    double w[6] = {3.0, 0.0, 0.0, 0.0, -2.0, 0.0};
    SveSvd *h = NULL;
    CHECK(sve_svd_new(w, 2, 3, &h) == SVE_STATUS_OK);
    CHECK(sve_svd_rank(h) == 2);
    double sigma[2];
    CHECK(sve_svd_sigma(h, sigma, 2) == SVE_STATUS_OK);
    CHECK(fabs(sigma[0] - 3.0) < 1e-12 && fabs(sigma[1] - 2.0) < 1e-12);
    CHECK(sve_svd_sigma(h, sigma, 1) == SVE_STATUS_BUFFER_TOO_SMALL);
    CHECK(sve_last_error_message() != NULL);
    sve_svd_free(h);

    double probs[4] = {0.9, 0.1, 0.2, 0.8};
    size_t labels[2] = {0, 1};
    SveMetrics m;
    CHECK(sve_metrics_compute(probs, 2, 2, labels, &m) == SVE_STATUS_OK);
    CHECK(m.accuracy == 1.0);

    if (argc > 1) {
        SveModel *model = NULL;
        CHECK(sve_model_load(argv[1], &model) == SVE_STATUS_OK);
        size_t d = sve_model_input_dim(model), c = sve_model_n_classes(model);
        double x[64] = {0};
        double out[64];
        CHECK(d <= 64 && c <= 64);
        CHECK(sve_model_predict(model, x, 1, d, 0, out, c) == SVE_STATUS_OK);
        double s = 0;
        for (size_t i = 0; i < c; i++) s += out[i];
        CHECK(fabs(s - 1.0) < 1e-12);
        sve_model_free(model);
    }
    puts("ok");
    return 0;
}
