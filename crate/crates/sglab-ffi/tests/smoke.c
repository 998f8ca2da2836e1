#include <stdio.h>
#define TWO_PI 6.283185307179586
#include <math.h>
#include "sglab.h"

int main(void) {
    double sigma = 0.0, gamma = 0.0;
    if (sglab_renorm_constants(64.0, TWO_PI, &sigma, &gamma) != SGLAB_STATUS_OK) {
        fprintf(stderr, "renorm: %s\n", sglab_last_error());
        return 1;
    }
    printf("sigma_N = %.12f gamma_N = %.12f\n", sigma, gamma);
    if (sglab_renorm_constants(-1.0, 1.0, &sigma, &gamma) != SGLAB_STATUS_INVALID_PARAMETER) {
        return 2;
    }
    SglabFlow *flow = NULL;
    if (sglab_flow_new(8.0, TWO_PI, 0.2, 0, 1, 0, &flow) != SGLAB_STATUS_OK) {
        fprintf(stderr, "flow: %s\n", sglab_last_error());
        return 3;
    }
    if (sglab_flow_step(flow, 1e-3, 10) != SGLAB_STATUS_OK) {
        return 4;
    }
    double re = 0.0, im = 0.0;
    if (sglab_flow_coefficient(flow, 0, 1, 0, &re, &im) != SGLAB_STATUS_OK || !isfinite(re)) {
        return 5;
    }
    sglab_flow_free(flow);
    return 0;
}
