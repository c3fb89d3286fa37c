#include <stdio.h>
#include <stdlib.h>

#include "unbalsens.h"

int main(int argc, char **argv) {
    if (argc != 2) {
        return 10;
    }
    UbsNetwork *net = NULL;
    if (ubs_network_load(argv[1], &net) != UBS_STATUS_OK) {
        char msg[256];
        ubs_last_error(msg, sizeof msg);
        fprintf(stderr, "%s\n", msg);
        return 11;
    }
    size_t n = ubs_network_node_count(net);
    UbsOperatingPoint *op = NULL;
    if (ubs_solve(net, NULL, 0, 0.0, &op) != UBS_STATUS_OK) {
        return 12;
    }
    UbsSensitivities *sens = NULL;
    if (ubs_sensitivities_compute(net, op, &sens) != UBS_STATUS_OK) {
        return 13;
    }
    double *m = malloc(n * n * sizeof *m);
    if (ubs_sensitivities_matrix(sens, UBS_MATRIX_MAGNITUDE_Q, m, n * n) != UBS_STATUS_OK) {
        return 14;
    }
    printf("%zu %.6e\n", n, m[n * n - 1]);
    free(m);
    ubs_sensitivities_free(sens);
    ubs_operating_point_free(op);
    ubs_network_free(net);
    return 0;
}
