#include <math.h>
#include <stdio.h>
#include <stdlib.h>

#include "fracsym.h"

int main(void) {
    FsDomain *d = NULL;
    FsOperator *a = NULL;
    if (fs_domain_from_shape("interval:0,3.141592653589793", 64, &d) != FS_STATUS_OK) {
        return 1;
    }
    if (fs_operator_assemble(d, 1.0, FS_OPERATOR_KIND_SPECTRAL, &a) != FS_STATUS_OK) {
        return 2;
    }
    double lambda[2];
    if (fs_eigensolve(a, 2, lambda, NULL) != FS_STATUS_OK) {
        return 3;
    }
    if (fabs(lambda[0] - 1.0) > 1e-3 || fabs(lambda[1] - 2.0) > 1e-2) {
        return 4;
    }
    FsOperator *bad = NULL;
    if (fs_operator_assemble(d, 2.5, FS_OPERATOR_KIND_RESTRICTED, &bad) != FS_STATUS_INVALID_INPUT) {
        return 5;
    }
    char msg[256];
    fs_last_error_message(msg, sizeof msg);
    printf("%s\n", msg);
    fs_operator_free(a);
    fs_domain_free(d);
    return 0;
}
