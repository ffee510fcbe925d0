/* Minimal consumer of the hcsim C API: parse a triangle query, solve the
 * share plan for p = 64 servers with p^2 tuples per relation, and print
 * the plan. Build against libhcsim_capi.a (see tests/c_smoke.rs for the
 * exact link line). */

#include <stdio.h>
#include <stdlib.h>

#include "hcsim.h"

static void check(HcsimStatus status, const char *what) {
    if (status != HCSIM_STATUS_OK) {
        fprintf(stderr, "%s failed (%d): %s\n", what, (int)status,
                hcsim_last_error());
        exit(1);
    }
}

int main(void) {
    printf("abi %u\n", hcsim_abi_version());

    HcsimQuery *q = NULL;
    check(hcsim_query_parse("q(x,y,z) :- R(x,y), S(y,z), T(z,x)", &q),
          "parse");
    printf("vars %zu atoms %zu\n", hcsim_query_num_vars(q),
           hcsim_query_num_atoms(q));

    double sizes[] = {4096.0, 4096.0, 4096.0};
    HcsimSharePlan *plan = NULL;
    check(hcsim_share_plan_solve(q, sizes, 3, 64, &plan), "solve");
    printf("lambda %.6f load %.1f shares %llu %llu %llu\n",
           hcsim_share_plan_lambda(plan), hcsim_share_plan_load(plan),
           (unsigned long long)hcsim_share_plan_share(plan, 0),
           (unsigned long long)hcsim_share_plan_share(plan, 1),
           (unsigned long long)hcsim_share_plan_share(plan, 2));

    double eps = 0.0;
    check(hcsim_space_exponent(q, sizes, 3, 64, &eps), "space exponent");
    printf("epsilon %.6f\n", eps);

    char *rendered = NULL;
    check(hcsim_query_render(q, &rendered), "render");
    printf("query %s\n", rendered);
    hcsim_string_free(rendered);

    hcsim_share_plan_free(plan);
    hcsim_query_free(q);
    return 0;
}
