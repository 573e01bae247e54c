#include <math.h>
#include <stdio.h>
#include "hqp.h"

#define EXPECT(cond)                                        \
    do {                                                    \
        if (!(cond)) {                                      \
            fprintf(stderr, "line %d: %s\n", __LINE__, #cond); \
            return 1;                                       \
        }                                                   \
    } while (0)

int main(int argc, char **argv) {
    EXPECT(argc == 2);
    HqpChain *chain = NULL;
    EXPECT(hqp_chain_bundled(&chain) == HQP_STATUS_OK);
    size_t n = hqp_chain_dof(chain);
    EXPECT(n == 10);
    double q[10] = {0.0, 0.5, 0.0, 1.6, 0.0, 0.74, 0.0, 0.0, 0.0, 0.0};
    double pose[16], jac[60];
    EXPECT(hqp_chain_end_effector_pose(chain, q, n, pose, 16) == HQP_STATUS_OK);
    EXPECT(pose[15] == 1.0);
    EXPECT(hqp_chain_jacobian(chain, q, n, jac, 59) == HQP_STATUS_BUFFER_TOO_SMALL);
    EXPECT(hqp_last_error() != NULL);
    EXPECT(hqp_chain_jacobian(chain, q, n, jac, 60) == HQP_STATUS_OK);
    hqp_chain_free(chain);

    HqpSimulation *sim = NULL;
    EXPECT(hqp_simulation_from_file("/nonexistent.json", &sim) == HQP_STATUS_CONFIG);
    EXPECT(sim == NULL);
    EXPECT(hqp_simulation_from_file(argv[1], &sim) == HQP_STATUS_OK);
    EXPECT(hqp_simulation_chain_count(sim) == 1);
    size_t remaining = hqp_simulation_steps_remaining(sim);
    EXPECT(remaining > 0);
    while (hqp_simulation_steps_remaining(sim) > 0) {
        EXPECT(hqp_simulation_step(sim) == HQP_STATUS_OK);
    }
    EXPECT(hqp_simulation_step(sim) == HQP_STATUS_FINISHED);
    EXPECT(fabs(hqp_simulation_time(sim) - remaining * 0.001) < 1e-12);
    double qs[10];
    EXPECT(hqp_simulation_q(sim, 0, qs, 10) == HQP_STATUS_OK);
    hqp_simulation_free(sim);
    printf("hqp %s ok\n", hqp_version());
    return 0;
}
