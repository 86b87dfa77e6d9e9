#include <stdio.h>
#include "brokersim.h"

int main(void) {
    double s = 0.0;
    if (bs_amdahl_speedup(0.425, 8.0, &s) != BS_STATUS_OK) return 1;
    if (s < 1.58 || s > 1.60) return 2;

    BsScenario *sc = NULL;
    if (bs_scenario_load("no-such-scenario", &sc) != BS_STATUS_INVALID_SCENARIO) return 3;
    if (bs_last_error() == NULL) return 4;

    if (bs_scenario_load("face-recognition-accel", &sc) != BS_STATUS_OK) return 5;
    bool stable = true;
    double rho = 0.0;
    if (bs_predict_stability(sc, 8.0, &stable, &rho) != BS_STATUS_OK) return 6;
    if (stable || rho < 1.0) return 7;
    bs_scenario_free(sc);

    int64_t h = 0, p = 0;
    if (bs_tco_yearly_cents(&h, &p) != BS_STATUS_OK) return 8;
    if (p >= h) return 9;
    if (bs_amdahl_speedup(0.5, 2.0, NULL) != BS_STATUS_NULL_POINTER) return 10;
    printf("ok\n");
    return 0;
}
