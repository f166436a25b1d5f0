#include <stdio.h>
#include <string.h>
#include "ddm_sim.h"

static const char *SCENARIO =
    "topology.physical = 1\n"
    "topology.threads = 2\n"
    "process.K.pid = 7\nprocess.K.core = 0\nprocess.K.stream = 0*6\n"
    "process.X.pid = 8\nprocess.X.core = 1\nprocess.X.stream = 0*6\n"
    "demand.0 = 7,1,1\n";

int main(void) {
    uint64_t word = 0;
    uint8_t action = 0;
    DdmScenario *scn = NULL;
    DdmResult *res = NULL;
    char *timeline = NULL;
    uint64_t cycles = 0;

    if (ddm_encode_demand(1234, 1, 1, &word) != DDM_STATUS_OK || word != 0x5000004D2ULL) return 1;
    if (ddm_select_action(2, 2, &action) != DDM_STATUS_OK || action != 1) return 2;
    if (ddm_scenario_parse("", &scn) != DDM_STATUS_INVALID || ddm_last_error() == NULL) return 3;
    if (ddm_scenario_parse(SCENARIO, &scn) != DDM_STATUS_OK) return 4;
    if (ddm_run(scn, &res) != DDM_STATUS_OK) return 5;
    if (ddm_result_total_cycles(res, &cycles) != DDM_STATUS_OK || cycles != 12) return 6;
    if (ddm_result_timeline(res, &timeline) != DDM_STATUS_OK) return 7;
    if (strstr(timeline, "BLOCK,1,X") == NULL) return 8;
    printf("%s", timeline);
    ddm_string_free(timeline);
    ddm_result_free(res);
    ddm_scenario_free(scn);
    return 0;
}
