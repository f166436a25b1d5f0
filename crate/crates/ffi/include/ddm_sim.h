#ifndef DDM_SIM_H
#define DDM_SIM_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible function.
 */
typedef enum DdmStatus {
  DDM_STATUS_OK = 0,
  DDM_STATUS_NULL_POINTER = 1,
  DDM_STATUS_INVALID_UTF8 = 2,
  /**
   * Scenario text or an argument failed validation.
   */
  DDM_STATUS_INVALID = 3,
  /**
   * The cycle budget ran out. A partial result is still returned.
   */
  DDM_STATUS_DEADLINE = 4,
  DDM_STATUS_RUNTIME = 5,
  DDM_STATUS_PANIC = 6,
} DdmStatus;

/**
 * The outcome of one simulation run.
 */
typedef struct DdmResult DdmResult;

/**
 * A parsed, validated scenario.
 */
typedef struct DdmScenario DdmScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *ddm_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ddm_version(void);

/**
 * Packs a demand record into a 64-bit register image.
 *
 * # Safety
 * `out` must be a valid pointer to writable memory.
 */
enum DdmStatus ddm_encode_demand(uint32_t pid, uint8_t sd, uint8_t pd, uint64_t *out);

/**
 * Unpacks a register image. Words with reserved bits set are rejected.
 *
 * # Safety
 * `pid`, `sd` and `pd` must be valid pointers to writable memory.
 */
enum DdmStatus ddm_decode_demand(uint64_t word, uint32_t *pid, uint8_t *sd, uint8_t *pd);

/**
 * Action code selected by the default policy: 0 (A00), 1 (A01) or 2 (A10).
 *
 * # Safety
 * `action` must be a valid pointer to writable memory.
 */
enum DdmStatus ddm_select_action(uint8_t sd, uint8_t pd, uint8_t *action);

/**
 * Parses scenario text. On success `*out` receives a new handle.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DdmStatus ddm_scenario_parse(const char *text, struct DdmScenario **out);

/**
 * # Safety
 * `scenario` must be null or a handle from `ddm_scenario_parse` not yet freed.
 */
void ddm_scenario_free(struct DdmScenario *scenario);

/**
 * Runs a scenario. On `Ok` or `Deadline`, `*out` receives a result handle.
 *
 * # Safety
 * `scenario` must be a live handle and `out` a valid pointer.
 */
enum DdmStatus ddm_run(const struct DdmScenario *scenario, struct DdmResult **out);

/**
 * # Safety
 * `result` must be null or a handle from `ddm_run` not yet freed.
 */
void ddm_result_free(struct DdmResult *result);

/**
 * # Safety
 * `result` must be a live handle and `cycles` a valid pointer.
 */
enum DdmStatus ddm_result_total_cycles(const struct DdmResult *result, uint64_t *cycles);

/**
 * Completion cycle of process `index` (scenario order), or `Runtime` if it
 * never finished.
 *
 * # Safety
 * `result` must be a live handle and `cycle` a valid pointer.
 */
enum DdmStatus ddm_result_completion(const struct DdmResult *result, size_t index, uint64_t *cycle);

/**
 * Timeline as `cycle,event,core,pid` text. Free with `ddm_string_free`.
 *
 * # Safety
 * `result` must be a live handle and `out` a valid pointer.
 */
enum DdmStatus ddm_result_timeline(const struct DdmResult *result, char **out);

/**
 * # Safety
 * `s` must be null or a string returned by this library not yet freed.
 */
void ddm_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DDM_SIM_H */
