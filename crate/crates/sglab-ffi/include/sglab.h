/* Generated by cbindgen from crates/sglab-ffi/src/lib.rs. Do not edit. */

#ifndef SGLAB_H
#define SGLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes shared by every entry point.
typedef enum SglabStatus {
  SGLAB_STATUS_OK = 0,
  SGLAB_STATUS_NULL_POINTER = 1,
  SGLAB_STATUS_INVALID_UTF8 = 2,
  SGLAB_STATUS_INVALID_PARAMETER = 3,
  SGLAB_STATUS_UNRESOLVED = 4,
  SGLAB_STATUS_NON_FINITE = 5,
  SGLAB_STATUS_SATURATION = 6,
  SGLAB_STATUS_TIMESTEP_TOO_LARGE = 7,
  SGLAB_STATUS_CONFIG_ERROR = 8,
  SGLAB_STATUS_IO_ERROR = 9,
  SGLAB_STATUS_NOT_FOUND = 10,
  SGLAB_STATUS_PANIC = 11,
  SGLAB_STATUS_OTHER = 12,
} SglabStatus;

// Truncated sine-Gordon flow started from Gaussian free-field data.
typedef struct SglabFlow SglabFlow;

// A finished experiment report.
typedef struct SglabReport SglabReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on this thread, or null.
// The pointer stays valid until the next call into the library on this
// thread.
const char *sglab_last_error(void);

// Library version as a static NUL-terminated string.
const char *sglab_version(void);

// Release a string returned by this library.
//
// # Safety
// `s` must be null or a pointer obtained from this library that has not
// been freed.
void sglab_string_free(char *s);

// σ_N and γ_N = exp(β²σ_N/2) on the minimal lattice for cutoff `n`.
//
// # Safety
// `sigma_n` and `gamma_n` must be valid for writes.
enum SglabStatus sglab_renorm_constants(double n, double beta2, double *sigma_n, double *gamma_n);

// Analytic E[Θ_N(z₁)Θ̄_N(z₂)] for z = (t, x₁, x₂), t ∈ [0, 1].
//
// # Safety
// `out` must be valid for writes.
enum SglabStatus sglab_chaos_two_point(double n,
                                       double beta2,
                                       double t1,
                                       double x1,
                                       double y1,
                                       double t2,
                                       double x2,
                                       double y2,
                                       double *out);

// Bundled default config of a named experiment, as JSON. Free the result
// with [`sglab_string_free`].
//
// # Safety
// `name` must be a NUL-terminated string; `out` must be valid for writes.
enum SglabStatus sglab_default_config(const char *name, char **out);

// Newline-separated names of the registered experiments, sorted. Free the
// result with [`sglab_string_free`].
//
// # Safety
// `out` must be valid for writes.
enum SglabStatus sglab_experiment_names(char **out);

// Run an experiment from a JSON config (merged over its bundled default).
// `threads` = 0 uses the global pool. No files are written.
//
// # Safety
// `config_json` must be a NUL-terminated string; `out` must be valid for
// writes.
enum SglabStatus sglab_run_experiment(const char *config_json,
                                      uint32_t threads,
                                      struct SglabReport **out);

// 1 when every pass flag of the report is true, 0 otherwise.
//
// # Safety
// `report` must be null or a live handle.
enum SglabStatus sglab_report_pass(const struct SglabReport *report, int32_t *out);

// Number of metrics in the report.
//
// # Safety
// `report` must be null or a live handle.
enum SglabStatus sglab_report_metric_count(const struct SglabReport *report, size_t *out);

// Value of the metric called `name`; `NotFound` if there is none.
//
// # Safety
// `report` must be null or a live handle, `name` a NUL-terminated string.
enum SglabStatus sglab_report_metric(const struct SglabReport *report,
                                     const char *name,
                                     double *out);

// The full report as JSON. The string is owned by the handle.
//
// # Safety
// `report` must be null or a live handle.
const char *sglab_report_json(const struct SglabReport *report);

// # Safety
// `report` must be null or a handle that has not been freed.
void sglab_report_free(struct SglabReport *report);

// Create a flow for cutoff `n`. With `hamiltonian` nonzero the damping and
// noise are switched off. Initial data and noise are determined by
// (`seed`, `sample`).
//
// # Safety
// `out` must be valid for writes.
enum SglabStatus sglab_flow_new(double n,
                                double beta2,
                                double gamma,
                                int32_t hamiltonian,
                                uint64_t seed,
                                uint64_t sample,
                                struct SglabFlow **out);

// Advance by `steps` steps of size `dt` (dt ≤ min(1/8N, 5·10⁻³)).
//
// # Safety
// `flow` must be null or a live handle.
enum SglabStatus sglab_flow_step(struct SglabFlow *flow, double dt, uint32_t steps);

// Current time of the flow.
//
// # Safety
// `flow` must be null or a live handle; `out` valid for writes.
enum SglabStatus sglab_flow_time(const struct SglabFlow *flow, double *out);

// Fourier coefficient of Π_{≤N}u (or of ∂ₜu when `velocity` is nonzero)
// at frequency (n1, n2); `NotFound` outside the truncation.
//
// # Safety
// `flow` must be null or a live handle; `re`, `im` valid for writes.
enum SglabStatus sglab_flow_coefficient(const struct SglabFlow *flow,
                                        int64_t n1,
                                        int64_t n2,
                                        int32_t velocity,
                                        double *re,
                                        double *im);

// Truncated energy ½Σ(⟨n⟩²|û|² + |v̂|²) − R_N.
//
// # Safety
// `flow` must be null or a live handle; `out` valid for writes.
enum SglabStatus sglab_flow_energy(struct SglabFlow *flow, double *out);

// # Safety
// `flow` must be null or a handle that has not been freed.
void sglab_flow_free(struct SglabFlow *flow);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SGLAB_H */
