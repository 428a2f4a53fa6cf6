#ifndef RECOUNT_H
#define RECOUNT_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum RcStatus {
  RC_STATUS_OK = 0,
  RC_STATUS_NULL_POINTER = 1,
  RC_STATUS_INVALID_ARGUMENT = 2,
  RC_STATUS_DOMAIN = 3,
  RC_STATUS_NOT_FOUND = 4,
  RC_STATUS_PARSE = 5,
  RC_STATUS_IO = 6,
  RC_STATUS_INSUFFICIENT_DATA = 7,
  RC_STATUS_INFEASIBLE = 8,
  RC_STATUS_UNDEFINED_INPUT = 9,
  RC_STATUS_INCONSISTENT = 10,
  RC_STATUS_PANIC = 11,
} RcStatus;

// Opaque rating and similarity store.
typedef struct RcStore RcStore;

typedef struct RcDecayFit {
  double n0;
  double lambda;
  // RMS residual on the count scale.
  double residual_std;
  // RMS residual of `ln N`.
  double log_residual_std;
  size_t points;
  size_t excluded;
} RcDecayFit;

// Quantities derived from a decay rate, evaluated at one time `t`.
typedef struct RcDecayQuantities {
  double mean_lifetime;
  double half_life;
  double p_change;
  double q_stable;
} RcDecayQuantities;

typedef struct RcServiceParams {
  double t_fr;
  double t_ir;
  double p_b;
  double n_cr;
  double tau_visit;
} RcServiceParams;

typedef struct RcSchedule {
  double t_cr;
  double mean_service_time;
  double load_coefficient;
} RcSchedule;

// Scheduling fields of a similarity edge. `has_recount_period` selects
// between the personal period and `average_rp`.
typedef struct RcEdgeTiming {
  bool has_recount_period;
  double recount_period;
  double average_rp;
  int64_t last_recount_time;
} RcEdgeTiming;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length without the NUL, or 0
// when the last call succeeded.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t rc_last_error_message(char *buf, size_t len);

// A new empty store. Never null.
struct RcStore *rc_store_new(void);

// # Safety
// `store` must be null or a handle from this library not yet freed.
void rc_store_free(struct RcStore *store);

// # Safety
// `file` must be a NUL-terminated string; `out_store` must be writable.
enum RcStatus rc_store_load(const char *file, struct RcStore **out_store);

// # Safety
// `store` must be a live handle; `file` a NUL-terminated string.
enum RcStatus rc_store_save(const struct RcStore *store, const char *file);

// Inserts a rating, replacing the user's earlier rating of the same item.
//
// # Safety
// `store` must be a live handle.
enum RcStatus rc_store_upsert_rating(struct RcStore *store,
                                     uint64_t user,
                                     uint64_t item,
                                     double rating,
                                     int64_t timestamp);

// # Safety
// `store` must be a live handle; the out-pointers must be writable.
enum RcStatus rc_store_counts(const struct RcStore *store,
                              size_t *out_users,
                              size_t *out_ratings,
                              size_t *out_edges);

// Pearson coefficient of two users over their latest co-ratings as of `asof`.
// `out_defined` is false when fewer than `min_overlap` items are shared or a
// user's co-ratings have no variance.
//
// # Safety
// `store` must be a live handle; the out-pointers must be writable.
enum RcStatus rc_store_similarity(const struct RcStore *store,
                                  uint64_t user_a,
                                  uint64_t user_b,
                                  int64_t asof,
                                  size_t min_overlap,
                                  double *out_k,
                                  bool *out_defined);

// Stores or replaces the edge between two users. A NaN `recount_period`
// means no personal period.
//
// # Safety
// `store` must be a live handle.
enum RcStatus rc_store_put_edge(struct RcStore *store,
                                uint64_t user_a,
                                uint64_t user_b,
                                double coefficient,
                                double recount_period,
                                double average_rp,
                                int64_t last_recount_time);

// Whether the stored edge between two users is due for recomputation at `now`.
//
// # Safety
// `store` must be a live handle; `out_due` must be writable.
enum RcStatus rc_store_edge_due(const struct RcStore *store,
                                uint64_t user_a,
                                uint64_t user_b,
                                int64_t now,
                                bool *out_due);

// Pearson coefficient of two equally long rating vectors.
//
// # Safety
// `r1` and `r2` must each point to `len` readable doubles; the out-pointers
// must be writable.
enum RcStatus rc_pearson(const double *r1,
                         const double *r2,
                         size_t len,
                         size_t min_overlap,
                         double *out_k,
                         bool *out_defined);

// Least-squares fit of `N(t) = N0·exp(−λt)` on `ln N`. Points with `N <= 0`
// are skipped.
//
// # Safety
// `t` and `n` must each point to `len` readable doubles; `out_fit` must be
// writable.
enum RcStatus rc_fit_exponential(const double *t,
                                 const double *n,
                                 size_t len,
                                 struct RcDecayFit *out_fit);

// # Safety
// `out_q` must be writable.
enum RcStatus rc_decay_quantities(double lambda, double t, struct RcDecayQuantities *out_q);

// Time during which a coefficient stays unchanged with probability `p_st`.
//
// # Safety
// `out_t` must be writable.
enum RcStatus rc_stable_horizon(double lambda, double p_st, double *out_t);

// # Safety
// `out_t` must be writable.
enum RcStatus rc_change_horizon(double lambda, double q_st, double *out_t);

// Largest time at which the recommendation error stays within `n_cr`.
//
// # Safety
// `out_t_cr` must be writable.
enum RcStatus rc_critical_time(double lambda, double p_b, double n_cr, double *out_t_cr);

// # Safety
// `params` must be readable and `out_schedule` writable.
enum RcStatus rc_optimize(const struct RcServiceParams *params,
                          double lambda,
                          struct RcSchedule *out_schedule);

// # Safety
// `edge` must be readable and `out_due` writable.
enum RcStatus rc_needs_recompute(const struct RcEdgeTiming *edge, int64_t now, bool *out_due);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RECOUNT_H */
