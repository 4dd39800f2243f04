#ifndef SHADOW_PRICE_H
#define SHADOW_PRICE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every call.
typedef enum SpStatus {
  SP_STATUS_OK = 0,
  SP_STATUS_NULL_POINTER = 1,
  SP_STATUS_INVALID_PARAMS = 2,
  SP_STATUS_SOLVER_FAILED = 3,
  SP_STATUS_OUTSIDE_NO_TRADE = 4,
  SP_STATUS_INVALID_STATE = 5,
  SP_STATUS_PANIC = 6,
} SpStatus;

// Solved model together with the anchor fixing the shadow-market scale.
typedef struct SpModel SpModel;

// Scalars of a solved model.
typedef struct SpSummary {
  // Sell boundary ratio `x / y`.
  double u1;
  // Buy boundary ratio `x / y`.
  double u2;
  // Smallest stock fraction of wealth in the no-trade region.
  double theta1;
  // Largest stock fraction of wealth in the no-trade region.
  double theta2;
  double merton_fraction;
  // Scale constant of the reduced value function `h`.
  double k;
} SpSummary;

// Value function and its partial derivatives at `(x, y)`.
typedef struct SpDerivs {
  double v;
  double vx;
  double vy;
  double vxx;
  double vxy;
  double vyy;
} SpDerivs;

// Shadow-market quantities at one state.
typedef struct SpShadowState {
  double shadow_price;
  double consumption;
  double density;
  double m;
  double xi;
  double nu;
  double beta;
  double log_ratio;
  double phi0;
  double phi1;
} SpShadowState;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Solves the model for the given market and writes a new handle to `out`.
//
// # Safety
// `out` must be a valid pointer to writable storage for one pointer.
enum SpStatus sp_model_new(double mu,
                           double sigma,
                           double delta,
                           double gamma,
                           double lambda_ask,
                           double lambda_bid,
                           struct SpModel **out);

// Releases a model. Null is accepted and ignored.
//
// # Safety
// `model` must be null or a pointer returned by [`sp_model_new`] that has not been freed.
void sp_model_free(struct SpModel *model);

// Moves the anchor `(x0, y0)` that fixes the shadow-market scale.
//
// # Safety
// `model` must be a live handle.
enum SpStatus sp_model_set_anchor(struct SpModel *model, double x0, double y0);

// # Safety
// `model` must be a live handle and `out` valid for writes.
enum SpStatus sp_model_summary(const struct SpModel *model, struct SpSummary *out);

// # Safety
// `model` must be a live handle and `out` valid for writes.
enum SpStatus sp_model_eval_v(const struct SpModel *model,
                              double x,
                              double y,
                              struct SpDerivs *out);

// Shadow-market state at time `t`, bond position `x`, stock value `y` and mid price `price`.
//
// # Safety
// `model` must be a live handle and `out` valid for writes.
enum SpStatus sp_model_shadow_state(const struct SpModel *model,
                                    double t,
                                    double x,
                                    double y,
                                    double price,
                                    struct SpShadowState *out);

// Relative residual of the reduced HJB equation at ratio `u`.
//
// # Safety
// `model` must be a live handle and `out` valid for writes.
enum SpStatus sp_model_hjb_residual(const struct SpModel *model, double u, double *out);

// Static description of a status code.
const char *sp_status_message(enum SpStatus status);

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *sp_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SHADOW_PRICE_H */
