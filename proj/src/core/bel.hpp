#pragma once

#include <functional>
#include <string>
#include <vector>

#include "core/fields.hpp"
#include "core/paths.hpp"
#include "core/types.hpp"
#include "core/zvonkin.hpp"

namespace flowlab {

struct Observable {
  int dim = 0;
  double theta = 1.0;  // declared Hölder exponent
  std::function<double(const Vec&)> eval;
  std::string label;

  double operator()(const Vec& x) const { return eval(x); }

  // Preset grammar: "const:c=<v>", "coord:i=<i>", "sq", "holder:theta=<t>".
  static Observable preset(const std::string& name, int dim);
};

struct McConfig {
  double t = 1.0;
  double dt = 1e-3;
  std::int64_t n_paths = 10000;
  std::uint64_t seed = 1;
  int workers = 1;
  std::int64_t chunk = 256;
  bool control_variate = true;  // gradient runs only
};

struct McScalar {
  double mean = 0.0;
  double stderr_ = 0.0;
  std::int64_t n = 0;
};

// P_t f(x) = E f(X_t^x) by plain Euler Monte Carlo.
McScalar semigroup(const DriftField& b, const DiffusionSpec& s, const Observable& f,
                   const Vec& x, const McConfig& cfg);

// Common-noise central difference of P_t f around x in direction h.
McScalar fd_gradient(const DriftField& b, const DiffusionSpec& s, const Observable& f,
                     const Vec& x, const Vec& h, double step, const McConfig& cfg);

struct BelResult {
  double value = 0.0;  // directional derivative of P_t f at x along h
  double stderr_ = 0.0;
  double f_rms = 0.0;     // sqrt E[(f(X_t) - cv)^2]
  double j1_rms = 0.0;    // sqrt E[J1^2]
  double j1_mean = 0.0;   // should vanish: J1 is a martingale average
  double j1_stderr = 0.0;
  double cv = 0.0;  // control variate constant that was subtracted
  std::int64_t n = 0;
};

// Derivative of the semigroup without differentiating f:
// D_h P_t f(x) = E[ f(X_t) J1 ],  J1 = (1/t) sum_j <sigma^T a^{-1}(X_j) eta_j, dW_j>,
// with eta the first variation along h. The weight is evaluated at the left
// endpoint, so E[J1] = 0 holds exactly even after discretization; the control
// variate subtracts f at the deterministic (RK4) drift flow, which therefore
// changes no mean. Requires a drift Jacobian.
BelResult bel_gradient(const DriftField& b, const DiffusionSpec& s, const Observable& f,
                       const Vec& x, const Vec& h, const McConfig& cfg);

// Same identity run in the transform's coordinates, where the drift is
// Lipschitz even when the original one is only Hölder: the direction enters
// as DPsi(x) h, the observable as f o Psi^{-1}.
BelResult bel_gradient_transformed(const ZvonkinTransform& T, const DiffusionSpec& s,
                                   const Observable& f, const Vec& x, const Vec& h,
                                   const McConfig& cfg);

struct DecayConfig {
  std::vector<double> times;  // default {0.05, 0.08, 0.13, 0.2, 0.32, 0.5, 0.8}
  McConfig mc;
  double exclude_rel_stderr = 0.30;  // drop marks whose noise swamps the envelope
};

struct DecayPoint {
  double t = 0.0;
  double envelope = 0.0;  // f_rms * j1_rms, the Cauchy-Schwarz bound on the gradient
  double bel_value = 0.0;
  double bel_stderr = 0.0;
  double f_rms = 0.0;
  double j1_rms = 0.0;
  bool included = false;  // survives the stderr <= 30% |value| rule
};

struct DecayResult {
  std::vector<DecayPoint> points;
  // Regression of log|bel_value| against log t over the included marks; NaN
  // with value_used < 3 when the estimates are too noisy (e.g. when the true
  // gradient vanishes by symmetry) -- the excluded marks stay reported.
  double value_slope = 0.0;
  double value_intercept = 0.0;
  std::size_t value_used = 0;
  // Regression of the envelope, which bounds the gradient and carries the
  // same t-exponent; immune to a vanishing gradient.
  double env_slope = 0.0;
  double env_intercept = 0.0;
  std::size_t env_used = 0;
};

// Short-time blow-up exponent of the gradient: -(1-theta_f)/2 in theory. One
// simulation pass covers every mark: partial J1 sums and f statistics are
// recorded whenever the step counter crosses a mark.
DecayResult decay_probe(const DriftField& b, const DiffusionSpec& s, const Observable& f,
                        const Vec& x, const Vec& h, const DecayConfig& cfg);

DecayResult decay_probe_transformed(const ZvonkinTransform& T, const DiffusionSpec& s,
                                    const Observable& f, const Vec& x, const Vec& h,
                                    const DecayConfig& cfg);

}  // namespace flowlab
