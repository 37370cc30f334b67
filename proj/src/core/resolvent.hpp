#pragma once

#include <cstdint>
#include <memory>
#include <unordered_map>
#include <vector>

#include "core/fields.hpp"
#include "core/types.hpp"

namespace flowlab {

// Monte Carlo configuration for the probabilistic resolvent
// psi(x) = integral_0^inf e^{-lambda t} E[b(X_t^x)] dt, truncated at t_max.
struct ResolventConfig {
  double lambda = 5.0;
  double t_max = 0.0;  // 0 means: derive from the horizon rule when resolving
  double dt = 1e-3;
  std::int64_t n_paths = 10000;
  double fd_step = 1e-3;    // common-noise central-difference step for grad psi
  double trunc_tol = 1e-4;  // bound on e^{-lambda t_max} (1 + sup|x|)
  std::uint64_t seed = 1;
  int workers = 1;
  std::int64_t chunk = 256;
  // When false, the central-difference bundle is skipped: psi only, gradient
  // outputs zero. Cuts the cost to 1/(1+2 dim).
  bool compute_grad = true;

  // Smallest horizon satisfying the truncation bound, floored at max(1, 10/lambda).
  static double horizon(double lambda, double x_sup, double trunc_tol);

  // Fills t_max if unset and validates every precondition against the query
  // sup-norm. Throws config_error on violation.
  ResolventConfig resolved(double x_sup) const;
};

struct ResolventSolution {
  std::vector<Vec> points;
  Mat psi;         // dim x n_points
  Mat psi_stderr;  // dim x n_points
  std::vector<Mat> grad_psi;
  std::vector<Mat> grad_stderr;
  double grad_sup_est = 0.0;     // max over points of the operator norm of grad
  double grad_sup_stderr = 0.0;  // max Frobenius norm of the grad stderr
  double lambda = 0.0;
  ResolventConfig config;
};

ResolventSolution solve_psi(const DriftField& b, const DiffusionSpec& s,
                            const ResolventConfig& cfg, const std::vector<Vec>& points);

struct LambdaRung {
  double lambda = 0.0;
  double grad_sup_est = 0.0;
  double grad_sup_stderr = 0.0;
  double certified = 0.0;  // grad_sup_est + 2 * grad_sup_stderr
};

struct LambdaSelection {
  double lambda = 0.0;
  double gamma_cert = 0.0;
  ResolventSolution solution;
  std::vector<LambdaRung> rungs;
};

// Walks the ladder in increasing order and returns the first lambda whose
// certified gradient bound is <= gamma. Throws numeric_error listing every
// rung when the ladder is exhausted.
LambdaSelection select_lambda(const DriftField& b, const DiffusionSpec& s,
                              const std::vector<double>& ladder, double gamma,
                              const ResolventConfig& cfg_base, const std::vector<Vec>& points);

struct ResidualReport {
  double max_residual = 0.0;  // sup over points of |lambda psi - L psi - b|
  double noise = 0.0;         // pathwise stderr of the stencil estimate
  bool conclusive = false;    // noise small relative to the equation scale
  double scale = 0.0;
};

// Applies lambda psi - 1/2 Tr(a D^2 psi) - b . D psi - b through a
// common-noise second-difference stencil, pathwise, so the reported noise
// reflects the correlated estimates actually used.
ResidualReport residual_check(const DriftField& b, const DiffusionSpec& s,
                              const ResolventConfig& cfg, const std::vector<Vec>& points,
                              double stencil_step);

// Lattice-backed psi field: node values are Monte Carlo solves keyed by the
// node index (so discovery order and worker count cannot change values),
// interpolated by a translation-invariant local multiquadric stencil.
class PsiLattice {
 public:
  PsiLattice(DriftField b, DiffusionSpec s, ResolventConfig cfg, double spacing,
             double span_limit = 50.0);

  void eval(const Vec& x, Vec* psi, Mat* grad) const;

  struct ProbeErrors {
    double psi_err = 0.0;
    double grad_err = 0.0;
  };
  // Direct solves at off-lattice probes vs interpolation.
  ProbeErrors interp_error_probe(const std::vector<Vec>& probes) const;

  double spacing() const { return spacing_; }
  const ResolventConfig& config() const { return cfg_; }
  std::size_t node_count() const;

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
  double spacing_;
  ResolventConfig cfg_;
};

}  // namespace flowlab
