#pragma once

#include <functional>
#include <string>
#include <vector>

#include "core/fields.hpp"
#include "core/paths.hpp"
#include "core/resolvent.hpp"
#include "core/types.hpp"

namespace flowlab {

struct TransformOptions {
  std::vector<double> ladder = {2.0, 5.0, 10.0, 20.0, 40.0};
  double gamma = 0.5;            // certification target for sup |Dpsi|
  double lattice_spacing = 0.25;
  double span_limit = 12.0;
  double inverse_tol = 1e-8;
  int max_invert_iters = 200;
  int neumann_terms = 32;
  double neumann_tail = 1e-10;
  // Points where the gradient bound is certified; empty means a default
  // probe cloud of radius 2.
  std::vector<Vec> calibration_points;
};

// Drift-removing change of coordinates Psi(x) = x + psi(x). Injective with a
// uniformly invertible Jacobian whenever gamma_cert = sup |Dpsi| < 1. psi is
// a callable so analytic stubs and lattice-backed Monte Carlo fields share
// one code path; either output pointer may be null.
class ZvonkinTransform {
 public:
  using PsiEval = std::function<void(const Vec&, Vec*, Mat*)>;

  ZvonkinTransform(int dim, double lambda, double gamma_cert, PsiEval psi_eval,
                   TransformOptions opt = {});

  void psi(const Vec& x, Vec* value, Mat* grad) const;
  Vec forward(const Vec& x) const;           // Psi(x) = x + psi(x)
  Mat forward_jacobian(const Vec& x) const;  // I + Dpsi(x)

  // Fixed point of x = y - psi(x); the contraction rate is gamma_cert, so the
  // stop rule |x_{k+1} - x_k| <= inverse_tol * (1 - gamma_cert) bounds the
  // true error by about inverse_tol.
  Vec invert(const Vec& y) const;

  // (I + Dpsi(x))^{-1} as the Neumann sum of (-Dpsi(x))^k, truncated at
  // neumann_terms or when the next term drops below neumann_tail.
  Mat inverse_jacobian_at(const Vec& x) const;

  // sup-entry of (I + Dpsi(x)) inverse_jacobian_at(x) - I; both factors see
  // the same Dpsi(x), so this is pure series truncation.
  double identity_residual(const Vec& x) const;

  int dim() const { return dim_; }
  double lambda() const { return lambda_; }
  double gamma_cert() const { return gamma_cert_; }
  const TransformOptions& options() const { return opt_; }

 private:
  int dim_;
  double lambda_;
  double gamma_cert_;
  PsiEval psi_eval_;
  TransformOptions opt_;
};

// Neumann sum of (-g)^k approximating (I + g)^{-1}; stops at `terms` or when
// the next term's max-abs entry drops below `tail`.
Mat neumann_inverse(const Mat& g, int terms, double tail);

// Coefficients of the conjugated SDE in y = Psi(x) coordinates, where the
// rough drift cancels: drift(y) = lambda psi(x) and
// sigma(y) = (I + Dpsi(x)) sigma_base(x) with x = Psi^{-1}(y). The drift
// Jacobian uses the chain rule through the Neumann inverse; the diffusion
// directional derivative falls back to central differences.
struct ConjugatedCoeffs {
  DriftField drift;
  DiffusionSpec sigma;
};

ConjugatedCoeffs conjugate(const ZvonkinTransform& T, const DiffusionSpec& s);

struct BuildResult {
  ZvonkinTransform transform;
  LambdaSelection selection;
  PsiLattice lattice;  // shared-cache handle backing the transform
};

// Certifies a lambda from the ladder, then wires the transform to a psi
// lattice at that lambda.
BuildResult build_transform(const DriftField& b, const DiffusionSpec& s,
                            const ResolventConfig& cfg, const TransformOptions& opt);

struct TransformedFlowResult {
  Vec state;              // phi_{0,t}(x) after mapping back
  PathRecord hat_record;  // path in conjugated coordinates
};

// phi = Psi^{-1} o hat_phi o Psi with hat_phi the Euler flow of the
// conjugated coefficients.
TransformedFlowResult transformed_flow(const ZvonkinTransform& T, const ConjugatedCoeffs& cc,
                                       const Vec& x, const BrownianDriver& driver,
                                       const TimeGrid& grid);

// D_x phi_{0,t}(x): each basis direction h is pushed to DPsi(x) h, propagated
// by the conjugated first variation, and mapped back through the inverse
// Jacobian at the endpoint.
Mat flow_derivative(const ZvonkinTransform& T, const ConjugatedCoeffs& cc, const Vec& x,
                    const BrownianDriver& driver, const TimeGrid& grid);

struct StabilityConfig {
  std::vector<int> levels = {2, 4, 8, 16};
  std::int64_t n_paths = 4;
  double t_end = 0.5;
  double dt = 2e-3;
  std::vector<Vec> starts;  // empty means a default cloud of radius 1
  ResolventConfig mc;       // inner Monte Carlo knobs, shared by every level
  TransformOptions opt;
  std::uint64_t driver_seed = 7;
  int quad_points = 16;  // mollification quadrature (per axis)
};

struct StabilityLevel {
  int level = 0;
  double sup_diff = 0.0;  // sup over starts and paths of |phi_n - phi|
  double lambda = 0.0;
  double gamma_cert = 0.0;
};

struct StabilityResult {
  std::vector<StabilityLevel> levels;
  double reference_lambda = 0.0;
  double reference_gamma = 0.0;
};

// Flows for mollifications b_n against the rough-drift flow, every level
// driven by the same Brownian paths and the same inner Monte Carlo seed.
StabilityResult stability_experiment(const DriftField& b, const DiffusionSpec& s,
                                     const StabilityConfig& sc);

}  // namespace flowlab
