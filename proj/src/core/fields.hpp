#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "core/types.hpp"

namespace flowlab {

class MollifiedDrift;

// Vector field b: R^d -> R^d with a declared Hölder exponent. The Jacobian is
// optional: rough fields leave it empty and must be mollified before any
// routine that differentiates the drift.
struct DriftField {
  int dim = 0;
  double theta = 0.5;
  std::function<Vec(const Vec&)> eval;
  std::function<Mat(const Vec&)> jacobian;  // empty for rough fields
  std::string label;
  std::shared_ptr<const MollifiedDrift> mollified;  // set by mollify()
  // Allocation-free variant for Monte Carlo inner loops; falls back to eval.
  std::function<void(const Vec&, Vec&)> eval_into_fn;

  bool has_jacobian() const { return static_cast<bool>(jacobian); }
  Vec operator()(const Vec& x) const { return eval(x); }
  void eval_into(const Vec& x, Vec& out) const {
    if (eval_into_fn)
      eval_into_fn(x, out);
    else
      out = eval(x);
  }

  // Preset grammar: "zero", "linear:a=<scalar|v1,...,vdd>",
  // "holder:theta=<t>,scale=<c>", "mollified:<base>:<n>".
  static DriftField preset(const std::string& name, int dim);
};

// Diffusion matrix sigma: R^d -> R^(d x k) plus the derived a = sigma sigma^T.
// a_inv is computed by an explicit solve with residual verification.
struct DiffusionSpec {
  int dim = 0;
  int dim_noise = 0;
  std::function<Mat(const Vec&)> sigma;
  // Directional derivative (D_eta sigma)(x), d x k. When absent, a central
  // difference with step fd_step is used.
  std::function<Mat(const Vec&, const Vec&)> dsigma_dir;
  double fd_step = 1e-5;
  std::string label;
  // Set by presets whose sigma does not depend on x; lets inner loops hoist
  // the evaluation.
  bool constant_sigma = false;
  std::function<void(const Vec&, Mat&)> sigma_into_fn;

  void sigma_into(const Vec& x, Mat& out) const {
    if (sigma_into_fn)
      sigma_into_fn(x, out);
    else
      out = sigma(x);
  }

  Mat a(const Vec& x) const;
  Mat a_inv(const Vec& x) const;
  Mat sigma_t_a_inv(const Vec& x) const;  // sigma^T a^{-1}, the gradient-identity weight
  Mat dsigma(const Vec& x, const Vec& eta) const;

  // Preset grammar: "identity", "zero", "const:c=<v>", "sin-perturbed:eps=<e>"
  // (an optional leading "sigma:" is accepted).
  static DiffusionSpec preset(const std::string& name, int dim);
};

struct HypothesisReport {
  double holder_seminorm_est = 0.0;
  double growth_const_est = 0.0;
  double a_inv_sup_est = 0.0;        // Hilbert-Schmidt norm of a^{-1}, sup over probes
  double sigma_deriv_sup[3] = {0.0, 0.0, 0.0};  // k = 1, 2, 3
  std::size_t probe_count = 0;
  bool drift_ok = false;
  bool diffusion_ok = false;
};

// Deterministic low-discrepancy cloud inside the ball of the given radius.
std::vector<Vec> probe_cloud(int dim, std::size_t count, double radius);

// Point pairs at offsets spanning {1e-3, 1e-2, 0.1, 1} around a cloud.
std::vector<std::pair<Vec, Vec>> probe_pairs(int dim, std::size_t count, double radius);

// sup over pairs with 0 < |x-y| <= 1 of |f(x)-f(y)| / |x-y|^theta.
// Pairs with identical points are rejected, naming the pair index.
double holder_seminorm(const DriftField& f, const std::vector<std::pair<Vec, Vec>>& pairs);

// Variant with denominator |x-y|^theta for |x-y| <= 1 and |x-y| beyond, the
// seminorm that controls linear growth.
double holder_seminorm_global(const DriftField& f,
                              const std::vector<std::pair<Vec, Vec>>& pairs);

HypothesisReport check_hypotheses(const DriftField& b, const DiffusionSpec& s,
                                  const std::vector<Vec>& points,
                                  const std::vector<std::pair<Vec, Vec>>& pairs);

}  // namespace flowlab
