#pragma once

#include <memory>
#include <vector>

#include "core/fields.hpp"
#include "core/types.hpp"

namespace flowlab {

inline constexpr int kDefaultQuadPointsPerAxis = 32;

// Gauss-Legendre nodes and weights on [-1, 1].
void gauss_legendre(int q, std::vector<double>& nodes, std::vector<double>& weights);

// Smooth bump exp(-1/(1-|x|^2)) on the open unit ball, normalized to unit
// mass. Even by construction; all derivatives vanish at the boundary.
class MollifierKernel {
 public:
  explicit MollifierKernel(int dim);

  int dim() const { return dim_; }
  double norm_const() const { return norm_const_; }

  double value(const Vec& x) const;
  Vec grad(const Vec& x) const;
  Mat hess(const Vec& x) const;
  // Third derivative contracted twice: T(x)[i](j,k) flattened as d matrices.
  std::vector<Mat> third(const Vec& x) const;

 private:
  // g(s) = exp(-1/(1-s)) with s = |x|^2 and its s-derivatives.
  static double g0(double s);
  static double g1(double s);
  static double g2(double s);
  static double g3(double s);

  int dim_;
  double norm_const_;  // integral of the raw bump over R^dim
};

// b * kernel_n with kernel_n(y) = n^d kernel(n y), realized by a tensor
// Gauss-Legendre rule over the support cube [-1/n, 1/n]^d. Derivatives come
// from quadrature against kernel derivatives, never from differencing b.
class MollifiedDrift {
 public:
  MollifiedDrift(DriftField base, int n, int quad_points_per_axis);

  Vec eval(const Vec& x) const;
  void eval_into(const Vec& x, Vec& out) const;
  Mat jacobian(const Vec& x) const;
  // sup over the given points of the max-abs entry of D^k(b * kernel_n),
  // k in {1, 2, 3}.
  double derivative_sup(int k, const std::vector<Vec>& points) const;

  int level() const { return n_; }
  const DriftField& base() const { return base_; }
  double normalization_residual() const { return norm_residual_; }

  DriftField as_field(const std::string& label) const;

 private:
  DriftField base_;
  int n_;
  int quad_;
  double norm_residual_;
  Mat nodes_;                 // d x m quadrature nodes inside the support ball
  Eigen::VectorXd w_val_;     // weight * kernel(node)
  Mat w_grad_;                // d x m, weight * grad kernel(node)
  std::vector<Mat> w_hess_;   // m of d x d
  std::vector<std::vector<Mat>> w_third_;  // m of d entries of d x d
};

// Builds the mollified field (dim <= 3). Rejects quadrature rules whose
// kernel-mass residual exceeds 1e-4.
DriftField mollify(const DriftField& b, int n, int quad_points_per_axis);

std::shared_ptr<const MollifiedDrift> mollified_impl(const DriftField& f);

struct MollificationGap {
  double sup_diff = 0.0;     // sup over points of |b - b_n|
  double holder_gap = 0.0;   // Hölder seminorm of b - b_n over pair probes
  double total = 0.0;
};

MollificationGap mollification_gap(const DriftField& b, const DriftField& bn,
                                   const std::vector<Vec>& points,
                                   const std::vector<std::pair<Vec, Vec>>& pairs);

// sup over probes of the k-th derivative of a mollified field (k in {1,2,3}).
double derivative_bound_probe(const DriftField& bn, int k, const std::vector<Vec>& points);

}  // namespace flowlab
