#include "core/mollify.hpp"

#include <cmath>
#include <sstream>

namespace flowlab {

void gauss_legendre(int q, std::vector<double>& nodes, std::vector<double>& weights) {
  require_config(q >= 2, "Gauss-Legendre rule needs at least 2 points");
  nodes.assign(std::size_t(q), 0.0);
  weights.assign(std::size_t(q), 0.0);
  const int half = (q + 1) / 2;
  for (int i = 0; i < half; ++i) {
    double x = std::cos(M_PI * (double(i) + 0.75) / (double(q) + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      // Recurrence for P_q(x) and its derivative.
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= q; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / double(k);
        p0 = p1;
        p1 = p2;
      }
      pp = double(q) * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / pp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    const std::size_t lo = std::size_t(i), hi = std::size_t(q - 1 - i);
    nodes[lo] = -x;  // mirror assignment keeps the rule symmetric bit-exactly
    nodes[hi] = x;
    const double w = 2.0 / ((1.0 - x * x) * pp * pp);
    weights[lo] = w;
    weights[hi] = w;
  }
  if (q % 2 == 1) nodes[std::size_t(q / 2)] = 0.0;
}

double MollifierKernel::g0(double s) { return std::exp(-1.0 / (1.0 - s)); }
double MollifierKernel::g1(double s) {
  const double u = 1.0 / (1.0 - s);
  return -g0(s) * u * u;
}
double MollifierKernel::g2(double s) {
  const double u = 1.0 / (1.0 - s);
  return g0(s) * (u * u * u * u - 2.0 * u * u * u);
}
double MollifierKernel::g3(double s) {
  const double u = 1.0 / (1.0 - s);
  const double u4 = u * u * u * u;
  return g0(s) * (-u4 * u * u + 6.0 * u4 * u - 6.0 * u4);
}

MollifierKernel::MollifierKernel(int dim) : dim_(dim) {
  require_config(dim >= 1 && dim <= 3, "mollifier kernel supports dim in [1,3]");
  // Unit mass via the radial formula; 200-point rule is far beyond the 1e-6
  // mass invariant.
  std::vector<double> t, w;
  gauss_legendre(200, t, w);
  double radial = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double r = 0.5 * (t[i] + 1.0);  // map [-1,1] -> [0,1]
    radial += 0.5 * w[i] * std::pow(r, dim - 1) * g0(r * r);
  }
  const double surface = (dim == 1) ? 2.0 : (dim == 2 ? 2.0 * M_PI : 4.0 * M_PI);
  norm_const_ = surface * radial;
}

double MollifierKernel::value(const Vec& x) const {
  const double s = x.squaredNorm();
  if (s >= 1.0) return 0.0;
  return g0(s) / norm_const_;
}

Vec MollifierKernel::grad(const Vec& x) const {
  const double s = x.squaredNorm();
  if (s >= 1.0) return Vec::Zero(dim_);
  return (2.0 * g1(s) / norm_const_) * x;
}

Mat MollifierKernel::hess(const Vec& x) const {
  const double s = x.squaredNorm();
  if (s >= 1.0) return Mat::Zero(dim_, dim_);
  return (2.0 * g1(s) / norm_const_) * Mat::Identity(dim_, dim_) +
         (4.0 * g2(s) / norm_const_) * (x * x.transpose());
}

std::vector<Mat> MollifierKernel::third(const Vec& x) const {
  const double s = x.squaredNorm();
  std::vector<Mat> out(std::size_t(dim_), Mat::Zero(dim_, dim_));
  if (s >= 1.0) return out;
  const double c2 = 4.0 * g2(s) / norm_const_;
  const double c3 = 8.0 * g3(s) / norm_const_;
  for (int i = 0; i < dim_; ++i) {
    Mat& T = out[std::size_t(i)];
    for (int j = 0; j < dim_; ++j)
      for (int k = 0; k < dim_; ++k) {
        double v = c3 * x(i) * x(j) * x(k);
        if (i == j) v += c2 * x(k);
        if (i == k) v += c2 * x(j);
        if (j == k) v += c2 * x(i);
        T(j, k) = v;
      }
  }
  return out;
}

MollifiedDrift::MollifiedDrift(DriftField base, int n, int quad_points_per_axis)
    : base_(std::move(base)), n_(n), quad_(quad_points_per_axis) {
  require_config(base_.dim >= 1 && base_.dim <= 3,
                 "mollification is implemented for dim <= 3");
  require_config(n_ >= 1, "mollification level n must be >= 1");
  require_config(quad_ >= 8, "mollification needs >= 8 quadrature points per axis");
  const int d = base_.dim;
  const MollifierKernel kernel(d);

  std::vector<double> t, w;
  gauss_legendre(quad_, t, w);

  std::int64_t m_total = 1;
  for (int j = 0; j < d; ++j) m_total *= quad_;

  std::vector<Vec> kept_nodes;
  std::vector<double> kept_val;
  std::vector<Vec> kept_grad;
  std::vector<Mat> kept_hess;
  std::vector<std::vector<Mat>> kept_third;
  double mass = 0.0;

  const double inv_n = 1.0 / double(n_);
  for (std::int64_t idx = 0; idx < m_total; ++idx) {
    std::int64_t rem = idx;
    Vec z(d);
    double vw = 1.0;
    for (int j = 0; j < d; ++j) {
      const int a = int(rem % quad_);
      rem /= quad_;
      z(j) = t[std::size_t(a)];
      vw *= w[std::size_t(a)];
    }
    if (z.squaredNorm() >= 1.0) continue;  // outside the kernel support
    const double tv = vw * kernel.value(z);
    mass += tv;
    kept_nodes.push_back(inv_n * z);  // offset in y-space
    kept_val.push_back(tv);
    kept_grad.push_back(Vec(vw * double(n_) * kernel.grad(z)));
    kept_hess.push_back(Mat(vw * double(n_) * double(n_) * kernel.hess(z)));
    auto T = kernel.third(z);
    const double n3 = double(n_) * double(n_) * double(n_);
    for (auto& Ti : T) Ti *= vw * n3;
    kept_third.push_back(std::move(T));
  }

  norm_residual_ = std::abs(mass - 1.0);

  const std::size_t m = kept_nodes.size();
  nodes_.resize(d, Eigen::Index(m));
  w_val_.resize(Eigen::Index(m));
  w_grad_.resize(d, Eigen::Index(m));
  w_hess_ = std::move(kept_hess);
  w_third_ = std::move(kept_third);
  for (std::size_t i = 0; i < m; ++i) {
    nodes_.col(Eigen::Index(i)) = kept_nodes[i];
    w_val_(Eigen::Index(i)) = kept_val[i];
    w_grad_.col(Eigen::Index(i)) = kept_grad[i];
  }
}

Vec MollifiedDrift::eval(const Vec& x) const {
  Vec acc(base_.dim);
  eval_into(x, acc);
  return acc;
}

void MollifiedDrift::eval_into(const Vec& x, Vec& out) const {
  thread_local Vec shifted, bval;
  shifted.resize(x.size());
  bval.resize(x.size());
  out.resize(x.size());
  out.setZero();
  for (Eigen::Index i = 0; i < w_val_.size(); ++i) {
    shifted = x - nodes_.col(i);
    base_.eval_into(shifted, bval);
    out += w_val_(i) * bval;
  }
}

Mat MollifiedDrift::jacobian(const Vec& x) const {
  const int d = base_.dim;
  Mat acc = Mat::Zero(d, d);
  for (Eigen::Index i = 0; i < w_val_.size(); ++i)
    acc += base_.eval(x - nodes_.col(i)) * w_grad_.col(i).transpose();
  return acc;
}

double MollifiedDrift::derivative_sup(int k, const std::vector<Vec>& points) const {
  require_config(k >= 1 && k <= 3, "derivative probe supports k in {1,2,3}");
  const int d = base_.dim;
  double sup = 0.0;
  for (const auto& x : points) {
    if (k == 1) {
      sup = std::max(sup, jacobian(x).cwiseAbs().maxCoeff());
    } else if (k == 2) {
      // D^2(b * kernel)(x)[r](i,j) = sum_m b_r(x - y_m) * w_hess_m(i,j)
      for (int r = 0; r < d; ++r) {
        Mat acc = Mat::Zero(d, d);
        for (Eigen::Index i = 0; i < w_val_.size(); ++i)
          acc += base_.eval(x - nodes_.col(i))(r) * w_hess_[std::size_t(i)];
        sup = std::max(sup, acc.cwiseAbs().maxCoeff());
      }
    } else {
      for (int r = 0; r < d; ++r) {
        for (int i3 = 0; i3 < d; ++i3) {
          Mat acc = Mat::Zero(d, d);
          for (Eigen::Index i = 0; i < w_val_.size(); ++i)
            acc += base_.eval(x - nodes_.col(i))(r) * w_third_[std::size_t(i)][std::size_t(i3)];
          sup = std::max(sup, acc.cwiseAbs().maxCoeff());
        }
      }
    }
  }
  return sup;
}

DriftField MollifiedDrift::as_field(const std::string& label) const {
  auto self = std::make_shared<const MollifiedDrift>(*this);
  DriftField f;
  f.dim = base_.dim;
  f.theta = base_.theta;
  f.label = label;
  f.eval = [self](const Vec& x) { return self->eval(x); };
  f.jacobian = [self](const Vec& x) { return self->jacobian(x); };
  f.eval_into_fn = [self](const Vec& x, Vec& out) { self->eval_into(x, out); };
  f.mollified = self;
  return f;
}

DriftField mollify(const DriftField& b, int n, int quad_points_per_axis) {
  MollifiedDrift impl(b, n, quad_points_per_axis);
  if (impl.normalization_residual() > 1e-4) {
    std::ostringstream os;
    os << "quadrature mass residual " << impl.normalization_residual()
       << " exceeds 1e-4; increase quad_points_per_axis (got " << quad_points_per_axis
       << ")";
    throw config_error(os.str());
  }
  std::ostringstream label;
  label << "mollified:" << b.label << ":" << n;
  return impl.as_field(label.str());
}

std::shared_ptr<const MollifiedDrift> mollified_impl(const DriftField& f) {
  return f.mollified;
}

MollificationGap mollification_gap(const DriftField& b, const DriftField& bn,
                                   const std::vector<Vec>& points,
                                   const std::vector<std::pair<Vec, Vec>>& pairs) {
  require_config(b.dim == bn.dim, "mollification gap needs matching dimensions");
  MollificationGap gap;
  for (const auto& x : points)
    gap.sup_diff = std::max(gap.sup_diff, (b.eval(x) - bn.eval(x)).norm());
  DriftField diff;
  diff.dim = b.dim;
  diff.theta = b.theta;
  const auto be = b.eval;
  const auto ne = bn.eval;
  diff.eval = [be, ne](const Vec& x) { return Vec(be(x) - ne(x)); };
  gap.holder_gap = holder_seminorm(diff, pairs);
  gap.total = gap.sup_diff + gap.holder_gap;
  return gap;
}

double derivative_bound_probe(const DriftField& bn, int k, const std::vector<Vec>& points) {
  auto impl = mollified_impl(bn);
  require_config(static_cast<bool>(impl),
                 "derivative bound probe needs a mollified field; apply mollify first");
  return impl->derivative_sup(k, points);
}

}  // namespace flowlab
