#include "core/fields.hpp"

#include <cmath>
#include <sstream>

#include "core/mollify.hpp"

namespace flowlab {

namespace {

std::vector<std::string> split(const std::string& s, char delim) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == delim) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

// "k1=v1,k2=v2" -> ordered key/value list; values may contain commas only for
// the last key (used by matrix-valued "a=").
double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    require_config(pos == s.size(), "trailing characters in " + what + ": '" + s + "'");
    return v;
  } catch (const config_error&) {
    throw;
  } catch (...) {
    throw config_error("cannot parse " + what + ": '" + s + "'");
  }
}

double halton(std::size_t index, std::size_t base) {
  double f = 1.0, r = 0.0;
  std::size_t i = index;
  while (i > 0) {
    f /= double(base);
    r += f * double(i % base);
    i /= base;
  }
  return r;
}

constexpr std::size_t kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19};

}  // namespace

DriftField DriftField::preset(const std::string& name, int dim) {
  require_config(dim >= 1, "drift preset needs dim >= 1");
  DriftField f;
  f.dim = dim;
  f.label = name;

  if (name == "zero") {
    f.theta = 0.5;
    f.eval = [dim](const Vec&) { return Vec(Vec::Zero(dim)); };
    f.jacobian = [dim](const Vec&) { return Mat(Mat::Zero(dim, dim)); };
    f.eval_into_fn = [](const Vec&, Vec& out) { out.setZero(); };
    return f;
  }

  if (name == "const" || name.rfind("const:", 0) == 0) {
    double c = 1.0;
    if (name.size() > 6) {
      const std::string body = name.substr(6);
      require_config(body.rfind("c=", 0) == 0, "const preset expects 'const:c=<v>'");
      c = parse_double(body.substr(2), "const drift value");
    }
    f.theta = 1.0;
    f.eval = [dim, c](const Vec&) { return Vec(Vec::Constant(dim, c)); };
    f.jacobian = [dim](const Vec&) { return Mat(Mat::Zero(dim, dim)); };
    f.eval_into_fn = [c](const Vec&, Vec& out) { out.setConstant(c); };
    return f;
  }

  if (name.rfind("linear:", 0) == 0) {
    const std::string body = name.substr(7);
    require_config(body.rfind("a=", 0) == 0, "linear preset expects 'linear:a=...'");
    const std::string val = body.substr(2);
    const auto parts = split(val, ',');
    Mat A;
    if (parts.size() == 1) {
      A = parse_double(parts[0], "linear coefficient") * Mat::Identity(dim, dim);
    } else {
      require_config(parts.size() == std::size_t(dim) * std::size_t(dim),
                     "linear matrix needs dim*dim entries");
      A = Mat(dim, dim);
      for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j)
          A(i, j) = parse_double(parts[std::size_t(i * dim + j)], "linear matrix entry");
    }
    f.theta = 1.0;
    f.eval = [A](const Vec& x) { return Vec(A * x); };
    f.jacobian = [A](const Vec&) { return A; };
    f.eval_into_fn = [A](const Vec& x, Vec& out) { out.noalias() = A * x; };
    return f;
  }

  if (name.rfind("holder:", 0) == 0) {
    double theta = -1.0, scale = 1.0;
    for (const auto& kv : split(name.substr(7), ',')) {
      const auto eq = kv.find('=');
      require_config(eq != std::string::npos, "holder preset expects key=value pairs");
      const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
      if (key == "theta")
        theta = parse_double(val, "theta");
      else if (key == "scale")
        scale = parse_double(val, "scale");
      else
        throw config_error("unknown holder preset key '" + key + "'");
    }
    require_config(theta > 0.0 && theta < 1.0, "holder preset needs theta in (0,1)");
    f.theta = theta;
    // b(x) = scale * |x|^theta * e_1: bounded Hölder seminorm, no Jacobian at 0.
    f.eval = [dim, theta, scale](const Vec& x) {
      Vec out = Vec::Zero(dim);
      out(0) = scale * std::pow(x.norm(), theta);
      return out;
    };
    if (theta == 0.5) {
      // sqrt is measurably cheaper than pow in the Monte Carlo inner loop
      f.eval_into_fn = [scale](const Vec& x, Vec& out) {
        out.setZero();
        out(0) = scale * std::sqrt(x.norm());
      };
    } else {
      f.eval_into_fn = [theta, scale](const Vec& x, Vec& out) {
        out.setZero();
        out(0) = scale * std::pow(x.norm(), theta);
      };
    }
    return f;
  }

  if (name.rfind("mollified:", 0) == 0) {
    const std::string rest = name.substr(10);
    const auto last = rest.rfind(':');
    require_config(last != std::string::npos && last + 1 < rest.size(),
                   "mollified preset expects 'mollified:<base>:<n>'");
    const std::string base_name = rest.substr(0, last);
    const int n = int(parse_double(rest.substr(last + 1), "mollification level"));
    DriftField base = DriftField::preset(base_name, dim);
    DriftField out = mollify(base, n, kDefaultQuadPointsPerAxis);
    out.label = name;
    return out;
  }

  throw config_error("unknown drift preset '" + name + "'");
}

Mat DiffusionSpec::a(const Vec& x) const {
  const Mat s = sigma(x);
  Mat prod = s * s.transpose();
  return 0.5 * (prod + prod.transpose());
}

Mat DiffusionSpec::a_inv(const Vec& x) const {
  const Mat ax = a(x);
  Eigen::FullPivLU<Mat> lu(ax);
  if (!lu.isInvertible()) {
    std::ostringstream os;
    os << "diffusion matrix a(x) is singular at x = [" << x.transpose() << "]";
    throw numeric_error(os.str());
  }
  const Mat inv = lu.solve(Mat::Identity(dim, dim));
  const double residual = (ax * inv - Mat::Identity(dim, dim)).cwiseAbs().maxCoeff();
  if (!(residual <= 1e-6)) {
    std::ostringstream os;
    os << "inversion residual " << residual << " for a(x) at x = [" << x.transpose() << "]";
    throw numeric_error(os.str());
  }
  return inv;
}

Mat DiffusionSpec::sigma_t_a_inv(const Vec& x) const {
  return sigma(x).transpose() * a_inv(x);
}

Mat DiffusionSpec::dsigma(const Vec& x, const Vec& eta) const {
  if (dsigma_dir) return dsigma_dir(x, eta);
  const double scale = eta.norm();
  if (scale == 0.0) return Mat::Zero(dim, dim_noise);
  const Vec step = (fd_step / scale) * eta;
  return (sigma(x + step) - sigma(x - step)) * (scale / (2.0 * fd_step));
}

DiffusionSpec DiffusionSpec::preset(const std::string& name, int dim) {
  require_config(dim >= 1, "sigma preset needs dim >= 1");
  std::string body = name;
  if (body.rfind("sigma:", 0) == 0) body = body.substr(6);

  DiffusionSpec s;
  s.dim = dim;
  s.dim_noise = dim;
  s.label = name;

  if (body == "identity" || body == "const:c=1") {
    s.sigma = [dim](const Vec&) { return Mat(Mat::Identity(dim, dim)); };
    s.dsigma_dir = [dim](const Vec&, const Vec&) { return Mat(Mat::Zero(dim, dim)); };
    s.sigma_into_fn = [](const Vec&, Mat& out) { out.setIdentity(); };
    s.constant_sigma = true;
    return s;
  }
  if (body == "zero") {
    s.sigma = [dim](const Vec&) { return Mat(Mat::Zero(dim, dim)); };
    s.dsigma_dir = [dim](const Vec&, const Vec&) { return Mat(Mat::Zero(dim, dim)); };
    s.sigma_into_fn = [](const Vec&, Mat& out) { out.setZero(); };
    s.constant_sigma = true;
    return s;
  }
  if (body.rfind("const:c=", 0) == 0) {
    const double c = parse_double(body.substr(8), "sigma constant");
    s.sigma = [dim, c](const Vec&) { return Mat(c * Mat::Identity(dim, dim)); };
    s.dsigma_dir = [dim](const Vec&, const Vec&) { return Mat(Mat::Zero(dim, dim)); };
    s.sigma_into_fn = [c](const Vec&, Mat& out) {
      out.setIdentity();
      out *= c;
    };
    s.constant_sigma = true;
    return s;
  }
  if (body.rfind("sin-perturbed:eps=", 0) == 0) {
    const double eps = parse_double(body.substr(18), "sigma perturbation");
    require_config(std::abs(eps) < 1.0, "sin-perturbed needs |eps| < 1 to stay invertible");
    s.sigma = [dim, eps](const Vec& x) {
      return Mat((1.0 + eps * std::sin(x(0))) * Mat::Identity(dim, dim));
    };
    s.dsigma_dir = [dim, eps](const Vec& x, const Vec& eta) {
      return Mat(eps * std::cos(x(0)) * eta(0) * Mat::Identity(dim, dim));
    };
    s.sigma_into_fn = [eps](const Vec& x, Mat& out) {
      out.setIdentity();
      out *= 1.0 + eps * std::sin(x(0));
    };
    return s;
  }

  throw config_error("unknown sigma preset '" + name + "'");
}

std::vector<Vec> probe_cloud(int dim, std::size_t count, double radius) {
  require_config(dim >= 1 && dim <= 8, "probe cloud supports dim in [1,8]");
  std::vector<Vec> pts;
  pts.reserve(count);
  std::size_t index = 20;  // skip the earliest, most structured Halton points
  while (pts.size() < count) {
    Vec x(dim);
    for (int j = 0; j < dim; ++j)
      x(j) = (2.0 * halton(index, kPrimes[std::size_t(j)]) - 1.0) * radius;
    ++index;
    if (x.norm() <= radius) pts.push_back(x);
  }
  return pts;
}

std::vector<std::pair<Vec, Vec>> probe_pairs(int dim, std::size_t count, double radius) {
  static constexpr double kOffsets[] = {1e-3, 1e-2, 0.1, 1.0};
  const auto centers = probe_cloud(dim, count, radius);
  std::vector<std::pair<Vec, Vec>> pairs;
  pairs.reserve(count);
  for (std::size_t i = 0; i < centers.size(); ++i) {
    Vec dir(dim);
    if (dim == 1) {
      dir(0) = (i % 2 == 0) ? 1.0 : -1.0;
    } else {
      for (int j = 0; j < dim; ++j)
        dir(j) = 2.0 * halton(i + 41, kPrimes[std::size_t(j)]) - 1.0;
      if (dir.norm() == 0.0) dir(0) = 1.0;
      dir.normalize();
    }
    const double delta = kOffsets[i % 4];
    pairs.emplace_back(centers[i], Vec(centers[i] + delta * dir));
  }
  return pairs;
}

double holder_seminorm(const DriftField& f, const std::vector<std::pair<Vec, Vec>>& pairs) {
  double sup = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double r = (pairs[i].first - pairs[i].second).norm();
    if (r == 0.0) {
      std::ostringstream os;
      os << "probe pair " << i << " has identical points; the seminorm needs x != y";
      throw config_error(os.str());
    }
    if (r > 1.0) continue;
    const double num = (f.eval(pairs[i].first) - f.eval(pairs[i].second)).norm();
    sup = std::max(sup, num / std::pow(r, f.theta));
  }
  return sup;
}

double holder_seminorm_global(const DriftField& f,
                              const std::vector<std::pair<Vec, Vec>>& pairs) {
  double sup = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double r = (pairs[i].first - pairs[i].second).norm();
    if (r == 0.0) {
      std::ostringstream os;
      os << "probe pair " << i << " has identical points; the seminorm needs x != y";
      throw config_error(os.str());
    }
    const double denom = (r <= 1.0) ? std::pow(r, f.theta) : r;
    const double num = (f.eval(pairs[i].first) - f.eval(pairs[i].second)).norm();
    sup = std::max(sup, num / denom);
  }
  return sup;
}

namespace {

double sigma_deriv_sup(const DiffusionSpec& s, const Vec& x, int order) {
  const int d = s.dim;
  double sup = 0.0;
  if (order == 1) {
    const double h = 1e-5;
    for (int l = 0; l < d; ++l) {
      Vec e = Vec::Zero(d);
      e(l) = h;
      const Mat g = (s.sigma(x + e) - s.sigma(x - e)) / (2.0 * h);
      sup = std::max(sup, g.cwiseAbs().maxCoeff());
    }
    return sup;
  }
  if (order == 2) {
    const double h = 1e-4;
    for (int l = 0; l < d; ++l) {
      Vec el = Vec::Zero(d);
      el(l) = h;
      const Mat diag = (s.sigma(x + el) - 2.0 * s.sigma(x) + s.sigma(x - el)) / (h * h);
      sup = std::max(sup, diag.cwiseAbs().maxCoeff());
      for (int m = l + 1; m < d; ++m) {
        Vec em = Vec::Zero(d);
        em(m) = h;
        const Mat mixed = (s.sigma(x + el + em) - s.sigma(x + el - em) - s.sigma(x - el + em) +
                           s.sigma(x - el - em)) /
                          (4.0 * h * h);
        sup = std::max(sup, mixed.cwiseAbs().maxCoeff());
      }
    }
    return sup;
  }
  // order == 3: pure third derivatives plus one mixed pattern per axis pair.
  const double h = 2e-3;
  for (int l = 0; l < d; ++l) {
    Vec el = Vec::Zero(d);
    el(l) = h;
    const Mat pure =
        (s.sigma(x + 2.0 * el) - 2.0 * s.sigma(x + el) + 2.0 * s.sigma(x - el) -
         s.sigma(x - 2.0 * el)) /
        (2.0 * h * h * h);
    sup = std::max(sup, pure.cwiseAbs().maxCoeff());
    for (int m = 0; m < d; ++m) {
      if (m == l) continue;
      Vec em = Vec::Zero(d);
      em(m) = h;
      const auto second_ll = [&](const Vec& y) {
        return Mat((s.sigma(y + el) - 2.0 * s.sigma(y) + s.sigma(y - el)) / (h * h));
      };
      const Mat mixed = (second_ll(x + em) - second_ll(x - em)) / (2.0 * h);
      sup = std::max(sup, mixed.cwiseAbs().maxCoeff());
    }
  }
  return sup;
}

}  // namespace

HypothesisReport check_hypotheses(const DriftField& b, const DiffusionSpec& s,
                                  const std::vector<Vec>& points,
                                  const std::vector<std::pair<Vec, Vec>>& pairs) {
  require_config(b.dim == s.dim, "drift and diffusion dimensions disagree");
  require_config(!points.empty() && !pairs.empty(), "hypothesis check needs probes");

  HypothesisReport rep;
  rep.probe_count = points.size() + pairs.size();
  rep.holder_seminorm_est = holder_seminorm(b, pairs);

  double growth = 0.0;
  for (const auto& x : points) growth = std::max(growth, b.eval(x).norm() / (1.0 + x.norm()));
  rep.growth_const_est = growth;

  bool ainv_ok = true;
  double ainv_sup = 0.0;
  for (const auto& x : points) {
    const Mat ax = s.a(x);
    const Mat inv = s.a_inv(x);  // throws if singular or residual > 1e-6
    const double residual = (ax * inv - Mat::Identity(s.dim, s.dim)).cwiseAbs().maxCoeff();
    if (residual > 1e-8) ainv_ok = false;
    ainv_sup = std::max(ainv_sup, inv.norm());  // Hilbert-Schmidt norm
  }
  rep.a_inv_sup_est = ainv_sup;

  for (int k = 1; k <= 3; ++k) {
    double sup = 0.0;
    for (const auto& x : points) sup = std::max(sup, sigma_deriv_sup(s, x, k));
    rep.sigma_deriv_sup[k - 1] = sup;
  }

  rep.drift_ok = b.theta > 0.0 && b.theta <= 1.0 && std::isfinite(rep.holder_seminorm_est) &&
                 std::isfinite(rep.growth_const_est);
  rep.diffusion_ok = ainv_ok && std::isfinite(rep.a_inv_sup_est) &&
                     std::isfinite(rep.sigma_deriv_sup[0]) &&
                     std::isfinite(rep.sigma_deriv_sup[1]) &&
                     std::isfinite(rep.sigma_deriv_sup[2]);
  return rep;
}

}  // namespace flowlab
