#include "core/zvonkin.hpp"

#include <cmath>
#include <sstream>
#include <utility>

#include "core/mollify.hpp"

namespace flowlab {

ZvonkinTransform::ZvonkinTransform(int dim, double lambda, double gamma_cert,
                                   PsiEval psi_eval, TransformOptions opt)
    : dim_(dim),
      lambda_(lambda),
      gamma_cert_(gamma_cert),
      psi_eval_(std::move(psi_eval)),
      opt_(std::move(opt)) {
  require_config(dim_ >= 1, "transform needs dim >= 1");
  require_config(lambda_ > 0.0, "transform needs lambda > 0");
  require_config(static_cast<bool>(psi_eval_), "transform needs a psi callable");
  if (!(gamma_cert_ >= 0.0 && gamma_cert_ < 1.0)) {
    std::ostringstream os;
    os << "transform needs a certified sup |Dpsi| < 1, got " << gamma_cert_;
    throw config_error(os.str());
  }
  require_config(opt_.inverse_tol > 0.0, "transform needs inverse_tol > 0");
  require_config(opt_.max_invert_iters >= 1, "transform needs max_invert_iters >= 1");
  require_config(opt_.neumann_terms >= 1, "transform needs neumann_terms >= 1");
}

void ZvonkinTransform::psi(const Vec& x, Vec* value, Mat* grad) const {
  require_config(x.size() == dim_, "transform dimension mismatch");
  psi_eval_(x, value, grad);
}

Vec ZvonkinTransform::forward(const Vec& x) const {
  Vec p(dim_);
  psi(x, &p, nullptr);
  return x + p;
}

Mat ZvonkinTransform::forward_jacobian(const Vec& x) const {
  Mat g(dim_, dim_);
  psi(x, nullptr, &g);
  return Mat(Mat::Identity(dim_, dim_) + g);
}

Vec ZvonkinTransform::invert(const Vec& y) const {
  require_config(y.size() == dim_, "transform dimension mismatch");
  const double stop = opt_.inverse_tol * (1.0 - gamma_cert_);
  Vec x = y;
  Vec p(dim_), next(dim_);
  for (int k = 0; k < opt_.max_invert_iters; ++k) {
    psi_eval_(x, &p, nullptr);
    next = y - p;
    const double delta = (next - x).cwiseAbs().maxCoeff();
    x = next;
    if (delta <= stop) return x;
  }
  std::ostringstream os;
  os << "inversion did not contract within " << opt_.max_invert_iters
     << " iterations (gamma_cert = " << gamma_cert_ << ", stop = " << stop << ")";
  throw numeric_error(os.str());
}

Mat neumann_inverse(const Mat& g, int terms, double tail) {
  const Mat neg = -g;
  Mat sum = Mat::Identity(g.rows(), g.cols());
  Mat power = Mat::Identity(g.rows(), g.cols());
  for (int k = 0; k < terms; ++k) {
    power = power * neg;
    sum += power;
    if (power.cwiseAbs().maxCoeff() < tail) break;
  }
  return sum;
}

Mat ZvonkinTransform::inverse_jacobian_at(const Vec& x) const {
  Mat g(dim_, dim_);
  psi(x, nullptr, &g);
  return neumann_inverse(g, opt_.neumann_terms, opt_.neumann_tail);
}

double ZvonkinTransform::identity_residual(const Vec& x) const {
  const Mat J = forward_jacobian(x);
  const Mat N = inverse_jacobian_at(x);
  return (J * N - Mat::Identity(dim_, dim_)).cwiseAbs().maxCoeff();
}

ConjugatedCoeffs conjugate(const ZvonkinTransform& T, const DiffusionSpec& s) {
  require_config(T.dim() == s.dim, "transform and diffusion dimensions disagree");
  const int d = T.dim();
  const double lambda = T.lambda();

  ConjugatedCoeffs cc;
  cc.drift.dim = d;
  cc.drift.theta = 1.0;
  cc.drift.label = "conjugated-drift";
  cc.drift.eval = [T, lambda, d](const Vec& y) {
    const Vec x = T.invert(y);
    Vec p(d);
    T.psi(x, &p, nullptr);
    return Vec(lambda * p);
  };
  cc.drift.jacobian = [T, lambda, d](const Vec& y) {
    const Vec x = T.invert(y);
    Mat g(d, d);
    T.psi(x, nullptr, &g);
    return Mat(lambda * g * T.inverse_jacobian_at(x));
  };

  cc.sigma.dim = d;
  cc.sigma.dim_noise = s.dim_noise;
  cc.sigma.label = "conjugated-sigma";
  cc.sigma.fd_step = s.fd_step;
  cc.sigma.sigma = [T, s, d](const Vec& y) {
    const Vec x = T.invert(y);
    Mat g(d, d);
    T.psi(x, nullptr, &g);
    return Mat((Mat::Identity(d, d) + g) * s.sigma(x));
  };
  return cc;
}

BuildResult build_transform(const DriftField& b, const DiffusionSpec& s,
                            const ResolventConfig& cfg, const TransformOptions& opt) {
  require_config(b.dim == s.dim, "drift and diffusion dimensions disagree");
  require_config(opt.gamma > 0.0 && opt.gamma < 1.0, "transform needs gamma in (0,1)");
  std::vector<Vec> cal = opt.calibration_points;
  if (cal.empty()) cal = probe_cloud(b.dim, 5, 2.0);

  LambdaSelection sel = select_lambda(b, s, opt.ladder, opt.gamma, cfg, cal);

  ResolventConfig lat_cfg = cfg;
  lat_cfg.lambda = sel.lambda;
  lat_cfg.t_max = 0.0;  // re-derive for the lattice span
  PsiLattice lattice(b, s, lat_cfg, opt.lattice_spacing, opt.span_limit);
  PsiLattice lattice_ref = lattice;  // shares the node cache
  auto psi_fn = [lattice_ref](const Vec& x, Vec* v, Mat* g) { lattice_ref.eval(x, v, g); };

  ZvonkinTransform T(b.dim, sel.lambda, sel.gamma_cert, std::move(psi_fn), opt);
  return BuildResult{std::move(T), std::move(sel), std::move(lattice)};
}

TransformedFlowResult transformed_flow(const ZvonkinTransform& T, const ConjugatedCoeffs& cc,
                                       const Vec& x, const BrownianDriver& driver,
                                       const TimeGrid& grid) {
  TransformedFlowResult out;
  const Vec y0 = T.forward(x);
  out.hat_record = simulate(cc.drift, cc.sigma, y0, driver, grid);
  out.state = T.invert(out.hat_record.states.col(grid.steps));
  return out;
}

Mat flow_derivative(const ZvonkinTransform& T, const ConjugatedCoeffs& cc, const Vec& x,
                    const BrownianDriver& driver, const TimeGrid& grid) {
  const int d = T.dim();
  const Vec y0 = T.forward(x);
  const Mat J0 = T.forward_jacobian(x);
  Mat out(d, d);
  for (int i = 0; i < d; ++i) {
    const auto [rec, var] =
        simulate_with_variation(cc.drift, cc.sigma, y0, J0.col(i), driver, grid);
    const Vec xT = T.invert(rec.states.col(grid.steps));
    out.col(i) = T.inverse_jacobian_at(xT) * var.eta.col(grid.steps);
  }
  return out;
}

StabilityResult stability_experiment(const DriftField& b, const DiffusionSpec& s,
                                     const StabilityConfig& sc) {
  require_config(!sc.levels.empty(), "stability needs mollification levels");
  require_config(sc.n_paths >= 1, "stability needs n_paths >= 1");
  require_config(sc.dt > 0.0 && sc.t_end > 0.0, "stability needs positive dt and t_end");
  const auto steps = std::int64_t(std::llround(sc.t_end / sc.dt));
  require_config(steps >= 1 && std::abs(double(steps) * sc.dt - sc.t_end) <=
                                   1e-9 * std::max(1.0, sc.t_end),
                 "stability t_end must be an integer multiple of dt");
  const TimeGrid grid(0.0, sc.t_end, steps);

  std::vector<Vec> starts = sc.starts;
  if (starts.empty()) starts = probe_cloud(b.dim, 3, 1.0);

  auto flows_for = [&](const ZvonkinTransform& T, const ConjugatedCoeffs& cc) {
    Mat out(b.dim, std::int64_t(starts.size()) * sc.n_paths);
    std::int64_t col = 0;
    for (const auto& x0 : starts)
      for (std::int64_t p = 0; p < sc.n_paths; ++p) {
        const BrownianDriver drv(sc.driver_seed, p, s.dim_noise, 0.0, grid.t_end(),
                                 grid.steps);
        out.col(col++) = transformed_flow(T, cc, x0, drv, grid).state;
      }
    return out;
  };

  StabilityResult res;
  const BuildResult ref = build_transform(b, s, sc.mc, sc.opt);
  res.reference_lambda = ref.selection.lambda;
  res.reference_gamma = ref.selection.gamma_cert;
  const ConjugatedCoeffs ref_cc = conjugate(ref.transform, s);
  const Mat ref_flows = flows_for(ref.transform, ref_cc);

  for (int n : sc.levels) {
    const DriftField bn = mollify(b, n, sc.quad_points);
    const BuildResult bt = build_transform(bn, s, sc.mc, sc.opt);
    const ConjugatedCoeffs cc = conjugate(bt.transform, s);
    const Mat flows = flows_for(bt.transform, cc);
    StabilityLevel lev;
    lev.level = n;
    lev.sup_diff = (flows - ref_flows).colwise().norm().maxCoeff();
    lev.lambda = bt.selection.lambda;
    lev.gamma_cert = bt.selection.gamma_cert;
    res.levels.push_back(lev);
  }
  return res;
}

}  // namespace flowlab
