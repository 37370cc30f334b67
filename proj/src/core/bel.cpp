#include "core/bel.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "core/parallel.hpp"
#include "core/rng.hpp"

namespace flowlab {

namespace {

std::pair<std::string, std::string> split_head(const std::string& s) {
  const auto pos = s.find(':');
  if (pos == std::string::npos) return {s, ""};
  return {s.substr(0, pos), s.substr(pos + 1)};
}

double parse_value(const std::string& args, const std::string& key, bool required,
                   double fallback, const std::string& who) {
  std::size_t at = 0;
  while (at < args.size()) {
    auto end = args.find(',', at);
    if (end == std::string::npos) end = args.size();
    const std::string item = args.substr(at, end - at);
    const auto eq = item.find('=');
    if (eq != std::string::npos && item.substr(0, eq) == key) {
      try {
        std::size_t used = 0;
        const double v = std::stod(item.substr(eq + 1), &used);
        require_config(used == item.size() - eq - 1, who + ": malformed value for " + key);
        return v;
      } catch (const config_error&) {
        throw;
      } catch (const std::exception&) {
        throw config_error(who + ": malformed value for " + key);
      }
    }
    at = end + 1;
  }
  require_config(!required, who + ": missing required parameter " + key);
  return fallback;
}

}  // namespace

Observable Observable::preset(const std::string& name, int dim) {
  require_config(dim >= 1, "observable needs dim >= 1");
  auto [head, args] = split_head(name);
  // Tool shorthand: the single parameter may be given positionally, as in
  // "coord:0" or "holder:0.5".
  if (!args.empty() && args.find('=') == std::string::npos) {
    if (head == "coord")
      args = "i=" + args;
    else if (head == "holder")
      args = "theta=" + args;
    else if (head == "const")
      args = "c=" + args;
  }
  Observable f;
  f.dim = dim;
  f.label = name;
  if (head == "const") {
    const double c = parse_value(args, "c", false, 1.0, "observable const");
    f.eval = [c](const Vec&) { return c; };
  } else if (head == "coord") {
    const double iv = parse_value(args, "i", false, 0.0, "observable coord");
    const int i = int(iv);
    require_config(double(i) == iv && i >= 0 && i < dim,
                   "observable coord: index out of range");
    f.eval = [i](const Vec& x) { return x(i); };
  } else if (head == "sq") {
    f.eval = [](const Vec& x) { return x.squaredNorm(); };
  } else if (head == "holder") {
    const double theta = parse_value(args, "theta", true, 0.0, "observable holder");
    require_config(theta > 0.0 && theta <= 1.0, "observable holder: theta must be in (0,1]");
    f.theta = theta;
    f.eval = [theta](const Vec& x) { return std::pow(x.norm(), theta); };
  } else {
    throw config_error("unknown observable preset '" + name + "'");
  }
  return f;
}

namespace {

TimeGrid mc_grid(const McConfig& cfg) {
  require_config(cfg.t > 0.0 && cfg.dt > 0.0, "Monte Carlo run needs positive t and dt");
  require_config(cfg.n_paths >= 2, "Monte Carlo run needs n_paths >= 2");
  const auto steps = std::int64_t(std::llround(cfg.t / cfg.dt));
  require_config(steps >= 1 && std::abs(double(steps) * cfg.dt - cfg.t) <=
                                   1e-9 * std::max(1.0, cfg.t),
                 "Monte Carlo run: t must be an integer multiple of dt");
  return TimeGrid(0.0, cfg.t, steps);
}

struct ScalarAcc {
  double sum = 0.0;
  double sumsq = 0.0;
  std::int64_t n = 0;
  void add(double v) {
    sum += v;
    sumsq += v * v;
    ++n;
  }
  static ScalarAcc fold(ScalarAcc a, ScalarAcc b) {
    a.sum += b.sum;
    a.sumsq += b.sumsq;
    a.n += b.n;
    return a;
  }
  McScalar finish() const {
    McScalar out;
    out.n = n;
    out.mean = sum / double(n);
    const double var = std::max(0.0, (sumsq - double(n) * out.mean * out.mean) / double(n - 1));
    out.stderr_ = std::sqrt(var / double(n));
    return out;
  }
};

template <class PerPath>
McScalar scalar_mc(const McConfig& cfg, PerPath per_path) {
  auto map_chunk = [&](std::int64_t lo, std::int64_t hi) {
    ScalarAcc acc;
    for (std::int64_t p = lo; p < hi; ++p) acc.add(per_path(p));
    return acc;
  };
  return chunked_reduce<ScalarAcc>(cfg.n_paths, cfg.chunk, cfg.workers, map_chunk,
                                   ScalarAcc{}, ScalarAcc::fold)
      .finish();
}

}  // namespace

McScalar semigroup(const DriftField& b, const DiffusionSpec& s, const Observable& f,
                   const Vec& x, const McConfig& cfg) {
  require_config(b.dim == s.dim && f.dim == b.dim, "semigroup dimension mismatch");
  const TimeGrid grid = mc_grid(cfg);
  return scalar_mc(cfg, [&](std::int64_t p) {
    const BrownianDriver drv(cfg.seed, p, s.dim_noise, 0.0, grid.t_end(), grid.steps);
    const PathRecord rec = simulate(b, s, x, drv, grid);
    return f.eval(rec.states.col(grid.steps));
  });
}

McScalar fd_gradient(const DriftField& b, const DiffusionSpec& s, const Observable& f,
                     const Vec& x, const Vec& h, double step, const McConfig& cfg) {
  require_config(b.dim == s.dim && f.dim == b.dim, "fd_gradient dimension mismatch");
  require_config(step > 0.0, "fd_gradient needs a positive step");
  require_config(h.size() == x.size(), "fd_gradient direction dimension mismatch");
  const TimeGrid grid = mc_grid(cfg);
  const Vec xp = x + step * h;
  const Vec xm = x - step * h;
  return scalar_mc(cfg, [&](std::int64_t p) {
    const BrownianDriver drv(cfg.seed, p, s.dim_noise, 0.0, grid.t_end(), grid.steps);
    const PathRecord plus = simulate(b, s, xp, drv, grid);
    const PathRecord minus = simulate(b, s, xm, drv, grid);
    return (f.eval(plus.states.col(grid.steps)) - f.eval(minus.states.col(grid.steps))) /
           (2.0 * step);
  });
}

// ---------------------------------------------------------------------------
// Gradient identity runs

namespace {

// Everything a gradient run needs at the current state, fused so the
// transformed route inverts the coordinate change once per step.
struct StepModel {
  int dim = 0;
  int dim_noise = 0;
  std::function<void(const Vec& y, Vec& bv, Mat& db, Mat& sig)> at;
  std::function<void(const Vec& y, const Vec& eta, Mat& out)> dsig;
  std::function<double(const Vec& y)> observe;
  std::function<void(const Vec& y, Vec& bv)> drift_only;
};

StepModel direct_model(const DriftField& b, const DiffusionSpec& s, const Observable& f) {
  require_config(b.dim == s.dim && f.dim == b.dim, "gradient run dimension mismatch");
  if (!b.has_jacobian())
    throw config_error("drift '" + b.label +
                       "' has no Jacobian; mollify it or use the transformed route");
  StepModel m;
  m.dim = b.dim;
  m.dim_noise = s.dim_noise;
  m.at = [b, s](const Vec& y, Vec& bv, Mat& db, Mat& sig) {
    b.eval_into(y, bv);
    db = b.jacobian(y);
    s.sigma_into(y, sig);
  };
  m.dsig = [s](const Vec& y, const Vec& eta, Mat& out) { out = s.dsigma(y, eta); };
  m.observe = f.eval;
  m.drift_only = [b](const Vec& y, Vec& bv) { b.eval_into(y, bv); };
  return m;
}

StepModel transformed_model(const ZvonkinTransform& T, const DiffusionSpec& s,
                            const Observable& f) {
  require_config(T.dim() == s.dim && f.dim == T.dim(), "gradient run dimension mismatch");
  StepModel m;
  const int d = T.dim();
  const double lambda = T.lambda();
  const int terms = T.options().neumann_terms;
  const double tail = T.options().neumann_tail;
  m.dim = d;
  m.dim_noise = s.dim_noise;
  m.at = [T, s, lambda, terms, tail, d](const Vec& y, Vec& bv, Mat& db, Mat& sig) {
    const Vec x = T.invert(y);
    Vec p(d);
    Mat g(d, d);
    T.psi(x, &p, &g);
    bv = lambda * p;
    db = lambda * g * neumann_inverse(g, terms, tail);
    sig = (Mat::Identity(d, d) + g) * s.sigma(x);
  };
  auto sigma_tilde = [T, s, d](const Vec& y) {
    const Vec x = T.invert(y);
    Mat g(d, d);
    T.psi(x, nullptr, &g);
    return Mat((Mat::Identity(d, d) + g) * s.sigma(x));
  };
  m.dsig = [sigma_tilde, h = s.fd_step](const Vec& y, const Vec& eta, Mat& out) {
    out = (sigma_tilde(y + h * eta) - sigma_tilde(y - h * eta)) / (2.0 * h);
  };
  m.observe = [T, f](const Vec& y) { return f.eval(T.invert(y)); };
  m.drift_only = [T, lambda, d](const Vec& y, Vec& bv) {
    const Vec x = T.invert(y);
    Vec p(d);
    T.psi(x, &p, nullptr);
    bv = lambda * p;
  };
  return m;
}

struct Marks {
  TimeGrid grid;
  std::vector<std::int64_t> steps;
  std::vector<double> times;
};

Marks make_marks(const std::vector<double>& times, const McConfig& cfg) {
  require_config(!times.empty(), "gradient run needs at least one time");
  Marks mk;
  mk.times = times;
  double prev = 0.0;
  for (double t : times) {
    require_config(t > prev, "gradient run times must be positive, increasing, distinct");
    prev = t;
  }
  McConfig top = cfg;
  top.t = times.back();
  mk.grid = mc_grid(top);
  for (double t : times) {
    const auto j = std::int64_t(std::llround(t / mk.grid.dt));
    require_config(std::abs(double(j) * mk.grid.dt - t) <= 1e-9 * std::max(1.0, t),
                   "gradient run: every mark must sit on the dt grid");
    mk.steps.push_back(j);
  }
  return mk;
}

// Deterministic RK4 drift flow sampled at the marks; the control variate.
Vec control_values(const StepModel& m, const Vec& y0, const Marks& mk, bool enabled) {
  const std::size_t nm = mk.steps.size();
  Vec cv = Vec::Zero(std::int64_t(nm));
  if (!enabled) return cv;
  const double dt = mk.grid.dt;
  Vec y = y0, k1(m.dim), k2(m.dim), k3(m.dim), k4(m.dim);
  std::size_t mi = 0;
  for (std::int64_t j = 0; j < mk.grid.steps && mi < nm; ++j) {
    m.drift_only(y, k1);
    m.drift_only(y + (0.5 * dt) * k1, k2);
    m.drift_only(y + (0.5 * dt) * k2, k3);
    m.drift_only(y + dt * k3, k4);
    y += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    while (mi < nm && mk.steps[mi] == j + 1) {
      cv(std::int64_t(mi)) = m.observe(y);
      ++mi;
    }
  }
  return cv;
}

struct SeriesAcc {
  // rows: sum g, sum g^2, sum (f-cv)^2, sum J1^2, sum J1
  Mat sums;
  std::int64_t n = 0;
  explicit SeriesAcc(std::int64_t marks = 0) : sums(Mat::Zero(5, marks)) {}
  static SeriesAcc fold(SeriesAcc a, SeriesAcc b) {
    a.sums += b.sums;
    a.n += b.n;
    return a;
  }
};

SeriesAcc run_series(const StepModel& m, const Vec& y0, const Vec& eta0, const Marks& mk,
                     const Vec& cv, const McConfig& cfg) {
  const std::int64_t nm = std::int64_t(mk.steps.size());
  const double dt = mk.grid.dt;

  auto map_chunk = [&](std::int64_t lo, std::int64_t hi) {
    SeriesAcc acc(nm);
    Vec X(m.dim), eta(m.dim), bv(m.dim), w(m.dim_noise);
    Mat db(m.dim, m.dim), sig(m.dim, m.dim_noise), dsig(m.dim, m.dim_noise);
    Mat A(m.dim, m.dim);
    Eigen::PartialPivLU<Mat> lu(m.dim);
    for (std::int64_t p = lo; p < hi; ++p) {
      const BrownianDriver drv(cfg.seed, p, m.dim_noise, 0.0, mk.grid.t_end(),
                               mk.grid.steps);
      const Mat dW = drv.increments(mk.grid);
      X = y0;
      eta = eta0;
      double S = 0.0;
      std::int64_t mi = 0;
      for (std::int64_t j = 0; j < mk.grid.steps; ++j) {
        if (!(X.cwiseAbs().maxCoeff() <= kBlowupGuard)) {
          std::ostringstream os;
          os << "gradient run path " << p << " tripped the blow-up guard at step " << j;
          throw numeric_error(os.str(), j);
        }
        m.at(X, bv, db, sig);
        A.noalias() = sig * sig.transpose();
        // Weight at the left endpoint keeps E[J1] = 0 exact.
        lu.compute(A);
        const Vec z = lu.solve(eta);
        if (!z.allFinite()) {
          std::ostringstream os;
          os << "degenerate diffusion in gradient run at step " << j;
          throw numeric_error(os.str(), j);
        }
        w.noalias() = sig.transpose() * z;
        S += w.dot(dW.col(j));
        m.dsig(X, eta, dsig);
        X = X + bv * dt + sig * dW.col(j);
        eta = eta + (db * eta) * dt + dsig * dW.col(j);
        while (mi < nm && mk.steps[std::size_t(mi)] == j + 1) {
          const double t = mk.times[std::size_t(mi)];
          const double j1 = S / t;
          const double fdiff = m.observe(X) - cv(mi);
          const double g = fdiff * j1;
          acc.sums(0, mi) += g;
          acc.sums(1, mi) += g * g;
          acc.sums(2, mi) += fdiff * fdiff;
          acc.sums(3, mi) += j1 * j1;
          acc.sums(4, mi) += j1;
          ++mi;
        }
      }
      ++acc.n;
    }
    return acc;
  };

  return chunked_reduce<SeriesAcc>(cfg.n_paths, cfg.chunk, cfg.workers, map_chunk,
                                   SeriesAcc(nm), SeriesAcc::fold);
}

BelResult bel_at_mark(const SeriesAcc& acc, const Vec& cv, std::int64_t mi) {
  BelResult r;
  const double n = double(acc.n);
  r.n = acc.n;
  r.value = acc.sums(0, mi) / n;
  const double var =
      std::max(0.0, (acc.sums(1, mi) - n * r.value * r.value) / (n - 1.0));
  r.stderr_ = std::sqrt(var / n);
  r.f_rms = std::sqrt(acc.sums(2, mi) / n);
  r.j1_rms = std::sqrt(acc.sums(3, mi) / n);
  r.j1_mean = acc.sums(4, mi) / n;
  const double j1_var =
      std::max(0.0, (acc.sums(3, mi) - n * r.j1_mean * r.j1_mean) / (n - 1.0));
  r.j1_stderr = std::sqrt(j1_var / n);
  r.cv = cv(mi);
  return r;
}

struct LogFit {
  double slope = std::numeric_limits<double>::quiet_NaN();
  double intercept = std::numeric_limits<double>::quiet_NaN();
  std::size_t used = 0;
};

LogFit fit_loglog(const std::vector<std::pair<double, double>>& pts) {
  LogFit fit;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& [t, v] : pts) {
    const double lx = std::log(t);
    const double ly = std::log(v);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  fit.used = pts.size();
  if (fit.used < 3) return fit;
  const double n = double(fit.used);
  const double denom = n * sxx - sx * sx;
  fit.slope = (n * sxy - sx * sy) / denom;
  fit.intercept = (sy - fit.slope * sx) / n;
  return fit;
}

DecayResult decay_from_series(const Marks& mk, const SeriesAcc& acc, const Vec& cv,
                              const DecayConfig& cfg) {
  DecayResult out;
  std::vector<std::pair<double, double>> value_pts, env_pts;
  for (std::int64_t mi = 0; mi < std::int64_t(mk.steps.size()); ++mi) {
    const BelResult r = bel_at_mark(acc, cv, mi);
    DecayPoint pt;
    pt.t = mk.times[std::size_t(mi)];
    pt.bel_value = r.value;
    pt.bel_stderr = r.stderr_;
    pt.f_rms = r.f_rms;
    pt.j1_rms = r.j1_rms;
    pt.envelope = r.f_rms * r.j1_rms;
    pt.included =
        std::abs(pt.bel_value) > 0.0 && pt.bel_stderr <= cfg.exclude_rel_stderr * std::abs(pt.bel_value);
    if (pt.included) value_pts.emplace_back(pt.t, std::abs(pt.bel_value));
    if (pt.envelope > 0.0) env_pts.emplace_back(pt.t, pt.envelope);
    out.points.push_back(pt);
  }
  const LogFit vf = fit_loglog(value_pts);
  out.value_slope = vf.slope;
  out.value_intercept = vf.intercept;
  out.value_used = vf.used;
  const LogFit ef = fit_loglog(env_pts);
  out.env_slope = ef.slope;
  out.env_intercept = ef.intercept;
  out.env_used = ef.used;
  if (out.env_used < 3) {
    std::ostringstream os;
    os << "decay probe: only " << out.env_used
       << " marks carry a positive envelope (need 3); the observable is degenerate here";
    throw numeric_error(os.str());
  }
  return out;
}

const std::vector<double>& default_decay_times() {
  static const std::vector<double> times{0.05, 0.08, 0.13, 0.2, 0.32, 0.5, 0.8};
  return times;
}

}  // namespace

BelResult bel_gradient(const DriftField& b, const DiffusionSpec& s, const Observable& f,
                       const Vec& x, const Vec& h, const McConfig& cfg) {
  require_config(h.size() == x.size(), "gradient direction dimension mismatch");
  const StepModel m = direct_model(b, s, f);
  const Marks mk = make_marks({cfg.t}, cfg);
  const Vec cv = control_values(m, x, mk, cfg.control_variate);
  const SeriesAcc acc = run_series(m, x, h, mk, cv, cfg);
  return bel_at_mark(acc, cv, 0);
}

BelResult bel_gradient_transformed(const ZvonkinTransform& T, const DiffusionSpec& s,
                                   const Observable& f, const Vec& x, const Vec& h,
                                   const McConfig& cfg) {
  require_config(h.size() == x.size(), "gradient direction dimension mismatch");
  const StepModel m = transformed_model(T, s, f);
  const Marks mk = make_marks({cfg.t}, cfg);
  const Vec y0 = T.forward(x);
  const Vec eta0 = T.forward_jacobian(x) * h;
  const Vec cv = control_values(m, y0, mk, cfg.control_variate);
  const SeriesAcc acc = run_series(m, y0, eta0, mk, cv, cfg);
  return bel_at_mark(acc, cv, 0);
}

DecayResult decay_probe(const DriftField& b, const DiffusionSpec& s, const Observable& f,
                        const Vec& x, const Vec& h, const DecayConfig& cfg) {
  const std::vector<double>& times = cfg.times.empty() ? default_decay_times() : cfg.times;
  const StepModel m = direct_model(b, s, f);
  const Marks mk = make_marks(times, cfg.mc);
  const Vec cv = control_values(m, x, mk, cfg.mc.control_variate);
  const SeriesAcc acc = run_series(m, x, h, mk, cv, cfg.mc);
  return decay_from_series(mk, acc, cv, cfg);
}

DecayResult decay_probe_transformed(const ZvonkinTransform& T, const DiffusionSpec& s,
                                    const Observable& f, const Vec& x, const Vec& h,
                                    const DecayConfig& cfg) {
  const std::vector<double>& times = cfg.times.empty() ? default_decay_times() : cfg.times;
  const StepModel m = transformed_model(T, s, f);
  const Marks mk = make_marks(times, cfg.mc);
  const Vec y0 = T.forward(x);
  const Vec eta0 = T.forward_jacobian(x) * h;
  const Vec cv = control_values(m, y0, mk, cfg.mc.control_variate);
  const SeriesAcc acc = run_series(m, y0, eta0, mk, cv, cfg.mc);
  return decay_from_series(mk, acc, cv, cfg);
}

}  // namespace flowlab
