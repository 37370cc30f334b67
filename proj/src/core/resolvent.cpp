#include "core/resolvent.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <limits>
#include <mutex>
#include <sstream>

#include "core/parallel.hpp"
#include "core/paths.hpp"
#include "core/rng.hpp"

namespace flowlab {

double ResolventConfig::horizon(double lambda, double x_sup, double trunc_tol) {
  require_config(lambda > 0.0, "resolvent needs lambda > 0");
  require_config(trunc_tol > 0.0, "resolvent needs trunc_tol > 0");
  const double floor_t = std::max(1.0, 10.0 / lambda);
  const double needed = std::log((1.0 + x_sup) / trunc_tol) / lambda;
  return std::max(floor_t, needed);
}

ResolventConfig ResolventConfig::resolved(double x_sup) const {
  ResolventConfig c = *this;
  require_config(c.lambda > 0.0, "resolvent needs lambda > 0");
  require_config(c.dt > 0.0, "resolvent needs dt > 0");
  require_config(c.n_paths >= 100, "resolvent needs n_paths >= 100");
  require_config(c.fd_step > 0.0, "resolvent needs fd_step > 0");
  require_config(c.trunc_tol > 0.0, "resolvent needs trunc_tol > 0");
  if (c.t_max == 0.0) c.t_max = horizon(c.lambda, x_sup, c.trunc_tol);
  const double trunc = std::exp(-c.lambda * c.t_max) * (1.0 + x_sup);
  if (trunc > c.trunc_tol * (1.0 + 1e-12)) {
    std::ostringstream os;
    os << "truncation invariant violated: exp(-lambda t_max)(1+sup|x|) = " << trunc
       << " > " << c.trunc_tol << " (lambda=" << c.lambda << ", t_max=" << c.t_max << ")";
    throw config_error(os.str());
  }
  require_config(c.t_max >= c.dt, "resolvent needs t_max >= dt");
  return c;
}

namespace {

struct MomentAcc {
  Vec sum;
  Vec sumsq;
  std::int64_t n = 0;

  explicit MomentAcc(int dim = 0) : sum(Vec::Zero(dim)), sumsq(Vec::Zero(dim)) {}

  void add(const Vec& v) {
    sum += v;
    sumsq += v.cwiseProduct(v);
    ++n;
  }
  static MomentAcc fold(MomentAcc a, MomentAcc b) {
    a.sum += b.sum;
    a.sumsq += b.sumsq;
    a.n += b.n;
    return a;
  }
  Vec mean() const { return sum / double(n); }
  Vec stderr_() const {
    Vec m = mean();
    Vec var = (sumsq - double(n) * m.cwiseProduct(m)).cwiseMax(0.0) / double(n - 1);
    return (var / double(n)).cwiseSqrt();
  }
};

// Exactly integrated discount over each step, drift frozen at the left node:
// w_j = e^{-lambda t_j} (1 - e^{-lambda dt}) / lambda.
Vec discount_weights(double lambda, const TimeGrid& grid) {
  Vec w(grid.steps);
  const double factor = (1.0 - std::exp(-lambda * grid.dt)) / lambda;
  for (std::int64_t j = 0; j < grid.steps; ++j)
    w(j) = std::exp(-lambda * grid.dt * double(j)) * factor;
  return w;
}

// For each path, accumulates the discounted drift integral along the Euler
// path from every start (all starts share the path's increments), then hands
// the d x n_starts matrix to sink which fills an out_dim statistics vector.
template <class Sink>
MomentAcc mc_over_paths(const DriftField& b, const DiffusionSpec& s,
                        const ResolventConfig& cfg, const TimeGrid& grid,
                        const std::vector<Vec>& starts, int out_dim, Sink sink) {
  const int d = b.dim;
  const int k = s.dim_noise;
  const int ns = int(starts.size());
  const Vec weights = discount_weights(cfg.lambda, grid);

  auto map_chunk = [&](std::int64_t lo, std::int64_t hi) -> MomentAcc {
    MomentAcc acc(out_dim);
    Mat S(d, ns);
    Vec X(d), bX(d), out(out_dim);
    Mat sig(d, k);
    for (std::int64_t p = lo; p < hi; ++p) {
      const BrownianDriver drv(cfg.seed, p, k, 0.0, grid.t_end(), grid.steps);
      const Mat dW = drv.increments(grid);
      S.setZero();
      for (int i = 0; i < ns; ++i) {
        X = starts[std::size_t(i)];
        if (s.constant_sigma) s.sigma_into(X, sig);
        for (std::int64_t j = 0; j < grid.steps; ++j) {
          if (!(X.cwiseAbs().maxCoeff() <= kBlowupGuard)) {
            std::ostringstream os;
            os << "resolvent path " << p << " tripped the blow-up guard at step " << j;
            throw numeric_error(os.str(), j);
          }
          b.eval_into(X, bX);
          S.col(i) += weights(j) * bX;
          if (!s.constant_sigma) s.sigma_into(X, sig);
          X += bX * grid.dt;
          X.noalias() += sig * dW.col(j);
        }
      }
      sink(S, out);
      acc.add(out);
    }
    return acc;
  };

  return chunked_reduce<MomentAcc>(cfg.n_paths, cfg.chunk, cfg.workers, map_chunk,
                                   MomentAcc(out_dim), MomentAcc::fold);
}

TimeGrid resolvent_grid(const ResolventConfig& cfg) {
  const auto steps = std::int64_t(std::ceil(cfg.t_max / cfg.dt - 1e-12));
  return TimeGrid(0.0, double(steps) * cfg.dt, steps);
}

double sup_norm(const std::vector<Vec>& points) {
  double s = 0.0;
  for (const auto& p : points) s = std::max(s, p.norm());
  return s;
}

}  // namespace

ResolventSolution solve_psi(const DriftField& b, const DiffusionSpec& s,
                            const ResolventConfig& cfg, const std::vector<Vec>& points) {
  require_config(b.dim == s.dim, "drift and diffusion dimensions disagree");
  require_config(!points.empty(), "solve_psi needs at least one query point");
  const int d = b.dim;
  const int m = int(points.size());
  const ResolventConfig rc = cfg.resolved(sup_norm(points));
  const TimeGrid grid = resolvent_grid(rc);

  const int starts_per_point = rc.compute_grad ? 1 + 2 * d : 1;
  std::vector<Vec> starts;
  starts.reserve(std::size_t(m) * std::size_t(starts_per_point));
  for (const auto& x : points) {
    starts.push_back(x);
    if (!rc.compute_grad) continue;
    for (int i = 0; i < d; ++i) {
      Vec e = Vec::Zero(d);
      e(i) = rc.fd_step;
      starts.push_back(x + e);
      starts.push_back(x - e);
    }
  }

  const int per_point = rc.compute_grad ? d + d * d : d;
  const int out_dim = m * per_point;
  auto sink = [&](const Mat& S, Vec& out) {
    for (int q = 0; q < m; ++q) {
      const int base = q * starts_per_point;
      const int ob = q * per_point;
      out.segment(ob, d) = S.col(base);
      if (!rc.compute_grad) continue;
      for (int i = 0; i < d; ++i)
        out.segment(ob + d + i * d, d) =
            (S.col(base + 1 + 2 * i) - S.col(base + 2 + 2 * i)) / (2.0 * rc.fd_step);
    }
  };

  const MomentAcc acc = mc_over_paths(b, s, rc, grid, starts, out_dim, sink);
  const Vec mean = acc.mean();
  const Vec se = acc.stderr_();

  ResolventSolution sol;
  sol.points = points;
  sol.lambda = rc.lambda;
  sol.config = rc;
  sol.psi.resize(d, m);
  sol.psi_stderr.resize(d, m);
  sol.grad_psi.assign(std::size_t(m), Mat(Mat::Zero(d, d)));
  sol.grad_stderr.assign(std::size_t(m), Mat(Mat::Zero(d, d)));
  for (int q = 0; q < m; ++q) {
    const int ob = q * per_point;
    sol.psi.col(q) = mean.segment(ob, d);
    sol.psi_stderr.col(q) = se.segment(ob, d);
    if (!rc.compute_grad) continue;
    for (int i = 0; i < d; ++i) {
      sol.grad_psi[std::size_t(q)].col(i) = mean.segment(ob + d + i * d, d);
      sol.grad_stderr[std::size_t(q)].col(i) = se.segment(ob + d + i * d, d);
    }
    sol.grad_sup_est = std::max(sol.grad_sup_est, sol.grad_psi[std::size_t(q)].operatorNorm());
    sol.grad_sup_stderr =
        std::max(sol.grad_sup_stderr, sol.grad_stderr[std::size_t(q)].norm());
  }
  return sol;
}

LambdaSelection select_lambda(const DriftField& b, const DiffusionSpec& s,
                              const std::vector<double>& ladder, double gamma,
                              const ResolventConfig& cfg_base,
                              const std::vector<Vec>& points) {
  require_config(!ladder.empty(), "lambda selection needs a non-empty ladder");
  require_config(gamma > 0.0 && gamma < 1.0, "lambda selection needs gamma in (0,1)");
  std::vector<double> rungs_sorted = ladder;
  std::sort(rungs_sorted.begin(), rungs_sorted.end());

  LambdaSelection sel;
  for (double lam : rungs_sorted) {
    ResolventConfig c = cfg_base;
    c.lambda = lam;
    c.t_max = 0.0;  // horizon re-derived per rung
    c.compute_grad = true;
    // The same seed across rungs couples the ladder by common noise.
    ResolventSolution sol = solve_psi(b, s, c, points);
    LambdaRung rung;
    rung.lambda = lam;
    rung.grad_sup_est = sol.grad_sup_est;
    rung.grad_sup_stderr = sol.grad_sup_stderr;
    rung.certified = sol.grad_sup_est + 2.0 * sol.grad_sup_stderr;
    sel.rungs.push_back(rung);
    if (rung.certified <= gamma) {
      sel.lambda = lam;
      sel.gamma_cert = rung.certified;
      sel.solution = std::move(sol);
      return sel;
    }
  }

  std::ostringstream os;
  os << "lambda selection failed for gamma = " << gamma << ":";
  double best = std::numeric_limits<double>::infinity();
  for (const auto& r : sel.rungs) {
    os << " lambda=" << r.lambda << " certified 'Dpsi' bound " << r.certified << ";";
    best = std::min(best, r.certified);
  }
  os << " smallest bound " << best << " -- extend the ladder or relax gamma";
  throw numeric_error(os.str());
}

ResidualReport residual_check(const DriftField& b, const DiffusionSpec& s,
                              const ResolventConfig& cfg, const std::vector<Vec>& points,
                              double stencil_step) {
  require_config(stencil_step > 0.0, "residual check needs a positive stencil step");
  require_config(!points.empty(), "residual check needs points");
  const int d = b.dim;
  const int m = int(points.size());
  const double delta = stencil_step;
  const ResolventConfig rc = cfg.resolved(sup_norm(points) + 2.0 * delta);
  const TimeGrid grid = resolvent_grid(rc);

  // Stencil per point: center, +-delta e_l, then the 4 cross points per (l,m).
  const int n_cross = d * (d - 1) / 2;
  const int per_pt = 1 + 2 * d + 4 * n_cross;
  std::vector<Vec> starts;
  starts.reserve(std::size_t(m) * std::size_t(per_pt));
  for (const auto& x : points) {
    starts.push_back(x);
    for (int l = 0; l < d; ++l) {
      Vec e = Vec::Zero(d);
      e(l) = delta;
      starts.push_back(x + e);
      starts.push_back(x - e);
    }
    for (int l = 0; l < d; ++l)
      for (int mm = l + 1; mm < d; ++mm) {
        Vec el = Vec::Zero(d), em = Vec::Zero(d);
        el(l) = delta;
        em(mm) = delta;
        starts.push_back(x + el + em);
        starts.push_back(x + el - em);
        starts.push_back(x - el + em);
        starts.push_back(x - el - em);
      }
  }

  std::vector<Mat> a_at(points.size());
  std::vector<Vec> b_at(points.size());
  for (std::size_t q = 0; q < points.size(); ++q) {
    a_at[q] = s.a(points[q]);
    b_at[q] = b.eval(points[q]);
  }

  const int out_dim = m * d;
  auto sink = [&](const Mat& S, Vec& out) {
    for (int q = 0; q < m; ++q) {
      const int base = q * per_pt;
      Vec R = rc.lambda * S.col(base) - b_at[std::size_t(q)];
      // second differences
      for (int l = 0; l < d; ++l) {
        const Vec d2 =
            (S.col(base + 1 + 2 * l) - 2.0 * S.col(base) + S.col(base + 2 + 2 * l)) /
            (delta * delta);
        R -= 0.5 * a_at[std::size_t(q)](l, l) * d2;
        const Vec d1 = (S.col(base + 1 + 2 * l) - S.col(base + 2 + 2 * l)) / (2.0 * delta);
        R -= b_at[std::size_t(q)](l) * d1;
      }
      int cross = base + 1 + 2 * d;
      for (int l = 0; l < d; ++l)
        for (int mm = l + 1; mm < d; ++mm) {
          const Vec dlm = (S.col(cross) - S.col(cross + 1) - S.col(cross + 2) +
                           S.col(cross + 3)) /
                          (4.0 * delta * delta);
          R -= a_at[std::size_t(q)](l, mm) * dlm;  // covers (l,m) and (m,l)
          cross += 4;
        }
      out.segment(q * d, d) = R;
    }
  };

  const MomentAcc acc = mc_over_paths(b, s, rc, grid, starts, out_dim, sink);
  ResidualReport rep;
  rep.max_residual = acc.mean().cwiseAbs().maxCoeff();
  rep.noise = acc.stderr_().maxCoeff();
  for (const auto& bx : b_at) rep.scale = std::max(rep.scale, bx.cwiseAbs().maxCoeff());
  rep.conclusive = 3.0 * rep.noise <= 0.5 * std::max(rep.scale, 1e-12);
  return rep;
}

// ---------------------------------------------------------------------------
// PsiLattice

namespace {

struct LatticeKey {
  std::array<std::int32_t, 3> idx{0, 0, 0};
  bool operator==(const LatticeKey& o) const { return idx == o.idx; }
};

struct LatticeKeyHash {
  std::size_t operator()(const LatticeKey& k) const {
    std::uint64_t h = 0x9E3779B97F4A7C15ull;
    for (int i = 0; i < 3; ++i)
      h = splitmix64(h ^ (std::uint64_t(std::uint32_t(k.idx[std::size_t(i)])) + 0x1234567ull * std::uint64_t(i + 1)));
    return std::size_t(h);
  }
};

double multiquadric(double r2, double c2) { return std::sqrt(r2 + c2); }

}  // namespace

struct PsiLattice::Impl {
  DriftField b;
  DiffusionSpec s;
  ResolventConfig cfg;
  double h;
  double span;
  int d;
  int stencil_size;
  Mat offsets;       // d x stencil_size, in lattice units
  Mat stencil_inv;   // stencil_size x stencil_size
  std::uint64_t seed_base;
  mutable std::unordered_map<LatticeKey, std::pair<Vec, Mat>, LatticeKeyHash> nodes;
  mutable std::mutex mu;

  Impl(DriftField b_, DiffusionSpec s_, ResolventConfig cfg_, double h_, double span_)
      : b(std::move(b_)), s(std::move(s_)), h(h_), span(span_), d(b.dim) {
    require_config(d >= 1 && d <= 3, "psi lattice supports dim in [1,3]");
    require_config(h > 0.0, "psi lattice needs a positive spacing");
    cfg_.compute_grad = true;  // nodes always carry the gradient
    cfg = cfg_.resolved(span * std::sqrt(double(d)));
    seed_base = derive_seed(cfg.seed, "psi-lattice");

    stencil_size = 1;
    for (int i = 0; i < d; ++i) stencil_size *= 4;
    offsets.resize(d, stencil_size);
    for (int i = 0; i < stencil_size; ++i) {
      int rem = i;
      for (int ax = 0; ax < d; ++ax) {
        offsets(ax, i) = double((rem % 4) - 1);  // {-1, 0, 1, 2}
        rem /= 4;
      }
    }
    Mat A(stencil_size, stencil_size);
    const double c2 = h * h;
    for (int i = 0; i < stencil_size; ++i)
      for (int j = 0; j < stencil_size; ++j)
        A(i, j) = multiquadric((h * (offsets.col(i) - offsets.col(j))).squaredNorm(), c2);
    Eigen::FullPivLU<Mat> lu(A);
    require_config(lu.isInvertible(), "multiquadric stencil matrix is singular");
    stencil_inv = lu.inverse();
  }

  std::pair<Vec, Mat> solve_node(const LatticeKey& key) const {
    Vec x(d);
    for (int ax = 0; ax < d; ++ax) x(ax) = h * double(key.idx[std::size_t(ax)]);
    ResolventConfig c = cfg;
    LatticeKeyHash hash;
    c.seed = derive_seed(seed_base, std::uint64_t(hash(key)));
    const ResolventSolution sol = solve_psi(b, s, c, {x});
    return {Vec(sol.psi.col(0)), sol.grad_psi[0]};
  }

  const std::pair<Vec, Mat>& ensure(const LatticeKey& key) const {
    {
      std::lock_guard<std::mutex> lock(mu);
      auto it = nodes.find(key);
      if (it != nodes.end()) return it->second;
    }
    auto value = solve_node(key);  // outside the lock; value depends only on key
    std::lock_guard<std::mutex> lock(mu);
    return nodes.emplace(key, std::move(value)).first->second;
  }
};

PsiLattice::PsiLattice(DriftField b, DiffusionSpec s, ResolventConfig cfg, double spacing,
                       double span_limit)
    : impl_(std::make_shared<Impl>(std::move(b), std::move(s), cfg, spacing, span_limit)),
      spacing_(spacing),
      cfg_(impl_->cfg) {}

void PsiLattice::eval(const Vec& x, Vec* psi, Mat* grad) const {
  const Impl& im = *impl_;
  const int d = im.d;
  require_config(x.size() == d, "psi lattice dimension mismatch");
  if (!(x.cwiseAbs().maxCoeff() <= im.span)) {
    std::ostringstream os;
    os << "psi lattice query |x| = " << x.cwiseAbs().maxCoeff() << " exceeds span limit "
       << im.span;
    throw numeric_error(os.str());
  }

  std::array<std::int64_t, 3> base{0, 0, 0};
  for (int ax = 0; ax < d; ++ax) base[std::size_t(ax)] = std::int64_t(std::floor(x(ax) / im.h));

  Vec f(im.stencil_size);
  std::vector<const std::pair<Vec, Mat>*> vals(std::size_t(im.stencil_size));
  for (int i = 0; i < im.stencil_size; ++i) {
    LatticeKey key;
    Vec node_pos(d);
    for (int ax = 0; ax < d; ++ax) {
      const std::int64_t ix = base[std::size_t(ax)] + std::int64_t(im.offsets(ax, i));
      key.idx[std::size_t(ax)] = std::int32_t(ix);
      node_pos(ax) = im.h * double(ix);
    }
    vals[std::size_t(i)] = &im.ensure(key);
    f(i) = multiquadric((x - node_pos).squaredNorm(), im.h * im.h);
  }

  const Vec w = im.stencil_inv * f;
  if (psi) {
    psi->resize(d);
    psi->setZero();
    for (int i = 0; i < im.stencil_size; ++i) *psi += w(i) * vals[std::size_t(i)]->first;
  }
  if (grad) {
    grad->resize(d, d);
    grad->setZero();
    for (int i = 0; i < im.stencil_size; ++i) *grad += w(i) * vals[std::size_t(i)]->second;
  }
}

PsiLattice::ProbeErrors PsiLattice::interp_error_probe(const std::vector<Vec>& probes) const {
  ProbeErrors err;
  for (const auto& x : probes) {
    ResolventConfig c = impl_->cfg;
    std::uint64_t mix = 0x51CEB1A5ull;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      std::uint64_t bits;
      static_assert(sizeof(double) == sizeof(std::uint64_t));
      const double xi = x(i);
      std::memcpy(&bits, &xi, sizeof(bits));
      mix = splitmix64(mix ^ bits);
    }
    c.seed = derive_seed(impl_->seed_base, mix);
    const ResolventSolution direct = solve_psi(impl_->b, impl_->s, c, {x});
    Vec psi_i;
    Mat grad_i;
    eval(x, &psi_i, &grad_i);
    err.psi_err = std::max(err.psi_err, (psi_i - direct.psi.col(0)).cwiseAbs().maxCoeff());
    err.grad_err =
        std::max(err.grad_err, (grad_i - direct.grad_psi[0]).cwiseAbs().maxCoeff());
  }
  return err;
}

std::size_t PsiLattice::node_count() const {
  std::lock_guard<std::mutex> lock(impl_->mu);
  return impl_->nodes.size();
}

}  // namespace flowlab
