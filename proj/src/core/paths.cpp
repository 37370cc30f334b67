#include "core/paths.hpp"

#include <cmath>
#include <sstream>

namespace flowlab {

TimeGrid::TimeGrid(double t0_, double t_end, std::int64_t steps_) : t0(t0_), steps(steps_) {
  require_config(steps_ >= 1, "time grid needs at least one step");
  require_config(t_end > t0_, "time grid needs t_end > t0");
  dt = (t_end - t0_) / double(steps_);
}

BrownianDriver::BrownianDriver(std::uint64_t master_seed, std::int64_t path_index,
                               int dim_noise, double t0, double t_end,
                               std::int64_t fine_steps)
    : master_seed_(master_seed),
      path_index_(path_index),
      dim_noise_(dim_noise),
      t0_(t0),
      t_end_(t_end),
      fine_steps_(fine_steps),
      stream_(master_seed, path_index) {
  require_config(dim_noise >= 1, "driver needs dim_noise >= 1");
  require_config(fine_steps >= 1, "driver needs fine_steps >= 1");
  require_config(t_end > t0, "driver needs t_end > t0");
  sqrt_fine_dt_ = std::sqrt((t_end - t0) / double(fine_steps));
}

BrownianDriver BrownianDriver::for_grid(const TimeGrid& grid, int dim_noise,
                                        std::uint64_t master_seed, std::int64_t path_index,
                                        int finest_level) {
  require_config(finest_level >= 0 && finest_level < 31, "finest_level must be in [0,30]");
  return BrownianDriver(master_seed, path_index, dim_noise, grid.t0, grid.t_end(),
                        grid.steps << finest_level);
}

Mat BrownianDriver::increments(const TimeGrid& grid) const {
  const double fine_dt = (t_end_ - t0_) / double(fine_steps_);
  const double scale = std::abs(t_end_ - t0_);

  const double off_real = (grid.t0 - t0_) / fine_dt;
  const std::int64_t offset = std::int64_t(std::llround(off_real));
  require_config(std::abs(off_real - double(offset)) <= 1e-9 * std::max(1.0, scale / fine_dt),
                 "grid start does not align with the driver's fine mesh");
  const double m_real = grid.dt / fine_dt;
  const std::int64_t m = std::int64_t(std::llround(m_real));
  require_config(m >= 1 && std::abs(m_real - double(m)) <= 1e-9 * double(m),
                 "grid step does not tile into the driver's fine mesh");
  require_config(offset >= 0 && offset + grid.steps * m <= fine_steps_,
                 "grid window exceeds the driver's window");

  Mat out(dim_noise_, grid.steps);
  for (std::int64_t j = 0; j < grid.steps; ++j) {
    for (int c = 0; c < dim_noise_; ++c) {
      double acc = 0.0;
      const std::int64_t base = offset + j * m;
      for (std::int64_t i = 0; i < m; ++i)
        acc += stream_(std::uint64_t(base + i), std::uint32_t(c)) * sqrt_fine_dt_;
      out(c, j) = acc;
    }
  }
  return out;
}

namespace {

void check_state(const Vec& x, std::int64_t step) {
  if (!x.allFinite() || x.cwiseAbs().maxCoeff() > kBlowupGuard) {
    std::ostringstream os;
    os << "path blow-up guard tripped at step " << step << " (|X| = "
       << (x.allFinite() ? x.cwiseAbs().maxCoeff() : std::nan("")) << ")";
    throw numeric_error(os.str(), step);
  }
}

}  // namespace

PathRecord simulate(const DriftField& b, const DiffusionSpec& s, const Vec& x0,
                    const BrownianDriver& driver, const TimeGrid& grid) {
  require_config(b.dim == s.dim && x0.size() == b.dim, "dimension mismatch in simulate");
  require_config(driver.dim_noise() == s.dim_noise, "driver noise dimension mismatch");

  PathRecord rec;
  rec.grid = grid;
  rec.increments = driver.increments(grid);
  rec.states.resize(b.dim, grid.steps + 1);
  rec.states.col(0) = x0;
  Vec x = x0;
  for (std::int64_t j = 0; j < grid.steps; ++j) {
    check_state(x, j);
    const Vec drift_term = b.eval(x) * grid.dt;
    const Vec noise_term = s.sigma(x) * rec.increments.col(j);
    x = x + drift_term + noise_term;
    rec.states.col(j + 1) = x;
  }
  check_state(x, grid.steps);
  return rec;
}

std::pair<PathRecord, VariationRecord> simulate_with_variation(
    const DriftField& b, const DiffusionSpec& s, const Vec& x0, const Vec& h,
    const BrownianDriver& driver, const TimeGrid& grid) {
  require_config(b.dim == s.dim && x0.size() == b.dim && h.size() == b.dim,
                 "dimension mismatch in simulate_with_variation");
  if (!b.has_jacobian())
    throw config_error(
        "drift '" + b.label +
        "' has no Jacobian; mollify it (or route through the transformed flow) before "
        "requesting a first variation");

  PathRecord rec;
  rec.grid = grid;
  rec.increments = driver.increments(grid);
  rec.states.resize(b.dim, grid.steps + 1);
  rec.states.col(0) = x0;

  VariationRecord var;
  var.grid = grid;
  var.h = h;
  var.eta.resize(b.dim, grid.steps + 1);
  var.eta.col(0) = h;

  Vec x = x0;
  Vec eta = h;
  for (std::int64_t j = 0; j < grid.steps; ++j) {
    check_state(x, j);
    const Vec dw = rec.increments.col(j);
    const Vec drift_term = b.eval(x) * grid.dt;
    const Vec noise_term = s.sigma(x) * dw;
    const Vec eta_drift = (b.jacobian(x) * eta) * grid.dt;
    const Vec eta_noise = s.dsigma(x, eta) * dw;
    x = x + drift_term + noise_term;
    eta = eta + eta_drift + eta_noise;
    rec.states.col(j + 1) = x;
    var.eta.col(j + 1) = eta;
  }
  check_state(x, grid.steps);
  return {std::move(rec), std::move(var)};
}

FlowMarks flow_eval(const DriftField& b, const DiffusionSpec& s, const Vec& x0, double s0,
                    double u, double t, const BrownianDriver& driver, std::int64_t steps) {
  const TimeGrid grid(s0, t, steps);
  const double ju_real = (u - s0) / grid.dt;
  const std::int64_t ju = std::int64_t(std::llround(ju_real));
  require_config(ju >= 0 && ju <= steps && std::abs(ju_real - double(ju)) <= 1e-9 * double(steps),
                 "intermediate time u must be grid-aligned");
  FlowMarks marks;
  marks.record = simulate(b, s, x0, driver, grid);
  marks.at_u = marks.record.states.col(ju);
  marks.at_t = marks.record.states.col(steps);
  return marks;
}

}  // namespace flowlab
