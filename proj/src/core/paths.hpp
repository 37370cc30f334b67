#pragma once

#include <cstdint>

#include "core/fields.hpp"
#include "core/rng.hpp"
#include "core/types.hpp"

namespace flowlab {

struct TimeGrid {
  double t0 = 0.0;
  double dt = 0.0;
  std::int64_t steps = 0;

  TimeGrid() = default;
  TimeGrid(double t0_, double t_end, std::int64_t steps_);

  double time(std::int64_t j) const { return t0 + dt * double(j); }
  double t_end() const { return time(steps); }
};

// Keyed Brownian increments on a fixed window [t0, t_end]. Values are
// generated on the finest mesh (fine_steps intervals) and aggregated by
// in-order summation, so any compatible coarse grid sees increments that are
// exact sums of the finest-level ones, and the same (seed, path) pair always
// reproduces the same noise regardless of evaluation order.
class BrownianDriver {
 public:
  BrownianDriver(std::uint64_t master_seed, std::int64_t path_index, int dim_noise,
                 double t0, double t_end, std::int64_t fine_steps);

  // fine_steps = grid.steps * 2^finest_level
  static BrownianDriver for_grid(const TimeGrid& grid, int dim_noise,
                                 std::uint64_t master_seed, std::int64_t path_index,
                                 int finest_level = 0);

  // dim_noise x grid.steps increments; the grid must tile into the fine mesh.
  Mat increments(const TimeGrid& grid) const;

  std::uint64_t master_seed() const { return master_seed_; }
  std::int64_t path_index() const { return path_index_; }
  int dim_noise() const { return dim_noise_; }
  std::int64_t fine_steps() const { return fine_steps_; }
  double t0() const { return t0_; }
  double t_end() const { return t_end_; }

 private:
  std::uint64_t master_seed_;
  std::int64_t path_index_;
  int dim_noise_;
  double t0_, t_end_;
  std::int64_t fine_steps_;
  double sqrt_fine_dt_;
  NormalStream stream_;
};

struct PathRecord {
  TimeGrid grid;
  Mat states;      // dim x (steps + 1)
  Mat increments;  // dim_noise x steps
};

struct VariationRecord {
  TimeGrid grid;
  Mat eta;  // dim x (steps + 1); eta.col(0) == h exactly
  Vec h;
};

inline constexpr double kBlowupGuard = 1e8;

// Euler-Maruyama: X_{j+1} = X_j + b(X_j) dt + sigma(X_j) dW_j. Aborts with the
// step index when the state leaves [-1e8, 1e8] or turns non-finite.
PathRecord simulate(const DriftField& b, const DiffusionSpec& s, const Vec& x0,
                    const BrownianDriver& driver, const TimeGrid& grid);

// Joint Euler stepping of the path and its first variation in direction h:
// eta_{j+1} = eta_j + Db(X_j) eta_j dt + (D_eta sigma)(X_j) dW_j.
// Requires a drift Jacobian; rough drifts must be mollified first.
std::pair<PathRecord, VariationRecord> simulate_with_variation(
    const DriftField& b, const DiffusionSpec& s, const Vec& x0, const Vec& h,
    const BrownianDriver& driver, const TimeGrid& grid);

struct FlowMarks {
  Vec at_u;
  Vec at_t;
  PathRecord record;
};

// One integration over [s0, t] returning the state at a grid-aligned u and at
// t, for composition checks against a restart at u with the same driver tail.
FlowMarks flow_eval(const DriftField& b, const DiffusionSpec& s, const Vec& x0, double s0,
                    double u, double t, const BrownianDriver& driver, std::int64_t steps);

}  // namespace flowlab
