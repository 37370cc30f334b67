#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace flowlab {

inline constexpr const char* kVersion = "0.1.0";

// Result of one orchestrated run. status follows the tool exit codes:
// 0 ok, 2 config error, 3 numerical abort, 4 acceptance failure.
struct RunOutcome {
  int status = 0;
  std::string task;
  std::string stage;    // last stage entered; names the failure point
  std::string message;  // empty on success
  std::vector<std::string> outputs;  // data files written, relative to out_dir
  std::string manifest_path;
};

// Parses the JSON config, dispatches on config["task"], writes CSV data files
// and always a run_manifest.json into out_dir (created if missing). Never
// throws: failures land in status/message and the manifest names the stage.
// Identical config + seed + workers give byte-identical CSV payloads; the
// manifest carries wall-clock and is excluded from that contract.
RunOutcome run_experiment(const std::string& config_json, const std::string& out_dir);

struct CriterionResult {
  int index = 0;
  std::string name;
  bool passed = false;
  double observed = 0.0;  // the binding quantity (worst clause of the criterion)
  double bound = 0.0;     // its tolerance
  std::string detail;     // key figures, "; "-separated
  double seconds = 0.0;
};

struct SuiteOptions {
  std::uint64_t seed = 1;
  int workers = 1;
  // Cuts Monte Carlo budgets ~16x and widens the statistical bounds 4x
  // (stderr ~ 1/sqrt(N)); exactness and determinism checks are unchanged.
  bool fast = false;
  std::vector<int> only;    // criterion indices to run; empty = all
  std::string scratch_dir;  // where the determinism criterion replays runs
};

// The acceptance battery. Each criterion is timed, runs under its own derived
// seed and never throws; a thrown error becomes a failed entry.
std::vector<CriterionResult> run_acceptance(const SuiteOptions& opt);

std::string format_criterion_line(const CriterionResult& c);

}  // namespace flowlab
