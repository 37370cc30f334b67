// Command-line front end. All numerical work happens behind the C API; this
// file only assembles a JSON config from flags (and an optional config file,
// with explicit flags winning), runs it, and prints the manifest summary.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "flowlab.h"

namespace {

using nlohmann::json;
using jptr = json::json_pointer;

json parse_numbers(const std::string& text, const std::string& flag) {
  json arr = json::array();
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const double v = std::stod(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      arr.push_back(v);
    } catch (const std::exception&) {
      throw CLI::ValidationError(flag, "expected comma-separated numbers, got '" + text + "'");
    }
  }
  if (arr.empty()) throw CLI::ValidationError(flag, "empty list");
  return arr;
}

json parse_integers(const std::string& text, const std::string& flag) {
  json arr = json::array();
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      arr.push_back(v);
    } catch (const std::exception&) {
      throw CLI::ValidationError(flag, "expected comma-separated integers, got '" + text + "'");
    }
  }
  if (arr.empty()) throw CLI::ValidationError(flag, "empty list");
  return arr;
}

// "0.4;-0.7" or "0.1,0.2;0.3,-0.4": semicolons separate points.
json parse_points(const std::string& text, const std::string& flag) {
  json pts = json::array();
  std::stringstream ss(text);
  std::string group;
  while (std::getline(ss, group, ';')) pts.push_back(parse_numbers(group, flag));
  if (pts.empty()) throw CLI::ValidationError(flag, "empty list");
  return pts;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CLI::ValidationError("--config", "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Cli {
  json overlay = json::object();
  std::string task;

  void num(CLI::App* cmd, const std::string& flag, const char* key, const char* desc) {
    cmd->add_option_function<double>(
        flag, [this, key](double v) { overlay[jptr(key)] = v; }, desc);
  }
  void integer(CLI::App* cmd, const std::string& flag, const char* key, const char* desc) {
    cmd->add_option_function<std::int64_t>(
        flag, [this, key](std::int64_t v) { overlay[jptr(key)] = v; }, desc);
  }
  void text(CLI::App* cmd, const std::string& flag, const char* key, const char* desc) {
    cmd->add_option_function<std::string>(
        flag, [this, key](const std::string& v) { overlay[jptr(key)] = v; }, desc);
  }
  void vec(CLI::App* cmd, const std::string& flag, const char* key, const char* desc) {
    cmd->add_option_function<std::string>(
        flag,
        [this, key, flag](const std::string& v) {
          overlay[jptr(key)] = parse_numbers(v, flag);
        },
        desc);
  }
  void int_list(CLI::App* cmd, const std::string& flag, const char* key, const char* desc) {
    cmd->add_option_function<std::string>(
        flag,
        [this, key, flag](const std::string& v) {
          overlay[jptr(key)] = parse_integers(v, flag);
        },
        desc);
  }
  void points(CLI::App* cmd, const std::string& flag, const char* key, const char* desc) {
    cmd->add_option_function<std::string>(
        flag,
        [this, key, flag](const std::string& v) { overlay[jptr(key)] = parse_points(v, flag); },
        desc);
  }

  CLI::App* sub(CLI::App& app, const char* name, const char* desc) {
    CLI::App* cmd = app.add_subcommand(name, desc);
    cmd->callback([this, name] { task = name; });
    // Coefficients are shared by every experiment subcommand.
    integer(cmd, "--dim", "/dim", "state dimension (1-3)");
    text(cmd, "--drift", "/drift", "drift preset, e.g. holder:theta=0.5,scale=1");
    text(cmd, "--sigma", "/sigma", "diffusion preset (default identity)");
    return cmd;
  }
};

void print_criteria(const json& man) {
  int failed = 0, total = 0;
  for (const auto& c : man.at("criteria")) {
    const bool pass = c.value("passed", false);
    std::printf("[%s] %2d %-26s observed=%-11.4g bound=%-11.4g %7.1fs  %s\n",
                pass ? "PASS" : "FAIL", c.value("index", 0),
                c.value("name", std::string()).c_str(), c.value("observed", 0.0),
                c.value("bound", 0.0), c.value("seconds", 0.0),
                c.value("detail", std::string()).c_str());
    ++total;
    if (!pass) ++failed;
  }
  std::printf("%d of %d criteria passed\n", total - failed, total);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stochastic flow toolkit (rough drifts via a drift-removing "
               "change of coordinates)"};
  app.require_subcommand(1);
  app.fallthrough();

  Cli cli;
  std::string config_path;
  std::string out_dir;
  app.add_option("--config", config_path,
                 "JSON config file; explicit flags override its keys");
  auto* o_out = app.add_option("--out", out_dir, "output directory (default runs/<task>)");
  cli.integer(&app, "--seed", "/seed", "master seed (default 1)");
  cli.integer(&app, "--workers", "/workers", "worker threads (default 1; never changes values)");
  app.add_flag_function(
      "--fast",
      [&cli](std::int64_t) { cli.overlay[jptr("/fast")] = true; },
      "cut Monte Carlo budgets ~16x (suite: widens statistical tolerances 4x)");

  CLI::App* hyp = cli.sub(app, "check-hypotheses",
                          "probe Holder/growth/ellipticity constants of the coefficients");
  cli.integer(hyp, "--probes", "/probes", "probe cloud size (default 32)");
  cli.integer(hyp, "--pairs", "/pairs", "seminorm pair count (default 64)");
  cli.num(hyp, "--radius", "/radius", "probe cloud radius (default 2)");

  CLI::App* sim = cli.sub(app, "simulate", "Euler paths of dX = b dt + sigma dW");
  cli.vec(sim, "--x", "/x", "start point, comma-separated (default origin)");
  cli.num(sim, "--t", "/t", "horizon (default 1)");
  cli.num(sim, "--dt", "/dt", "step (default 1e-3)");
  cli.integer(sim, "--paths", "/n_paths", "number of paths (default 1)");

  CLI::App* res = cli.sub(app, "resolve",
                          "Monte Carlo resolvent psi and grad psi at given points");
  cli.points(res, "--points", "/points", "evaluation points, ';' between points");
  cli.num(res, "--lambda", "/resolvent/lambda", "resolvent rate (default 5)");
  cli.num(res, "--dt", "/resolvent/dt", "step (default 1e-3)");
  cli.integer(res, "--paths", "/resolvent/n_paths", "paths per point (default 10000)");

  CLI::App* sel = cli.sub(app, "select-lambda",
                          "walk the lambda ladder until sup|grad psi| certifies below gamma");
  cli.points(sel, "--points", "/points", "certification points (default probe cloud)");
  cli.vec(sel, "--ladder", "/ladder", "ladder, e.g. 2,5,10,20 (default 2,5,10,20,40)");
  cli.num(sel, "--gamma", "/gamma", "certification target (default 0.5)");
  cli.num(sel, "--dt", "/resolvent/dt", "step (default 1e-3)");
  cli.integer(sel, "--paths", "/resolvent/n_paths", "paths per point (default 10000)");

  CLI::App* flw = cli.sub(app, "flow", "flow endpoints, direct or through the transform");
  cli.vec(flw, "--x", "/x", "start point (default origin)");
  cli.num(flw, "--t", "/t", "horizon (default 1)");
  cli.num(flw, "--dt", "/dt", "step (default 1e-3)");
  cli.integer(flw, "--paths", "/n_paths", "number of paths (default 4)");
  cli.text(flw, "--route", "/route", "auto|direct|transform (default auto)");

  CLI::App* sta = cli.sub(app, "stability",
                          "flows of mollified drifts vs the rough-drift flow, common noise");
  cli.int_list(sta, "--levels", "/levels", "mollification levels (default 2,4,8,16)");
  cli.integer(sta, "--paths", "/n_paths", "paths per start (default 4)");
  cli.num(sta, "--t", "/t", "horizon (default 0.5)");
  cli.num(sta, "--dt", "/dt", "flow step (default 2e-3)");
  cli.points(sta, "--starts", "/starts", "start points (default probe cloud)");
  cli.integer(sta, "--quad", "/quad_points", "mollifier quadrature per axis (default 16)");
  cli.integer(sta, "--mc-paths", "/resolvent/n_paths", "inner MC paths (default 10000)");

  CLI::App* bel = cli.sub(app, "bel", "semigroup gradient via the weighted-path identity");
  cli.text(bel, "--f", "/observable", "observable: const|coord:i|sq|holder:theta");
  cli.vec(bel, "--x", "/x", "evaluation point (default origin)");
  cli.vec(bel, "--h", "/h", "direction (default first basis vector)");
  cli.num(bel, "--t", "/mc/t", "time (default 1)");
  cli.num(bel, "--dt", "/mc/dt", "step (default 1e-3)");
  cli.integer(bel, "--paths", "/mc/n_paths", "paths (default 10000)");
  cli.text(bel, "--route", "/route", "auto|direct|transform (default auto)");
  bel->add_flag_function(
      "--cv", [&cli](std::int64_t) { cli.overlay[jptr("/mc/control_variate")] = true; },
      "subtract the deterministic-flow control variate (default on)");
  bel->add_flag_function(
      "--no-cv", [&cli](std::int64_t) { cli.overlay[jptr("/mc/control_variate")] = false; },
      "disable the control variate");

  CLI::App* fdc = cli.sub(app, "fd-check",
                          "cross-check the gradient identity against central differences");
  cli.text(fdc, "--f", "/observable", "observable preset");
  cli.vec(fdc, "--x", "/x", "evaluation point (default origin)");
  cli.vec(fdc, "--h", "/h", "direction (default first basis vector)");
  cli.num(fdc, "--t", "/mc/t", "time (default 1)");
  cli.num(fdc, "--dt", "/mc/dt", "step (default 1e-3)");
  cli.integer(fdc, "--paths", "/mc/n_paths", "paths (default 10000)");
  cli.num(fdc, "--step", "/step", "difference step (default 1e-3)");

  CLI::App* dec = cli.sub(app, "decay-probe",
                          "short-time gradient decay exponent over a geometric t-list");
  cli.text(dec, "--f", "/observable", "observable preset, e.g. holder:0.5");
  cli.vec(dec, "--x", "/x", "evaluation point (default origin)");
  cli.vec(dec, "--h", "/h", "direction (default first basis vector)");
  cli.vec(dec, "--ts", "/times", "mark times, e.g. 0.02,0.04,0.08");
  cli.num(dec, "--dt", "/mc/dt", "step (default 1e-3)");
  cli.integer(dec, "--paths", "/mc/n_paths", "paths (default 10000)");
  cli.text(dec, "--route", "/route", "auto|direct|transform (default auto)");

  CLI::App* sui = cli.sub(app, "suite", "run the acceptance battery");
  cli.text(sui, "--name", "/name", "suite name (default acceptance)");
  cli.int_list(sui, "--only", "/only", "criterion indices to run, e.g. 1,5,12");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage problems are config errors
  }

  json cfg = json::object();
  if (!config_path.empty()) {
    try {
      cfg = json::parse(slurp(config_path));
    } catch (const std::exception& e) {
      std::fprintf(stderr, "error: config file: %s\n", e.what());
      return 2;
    }
  }
  cfg.merge_patch(cli.overlay);
  cfg["task"] = cli.task;

  std::string dir;
  if (o_out->count())
    dir = out_dir;
  else if (!cfg.contains("out"))
    dir = "runs/" + cli.task;

  char* manifest_text = nullptr;
  const fl_status st = fl_run(cfg.dump().c_str(), dir.c_str(), &manifest_text);

  json man;
  if (manifest_text) {
    man = json::parse(manifest_text, nullptr, false);
    fl_string_free(manifest_text);
  }

  if (!man.is_discarded() && man.is_object()) {
    if (cli.task == "suite" && man.contains("criteria")) print_criteria(man);
    if (man.contains("metrics") && !man["metrics"].empty())
      std::printf("%s\n", man["metrics"].dump(2).c_str());
    if (man.contains("outputs"))
      for (const auto& f : man["outputs"])
        std::printf("wrote %s/%s\n", man.value("stage", "") == "done" || true
                                         ? (dir.empty() ? cfg.value("out", ".") : dir).c_str()
                                         : ".",
                    f.get<std::string>().c_str());
  }

  if (st != FL_OK) {
    const std::string stage = man.is_object() ? man.value("stage", "") : "";
    std::fprintf(stderr, "error%s%s%s: %s\n", stage.empty() ? "" : " (stage ",
                 stage.c_str(), stage.empty() ? "" : ")", fl_last_error());
  }
  return st == FL_ERR_INTERNAL ? 3 : int(st);
}
