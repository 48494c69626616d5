#pragma once

// Seeded experiment orchestration: plans, sweeps, metric files, checkpoints.
//
// Output layout under the plan's output directory:
//   metrics.csv                 all rows of all runs, long format
//   runs.csv                    one status line per run
//   runs/<run_id>/metrics.csv   rows of that run only
//   runs/<run_id>/manifest.json config hash, seed, code version, status
//   runs/<run_id>/checkpoint.json
// Nothing time-dependent is written, so identical plans give identical files.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "edgesplit/baselines.hpp"
#include "edgesplit/config.hpp"
#include "edgesplit/error.hpp"
#include "edgesplit/marl/trainer.hpp"
#include "edgesplit/nn/checkpoint.hpp"

namespace edgesplit::harness {

inline constexpr const char* kCodeVersion = "edgesplit-0.1.0";

enum class SweepAxis { none, users, servers, services, tau_bar, user_flops, server_flops, server_storage, weight_ratio };

inline const std::vector<std::pair<SweepAxis, std::string>>& axis_names() {
  static const std::vector<std::pair<SweepAxis, std::string>> names = {
      {SweepAxis::none, "none"},
      {SweepAxis::users, "users"},
      {SweepAxis::servers, "servers"},
      {SweepAxis::services, "services"},
      {SweepAxis::tau_bar, "tau_bar"},
      {SweepAxis::user_flops, "user_flops"},
      {SweepAxis::server_flops, "server_flops"},
      {SweepAxis::server_storage, "server_storage"},
      {SweepAxis::weight_ratio, "weight_ratio"}};
  return names;
}

inline std::string axis_name(SweepAxis a) {
  for (const auto& [ax, n] : axis_names()) {
    if (ax == a) return n;
  }
  return "none";
}

inline SweepAxis axis_from_name(const std::string& name) {
  for (const auto& [ax, n] : axis_names()) {
    if (n == name) return ax;
  }
  throw ConfigError("unknown sweep axis '" + name + "'");
}

/// Writes `value` into the config field named by the axis. Capacity axes pin
/// the sampling range to the single value.
inline void apply_axis(SystemConfig& s, SweepAxis axis, double value) {
  switch (axis) {
    case SweepAxis::none:
      return;
    case SweepAxis::users:
      s.num_users = static_cast<int>(value);
      return;
    case SweepAxis::servers:
      s.num_servers = static_cast<int>(value);
      return;
    case SweepAxis::services:
      s.services_per_model = static_cast<int>(value);
      return;
    case SweepAxis::tau_bar:
      s.weights.tau_bar = value;
      return;
    case SweepAxis::user_flops:
      s.user_flops = {value, value};
      return;
    case SweepAxis::server_flops:
      s.server_flops = {value, value};
      return;
    case SweepAxis::server_storage:
      s.server_storage_bytes = {value, value};
      return;
    case SweepAxis::weight_ratio:
      s.weights.mu2 = s.weights.mu1 * value;
      return;
  }
}

struct ExperimentPlan {
  std::string name = "experiment";
  ExperimentConfig base;
  std::vector<std::string> algorithms{"HC-MAPPO-L"};
  SweepAxis axis = SweepAxis::none;
  std::vector<double> values{0.0};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  int eval_episodes = 5;
  std::uint64_t eval_seed = 1000;
  bool save_checkpoints = true;

  void validate() const {
    base.validate();
    if (algorithms.empty()) throw ConfigError("plan: no algorithms");
    for (const auto& a : algorithms) algorithms::by_name(a);
    if (values.empty()) throw ConfigError("plan: no axis values");
    if (seeds.empty()) throw ConfigError("plan: no seeds");
    if (eval_episodes < 1) throw ConfigError("plan: eval_episodes must be >= 1");
    for (double v : values) {
      auto cfg = base;
      apply_axis(cfg.system, axis, v);
      try {
        cfg.validate();
      } catch (const ConfigError& e) {
        throw ConfigError("plan: axis value " + std::to_string(v) + ": " + e.what());
      }
    }
  }
};

/// Plan file keys: name, config (object) or config_path (relative to the
/// plan file), algorithms, axis, values, seeds, iterations (overrides the
/// config), eval_episodes, eval_seed, save_checkpoints.
inline ExperimentPlan plan_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {}) {
  ExperimentPlan p;
  detail::KeyReader r(doc, "plan");
  r.opt("name", p.name);
  std::string config_path;
  r.opt("config_path", config_path);
  if (!config_path.empty()) {
    std::filesystem::path cp(config_path);
    if (cp.is_relative()) cp = base_dir / cp;
    p.base = load_config(cp.string());
  }
  nlohmann::json overrides;
  r.opt("config", overrides);
  if (!overrides.is_null()) {
    if (!config_path.empty()) {
      auto merged = config_to_json(p.base);
      merged.merge_patch(overrides);
      p.base = config_from_json(merged);
    } else {
      p.base = config_from_json(overrides);
    }
  }
  r.opt("algorithms", p.algorithms);
  std::string axis = "none";
  r.opt("axis", axis);
  p.axis = axis_from_name(axis);
  r.opt("values", p.values);
  r.opt("seeds", p.seeds);
  int iterations = -1;
  r.opt("iterations", iterations);
  if (iterations >= 0) p.base.trainer.iterations = iterations;
  r.opt("eval_episodes", p.eval_episodes);
  r.opt("eval_seed", p.eval_seed);
  r.opt("save_checkpoints", p.save_checkpoints);
  r.finish();
  p.validate();
  return p;
}

inline ExperimentPlan load_plan(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open plan file '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("plan parse error in '" + path + "': " + e.what());
  }
  return plan_from_json(doc, std::filesystem::path(path).parent_path());
}

// ---------------------------------------------------------------------------
// Metric rows
// ---------------------------------------------------------------------------

struct MetricsRow {
  std::string run_id;
  std::string algorithm;
  std::string axis;
  double value = 0.0;
  std::uint64_t seed = 0;
  std::string phase;  // "train" or "eval"
  int iteration = 0;
  double user_cost = 0.0;  // μ1·privacy + μ2·energy per user-slot
  double delay = 0.0;
  double energy = 0.0;
  double privacy = 0.0;
  double success_hit = 0.0;
  double success_deadline = 0.0;
  double lambda = 0.0;
  std::vector<double> per_user_cost;  // eval rows only
};

/// Shortest round-trip decimal form.
inline std::string fmt_num(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline const char* csv_header() {
  return "run_id,algorithm,axis,value,seed,phase,iteration,user_cost,delay,energy,privacy,success_hit,"
         "success_deadline,lambda,per_user_cost";
}

inline std::string csv_line(const MetricsRow& r) {
  std::ostringstream os;
  os << r.run_id << ',' << r.algorithm << ',' << r.axis << ',' << fmt_num(r.value) << ',' << r.seed << ',' << r.phase
     << ',' << r.iteration << ',' << fmt_num(r.user_cost) << ',' << fmt_num(r.delay) << ',' << fmt_num(r.energy) << ','
     << fmt_num(r.privacy) << ',' << fmt_num(r.success_hit) << ',' << fmt_num(r.success_deadline) << ','
     << fmt_num(r.lambda) << ',';
  for (std::size_t k = 0; k < r.per_user_cost.size(); ++k) os << (k ? ";" : "") << fmt_num(r.per_user_cost[k]);
  return os.str();
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read metrics file " + path);
  std::string line;
  std::getline(in, line);
  if (line != csv_header()) throw Error(path + ": unexpected header");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 15) throw Error(path + ": malformed row '" + line + "'");
    MetricsRow r;
    r.run_id = f[0];
    r.algorithm = f[1];
    r.axis = f[2];
    r.value = std::stod(f[3]);
    r.seed = std::stoull(f[4]);
    r.phase = f[5];
    r.iteration = std::stoi(f[6]);
    r.user_cost = std::stod(f[7]);
    r.delay = std::stod(f[8]);
    r.energy = std::stod(f[9]);
    r.privacy = std::stod(f[10]);
    r.success_hit = std::stod(f[11]);
    r.success_deadline = std::stod(f[12]);
    r.lambda = std::stod(f[13]);
    if (!f[14].empty()) {
      for (const auto& c : split(f[14], ';')) r.per_user_cost.push_back(std::stod(c));
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

/// FNV-1a over the canonical JSON dump of the config.
inline std::string config_hash(const ExperimentConfig& cfg) {
  const std::string s = config_to_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Single runs
// ---------------------------------------------------------------------------

struct RunResult {
  std::string run_id;
  std::string algorithm;
  double value = 0.0;
  std::uint64_t seed = 0;
  std::string status = "ok";  // "ok" or "failed"
  std::string message;
  std::vector<marl::IterationMetrics> iterations;
  marl::EvalMetrics eval;
  ExperimentConfig config;
};

using ProgressFn = std::function<void(const RunResult&, const marl::IterationMetrics&)>;

inline MetricsRow eval_row(const RunResult& r, const std::string& axis, double lambda) {
  MetricsRow row;
  row.run_id = r.run_id;
  row.algorithm = r.algorithm;
  row.axis = axis;
  row.value = r.value;
  row.seed = r.seed;
  row.phase = "eval";
  row.iteration = static_cast<int>(r.iterations.size());
  row.user_cost = r.eval.system_cost;
  row.delay = r.eval.mean_delay;
  row.energy = r.eval.mean_energy;
  row.privacy = r.eval.mean_privacy;
  row.success_hit = r.eval.success_hit;
  row.success_deadline = r.eval.success_deadline;
  row.lambda = lambda;
  row.per_user_cost = r.eval.per_user_cost;
  return row;
}

inline MetricsRow train_row(const RunResult& r, const std::string& axis, const marl::IterationMetrics& m) {
  MetricsRow row;
  row.run_id = r.run_id;
  row.algorithm = r.algorithm;
  row.axis = axis;
  row.value = r.value;
  row.seed = r.seed;
  row.phase = "train";
  row.iteration = m.iteration;
  row.user_cost = m.system_cost;
  row.delay = m.mean_delay;
  row.energy = m.mean_energy;
  row.privacy = m.mean_privacy;
  row.success_hit = m.success_hit;
  row.success_deadline = m.success_deadline;
  row.lambda = m.lambda;
  return row;
}

/// Trains one algorithm on one config and evaluates it with exploration off.
/// Fixed-rule algorithms skip training and are only evaluated.
inline RunResult train_and_evaluate(const ExperimentConfig& cfg, const std::string& algorithm, std::uint64_t seed,
                                    int eval_episodes, std::uint64_t eval_seed,
                                    std::unique_ptr<marl::Trainer>* keep = nullptr, const ProgressFn& progress = {}) {
  RunResult r;
  r.algorithm = algorithm;
  r.seed = seed;
  r.config = cfg;
  const auto spec = algorithms::by_name(algorithm);
  auto catalog = std::make_shared<const Catalog>(build_catalog(cfg.system));
  auto trainer = std::make_unique<marl::Trainer>(cfg, spec, catalog, seed);
  if (spec.learns_anything()) {
    for (int i = 0; i < cfg.trainer.iterations; ++i) {
      r.iterations.push_back(trainer->train_iteration());
      if (progress) progress(r, r.iterations.back());
    }
  }
  r.eval = trainer->evaluate(eval_episodes, eval_seed);
  if (keep) *keep = std::move(trainer);
  return r;
}

/// Loads a checkpoint against `cfg` and runs the deterministic evaluation.
inline marl::EvalMetrics evaluate_checkpoint(const nn::Checkpoint& ckpt, const ExperimentConfig& cfg, int episodes,
                                             std::uint64_t seed, std::ostream* trace = nullptr) {
  const auto name = ckpt.extra.value("algorithm", std::string());
  const auto spec = algorithms::by_name(name);
  auto catalog = std::make_shared<const Catalog>(build_catalog(cfg.system));
  marl::Trainer trainer(cfg, spec, catalog, 0);
  trainer.restore(ckpt);
  return trainer.evaluate(episodes, seed, trace);
}

inline std::string run_id(const std::string& algorithm, SweepAxis axis, double value, std::uint64_t seed) {
  std::string id = algorithm;
  if (axis != SweepAxis::none) id += "_" + axis_name(axis) + "-" + fmt_num(value);
  id += "_s" + std::to_string(seed);
  for (auto& c : id) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.' || c == '+')) c = '_';
  }
  return id;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
}

// ---------------------------------------------------------------------------
// Plans
// ---------------------------------------------------------------------------

struct PlanResult {
  std::vector<RunResult> runs;
  std::vector<MetricsRow> rows;
  int failures = 0;
};

/// Runs every (algorithm, axis value, seed) combination in order. A failing
/// run is recorded with status "failed" and its message; the sweep continues.
inline PlanResult run(const ExperimentPlan& plan, const std::filesystem::path& out_dir, const ProgressFn& progress = {}) {
  plan.validate();
  std::filesystem::create_directories(out_dir / "runs");
  PlanResult result;
  const std::string axis = axis_name(plan.axis);
  std::ostringstream all, index;
  all << csv_header() << '\n';
  index << "run_id,algorithm,axis,value,seed,status,message\n";
  for (const auto& alg : plan.algorithms) {
    for (double v : plan.values) {
      for (auto seed : plan.seeds) {
        auto cfg = plan.base;
        apply_axis(cfg.system, plan.axis, v);
        const auto id = run_id(alg, plan.axis, v, seed);
        const auto dir = out_dir / "runs" / id;
        std::filesystem::create_directories(dir);
        RunResult r;
        std::unique_ptr<marl::Trainer> trainer;
        try {
          r = train_and_evaluate(cfg, alg, seed, plan.eval_episodes, plan.eval_seed, &trainer,
                                 [&](const RunResult& partial, const marl::IterationMetrics& m) {
                                   if (!progress) return;
                                   RunResult tagged = partial;
                                   tagged.run_id = id;
                                   tagged.value = v;
                                   progress(tagged, m);
                                 });
        } catch (const std::exception& e) {
          r = RunResult{};
          r.algorithm = alg;
          r.seed = seed;
          r.config = cfg;
          r.status = "failed";
          r.message = e.what();
          ++result.failures;
        }
        r.run_id = id;
        r.value = v;

        std::ostringstream one;
        one << csv_header() << '\n';
        auto emit = [&](const MetricsRow& row) {
          const auto line = csv_line(row);
          one << line << '\n';
          all << line << '\n';
          result.rows.push_back(row);
        };
        for (const auto& m : r.iterations) emit(train_row(r, axis, m));
        if (r.status == "ok") emit(eval_row(r, axis, trainer->lagrange().lambda));
        write_text(dir / "metrics.csv", one.str());

        nlohmann::json manifest = {{"run_id", id},
                                   {"algorithm", alg},
                                   {"axis", axis},
                                   {"value", v},
                                   {"seed", seed},
                                   {"iterations", cfg.trainer.iterations},
                                   {"eval_episodes", plan.eval_episodes},
                                   {"eval_seed", plan.eval_seed},
                                   {"config_hash", config_hash(cfg)},
                                   {"code_version", kCodeVersion},
                                   {"status", r.status},
                                   {"message", r.message},
                                   {"config", config_to_json(cfg)}};
        write_text(dir / "manifest.json", manifest.dump(2) + "\n");
        if (plan.save_checkpoints && trainer) trainer->checkpoint().save((dir / "checkpoint.json").string());

        std::string msg = r.message;
        std::replace(msg.begin(), msg.end(), ',', ';');
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        index << id << ',' << alg << ',' << axis << ',' << fmt_num(v) << ',' << seed << ',' << r.status << ',' << msg
              << '\n';
        result.runs.push_back(std::move(r));
      }
    }
  }
  write_text(out_dir / "metrics.csv", all.str());
  write_text(out_dir / "runs.csv", index.str());
  return result;
}

// ---------------------------------------------------------------------------
// Cost heatmap
// ---------------------------------------------------------------------------

struct AlgorithmCosts {
  std::string algorithm;
  std::vector<double> per_user_cost;
};

struct HeatmapCell {
  std::string algorithm;
  int user = 0;
  double cost = 0.0;
  int band = 1;  // 1..8
};

/// Octile rank bands over all (algorithm, user) costs pooled together.
/// band = 1 + floor(8·m/n), m = number of costs strictly below this one, so
/// tied costs share the lowest band they reach.
inline std::vector<HeatmapCell> cost_heatmap(const std::vector<AlgorithmCosts>& runs) {
  std::vector<double> pooled;
  for (const auto& r : runs) pooled.insert(pooled.end(), r.per_user_cost.begin(), r.per_user_cost.end());
  std::sort(pooled.begin(), pooled.end());
  const auto n = static_cast<double>(pooled.size());
  std::vector<HeatmapCell> cells;
  for (const auto& r : runs) {
    for (std::size_t k = 0; k < r.per_user_cost.size(); ++k) {
      const double c = r.per_user_cost[k];
      const auto below = static_cast<double>(std::lower_bound(pooled.begin(), pooled.end(), c) - pooled.begin());
      const int band = std::min(8, 1 + static_cast<int>(std::floor(8.0 * below / n)));
      cells.push_back({r.algorithm, static_cast<int>(k), c, band});
    }
  }
  return cells;
}

inline void export_cost_heatmap(const std::vector<AlgorithmCosts>& runs, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "algorithm,user,cost,band\n";
  for (const auto& c : cost_heatmap(runs)) os << c.algorithm << ',' << c.user << ',' << fmt_num(c.cost) << ',' << c.band << '\n';
  write_text(path, os.str());
}

/// Per-algorithm mean of the per-user cost lists of all eval rows.
inline std::vector<AlgorithmCosts> costs_from_rows(const std::vector<MetricsRow>& rows) {
  std::vector<AlgorithmCosts> out;
  std::vector<int> counts;
  for (const auto& r : rows) {
    if (r.phase != "eval" || r.per_user_cost.empty()) continue;
    auto it = std::find_if(out.begin(), out.end(), [&](const AlgorithmCosts& a) { return a.algorithm == r.algorithm; });
    if (it == out.end()) {
      out.push_back({r.algorithm, std::vector<double>(r.per_user_cost.size(), 0.0)});
      counts.push_back(0);
      it = out.end() - 1;
    }
    const auto idx = static_cast<std::size_t>(it - out.begin());
    if (it->per_user_cost.size() != r.per_user_cost.size()) throw ShapeError("heatmap: user counts differ within " + r.algorithm);
    for (std::size_t k = 0; k < r.per_user_cost.size(); ++k) it->per_user_cost[k] += r.per_user_cost[k];
    ++counts[idx];
  }
  for (std::size_t a = 0; a < out.size(); ++a) {
    for (auto& c : out[a].per_user_cost) c /= counts[a];
  }
  return out;
}

}  // namespace edgesplit::harness
