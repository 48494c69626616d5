// edgesplit command line: train, eval, sweep, validate-config, export-heatmap.
//
// Exit codes: 0 ok, 2 config error, 3 runtime error, 4 acceptance check failed.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "edgesplit/harness/experiment.hpp"

namespace fs = std::filesystem;
using namespace edgesplit;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitCheck = 4;

/// Relative output paths are resolved against $EDGESPLIT_OUTPUT_ROOT when set.
fs::path resolve_out(const std::string& out, const std::string& fallback) {
  fs::path p = out.empty() ? fs::path("runs") / fallback : fs::path(out);
  if (p.is_relative()) {
    if (const char* root = std::getenv("EDGESPLIT_OUTPUT_ROOT"); root && *root) p = fs::path(root) / p;
  }
  return p;
}

harness::ProgressFn progress_printer(int every) {
  return [every](const harness::RunResult& r, const marl::IterationMetrics& m) {
    if (every <= 0 || (m.iteration + 1) % every != 0) return;
    std::fprintf(stderr, "[%s] iter %4d  delay %.3f  energy %.4f  privacy %.4f  cost %.3f  ok %.3f  lambda %.3f\n",
                 r.run_id.c_str(), m.iteration + 1, m.mean_delay, m.mean_energy, m.mean_privacy, m.system_cost,
                 m.success_deadline, m.lambda_next);
  };
}

void print_eval(const std::string& label, const marl::EvalMetrics& ev) {
  std::printf("%-40s delay %.4f  energy %.5f  privacy %.5f  cost %.4f  hit %.3f  ok %.3f\n", label.c_str(),
              ev.mean_delay, ev.mean_energy, ev.mean_privacy, ev.system_cost, ev.success_hit, ev.success_deadline);
}

int report(const harness::PlanResult& res, const fs::path& out) {
  for (const auto& r : res.runs) {
    if (r.status == "ok") {
      print_eval(r.run_id, r.eval);
    } else {
      std::printf("%-40s FAILED: %s\n", r.run_id.c_str(), r.message.c_str());
    }
  }
  std::printf("metrics: %s\n", (out / "metrics.csv").string().c_str());
  return res.failures ? kExitRuntime : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical constrained MARL for split inference at the edge"};
  app.require_subcommand(1);

  // train
  std::string config_path, algorithm = "HC-MAPPO-L", out;
  std::vector<std::uint64_t> seeds;
  int iterations = -1, eval_episodes = 5, log_every = 10;
  std::uint64_t eval_seed = 1000;
  auto* train = app.add_subcommand("train", "Train one algorithm on a config and evaluate it");
  train->add_option("-c,--config", config_path, "Experiment config JSON")->required()->check(CLI::ExistingFile);
  train->add_option("-a,--algorithm", algorithm, "Algorithm name")->capture_default_str();
  train->add_option("-s,--seeds", seeds, "Seeds (default 1 2 3)")->delimiter(',');
  train->add_option("-i,--iterations", iterations, "Override the training iterations");
  train->add_option("-o,--out", out, "Output directory");
  train->add_option("--eval-episodes", eval_episodes, "Evaluation episodes")->capture_default_str();
  train->add_option("--eval-seed", eval_seed, "Evaluation seed")->capture_default_str();
  train->add_option("--log-every", log_every, "Progress line every N iterations (0 = quiet)")->capture_default_str();

  // eval
  std::string checkpoint_path, trace_path;
  int episodes = 5;
  double max_delay = -1.0;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint with exploration off");
  eval->add_option("-c,--config", config_path, "Experiment config JSON")->required()->check(CLI::ExistingFile);
  eval->add_option("-k,--checkpoint", checkpoint_path, "Checkpoint JSON")->required()->check(CLI::ExistingFile);
  eval->add_option("-e,--episodes", episodes, "Episodes")->capture_default_str();
  eval->add_option("--seed", eval_seed, "Evaluation seed")->capture_default_str();
  eval->add_option("--trace", trace_path, "Write per-user slot outcomes to this CSV");
  eval->add_option("--max-delay", max_delay, "Exit 4 when the mean delay exceeds this bound");

  // sweep
  std::string plan_path;
  auto* sweep = app.add_subcommand("sweep", "Run every (algorithm, axis value, seed) of a plan");
  sweep->add_option("-p,--plan", plan_path, "Plan JSON")->required()->check(CLI::ExistingFile);
  sweep->add_option("-s,--seeds", seeds, "Override the plan seeds")->delimiter(',');
  sweep->add_option("-i,--iterations", iterations, "Override the training iterations");
  sweep->add_option("-o,--out", out, "Output directory");
  sweep->add_option("--log-every", log_every, "Progress line every N iterations (0 = quiet)")->capture_default_str();

  // validate-config
  auto* validate = app.add_subcommand("validate-config", "Check a config or plan file and exit");
  validate->add_option("-c,--config", config_path, "Experiment config JSON")->check(CLI::ExistingFile);
  validate->add_option("-p,--plan", plan_path, "Plan JSON")->check(CLI::ExistingFile);

  // export-heatmap
  std::vector<std::string> metrics_paths;
  std::string heatmap_out = "heatmap.csv";
  auto* heat = app.add_subcommand("export-heatmap", "Per-user octile cost ranks from eval rows");
  heat->add_option("-m,--metrics", metrics_paths, "metrics.csv files")->required()->check(CLI::ExistingFile);
  heat->add_option("-o,--out", heatmap_out, "Output CSV")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train) {
      harness::ExperimentPlan plan;
      plan.base = load_config(config_path);
      if (iterations >= 0) plan.base.trainer.iterations = iterations;
      plan.name = "train";
      plan.algorithms = {algorithm};
      if (!seeds.empty()) plan.seeds = seeds;
      plan.eval_episodes = eval_episodes;
      plan.eval_seed = eval_seed;
      const auto dir = resolve_out(out, algorithm);
      return report(harness::run(plan, dir, progress_printer(log_every)), dir);
    }
    if (*eval) {
      const auto cfg = load_config(config_path);
      const auto ckpt = nn::Checkpoint::load(checkpoint_path);
      std::ofstream trace;
      if (!trace_path.empty()) {
        trace.open(trace_path);
        if (!trace) throw Error("cannot write " + trace_path);
        trace << "slot,user,model,batch,server,split,download_s,local_s,upload_s,edge_s,delay_s,energy,privacy,hit\n";
      }
      const auto ev = harness::evaluate_checkpoint(ckpt, cfg, episodes, eval_seed, trace_path.empty() ? nullptr : &trace);
      print_eval(ckpt.extra.value("algorithm", std::string("checkpoint")), ev);
      if (max_delay >= 0.0 && ev.mean_delay > max_delay) {
        std::printf("FAIL: mean delay %.4f exceeds %.4f\n", ev.mean_delay, max_delay);
        return kExitCheck;
      }
      return 0;
    }
    if (*sweep) {
      auto plan = harness::load_plan(plan_path);
      if (!seeds.empty()) plan.seeds = seeds;
      if (iterations >= 0) plan.base.trainer.iterations = iterations;
      const auto dir = resolve_out(out, plan.name);
      return report(harness::run(plan, dir, progress_printer(log_every)), dir);
    }
    if (*validate) {
      if (config_path.empty() && plan_path.empty()) throw ConfigError("give --config or --plan");
      if (!config_path.empty()) {
        load_config(config_path);
        std::printf("config ok: %s\n", config_path.c_str());
      }
      if (!plan_path.empty()) {
        const auto plan = harness::load_plan(plan_path);
        std::printf("plan ok: %s (%zu algorithms x %zu values x %zu seeds)\n", plan_path.c_str(),
                    plan.algorithms.size(), plan.values.size(), plan.seeds.size());
      }
      return 0;
    }
    if (*heat) {
      std::vector<harness::MetricsRow> rows;
      for (const auto& p : metrics_paths) {
        auto more = harness::read_metrics_csv(p);
        rows.insert(rows.end(), more.begin(), more.end());
      }
      const auto costs = harness::costs_from_rows(rows);
      if (costs.empty()) throw ConfigError("no eval rows with per-user costs in the given files");
      harness::export_cost_heatmap(costs, heatmap_out);
      std::printf("heatmap: %s (%zu algorithms)\n", heatmap_out.c_str(), costs.size());
      return 0;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return 0;
}
