// sceneprobe: generate scene-injection attacks against embodied-AI task
// planners and evaluate planners/defenses on an automatically built benchmark.

#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "sceneprobe/pipeline.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int parallelism = 0;
  std::string run_dir;
  std::string replay;
  bool no_record = false;
};

void attach_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "run configuration file (JSON)");
  cmd->add_option("--seed", opts.seed, "master seed override")->each([&](const std::string&) {
    opts.seed_set = true;
  });
  cmd->add_option("--parallelism", opts.parallelism, "max concurrent tasks");
  cmd->add_option("--run-dir", opts.run_dir, "run directory (default: timestamped under ./runs)");
  cmd->add_option("--replay", opts.replay, "replay cache; run fully offline from it");
  cmd->add_flag("--no-record", opts.no_record, "do not write a replay cache");
}

sceneprobe::pipeline::RunConfig resolve_config(const CommonOpts& opts) {
  using sceneprobe::pipeline::RunConfig;
  RunConfig cfg = opts.config_path.empty() ? RunConfig{} : RunConfig::load(opts.config_path);
  if (opts.seed_set) {
    cfg.master_seed = opts.seed;
    cfg.backends = sceneprobe::pipeline::default_stub_profiles(cfg.master_seed);
  }
  if (opts.parallelism > 0) cfg.parallelism = opts.parallelism;
  if (!opts.run_dir.empty()) cfg.run_dir = opts.run_dir;
  if (!opts.replay.empty()) cfg.replay_path = opts.replay;
  if (opts.no_record) cfg.record_replay = false;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scene-injection red-teaming toolkit for embodied-AI task planners"};
  app.require_subcommand(1);

  // attack run
  auto* attack_cmd = app.add_subcommand("attack", "attack generation");
  attack_cmd->require_subcommand(1);
  auto* attack_run = attack_cmd->add_subcommand("run", "optimize instructions for manifest tasks");
  CommonOpts attack_opts;
  std::string attack_manifest;
  std::string attack_tasks;
  std::size_t max_tasks = 0;
  attach_common(attack_run, attack_opts);
  attack_run->add_option("--manifest", attack_manifest, "benchmark manifest")->required();
  attack_run->add_option("--tasks", attack_tasks,
                         "task file: JSON array of manifest ids or inline task objects");
  attack_run->add_option("--max-tasks", max_tasks, "limit the number of tasks (0 = all)");

  // bench build
  auto* bench_cmd = app.add_subcommand("bench", "benchmark generation");
  bench_cmd->require_subcommand(1);
  auto* bench_build = bench_cmd->add_subcommand("build", "build a benchmark manifest");
  CommonOpts bench_opts;
  std::string bench_source;
  int bench_count = 0;
  attach_common(bench_build, bench_opts);
  bench_build->add_option("--source", bench_source, "scene source: fixture:<seed> or dir:<path>");
  bench_build->add_option("--count", bench_count, "number of scenes to sample");

  // eval jailbreak|dos|ocr
  auto* eval_cmd = app.add_subcommand("eval", "evaluation harness");
  eval_cmd->require_subcommand(1);
  struct EvalArgs {
    CommonOpts common;
    std::string manifest;
    bool defense = false;
    std::string placement;
    std::string decoy;
    int max_records = 0;
  };
  std::map<std::string, EvalArgs> eval_args;
  for (const std::string mode : {"jailbreak", "dos", "ocr"}) {
    auto* sub = eval_cmd->add_subcommand(mode, mode + std::string(" evaluation"));
    auto& args = eval_args[mode];
    attach_common(sub, args.common);
    sub->add_option("--manifest", args.manifest, "benchmark manifest")->required();
    sub->add_flag("--defense", args.defense, "attach the configured guard policy");
    sub->add_option("--placement", args.placement,
                    "placement mode: suggested | wall | table | ground | camera");
    if (mode == "jailbreak") {
      sub->add_option("--decoy", args.decoy,
                      "benign decoy instruction handed to the planner (default: none)");
    }
    sub->add_option("--max-records", args.max_records, "limit evaluated records (0 = all)");
  }

  // report / stats
  auto* report_cmd = app.add_subcommand("report", "render reports from a run directory");
  std::string report_dir;
  report_cmd->add_option("--run-dir", report_dir, "run directory")->required();

  auto* stats_cmd = app.add_subcommand("stats", "print manifest distribution statistics");
  std::string stats_manifest;
  stats_cmd->add_option("--manifest", stats_manifest, "benchmark manifest")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (attack_run->parsed()) {
      auto cfg = resolve_config(attack_opts);
      return sceneprobe::pipeline::cmd_attack(cfg, attack_manifest, max_tasks, std::cout,
                                              attack_tasks);
    }
    if (bench_build->parsed()) {
      auto cfg = resolve_config(bench_opts);
      if (!bench_source.empty()) cfg.forge_config.source = bench_source;
      if (bench_count > 0) cfg.forge_config.scene_count = bench_count;
      return sceneprobe::pipeline::cmd_bench_build(cfg, std::cout);
    }
    for (const auto& [mode, args] : eval_args) {
      auto* sub = eval_cmd->get_subcommand(mode);
      if (!sub->parsed()) continue;
      auto cfg = resolve_config(args.common);
      if (!args.placement.empty()) cfg.bench_config.placement = args.placement;
      if (!args.decoy.empty()) cfg.bench_config.decoy_text = args.decoy;
      if (args.max_records > 0) cfg.bench_config.max_records = args.max_records;
      return sceneprobe::pipeline::cmd_eval(cfg, args.manifest, mode, args.defense, std::cout);
    }
    if (report_cmd->parsed()) {
      return sceneprobe::pipeline::cmd_report(report_dir, std::cout);
    }
    if (stats_cmd->parsed()) {
      return sceneprobe::pipeline::cmd_stats(stats_manifest, std::cout);
    }
  } catch (const sceneprobe::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
