// circform command-line driver.
//
// Exit codes: 0 ok, 1 runtime failure, 2 usage or configuration error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "circform/config.hpp"
#include "circform/cpg.hpp"
#include "circform/dynamics.hpp"
#include "circform/eval.hpp"
#include "circform/marl.hpp"

namespace fs = std::filesystem;
using namespace circform;

namespace {

struct UsageError : Error {
  using Error::Error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoFailure("cannot write " + p.string());
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoFailure("cannot create directory " + dir.string() + ": " + ec.message());
}

ExperimentConfig load_config(const std::string& path) {
  try {
    return parse_config(read_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  } catch (const IoFailure& e) {
    throw ConfigError(e.what());
  }
}

int cmd_train(const std::string& config_path, const std::string& out_override, bool quiet) {
  ExperimentConfig cfg = load_config(config_path);
  if (!out_override.empty()) cfg.output_dir = out_override;
  const fs::path dir = cfg.output_dir;
  ensure_dir(dir);

  nlohmann::json effective = to_json(cfg);
  open_out(dir / "effective_config.json") << effective.dump(2) << "\n";
  cfg.training.metadata["config_hash"] = config_hash(cfg);

  const std::size_t total = cfg.training.learner.episodes;
  auto res = marl::train(cfg.training, marl::default_env_factory, [&](const marl::EpisodeLog& e) {
    if (!quiet && (e.episode % 50 == 0 || e.episode == total))
      std::fprintf(stderr, "episode %zu/%zu  reward %.2f  eps %.3f  loss %.4f\n", e.episode, total,
                   e.mean_team_reward, e.epsilon, e.loss_mean);
  });

  {
    auto log = open_out(dir / "training_log.csv");
    marl::write_training_log_csv(log, res.log);
  }
  {
    auto log = open_out(dir / "validation_log.csv");
    marl::write_validation_log_csv(log, res.validation);
  }
  {
    auto f = open_out(dir / "checkpoint_best.ckpt");
    nn::write_checkpoint(f, res.best);
  }
  {
    auto f = open_out(dir / "checkpoint_final.ckpt");
    nn::write_checkpoint(f, res.final);
  }
  if (!quiet) std::fprintf(stderr, "best checkpoint from episode %zu; outputs in %s\n", res.best_episode, dir.c_str());
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::size_t agents = 3;
  double radius = 70.0;
  std::string formation = "regular";
  std::size_t episodes = 20;
  std::string noise = "on";
  std::uint64_t seed = 0;
  std::string out = "eval_out";
  std::size_t duration = eval::kDefaultPhaseSteps;
  std::size_t settle = 1575;
  unsigned threads = 0;
  bool svg = false;
};

nn::Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open checkpoint " + path);
  try {
    return nn::read_checkpoint(in);
  } catch (const Error& e) {
    throw IncompatibleCheckpoint(path + ": " + e.what());
  }
}

int cmd_eval(const EvalArgs& a) {
  eval::EvalOptions opt;
  try {
    if (a.formation == "switch") {
      if (a.agents != 3) throw InvalidArgument("the switch scenario needs 3 agents");
      opt.scenario = eval::formation_switch_scenario(a.radius, a.duration);
    } else {
      opt.scenario = eval::static_scenario(eval::named_formation(a.formation, a.agents, a.radius), a.duration);
    }
    opt.scenario.validate();
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  if (a.settle >= a.duration) throw UsageError("--settle must be smaller than the phase duration");
  opt.episodes = a.episodes;
  opt.noise = a.noise == "on";
  opt.seed = a.seed;
  opt.settle_steps = a.settle;
  opt.threads = a.threads;
  opt.keep_trajectories = true;

  const nn::Checkpoint ck = load_checkpoint(a.checkpoint);
  try {
    eval::check_compatible(ck.net);
  } catch (const IncompatibleCheckpoint& e) {
    throw IncompatibleCheckpoint(a.checkpoint + ": " + e.what());
  }
  const eval::EvalReport rep = eval::evaluate(ck, opt);

  const fs::path dir = a.out;
  ensure_dir(dir);
  nlohmann::json j = eval::to_json(rep);
  j["checkpoint"] = fs::path(a.checkpoint).filename().string();
  j["formation"] = a.formation;
  j["radius"] = a.radius;
  open_out(dir / "report.json") << j.dump(2) << "\n";
  for (std::size_t e = 0; e < rep.trajectories.size(); ++e) {
    char name[64];
    std::snprintf(name, sizeof name, "trajectory_%03zu.csv", e);
    auto f = open_out(dir / name);
    write_trajectory_csv(f, rep.trajectories[e]);
    if (a.svg) {
      std::snprintf(name, sizeof name, "trajectory_%03zu.svg", e);
      eval::render_trajectory(rep.trajectories[e], (dir / name).string());
    }
  }
  std::printf("err_t_rmse %.4f cm  err_f_rmse %.4f cm  (%zu episodes, %zu agents)\n", rep.err_t_rmse, rep.err_f_rmse,
              rep.n_episodes, rep.n_agents);
  return 0;
}

int cmd_cpg_trace(double seconds, int action_id, const std::string& out) {
  const cpg::CpgConfig cfg = cpg_parameters(action(action_id));
  if (out.empty() || out == "-") {
    cpg::write_trace_csv(std::cout, cfg, seconds);
  } else {
    auto f = open_out(out);
    cpg::write_trace_csv(f, cfg, seconds);
  }
  return 0;
}

int cmd_actions(const std::string& out) {
  if (out.empty() || out == "-") {
    write_action_catalog_csv(std::cout);
  } else {
    auto f = open_out(out);
    write_action_catalog_csv(f);
  }
  return 0;
}

int cmd_config_dump(const std::string& path) {
  const ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : load_config(path);
  std::cout << to_json(cfg).dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Circular formation control with multi-agent reinforcement learning"};
  app.require_subcommand(1);

  std::string config_path, train_out;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "Train from a JSON experiment config");
  train->add_option("config", config_path, "Experiment config (JSON)")->required();
  train->add_option("--out", train_out, "Override the output directory");
  train->add_flag("--quiet", quiet, "Suppress progress output");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a formation scenario");
  ev->add_option("checkpoint", ea.checkpoint, "Checkpoint file")->required();
  ev->add_option("--agents", ea.agents, "Number of agents")->check(CLI::Range(std::size_t{2}, std::size_t{1000}));
  ev->add_option("--radius", ea.radius, "Path radius in cm")->check(CLI::PositiveNumber);
  ev->add_option("--formation", ea.formation,
                 "equilateral, isosceles-right, right-30-60, square, decagon, regular or switch");
  ev->add_option("--episodes", ea.episodes, "Evaluation episodes")->check(CLI::PositiveNumber);
  ev->add_option("--noise", ea.noise, "Sensing and motion noise")->check(CLI::IsMember({"on", "off"}));
  ev->add_option("--seed", ea.seed, "Evaluation seed");
  ev->add_option("--out", ea.out, "Output directory");
  ev->add_option("--duration", ea.duration, "Steps per formation phase")->check(CLI::PositiveNumber);
  ev->add_option("--settle", ea.settle, "Unscored steps after each formation change");
  ev->add_option("--threads", ea.threads, "Worker threads (0: all cores)");
  ev->add_flag("--svg", ea.svg, "Also render each trajectory as SVG");

  double seconds = 10.0;
  int action_id = 7;
  std::string trace_out;
  auto* trace = app.add_subcommand("cpg-trace", "Dump joint-angle traces of the oscillator for one action");
  trace->add_option("--seconds", seconds, "Simulated time")->check(CLI::PositiveNumber);
  trace->add_option("--action-id", action_id, "Action id 0..14");
  trace->add_option("--out", trace_out, "Output CSV (default stdout)");

  std::string actions_out;
  auto* acts = app.add_subcommand("actions", "Print the action catalog as CSV");
  acts->add_option("--out", actions_out, "Output CSV (default stdout)");

  std::string dump_path;
  auto* dump = app.add_subcommand("config-dump", "Print the effective configuration");
  dump->add_option("config", dump_path, "Config to merge over the defaults");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*train) return cmd_train(config_path, train_out, quiet);
    if (*ev) return cmd_eval(ea);
    if (*trace) {
      if (action_id < 0 || action_id >= kNumActions) throw UsageError("action id must be in 0..14");
      return cmd_cpg_trace(seconds, action_id, trace_out);
    }
    if (*acts) return cmd_actions(actions_out);
    if (*dump) return cmd_config_dump(dump_path);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
