#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "wcs/config.hpp"
#include "wcs/harness.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> episodes;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool with_config) {
  if (with_config) cmd->add_option("config", flags.config_path, "experiment config file")->required();
  cmd->add_option("--seed", flags.seed, "master seed (overrides the config)");
  cmd->add_option("--out", flags.out, "output directory (overrides the config)");
  cmd->add_option("--episodes", flags.episodes, "training episodes (overrides the config)");
  cmd->add_flag("--quiet", flags.quiet, "suppress progress messages");
}

wcs::ExperimentConfig load(const CommonFlags& flags) {
  std::ifstream in(flags.config_path);
  if (!in) throw std::invalid_argument("cannot open config: " + flags.config_path);
  auto kv = wcs::parse_key_values(in);
  if (flags.seed) kv["seed"] = std::to_string(*flags.seed);
  if (flags.out) kv["output_dir"] = *flags.out;
  if (flags.episodes) kv["train.episodes"] = std::to_string(*flags.episodes);
  return wcs::make_config(kv);
}

std::ofstream open_in(const std::string& dir, const std::string& name) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  const auto path = (std::filesystem::path(dir) / name).string();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write output file: " + path);
  return out;
}

int run_train(const CommonFlags& flags) {
  const auto config = load(flags);
  wcs::ProgressCallback progress;
  if (!flags.quiet) progress = [](const std::string& msg) { std::cerr << msg << '\n'; };
  const auto result = wcs::run_experiment(config, progress);
  if (!flags.quiet) {
    for (const auto& a : result.approaches)
      std::cout << a.approach << " mean_cost=" << a.report.mean_cost() << (a.training.diverged ? " (training diverged)" : "")
                << '\n';
    for (const auto& b : result.baselines) std::cout << b.label << " mean_cost=" << b.mean_cost() << '\n';
  }
  for (const auto& a : result.approaches)
    if (a.training.diverged) return 3;
  return 0;
}

int run_evaluate(const CommonFlags& flags, const std::string& policy) {
  const auto config = load(flags);
  const auto built = wcs::build_environment(config);
  const auto options = wcs::evaluation_options(config);
  wcs::EvaluationReport report;
  std::string label;
  if (std::filesystem::is_regular_file(policy)) {
    std::ifstream in(policy);
    const auto system = wcs::load_system(config, built.env, in);
    label = std::filesystem::path(policy).stem().string();
    report = wcs::evaluate(wcs::deterministic_policy(system), built.env, options, label);
  } else {
    const auto rule = wcs::allocation_rule_from_string(policy);
    if (rule == wcs::AllocationRule::learned) throw std::invalid_argument("learned policies need a checkpoint file");
    wcs::Rng unused(0);
    wcs::CoDesignSystem system(built.env, wcs::make_layout(config, rule, wcs::ControlRule::lqr), config.network, unused);
    label = policy;
    report = wcs::evaluate(wcs::deterministic_policy(system), built.env, options, label);
  }
  auto out = open_in(config.output_dir, "evaluation_" + label + ".csv");
  out << wcs::provenance_line(config) << '\n';
  wcs::write_evaluation_table(out, {report});
  if (!flags.quiet) std::cout << label << " mean_cost=" << report.mean_cost() << '\n';
  return 0;
}

int run_baselines(const CommonFlags& flags) {
  const auto config = load(flags);
  const auto built = wcs::build_environment(config);
  const auto reports = wcs::evaluate_baselines(config, built);
  auto out = open_in(config.output_dir, "baselines.csv");
  out << wcs::provenance_line(config) << '\n';
  wcs::write_evaluation_table(out, reports);
  if (!flags.quiet)
    for (const auto& r : reports) std::cout << r.label << " mean_cost=" << r.mean_cost() << '\n';
  return 0;
}

int run_gradcheck(const CommonFlags& flags) {
  const auto report = wcs::gradcheck(flags.seed.value_or(1));
  if (!report.error.empty()) throw std::runtime_error(report.error);
  if (!flags.quiet) wcs::write_gradcheck_report(std::cout, report);
  if (!report.ok()) {
    std::cerr << "error: gradcheck: relative error above tolerance\n";
    return 4;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Wireless control system co-design: training, evaluation and baselines"};
  app.require_subcommand(1);

  CommonFlags train_flags, eval_flags, base_flags, grad_flags;
  std::string policy;
  auto* train_cmd = app.add_subcommand("train", "train the configured approaches and evaluate them against baselines");
  add_common(train_cmd, train_flags, true);
  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint or a baseline allocation rule");
  add_common(eval_cmd, eval_flags, true);
  eval_cmd->add_option("--policy", policy, "checkpoint file or baseline name")->required();
  auto* base_cmd = app.add_subcommand("baselines", "evaluate every configured baseline");
  add_common(base_cmd, base_flags, true);
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of the loss gradients");
  grad_cmd->add_option("--seed", grad_flags.seed, "random seed");
  grad_cmd->add_flag("--quiet", grad_flags.quiet, "only report failures");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*train_cmd) return run_train(train_flags);
    if (*eval_cmd) return run_evaluate(eval_flags, policy);
    if (*base_cmd) return run_baselines(base_flags);
    if (*grad_cmd) return run_gradcheck(grad_flags);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: config: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: runtime: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
