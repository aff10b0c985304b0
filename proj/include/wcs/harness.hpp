#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "wcs/agents.hpp"
#include "wcs/config.hpp"
#include "wcs/environment.hpp"
#include "wcs/wireless.hpp"

namespace wcs {

/// Environment plus the random draws that produced it (recorded in the manifest).
struct BuiltEnvironment {
  Environment env;
  Placement placement;
  std::vector<double> instability;
};

/// Plants, placement and noise from the config. Placement and plant draws come
/// from streams derived from the master seed, so every approach sees the same system.
BuiltEnvironment build_environment(const ExperimentConfig& config, std::optional<bool> forced_delivery = {});

SystemLayout make_layout(const ExperimentConfig& config, AllocationRule allocation, ControlRule control);

/// Layout of one of the compared approaches: codesign, allocation_lqr or control_equal.
SystemLayout approach_layout(const ExperimentConfig& config, const std::string& approach);

/// Decides actions for a batch of observations at time t.
using BatchPolicy = std::function<std::vector<JointAction>(const std::vector<Observation>&, int t)>;

/// Mean (noise-free) actions of a system.
BatchPolicy deterministic_policy(const CoDesignSystem& system);

struct EvaluationOptions {
  int tests = 10;
  int group_size = 10;
  int horizon = 120;
  double gamma = 0.99;
  std::uint64_t seed = 1;
  double divergence_threshold = 1e12;
};

struct TestPointStats {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation over the group
  double min = 0.0;
  double max = 0.0;
};

struct EvaluationReport {
  std::string label;
  int group_size = 0;
  std::vector<TestPointStats> tests;
  /// Discounted cost of every realization, test-major.
  std::vector<double> costs;
  /// Mean over realizations of the discounted constraint signal sums.
  VectorXd constraint_sums;
  /// Largest state norm seen in each realization.
  std::vector<double> max_state_norm;
  int diverged = 0;

  double mean_cost() const;
};

/// Runs tests x group_size realizations. Realization (test, member) uses the
/// environment streams of derive_seed(seed, {test, member}) whatever the policy,
/// so reports of different policies are paired. A realization whose state norm
/// exceeds the divergence threshold stops and records the threshold as its cost.
EvaluationReport evaluate(const BatchPolicy& policy, const Environment& env, const EvaluationOptions& options,
                          const std::string& label = "policy");

EvaluationOptions evaluation_options(const ExperimentConfig& config);

/// "# seed=<seed> config_hash=<hex>"
std::string provenance_line(const ExperimentConfig& config);

void write_evaluation_table(std::ostream& out, const std::vector<EvaluationReport>& reports);
void write_evaluation_summary(std::ostream& out, const std::vector<EvaluationReport>& reports);
void write_manifest(std::ostream& out, const ExperimentConfig& config, const BuiltEnvironment& built);

struct ApproachResult {
  std::string approach;
  TrainResult training;
  EvaluationReport report;
};

struct ExperimentResult {
  std::vector<ApproachResult> approaches;
  std::vector<EvaluationReport> baselines;
};

using ProgressCallback = std::function<void(const std::string& message)>;

/// Trains every configured approach, evaluates them next to the baselines and
/// writes manifest.txt, training_log_<approach>.csv, checkpoint_<approach>.txt,
/// evaluation.csv and evaluation_summary.csv into config.output_dir.
ExperimentResult run_experiment(const ExperimentConfig& config, const ProgressCallback& progress = {});

/// Trains one approach without writing files.
TrainResult train_approach(const ExperimentConfig& config, const BuiltEnvironment& built, const std::string& approach,
                           const CheckpointHook& hook = {});

/// Evaluates the LQR-controlled allocation baselines of the config.
std::vector<EvaluationReport> evaluate_baselines(const ExperimentConfig& config, const BuiltEnvironment& built);

/// Rebuilds a system from a checkpoint written by CoDesignSystem::save.
CoDesignSystem load_system(const ExperimentConfig& config, const Environment& env, std::istream& checkpoint);

struct GradcheckEntry {
  std::string name;
  double max_relative_error = 0.0;
  int checks = 0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double tolerance = 1e-4;
  std::string error;  // non-empty when the check could not run

  bool ok() const;
};

struct GradcheckOptions {
  int networks = 50;
  int max_input = 16;
  std::vector<int> hidden{8, 8};
  int batch = 4;
  double step = 1e-5;
  double tolerance = 1e-4;
};

/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-5)
double gradcheck_relative_error(double analytic, double numeric);

/// Finite-difference check of the policy and value loss gradients on random
/// networks, one entry per output head, plus the head vector-Jacobian products.
GradcheckReport gradcheck(std::uint64_t seed, const GradcheckOptions& options = {});

void write_gradcheck_report(std::ostream& out, const GradcheckReport& report);

}  // namespace wcs
