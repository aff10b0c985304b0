#pragma once

#include <optional>
#include <ostream>
#include <vector>

#include <Eigen/Dense>

#include "wcs/dynamics.hpp"
#include "wcs/random.hpp"
#include "wcs/wireless.hpp"

namespace wcs {

enum class ConstraintKind { sum_power, region };

/// One expectation-type constraint. The per-step signal folds the bound in as
/// (1 - gamma) * bound so that a discounted sum <= 0 encodes the original bound.
struct ConstraintComponent {
  ConstraintKind kind = ConstraintKind::sum_power;
  int plant = -1;  // owning plant for region components, -1 for sum_power
  double bound = 0.0;  // p_max or T_i
  VectorXd region_low;
  VectorXd region_high;
};

struct ConstraintSpec {
  std::vector<ConstraintComponent> components;
  double gamma = 0.99;
  /// Instantaneous simplex budget on sum(alpha), enforced by the policy output layer.
  std::optional<double> instantaneous_budget;

  int size() const { return static_cast<int>(components.size()); }
  void validate(int m, int p) const;

  static ConstraintComponent sum_power(double p_max);
  static ConstraintComponent region(int plant, double half_width, int p, double time_bound);
};

enum class InitialDistribution { standard_normal, uniform };

struct EnvironmentConfig {
  std::vector<PlantModel> plants;
  ChannelModel channel;
  MatrixXd observation_noise_cov;  // over the stacked [h; x], size m(1 + p)
  CostWeights weights;
  ConstraintSpec constraints;
  InitialDistribution initial = InitialDistribution::standard_normal;
  double initial_scale = 1.0;  // std for normal, half width for uniform
  std::optional<std::pair<double, double>> control_bounds;
  /// Overrides every delivery outcome (true: ideal links, false: always open loop).
  std::optional<bool> forced_delivery;

  int m() const { return static_cast<int>(plants.size()); }
  int p() const { return plants.empty() ? 0 : plants.front().state_dim(); }
  int q() const { return plants.empty() ? 0 : plants.front().input_dim(); }
  void validate() const;
};

struct SystemState {
  MatrixXd x;  // m x p, row i is plant i
  VectorXd h;
  int t = 0;

  /// [x^(1); ...; x^(m)]
  VectorXd stacked_x() const;
};

struct Observation {
  VectorXd h;
  MatrixXd x;

  /// [h; x^(1); ...; x^(m)]
  VectorXd stacked() const;
};

struct JointAction {
  VectorXd alpha;
  MatrixXd u;  // m x q candidate controls
};

struct StepResult {
  SystemState next;
  double stage_cost = 0.0;
  VectorXd constraint_signals;
  std::vector<bool> delivered;
  MatrixXd realized_u;
  VectorXd plant_costs;  // per-plant block of the stage cost
};

/// Independent random streams of one environment instance. Keeping them
/// separate lets different policies share initial states and fading draws.
struct EnvStreams {
  Rng init;
  Rng channel;
  Rng observation;
  Rng delivery;
  Rng process;

  static EnvStreams from_seed(std::uint64_t seed);
};

VectorXd constraint_signal(const MatrixXd& x, const VectorXd& h, const VectorXd& alpha, const ConstraintSpec& spec);

double penalized_cost(double stage_cost, const VectorXd& constraint_signals, const VectorXd& lambda);

Observation observe(const SystemState& state, const MatrixXd& observation_noise_cov, Rng& rng);

class Environment {
 public:
  explicit Environment(EnvironmentConfig config);

  const EnvironmentConfig& config() const { return config_; }
  int m() const { return config_.m(); }
  int p() const { return config_.p(); }
  int q() const { return config_.q(); }
  int observation_dim() const { return m() * (1 + p()); }
  const std::vector<double>& slow_gains() const { return slow_gains_; }

  SystemState reset(EnvStreams& streams) const;
  Observation observe(const SystemState& state, Rng& rng) const;
  StepResult step(const SystemState& state, const JointAction& action, EnvStreams& streams) const;

  void validate_action(const JointAction& action) const;

 private:
  EnvironmentConfig config_;
  std::vector<double> slow_gains_;
  MatrixXd observation_factor_;
  std::vector<MatrixXd> process_factors_;
};

void write_trace_header(std::ostream& out, int p, int q);
void write_trace_rows(std::ostream& out, const SystemState& state, const JointAction& action, const StepResult& result);

}  // namespace wcs
