#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "wcs/environment.hpp"
#include "wcs/learner.hpp"
#include "wcs/neuralnet.hpp"

namespace wcs {

enum class Topology { single, separate };

enum class AllocationRule { learned, equal, all_on, round_robin, channel_aware, control_aware, instability_aware, zero };

enum class ControlRule { learned, lqr, zero };

std::string to_string(Topology t);
std::string to_string(AllocationRule r);
std::string to_string(ControlRule r);
Topology topology_from_string(const std::string& s);
AllocationRule allocation_rule_from_string(const std::string& s);
ControlRule control_rule_from_string(const std::string& s);

/// What decides allocations and controls, and how learned parts are split into agents.
struct SystemLayout {
  AllocationRule allocation = AllocationRule::learned;
  ControlRule control = ControlRule::learned;
  Topology topology = Topology::separate;
  int schedule_size = 1;          // k for the selection heuristics
  double allocation_budget = 1.0; // per-step power handed out by heuristics and the simplex head
  double softplus_scale = 1.0;    // per-plant allocation scale when no instantaneous budget exists
};

struct NetworkSpec {
  std::vector<int> hidden{64, 64};
  nn::Activation activation = nn::Activation::tanh;
  double init_log_std = 0.0;
  double output_gain = 1.0;  // multiplies the actor's last layer at init
};

/// One learning actor-critic pair.
/// joint: allocation + control for every plant; allocation: the access point;
/// control: one plant (plant >= 0) or every plant (plant = -1).
struct Agent {
  enum class Role { joint, allocation, control };

  Role role = Role::joint;
  int plant = -1;
  std::string name;
  nn::GaussianPolicy actor;
  nn::ValueNetwork critic;
  Optimizer actor_optimizer;
  Optimizer critic_optimizer;
};

/// Per-agent inputs and raw Gaussian samples from one batched decision.
struct ActRecord {
  std::vector<MatrixXd> inputs;
  std::vector<MatrixXd> raw;
};

/// Allocation and control policy for the whole system: learned agents,
/// heuristic schedulers and LQR gains composed according to a layout.
class CoDesignSystem {
 public:
  CoDesignSystem() = default;
  CoDesignSystem(const Environment& env, SystemLayout layout, const NetworkSpec& spec, Rng& rng);

  const SystemLayout& layout() const { return layout_; }
  std::vector<Agent>& agents() { return agents_; }
  const std::vector<Agent>& agents() const { return agents_; }
  const std::vector<MatrixXd>& lqr_gains() const { return lqr_gains_; }

  /// Acts on a batch of observations. With `rngs` the learned parts sample
  /// (one generator per observation); without, they return the mean action.
  std::vector<JointAction> act(const std::vector<Observation>& obs, int t, std::vector<Rng>* rngs,
                               ActRecord* record = nullptr) const;

  void set_optimizer(OptimizerKind kind);

  void save(std::ostream& out) const;
  /// Replaces the agents' networks with a checkpoint written by save().
  void load(std::istream& in);

 private:
  MatrixXd heuristic_allocation(const std::vector<Observation>& obs, int t) const;

  SystemLayout layout_;
  int m_ = 0, p_ = 0, q_ = 0;
  std::optional<std::pair<double, double>> control_bounds_;
  VectorXd instability_;
  std::vector<MatrixXd> lqr_gains_;
  std::vector<Agent> agents_;
};

struct TrainConfig {
  double lr_actor = 5e-4;
  double lr_critic = 5e-4;
  double lr_dual = 1e-4;
  double gamma = 0.99;
  int workers = 16;
  int horizon = 100;
  int t_max = 5;
  int episodes = 1000;
  OptimizerKind optimizer = OptimizerKind::sgd;
  UpdateOptions update;
  double cost_scale = 1.0;  // multiplies penalized costs before returns are formed
  int warm_start_iterations = 0;
  int warm_start_batch = 64;
  double warm_start_lr = 1e-3;
  double lagrangian_ceiling = 1e12;
  int checkpoint_every = 0;
  bool record_wall_time = false;
  std::uint64_t seed = 1;

  void validate() const;
};

struct TrainLogEntry {
  int episode = 0;
  double lagrangian = 0.0;  // mean over workers of the discounted penalized cost
  double cost = 0.0;        // mean over workers of the discounted stage cost
  VectorXd violation;       // mean discounted constraint signal sums
  VectorXd lambda;          // multipliers used during the episode
  double wall_time = 0.0;
};

struct TrainResult {
  CoDesignSystem system;
  DualState dual;
  std::vector<TrainLogEntry> log;
  bool diverged = false;
};

using CheckpointHook = std::function<void(int episode, const CoDesignSystem&, const DualState&)>;

/// Primal-dual advantage actor-critic over `workers` synchronized environment copies.
TrainResult train(const TrainConfig& config, const Environment& env, CoDesignSystem system,
                  const CheckpointHook& on_checkpoint = {});

/// Supervised fit of the learned allocation head to the control-aware heuristic.
void warm_start_allocation(CoDesignSystem& system, const Environment& env, int iterations, int batch, double lr,
                           std::uint64_t seed);

void write_train_log(std::ostream& out, const std::vector<TrainLogEntry>& log, bool with_wall_time);

}  // namespace wcs
