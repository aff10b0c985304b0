#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "wcs/neuralnet.hpp"

namespace wcs {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// R_t = c_t + gamma R_{t+1}, seeded with R_T = bootstrap.
VectorXd compute_cost_to_go(const VectorXd& costs, double bootstrap, double gamma);

VectorXd compute_advantage(const VectorXd& returns, const VectorXd& values);

enum class OptimizerKind { sgd, rmsprop, adam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string& name);

/// First-order update rule over a flat parameter vector. State is sized lazily.
class Optimizer {
 public:
  explicit Optimizer(OptimizerKind kind = OptimizerKind::sgd) : kind_(kind) {}

  /// params -= lr * direction(grad)
  void step(VectorXd& params, const VectorXd& grad, double lr);
  OptimizerKind kind() const { return kind_; }

 private:
  OptimizerKind kind_;
  VectorXd first_;
  VectorXd second_;
  long steps_ = 0;
};

/// Samples from one agent for one update: one column per (worker, step).
struct RolloutBatch {
  MatrixXd inputs;       // input_dim x B
  MatrixXd raw_actions;  // raw Gaussian samples, raw_dim x B
  VectorXd returns;      // sampled cost-to-go
  VectorXd values;       // critic estimates at sampling time

  Eigen::Index size() const { return returns.size(); }
};

struct UpdateOptions {
  double entropy_coef = 0.0;
  double max_grad_norm = 0.0;  // 0 disables clipping
  bool mean_reduction = false; // false: sum over the batch
  double log_std_min = -20.0;
  double log_std_max = 2.0;
};

struct UpdateStats {
  double loss = 0.0;
  double grad_norm = 0.0;
};

/// One actor step on sum_b log pi(a_b | s_b) A_b (costs are minimized).
UpdateStats policy_update(nn::GaussianPolicy& policy, const RolloutBatch& batch, double lr, Optimizer& optimizer,
                          const UpdateOptions& options = {});

/// One critic step on sum_b (rho(s_b) - R_b)^2.
UpdateStats value_update(nn::ValueNetwork& critic, const RolloutBatch& batch, double lr, Optimizer& optimizer,
                         const UpdateOptions& options = {});

/// Gradient of sum_b log pi(a_b | s_b) A_b w.r.t. the policy parameters, without applying it.
VectorXd policy_gradient(const nn::GaussianPolicy& policy, const RolloutBatch& batch, const UpdateOptions& options = {});

/// Gradient of sum_b (rho(s_b) - R_b)^2 w.r.t. the critic parameters.
VectorXd value_gradient(const nn::ValueNetwork& critic, const RolloutBatch& batch, const UpdateOptions& options = {});

/// Scalar losses matching the two gradients above (for finite-difference checks).
double policy_loss(const nn::GaussianPolicy& policy, const RolloutBatch& batch, const UpdateOptions& options = {});
double value_loss(const nn::ValueNetwork& critic, const RolloutBatch& batch, const UpdateOptions& options = {});

struct DualState {
  VectorXd lambda;
  double step_size = 1e-4;
  std::vector<VectorXd> violation_history;
};

/// max(0, lambda + step * violation) elementwise.
VectorXd dual_update(const VectorXd& lambda, const VectorXd& violation_estimate, double step_size);

struct PrimalSolution {
  VectorXd theta;
  VectorXd constraint;  // l(theta), <= 0 when feasible
  double objective = 0.0;
};

using PrimalMinimizer = std::function<PrimalSolution(const VectorXd& lambda)>;

struct DualDescentResult {
  VectorXd theta;
  VectorXd lambda;
  std::vector<VectorXd> lambda_history;
  std::vector<double> dual_values;  // L(theta(lambda), lambda) at each iterate
};

/// Exact primal minimization alternated with projected dual ascent.
DualDescentResult dual_descent(const VectorXd& lambda0, const PrimalMinimizer& primal_minimizer, double step_size,
                               int iterations);

}  // namespace wcs
