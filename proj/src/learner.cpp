#include "wcs/learner.hpp"

#include <cmath>
#include <stdexcept>

namespace wcs {

VectorXd compute_cost_to_go(const VectorXd& costs, double bootstrap, double gamma) {
  if (costs.size() == 0) throw std::invalid_argument("cost-to-go needs a nonempty segment");
  VectorXd returns(costs.size());
  double running = bootstrap;
  for (Eigen::Index t = costs.size(); t-- > 0;) {
    running = costs(t) + gamma * running;
    returns(t) = running;
  }
  return returns;
}

VectorXd compute_advantage(const VectorXd& returns, const VectorXd& values) {
  if (returns.size() != values.size()) throw std::invalid_argument("dimension mismatch: returns vs values");
  return returns - values;
}

std::string to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::rmsprop: return "rmsprop";
    case OptimizerKind::adam: return "adam";
  }
  return "sgd";
}

OptimizerKind optimizer_from_string(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "rmsprop") return OptimizerKind::rmsprop;
  if (name == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer: " + name);
}

void Optimizer::step(VectorXd& params, const VectorXd& grad, double lr) {
  if (params.size() != grad.size()) throw std::invalid_argument("dimension mismatch: optimizer");
  switch (kind_) {
    case OptimizerKind::sgd:
      params -= lr * grad;
      break;
    case OptimizerKind::rmsprop: {
      constexpr double decay = 0.99, eps = 1e-5;
      if (second_.size() != grad.size()) second_ = VectorXd::Zero(grad.size());
      second_ = decay * second_ + (1.0 - decay) * grad.cwiseAbs2();
      params.array() -= lr * grad.array() / (second_.array().sqrt() + eps);
      break;
    }
    case OptimizerKind::adam: {
      constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
      if (first_.size() != grad.size()) {
        first_ = VectorXd::Zero(grad.size());
        second_ = VectorXd::Zero(grad.size());
      }
      ++steps_;
      first_ = beta1 * first_ + (1.0 - beta1) * grad;
      second_ = beta2 * second_ + (1.0 - beta2) * grad.cwiseAbs2();
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps_));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps_));
      params.array() -= lr * (first_.array() / c1) / ((second_.array() / c2).sqrt() + eps);
      break;
    }
  }
}

namespace {

void check_batch(const RolloutBatch& batch, int input_dim) {
  const auto n = batch.size();
  if (n == 0) throw std::invalid_argument("empty rollout batch");
  if (batch.inputs.cols() != n || batch.values.size() != n || batch.inputs.rows() != input_dim)
    throw std::invalid_argument("dimension mismatch: rollout batch");
}

double reduction(const RolloutBatch& batch, const UpdateOptions& options) {
  return options.mean_reduction ? 1.0 / static_cast<double>(batch.size()) : 1.0;
}

void clip(VectorXd& grad, double max_norm) {
  if (max_norm <= 0.0) return;
  const double norm = grad.norm();
  if (norm > max_norm) grad *= max_norm / norm;
}

}  // namespace

double policy_loss(const nn::GaussianPolicy& policy, const RolloutBatch& batch, const UpdateOptions& options) {
  check_batch(batch, policy.input_dim());
  const VectorXd advantage = compute_advantage(batch.returns, batch.values);
  const MatrixXd means = policy.net.forward(batch.inputs);
  const VectorXd std = policy.std();
  double loss = 0.0;
  for (Eigen::Index b = 0; b < batch.size(); ++b) {
    const auto lp = nn::gaussian_logprob_and_grad(means.col(b), std, batch.raw_actions.col(b));
    loss += advantage(b) * lp.log_density - options.entropy_coef * policy.log_std.sum();
  }
  return loss * reduction(batch, options);
}

VectorXd policy_gradient(const nn::GaussianPolicy& policy, const RolloutBatch& batch, const UpdateOptions& options) {
  check_batch(batch, policy.input_dim());
  if (batch.raw_actions.rows() != policy.heads.raw_dim() || batch.raw_actions.cols() != batch.size())
    throw std::invalid_argument("dimension mismatch: raw actions");
  const VectorXd advantage = compute_advantage(batch.returns, batch.values);
  nn::ForwardCache cache;
  const MatrixXd means = policy.net.forward(batch.inputs, cache);
  const VectorXd std = policy.std();
  const VectorXd inv_var = std.array().square().inverse();

  // d log N / d mean = (a - mean) / sigma^2 ; d log N / d log sigma = z^2 - 1
  const MatrixXd diff = batch.raw_actions - means;
  MatrixXd grad_means = diff.array().colwise() * inv_var.array();
  grad_means.array().rowwise() *= advantage.transpose().array();
  const MatrixXd z2 = diff.array().square().colwise() * inv_var.array();
  VectorXd grad_log_std = ((z2.array() - 1.0).rowwise() * advantage.transpose().array()).rowwise().sum();
  grad_log_std.array() -= options.entropy_coef * static_cast<double>(batch.size());

  const double scale = reduction(batch, options);
  VectorXd grad(policy.parameter_count());
  grad.head(policy.net.parameter_count()) = policy.net.backward(cache, grad_means) * scale;
  grad.tail(policy.log_std.size()) = grad_log_std * scale;
  return grad;
}

VectorXd value_gradient(const nn::ValueNetwork& critic, const RolloutBatch& batch, const UpdateOptions& options) {
  check_batch(batch, critic.net.input_dim());
  nn::ForwardCache cache;
  const MatrixXd values = critic.net.forward(batch.inputs, cache);
  const MatrixXd residual = 2.0 * (values - batch.returns.transpose());
  return critic.net.backward(cache, residual) * reduction(batch, options);
}

double value_loss(const nn::ValueNetwork& critic, const RolloutBatch& batch, const UpdateOptions& options) {
  check_batch(batch, critic.net.input_dim());
  const MatrixXd values = critic.net.forward(batch.inputs);
  return (values.row(0).transpose() - batch.returns).squaredNorm() * reduction(batch, options);
}

UpdateStats policy_update(nn::GaussianPolicy& policy, const RolloutBatch& batch, double lr, Optimizer& optimizer,
                          const UpdateOptions& options) {
  VectorXd grad = policy_gradient(policy, batch, options);
  if (!grad.allFinite()) throw std::runtime_error("non-finite policy gradient");
  UpdateStats stats;
  stats.grad_norm = grad.norm();
  clip(grad, options.max_grad_norm);
  VectorXd params = policy.parameters();
  optimizer.step(params, grad, lr);
  policy.set_parameters(params);
  policy.log_std = policy.log_std.cwiseMax(options.log_std_min).cwiseMin(options.log_std_max);
  return stats;
}

UpdateStats value_update(nn::ValueNetwork& critic, const RolloutBatch& batch, double lr, Optimizer& optimizer,
                         const UpdateOptions& options) {
  VectorXd grad = value_gradient(critic, batch, options);
  if (!grad.allFinite()) throw std::runtime_error("non-finite value gradient");
  UpdateStats stats;
  stats.grad_norm = grad.norm();
  clip(grad, options.max_grad_norm);
  VectorXd params = critic.net.parameters();
  optimizer.step(params, grad, lr);
  critic.net.set_parameters(params);
  return stats;
}

VectorXd dual_update(const VectorXd& lambda, const VectorXd& violation_estimate, double step_size) {
  if (lambda.size() != violation_estimate.size()) throw std::invalid_argument("dimension mismatch: dual update");
  return (lambda + step_size * violation_estimate).cwiseMax(0.0);
}

DualDescentResult dual_descent(const VectorXd& lambda0, const PrimalMinimizer& primal_minimizer, double step_size,
                               int iterations) {
  if ((lambda0.array() < 0.0).any()) throw std::invalid_argument("initial multipliers must be nonnegative");
  DualDescentResult result;
  result.lambda = lambda0;
  for (int k = 0; k < iterations; ++k) {
    const PrimalSolution primal = primal_minimizer(result.lambda);
    result.theta = primal.theta;
    result.dual_values.push_back(primal.objective + result.lambda.dot(primal.constraint));
    result.lambda = dual_update(result.lambda, primal.constraint, step_size);
    result.lambda_history.push_back(result.lambda);
  }
  if (iterations > 0) result.theta = primal_minimizer(result.lambda).theta;
  return result;
}

}  // namespace wcs
