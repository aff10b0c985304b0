#include "wcs/environment.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace wcs {

ConstraintComponent ConstraintSpec::sum_power(double p_max) {
  ConstraintComponent c;
  c.kind = ConstraintKind::sum_power;
  c.bound = p_max;
  return c;
}

ConstraintComponent ConstraintSpec::region(int plant, double half_width, int p, double time_bound) {
  ConstraintComponent c;
  c.kind = ConstraintKind::region;
  c.plant = plant;
  c.bound = time_bound;
  c.region_low = VectorXd::Constant(p, -half_width);
  c.region_high = VectorXd::Constant(p, half_width);
  return c;
}

void ConstraintSpec::validate(int m, int p) const {
  if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("discount must lie in [0, 1]");
  if (instantaneous_budget && !(*instantaneous_budget > 0.0))
    throw std::invalid_argument("instantaneous budget must be positive");
  for (const auto& c : components) {
    switch (c.kind) {
      case ConstraintKind::sum_power:
        if (!(c.bound > 0.0)) throw std::invalid_argument("p_max must be positive");
        break;
      case ConstraintKind::region:
        if (c.plant < 0 || c.plant >= m) throw std::invalid_argument("region constraint names an unknown plant");
        if (c.bound < 0.0) throw std::invalid_argument("region time bound must be nonnegative");
        if (c.region_low.size() != p || c.region_high.size() != p)
          throw std::invalid_argument("region box dimension must match the plant state");
        if ((c.region_low.array() > c.region_high.array()).any())
          throw std::invalid_argument("region box is empty");
        break;
    }
  }
}

void EnvironmentConfig::validate() const {
  if (plants.empty()) throw std::invalid_argument("environment needs at least one plant");
  for (const auto& plant : plants) {
    plant.validate();
    if (plant.state_dim() != p() || plant.input_dim() != q())
      throw std::invalid_argument("all plants must share state and input dimensions");
  }
  channel.validate();
  if (static_cast<int>(channel.distances.size()) != m())
    throw std::invalid_argument("channel needs one distance per plant");
  const int n = m() * (1 + p());
  if (observation_noise_cov.rows() != n || observation_noise_cov.cols() != n)
    throw std::invalid_argument("observation noise covariance must be m(1+p) square");
  if (!is_psd(observation_noise_cov)) throw std::invalid_argument("observation noise covariance must be PSD");
  if (weights.Q.rows() != m() * p() || weights.R.rows() != m() * q())
    throw std::invalid_argument("cost weights must cover the stacked states and inputs");
  weights.validate();
  constraints.validate(m(), p());
  if (control_bounds && !(control_bounds->first < control_bounds->second))
    throw std::invalid_argument("control bounds require u_min < u_max");
  if (!(initial_scale >= 0.0)) throw std::invalid_argument("initial scale must be nonnegative");
}

VectorXd SystemState::stacked_x() const {
  MatrixXd xt = x.transpose();
  return Eigen::Map<const VectorXd>(xt.data(), xt.size());
}

VectorXd Observation::stacked() const {
  VectorXd s(h.size() + x.size());
  s.head(h.size()) = h;
  MatrixXd xt = x.transpose();
  s.tail(x.size()) = Eigen::Map<const VectorXd>(xt.data(), xt.size());
  return s;
}

EnvStreams EnvStreams::from_seed(std::uint64_t seed) {
  return EnvStreams{derive_rng(seed, {1}), derive_rng(seed, {2}), derive_rng(seed, {3}), derive_rng(seed, {4}),
                    derive_rng(seed, {5})};
}

VectorXd constraint_signal(const MatrixXd& x, const VectorXd& h, const VectorXd& alpha, const ConstraintSpec& spec) {
  if (h.size() != alpha.size() || x.rows() != alpha.size())
    throw std::invalid_argument("dimension mismatch: constraint inputs");
  VectorXd signal(spec.size());
  const double slack = 1.0 - spec.gamma;
  for (int j = 0; j < spec.size(); ++j) {
    const auto& c = spec.components[static_cast<std::size_t>(j)];
    switch (c.kind) {
      case ConstraintKind::sum_power:
        signal(j) = alpha.sum() - slack * c.bound;
        break;
      case ConstraintKind::region: {
        if (c.plant < 0 || c.plant >= x.rows()) throw std::invalid_argument("region constraint names an unknown plant");
        const VectorXd xi = x.row(c.plant).transpose();
        const bool inside = (xi.array() >= c.region_low.array()).all() && (xi.array() <= c.region_high.array()).all();
        signal(j) = (inside ? 0.0 : 1.0) - slack * c.bound;
        break;
      }
      default:
        throw std::invalid_argument("unknown constraint kind");
    }
  }
  return signal;
}

double penalized_cost(double stage_cost, const VectorXd& constraint_signals, const VectorXd& lambda) {
  if (lambda.size() != constraint_signals.size()) throw std::invalid_argument("dimension mismatch: lambda");
  if ((lambda.array() < 0.0).any()) throw std::invalid_argument("multipliers must be nonnegative");
  return stage_cost + lambda.dot(constraint_signals);
}

Observation observe(const SystemState& state, const MatrixXd& observation_noise_cov, Rng& rng) {
  const auto m = state.h.size();
  const auto n = m + state.x.size();
  if (observation_noise_cov.rows() != n || observation_noise_cov.cols() != n)
    throw std::invalid_argument("dimension mismatch: observation noise covariance");
  const VectorXd noise = sample_gaussian(covariance_factor(observation_noise_cov), rng);
  Observation obs{state.h + noise.head(m), state.x};
  const auto p = state.x.cols();
  for (Eigen::Index i = 0; i < m; ++i) obs.x.row(i) += noise.segment(m + i * p, p).transpose();
  return obs;
}

Environment::Environment(EnvironmentConfig config) : config_(std::move(config)) {
  config_.validate();
  slow_gains_ = config_.channel.slow_fading_gains();
  observation_factor_ = covariance_factor(config_.observation_noise_cov);
  for (const auto& plant : config_.plants) process_factors_.push_back(covariance_factor(plant.process_noise_cov));
}

SystemState Environment::reset(EnvStreams& streams) const {
  SystemState state;
  state.x.resize(m(), p());
  if (config_.initial == InitialDistribution::standard_normal) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int i = 0; i < m(); ++i)
      for (int j = 0; j < p(); ++j) state.x(i, j) = config_.initial_scale * normal(streams.init);
  } else {
    std::uniform_real_distribution<double> uniform(-1.0, 1.0);
    for (int i = 0; i < m(); ++i)
      for (int j = 0; j < p(); ++j) state.x(i, j) = config_.initial_scale * uniform(streams.init);
  }
  state.h = sample_channel(slow_gains_, config_.channel.rayleigh_scale, streams.channel);
  state.t = 0;
  return state;
}

Observation Environment::observe(const SystemState& state, Rng& rng) const {
  if (state.h.size() != m() || state.x.rows() != m() || state.x.cols() != p())
    throw std::invalid_argument("dimension mismatch: state");
  const VectorXd noise = sample_gaussian(observation_factor_, rng);
  Observation obs{state.h + noise.head(m()), state.x};
  for (int i = 0; i < m(); ++i) obs.x.row(i) += noise.segment(m() + i * p(), p()).transpose();
  return obs;
}

void Environment::validate_action(const JointAction& action) const {
  if (action.alpha.size() != m()) throw std::invalid_argument("action alpha must have one entry per plant");
  if (action.u.rows() != m() || action.u.cols() != q()) throw std::invalid_argument("action u must be m x q");
  if (!action.alpha.allFinite() || !action.u.allFinite()) throw std::invalid_argument("action must be finite");
  if ((action.alpha.array() < 0.0).any()) throw std::invalid_argument("allocations must be nonnegative");
  if (const auto& budget = config_.constraints.instantaneous_budget) {
    if (action.alpha.sum() > *budget * (1.0 + 1e-9) + 1e-12)
      throw std::invalid_argument("allocation exceeds the instantaneous budget");
  }
}

StepResult Environment::step(const SystemState& state, const JointAction& action, EnvStreams& streams) const {
  validate_action(action);
  StepResult result;
  result.next.x.resize(m(), p());
  result.realized_u = MatrixXd::Zero(m(), q());
  result.delivered.assign(static_cast<std::size_t>(m()), false);
  result.plant_costs.resize(m());

  for (int i = 0; i < m(); ++i) {
    const double link_snr = snr(std::max(state.h(i), 0.0), action.alpha(i));
    bool delivered = sample_delivery(link_snr, streams.delivery);
    if (config_.forced_delivery) delivered = *config_.forced_delivery;
    result.delivered[static_cast<std::size_t>(i)] = delivered;

    VectorXd candidate = action.u.row(i).transpose();
    if (config_.control_bounds)
      candidate = candidate.cwiseMax(config_.control_bounds->first).cwiseMin(config_.control_bounds->second);
    result.realized_u.row(i) = apply_switched_input(candidate, delivered).transpose();
  }

  const VectorXd x_stacked = state.stacked_x();
  MatrixXd ut = result.realized_u.transpose();
  const VectorXd u_stacked = Eigen::Map<const VectorXd>(ut.data(), ut.size());
  result.stage_cost = quadratic_stage_cost(x_stacked, u_stacked, config_.weights);
  for (int i = 0; i < m(); ++i) {
    const VectorXd xi = x_stacked.segment(i * p(), p());
    const VectorXd ui = u_stacked.segment(i * q(), q());
    result.plant_costs(i) = xi.dot(config_.weights.Q.block(i * p(), i * p(), p(), p()) * xi) +
                            ui.dot(config_.weights.R.block(i * q(), i * q(), q(), q()) * ui);
  }
  result.constraint_signals = constraint_signal(state.x, state.h, action.alpha, config_.constraints);

  for (int i = 0; i < m(); ++i) {
    const VectorXd w = sample_gaussian(process_factors_[static_cast<std::size_t>(i)], streams.process);
    const VectorXd xi = state.x.row(i).transpose();
    const VectorXd ui = result.realized_u.row(i).transpose();
    result.next.x.row(i) = plant_step(config_.plants[static_cast<std::size_t>(i)], xi, ui, w).transpose();
  }
  result.next.h = sample_channel(slow_gains_, config_.channel.rayleigh_scale, streams.channel);
  result.next.t = state.t + 1;
  return result;
}

void write_trace_header(std::ostream& out, int p, int q) {
  out << "t,plant";
  for (int j = 0; j < p; ++j) out << ",x" << j;
  out << ",h,alpha";
  for (int j = 0; j < q; ++j) out << ",u" << j;
  out << ",delivered,stage_cost\n";
}

void write_trace_rows(std::ostream& out, const SystemState& state, const JointAction& action, const StepResult& result) {
  for (Eigen::Index i = 0; i < state.x.rows(); ++i) {
    out << state.t << ',' << i;
    for (Eigen::Index j = 0; j < state.x.cols(); ++j) out << ',' << state.x(i, j);
    out << ',' << state.h(i) << ',' << action.alpha(i);
    for (Eigen::Index j = 0; j < action.u.cols(); ++j) out << ',' << action.u(i, j);
    out << ',' << (result.delivered[static_cast<std::size_t>(i)] ? 1 : 0) << ',' << result.stage_cost << '\n';
  }
}

}  // namespace wcs
