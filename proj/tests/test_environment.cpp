#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "wcs/environment.hpp"

using namespace wcs;

namespace {

EnvironmentConfig linear_config(int m, double obs_noise, double process_noise) {
  EnvironmentConfig c;
  for (int i = 0; i < m; ++i)
    c.plants.push_back(PlantModel::linear(power_allocation_matrix(1.05 + 0.05 * i), MatrixXd::Identity(3, 3),
                                          process_noise * MatrixXd::Identity(3, 3)));
  c.channel.distances.assign(static_cast<std::size_t>(m), 1.0);
  c.observation_noise_cov = obs_noise * MatrixXd::Identity(m * 4, m * 4);
  c.weights.Q = MatrixXd::Identity(3 * m, 3 * m);
  c.weights.R = MatrixXd::Identity(3 * m, 3 * m);
  c.constraints.gamma = 0.99;
  for (int i = 0; i < m; ++i) c.constraints.components.push_back(ConstraintSpec::region(i, 15.0, 3, 5.0));
  return c;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

JointAction constant_action(int m, int q, double alpha, double u) {
  return JointAction{VectorXd::Constant(m, alpha), MatrixXd::Constant(m, q, u)};
}

}  // namespace

TEST_CASE("reset is seeded") {
  const Environment env(linear_config(3, 1.0, 0.0));
  auto s1 = EnvStreams::from_seed(4);
  auto s2 = EnvStreams::from_seed(4);
  const auto a = env.reset(s1);
  const auto b = env.reset(s2);
  CHECK(a.x == b.x);
  CHECK(a.h == b.h);
  CHECK(a.t == 0);
  CHECK((a.h.array() >= 0.0).all());
}

TEST_CASE("linear reset draws standard normal states") {
  const Environment env(linear_config(1, 1.0, 0.0));
  auto streams = EnvStreams::from_seed(99);
  const int n = 10000;
  std::vector<double> draws;
  for (int k = 0; k < n; ++k) draws.push_back(env.reset(streams).x(0, 0));
  std::sort(draws.begin(), draws.end());
  double d = 0.0;
  for (int k = 0; k < n; ++k) {
    const double f = normal_cdf(draws[static_cast<std::size_t>(k)]);
    d = std::max({d, std::abs(f - static_cast<double>(k) / n), std::abs(f - static_cast<double>(k + 1) / n)});
  }
  // Kolmogorov critical value at p = 0.001 is about 1.95 / sqrt(n).
  CHECK(d < 1.95 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("cart-pole reset stays in the initial box") {
  EnvironmentConfig c;
  c.plants.assign(2, PlantModel::cart_pole(CartPoleParams{}, MatrixXd::Zero(4, 4)));
  c.channel.distances = {1.0, 1.0};
  c.channel.rayleigh_scale = 2.0;
  c.observation_noise_cov = 0.1 * MatrixXd::Identity(10, 10);
  c.weights.Q = MatrixXd::Identity(8, 8);
  c.weights.R = MatrixXd::Identity(2, 2);
  c.initial = InitialDistribution::uniform;
  c.initial_scale = 0.05;
  const Environment env(c);
  auto streams = EnvStreams::from_seed(1);
  for (int k = 0; k < 1000; ++k) CHECK(env.reset(streams).x.cwiseAbs().maxCoeff() <= 0.05);
}

TEST_CASE("observation noise") {
  SystemState state;
  state.x = MatrixXd::Constant(2, 3, 0.5);
  state.x(1, 2) = -2.0;
  state.h = Eigen::Vector2d(1.5, 0.25);

  Rng rng(2);
  const auto exact = observe(state, MatrixXd::Zero(8, 8), rng);
  CHECK(exact.h == state.h);
  CHECK(exact.x == state.x);
  const VectorXd stacked = exact.stacked();
  CHECK(stacked(0) == 1.5);
  CHECK(stacked(1) == 0.25);
  CHECK(stacked(2) == 0.5);
  CHECK(stacked(7) == -2.0);

  const int n = 10000;
  VectorXd sum_sq = VectorXd::Zero(8);
  for (int k = 0; k < n; ++k) {
    const auto o = observe(state, MatrixXd::Identity(8, 8), rng);
    VectorXd d = o.stacked() - exact.stacked();
    sum_sq += d.cwiseProduct(d);
  }
  for (int j = 0; j < 8; ++j) CHECK(std::abs(sum_sq(j) / n - 1.0) <= 3.0 * std::sqrt(2.0 / n));
}

TEST_CASE("zero allocation never delivers") {
  const Environment env(linear_config(3, 0.0, 0.0));
  auto streams = EnvStreams::from_seed(5);
  const auto state = env.reset(streams);
  const auto r = env.step(state, constant_action(3, 3, 0.0, 1.0), streams);
  for (bool d : r.delivered) CHECK_FALSE(d);
  CHECK(r.realized_u.isZero(0.0));

  SystemState zero = state;
  zero.x.setZero();
  CHECK(env.step(zero, constant_action(3, 3, 0.0, 1.0), streams).stage_cost == 0.0);
}

TEST_CASE("forced delivery composes with the linear step") {
  auto c = linear_config(2, 0.0, 0.0);
  c.forced_delivery = true;
  const Environment env(c);
  auto streams = EnvStreams::from_seed(6);
  const auto state = env.reset(streams);
  const auto action = constant_action(2, 3, 0.0, 0.3);
  const auto r = env.step(state, action, streams);
  for (int i = 0; i < 2; ++i) {
    const VectorXd expected = linear_step(c.plants[static_cast<std::size_t>(i)], state.x.row(i).transpose(),
                                          action.u.row(i).transpose(), VectorXd::Zero(3));
    CHECK((r.next.x.row(i).transpose() - expected).norm() == 0.0);
  }
  CHECK(r.next.t == 1);
  CHECK(r.stage_cost == doctest::Approx(state.x.squaredNorm() + 6 * 0.09));
  CHECK(r.plant_costs.sum() == doctest::Approx(r.stage_cost));
}

TEST_CASE("ideal links match a channel-free simulation") {
  auto c = linear_config(2, 0.0, 0.1);
  c.forced_delivery = true;
  const Environment env(c);
  auto streams = EnvStreams::from_seed(7);
  auto state = env.reset(streams);

  // Reference: same initial state, same process-noise stream, no channel.
  auto ref_streams = EnvStreams::from_seed(7);
  MatrixXd x = state.x;
  const MatrixXd factor = covariance_factor(0.1 * MatrixXd::Identity(3, 3));
  for (int t = 0; t < 20; ++t) {
    JointAction action{VectorXd::Ones(2), -0.5 * state.x};
    const auto r = env.step(state, action, streams);
    double ref_cost = 0.0;
    MatrixXd next(2, 3);
    for (int i = 0; i < 2; ++i) {
      const VectorXd xi = x.row(i).transpose();
      const VectorXd ui = -0.5 * xi;
      ref_cost += xi.squaredNorm() + ui.squaredNorm();
      const VectorXd w = sample_gaussian(factor, ref_streams.process);
      next.row(i) = (c.plants[static_cast<std::size_t>(i)].A * xi + ui + w).transpose();
    }
    CHECK(r.stage_cost == doctest::Approx(ref_cost).epsilon(1e-14));
    x = next;
    state = r.next;
    CHECK((state.x - x).norm() < 1e-12);
  }
}

TEST_CASE("trajectories repeat under the same seed") {
  const Environment env(linear_config(3, 1.0, 0.1));
  auto run = [&](std::uint64_t seed) {
    auto streams = EnvStreams::from_seed(seed);
    auto state = env.reset(streams);
    std::vector<double> costs;
    for (int t = 0; t < 30; ++t) {
      const auto obs = env.observe(state, streams.observation);
      const SystemState before = state;
      const auto r = env.step(state, JointAction{VectorXd::Ones(3), -0.5 * obs.x}, streams);
      CHECK(state.x == before.x);
      costs.push_back(r.stage_cost);
      state = r.next;
    }
    return costs;
  };
  CHECK(run(3) == run(3));
  CHECK(run(3) != run(4));
}

TEST_CASE("constraint signals") {
  ConstraintSpec spec;
  spec.gamma = 0.99;
  spec.components.push_back(ConstraintSpec::region(0, 15.0, 3, 5.0));
  MatrixXd x = MatrixXd::Zero(1, 3);
  const VectorXd h = VectorXd::Ones(1);
  CHECK(constraint_signal(x, h, VectorXd::Ones(1), spec)(0) == doctest::Approx(-0.05));
  x(0, 1) = 16.0;
  CHECK(constraint_signal(x, h, VectorXd::Ones(1), spec)(0) == doctest::Approx(0.95));

  ConstraintSpec power;
  power.gamma = 0.99;
  power.components.push_back(ConstraintSpec::sum_power(20.0));
  const VectorXd alpha = Eigen::Vector2d(0.15, 0.05);  // sums to (1 - 0.99) * 20
  CHECK(std::abs(constraint_signal(MatrixXd::Zero(2, 3), VectorXd::Ones(2), alpha, power)(0)) < 1e-15);
}

TEST_CASE("discounted constraint sums equal the raw sum minus the scaled bound") {
  auto c = linear_config(2, 1.0, 0.5);
  c.constraints.components.push_back(ConstraintSpec::sum_power(3.0));
  const Environment env(c);
  auto streams = EnvStreams::from_seed(12);
  auto state = env.reset(streams);
  Rng rng(1);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  const double gamma = 0.99;
  const int horizon = 80;
  VectorXd sums = VectorXd::Zero(3);
  VectorXd raw = VectorXd::Zero(3);
  double discount = 1.0;
  for (int t = 0; t < horizon; ++t) {
    const VectorXd alpha = Eigen::Vector2d(u(rng), u(rng));
    for (int i = 0; i < 2; ++i) {
      const bool outside = state.x.row(i).cwiseAbs().maxCoeff() > 15.0;
      raw(i) += discount * (outside ? 1.0 : 0.0);
    }
    raw(2) += discount * alpha.sum();
    const auto r = env.step(state, JointAction{alpha, MatrixXd::Zero(2, 3)}, streams);
    sums += discount * r.constraint_signals;
    state = r.next;
    discount *= gamma;
  }
  const double scale = 1.0 - std::pow(gamma, horizon);
  CHECK(std::abs(sums(0) - (raw(0) - 5.0 * scale)) < 1e-12);
  CHECK(std::abs(sums(1) - (raw(1) - 5.0 * scale)) < 1e-12);
  CHECK(std::abs(sums(2) - (raw(2) - 3.0 * scale)) < 1e-12);
  CHECK(raw(0) > 0.0);  // open loop: the plants leave the region
}

TEST_CASE("penalized cost") {
  CHECK(penalized_cost(6.0, VectorXd::Constant(1, 0.5), VectorXd::Constant(1, 2.0)) == 7.0);
  CHECK(penalized_cost(6.0, VectorXd::Constant(1, 0.5), VectorXd::Zero(1)) == 6.0);
  CHECK(penalized_cost(0.0, Eigen::Vector2d(-0.05, 0.95), Eigen::Vector2d(1.0, 1.0)) == doctest::Approx(0.9));
  CHECK_THROWS_AS(penalized_cost(0.0, VectorXd::Ones(1), VectorXd::Constant(1, -1.0)), std::invalid_argument);
}

TEST_CASE("action validation") {
  auto c = linear_config(2, 0.0, 0.0);
  c.constraints.instantaneous_budget = 2.0;
  const Environment env(c);
  auto streams = EnvStreams::from_seed(1);
  const auto state = env.reset(streams);
  CHECK_THROWS_AS(env.step(state, JointAction{Eigen::Vector2d(-0.1, 1.0), MatrixXd::Zero(2, 3)}, streams),
                  std::invalid_argument);
  CHECK_THROWS_AS(env.step(state, JointAction{Eigen::Vector2d(1.5, 1.0), MatrixXd::Zero(2, 3)}, streams),
                  std::invalid_argument);
  CHECK_THROWS_AS(env.step(state, JointAction{VectorXd::Ones(3), MatrixXd::Zero(2, 3)}, streams), std::invalid_argument);
  CHECK_NOTHROW(env.step(state, JointAction{Eigen::Vector2d(1.0, 1.0), MatrixXd::Zero(2, 3)}, streams));
}

TEST_CASE("control bounds clamp the applied input") {
  auto c = linear_config(1, 0.0, 0.0);
  c.control_bounds = std::make_pair(-1.0, 1.0);
  c.forced_delivery = true;
  const Environment env(c);
  auto streams = EnvStreams::from_seed(1);
  const auto state = env.reset(streams);
  const auto r = env.step(state, JointAction{VectorXd::Ones(1), MatrixXd::Constant(1, 3, 5.0)}, streams);
  CHECK(r.realized_u == MatrixXd::Ones(1, 3));
}

TEST_CASE("trace rows") {
  const Environment env(linear_config(2, 0.0, 0.0));
  auto streams = EnvStreams::from_seed(1);
  const auto state = env.reset(streams);
  const auto action = constant_action(2, 3, 1.0, 0.0);
  const auto r = env.step(state, action, streams);
  std::ostringstream out;
  write_trace_header(out, 3, 3);
  write_trace_rows(out, state, action, r);
  const auto text = out.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
  CHECK(text.rfind("t,plant,x0,x1,x2,h,alpha,u0,u1,u2,delivered,stage_cost", 0) == 0);
}
