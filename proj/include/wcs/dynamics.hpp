#pragma once

#include <vector>

#include <Eigen/Dense>

#include "wcs/random.hpp"

namespace wcs {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class PlantKind { linear, cartpole };

/// Physical constants of the cart-pole benchmark (SI units).
struct CartPoleParams {
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double pole_half_length = 0.5;
  double gravity = 9.8;
  double time_step = 0.02;
};

/// One plant: either x+ = A x + B u + w, or a forward-Euler cart-pole.
struct PlantModel {
  PlantKind kind = PlantKind::linear;
  MatrixXd A;
  MatrixXd B;
  CartPoleParams cartpole;
  MatrixXd process_noise_cov;
  double instability = 0.0;

  int state_dim() const;
  int input_dim() const;

  /// Throws std::invalid_argument when the model breaks its invariants.
  void validate() const;

  static PlantModel linear(MatrixXd A, MatrixXd B, MatrixXd W);
  static PlantModel cart_pole(const CartPoleParams& params, MatrixXd W);
};

/// Joint quadratic weights over the stacked plant states and inputs.
struct CostWeights {
  MatrixXd Q;
  MatrixXd R;

  void validate() const;
};

VectorXd linear_step(const PlantModel& plant, const VectorXd& x, const VectorXd& u, const VectorXd& w);

/// One Euler step of the cart-pole. State is [y, y_dot, theta, theta_dot].
VectorXd cartpole_step(const PlantModel& plant, const VectorXd& x, double force, const VectorXd& w);

/// Dispatches on the plant kind. Cart-pole uses u(0) as the force.
VectorXd plant_step(const PlantModel& plant, const VectorXd& x, const VectorXd& u, const VectorXd& w);

/// Delivered packets apply the candidate input; dropped packets leave the plant open loop.
VectorXd apply_switched_input(const VectorXd& u_candidate, bool delivered);

double quadratic_stage_cost(const VectorXd& x, const VectorXd& u, const CostWeights& weights);

/// The upper-triangular ensemble with -a on the diagonal and 0.2 above it, B = I.
MatrixXd power_allocation_matrix(double a);

/// The fixed 3x3 matrix shared by every plant in the linear co-design scenario.
MatrixXd codesign_matrix();

std::vector<PlantModel> make_linear_ensemble(int m, double a_low, double a_high, const MatrixXd& W, Rng& rng);

/// F with F F^T = cov for a PSD covariance (LDLT based, tolerant of singular cov).
MatrixXd covariance_factor(const MatrixXd& cov);

/// Zero-mean Gaussian draw F z with z standard normal; always consumes cols(F) normals.
VectorXd sample_gaussian(const MatrixXd& factor, Rng& rng);

/// Discrete-time Jacobians of a plant's one-step map around (x, u) by central differences.
std::pair<MatrixXd, MatrixXd> linearize(const PlantModel& plant, const VectorXd& x, const VectorXd& u);

bool is_psd(const MatrixXd& M, double tol = 1e-10);

}  // namespace wcs
