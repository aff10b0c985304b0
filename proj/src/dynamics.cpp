#include "wcs/dynamics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace wcs {

namespace {

void require_dims(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("dimension mismatch: ") + what);
}

bool is_symmetric(const MatrixXd& M, double tol) {
  return M.rows() == M.cols() && (M - M.transpose()).cwiseAbs().maxCoeff() <= tol * (1.0 + M.cwiseAbs().maxCoeff());
}

}  // namespace

bool is_psd(const MatrixXd& M, double tol) {
  if (M.size() == 0) return true;
  if (!is_symmetric(M, 1e-12)) return false;
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(M, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff() >= -tol * (1.0 + M.cwiseAbs().maxCoeff());
}

int PlantModel::state_dim() const {
  return kind == PlantKind::cartpole ? 4 : static_cast<int>(A.rows());
}

int PlantModel::input_dim() const {
  return kind == PlantKind::cartpole ? 1 : static_cast<int>(B.cols());
}

void PlantModel::validate() const {
  const int p = state_dim();
  if (kind == PlantKind::linear) {
    if (A.rows() == 0 || A.rows() != A.cols()) throw std::invalid_argument("plant A must be square and nonempty");
    if (B.rows() != A.rows() || B.cols() == 0) throw std::invalid_argument("plant B rows must match A");
  } else {
    if (!(cartpole.time_step > 0.0)) throw std::invalid_argument("cart-pole time_step must be positive");
    if (!(cartpole.cart_mass > 0.0) || !(cartpole.pole_mass > 0.0) || !(cartpole.pole_half_length > 0.0))
      throw std::invalid_argument("cart-pole masses and length must be positive");
  }
  if (process_noise_cov.rows() != p || process_noise_cov.cols() != p)
    throw std::invalid_argument("process noise covariance must be p x p");
  if (!is_psd(process_noise_cov)) throw std::invalid_argument("process noise covariance must be symmetric PSD");
}

PlantModel PlantModel::linear(MatrixXd A, MatrixXd B, MatrixXd W) {
  PlantModel plant;
  plant.kind = PlantKind::linear;
  plant.A = std::move(A);
  plant.B = std::move(B);
  plant.process_noise_cov = std::move(W);
  plant.validate();
  return plant;
}

PlantModel PlantModel::cart_pole(const CartPoleParams& params, MatrixXd W) {
  PlantModel plant;
  plant.kind = PlantKind::cartpole;
  plant.cartpole = params;
  plant.process_noise_cov = std::move(W);
  plant.validate();
  return plant;
}

void CostWeights::validate() const {
  if (!is_psd(Q)) throw std::invalid_argument("cost Q must be symmetric PSD");
  if (R.rows() == 0 || !is_symmetric(R, 1e-12)) throw std::invalid_argument("cost R must be symmetric");
  Eigen::LLT<MatrixXd> llt(R);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("cost R must be positive definite");
}

VectorXd linear_step(const PlantModel& plant, const VectorXd& x, const VectorXd& u, const VectorXd& w) {
  if (plant.kind != PlantKind::linear) throw std::invalid_argument("linear_step on a non-linear plant");
  require_dims(x.size() == plant.A.cols(), "x vs A");
  require_dims(u.size() == plant.B.cols(), "u vs B");
  require_dims(w.size() == plant.A.rows(), "w vs A");
  return plant.A * x + plant.B * u + w;
}

VectorXd cartpole_step(const PlantModel& plant, const VectorXd& x, double force, const VectorXd& w) {
  if (plant.kind != PlantKind::cartpole) throw std::invalid_argument("cartpole_step on a linear plant");
  require_dims(x.size() == 4 && w.size() == 4, "cart-pole state is 4-dimensional");
  if (!x.allFinite() || !w.allFinite() || !std::isfinite(force))
    throw std::invalid_argument("cart-pole inputs must be finite");

  const auto& c = plant.cartpole;
  const double total_mass = c.cart_mass + c.pole_mass;
  const double polemass_length = c.pole_mass * c.pole_half_length;
  const double theta = x(2);
  const double theta_dot = x(3);
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);

  const double temp = (force + polemass_length * theta_dot * theta_dot * sin_t) / total_mass;
  const double theta_acc = (c.gravity * sin_t - cos_t * temp) /
                           (c.pole_half_length * (4.0 / 3.0 - c.pole_mass * cos_t * cos_t / total_mass));
  const double y_acc = temp - polemass_length * theta_acc * cos_t / total_mass;

  VectorXd next(4);
  next(0) = x(0) + c.time_step * x(1);
  next(1) = x(1) + c.time_step * y_acc;
  next(2) = x(2) + c.time_step * x(3);
  next(3) = x(3) + c.time_step * theta_acc;
  return next + w;
}

VectorXd plant_step(const PlantModel& plant, const VectorXd& x, const VectorXd& u, const VectorXd& w) {
  if (plant.kind == PlantKind::linear) return linear_step(plant, x, u, w);
  require_dims(u.size() == 1, "cart-pole input is scalar");
  return cartpole_step(plant, x, u(0), w);
}

VectorXd apply_switched_input(const VectorXd& u_candidate, bool delivered) {
  return delivered ? u_candidate : VectorXd::Zero(u_candidate.size());
}

double quadratic_stage_cost(const VectorXd& x, const VectorXd& u, const CostWeights& weights) {
  require_dims(weights.Q.rows() == x.size() && weights.Q.cols() == x.size(), "x vs Q");
  require_dims(weights.R.rows() == u.size() && weights.R.cols() == u.size(), "u vs R");
  return x.dot(weights.Q * x) + u.dot(weights.R * u);
}

MatrixXd power_allocation_matrix(double a) {
  MatrixXd A(3, 3);
  A << -a, 0.2, 0.2,
       0.0, -a, 0.2,
       0.0, 0.0, -a;
  return A;
}

MatrixXd codesign_matrix() {
  MatrixXd A(3, 3);
  A << -1.01, 0.5, 0.5,
       -0.5, 1.01, 0.5,
       0.0, 0.5, -0.5;
  return A;
}

std::vector<PlantModel> make_linear_ensemble(int m, double a_low, double a_high, const MatrixXd& W, Rng& rng) {
  if (m < 1) throw std::invalid_argument("ensemble needs at least one plant");
  if (a_low > a_high) throw std::invalid_argument("ensemble bounds must satisfy a_low <= a_high");
  std::uniform_real_distribution<double> dist(a_low, a_high);
  std::vector<PlantModel> plants;
  plants.reserve(m);
  for (int i = 0; i < m; ++i) {
    const double a = dist(rng);
    auto plant = PlantModel::linear(power_allocation_matrix(a), MatrixXd::Identity(3, 3), W);
    plant.instability = a;
    plants.push_back(std::move(plant));
  }
  return plants;
}

MatrixXd covariance_factor(const MatrixXd& cov) {
  const auto n = cov.rows();
  if (n == 0) return MatrixXd(0, 0);
  if (cov.isZero(0.0)) return MatrixXd::Zero(n, n);
  Eigen::LDLT<MatrixXd> ldlt(cov);
  VectorXd d = ldlt.vectorD().cwiseMax(0.0).cwiseSqrt();
  MatrixXd L = ldlt.matrixL();
  MatrixXd factor = L * d.asDiagonal();
  return ldlt.transpositionsP().transpose() * factor;
}

VectorXd sample_gaussian(const MatrixXd& factor, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  VectorXd z(factor.cols());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
  return factor * z;
}

std::pair<MatrixXd, MatrixXd> linearize(const PlantModel& plant, const VectorXd& x, const VectorXd& u) {
  const int p = plant.state_dim();
  const int q = plant.input_dim();
  const double eps = 1e-6;
  const VectorXd w = VectorXd::Zero(p);
  MatrixXd A(p, p), B(p, q);
  for (int j = 0; j < p; ++j) {
    VectorXd dx = VectorXd::Zero(p);
    dx(j) = eps;
    A.col(j) = (plant_step(plant, x + dx, u, w) - plant_step(plant, x - dx, u, w)) / (2 * eps);
  }
  for (int j = 0; j < q; ++j) {
    VectorXd du = VectorXd::Zero(q);
    du(j) = eps;
    B.col(j) = (plant_step(plant, x, u + du, w) - plant_step(plant, x, u - du, w)) / (2 * eps);
  }
  return {A, B};
}

}  // namespace wcs
