#pragma once

#include <string>

#include <Eigen/Dense>

namespace wcs {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct RiccatiSolution {
  MatrixXd P;
  MatrixXd K;  // u = -K x
  int iterations = 0;
  double residual = 0.0;
};

/// Infinite-horizon discrete Riccati equation by fixed-point iteration from P0 = Q.
/// Throws std::runtime_error naming `label` when max_iter is exhausted.
RiccatiSolution solve_dare(const MatrixXd& A, const MatrixXd& B, const MatrixXd& Q, const MatrixXd& R,
                           double tol = 1e-12, int max_iter = 100000, const std::string& label = "plant");

VectorXd lqr_control(const MatrixXd& K, const VectorXd& x);

double spectral_radius(const MatrixXd& M);

VectorXd equal_power(int m, double p_max);

/// Plants (t*k + j) mod m, j < k, share p_max equally.
VectorXd round_robin(int t, int m, int k, double p_max);

/// The k plants with the largest fading gain share p_max; ties go to the lower index.
VectorXd channel_aware(const VectorXd& h, int k, double p_max);

/// The k plants with the largest state norm (rows of x) share p_max; ties go to the lower index.
VectorXd control_aware(const MatrixXd& x, int k, double p_max);

/// The k plants with the largest instability parameter share p_max.
VectorXd instability_aware(const VectorXd& instability, int k, double p_max);

/// Default number of scheduled plants per slot for the selection heuristics: max(1, m / 3).
int default_schedule_size(int m);

}  // namespace wcs
