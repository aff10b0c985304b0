#include "wcs/baselines.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace wcs {

namespace {

void check_schedule(int m, int k) {
  if (m < 1) throw std::invalid_argument("schedule needs at least one plant");
  if (k < 1 || k > m) throw std::invalid_argument("schedule size k must satisfy 1 <= k <= m");
}

VectorXd top_k(const VectorXd& score, int k, double p_max) {
  const int m = static_cast<int>(score.size());
  check_schedule(m, k);
  std::vector<int> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return score(a) > score(b); });
  VectorXd alpha = VectorXd::Zero(m);
  for (int j = 0; j < k; ++j) alpha(order[static_cast<std::size_t>(j)]) = p_max / k;
  return alpha;
}

}  // namespace

RiccatiSolution solve_dare(const MatrixXd& A, const MatrixXd& B, const MatrixXd& Q, const MatrixXd& R, double tol,
                           int max_iter, const std::string& label) {
  const auto p = A.rows();
  if (A.cols() != p || B.rows() != p || Q.rows() != p || Q.cols() != p || R.rows() != B.cols() || R.cols() != B.cols())
    throw std::invalid_argument("dimension mismatch: Riccati data for " + label);

  MatrixXd P = Q;
  RiccatiSolution sol;
  for (int it = 1; it <= max_iter; ++it) {
    const MatrixXd BtP = B.transpose() * P;
    const MatrixXd gain = (R + BtP * B).ldlt().solve(BtP * A);
    MatrixXd next = A.transpose() * P * A - A.transpose() * P * B * gain + Q;
    next = 0.5 * (next + next.transpose());
    const double change = (next - P).cwiseAbs().maxCoeff();
    P = std::move(next);
    if (!P.allFinite()) break;
    if (change <= tol * std::max(1.0, P.cwiseAbs().maxCoeff())) {
      const MatrixXd BtP_final = B.transpose() * P;
      sol.P = P;
      sol.K = (R + BtP_final * B).ldlt().solve(BtP_final * A);
      sol.iterations = it;
      const MatrixXd fixed = A.transpose() * P * A - A.transpose() * P * B * sol.K + Q;
      sol.residual = (P - fixed).cwiseAbs().maxCoeff();
      return sol;
    }
  }
  throw std::runtime_error("Riccati iteration did not converge for " + label);
}

VectorXd lqr_control(const MatrixXd& K, const VectorXd& x) {
  if (K.cols() != x.size()) throw std::invalid_argument("dimension mismatch: LQR gain vs state");
  return -K * x;
}

double spectral_radius(const MatrixXd& M) {
  Eigen::EigenSolver<MatrixXd> eig(M, false);
  return eig.eigenvalues().cwiseAbs().maxCoeff();
}

VectorXd equal_power(int m, double p_max) {
  if (m < 1) throw std::invalid_argument("equal power needs at least one plant");
  return VectorXd::Constant(m, p_max / m);
}

VectorXd round_robin(int t, int m, int k, double p_max) {
  check_schedule(m, k);
  if (t < 0) throw std::invalid_argument("time index must be nonnegative");
  VectorXd alpha = VectorXd::Zero(m);
  const long start = static_cast<long>(t) * k;
  for (int j = 0; j < k; ++j) alpha(static_cast<int>((start + j) % m)) = p_max / k;
  return alpha;
}

VectorXd channel_aware(const VectorXd& h, int k, double p_max) { return top_k(h, k, p_max); }

VectorXd control_aware(const MatrixXd& x, int k, double p_max) { return top_k(x.rowwise().norm(), k, p_max); }

VectorXd instability_aware(const VectorXd& instability, int k, double p_max) { return top_k(instability, k, p_max); }

int default_schedule_size(int m) { return std::max(1, m / 3); }

}  // namespace wcs
