#include "wcs/wireless.hpp"

#include <cmath>
#include <stdexcept>

namespace wcs {

void ChannelModel::validate() const {
  for (double d : distances)
    if (!(d > 0.0)) throw std::invalid_argument("channel distances must be positive");
  if (!(path_loss_exponent > 0.0)) throw std::invalid_argument("path loss exponent must be positive");
  if (!(rayleigh_scale > 0.0)) throw std::invalid_argument("Rayleigh scale must be positive");
}

std::vector<double> ChannelModel::slow_fading_gains() const {
  std::vector<double> gains;
  gains.reserve(distances.size());
  for (double d : distances) gains.push_back(slow_fading(d, path_loss_exponent));
  return gains;
}

Placement random_placement(int m, double half_width, double min_distance, Rng& rng) {
  if (m < 1) throw std::invalid_argument("placement needs at least one plant");
  if (!(half_width > 0.0)) throw std::invalid_argument("placement half width must be positive");
  std::uniform_real_distribution<double> coord(-half_width, half_width);
  Placement placement;
  for (int i = 0; i < m; ++i) {
    const double px = coord(rng);
    const double py = coord(rng);
    placement.positions.emplace_back(px, py);
    placement.distances.push_back(std::max(std::hypot(px, py), min_distance));
  }
  return placement;
}

double slow_fading(double distance, double path_loss_exponent) {
  if (!(distance > 0.0)) throw std::invalid_argument("distance must be positive");
  return std::pow(distance, -path_loss_exponent);
}

double sample_fading(double slow_gain, double rayleigh_scale, Rng& rng) {
  if (!(slow_gain > 0.0) || !(rayleigh_scale > 0.0))
    throw std::invalid_argument("fading needs a positive slow gain and Rayleigh scale");
  // inverse CDF; 1 - U keeps the log argument in (0, 1]
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double u = 1.0 - uniform(rng);
  return slow_gain * rayleigh_scale * std::sqrt(-2.0 * std::log(u));
}

Eigen::VectorXd sample_channel(const std::vector<double>& slow_gains, double rayleigh_scale, Rng& rng) {
  Eigen::VectorXd h(static_cast<Eigen::Index>(slow_gains.size()));
  for (std::size_t i = 0; i < slow_gains.size(); ++i)
    h(static_cast<Eigen::Index>(i)) = sample_fading(slow_gains[i], rayleigh_scale, rng);
  return h;
}

double snr(double h, double alpha) {
  if (h < 0.0 || alpha < 0.0) throw std::invalid_argument("snr inputs must be nonnegative");
  return h * alpha;
}

double delivery_probability(double snr_value) {
  if (snr_value < 0.0) throw std::invalid_argument("snr must be nonnegative");
  return -std::expm1(-snr_value);
}

bool sample_delivery(double snr_value, Rng& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  return uniform(rng) < delivery_probability(snr_value);
}

}  // namespace wcs
