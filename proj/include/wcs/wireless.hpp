#pragma once

#include <vector>

#include <Eigen/Dense>

#include "wcs/random.hpp"

namespace wcs {

/// Per-plant slow fading from distance, i.i.d. Rayleigh fast fading per step.
struct ChannelModel {
  std::vector<double> distances;
  double path_loss_exponent = 2.0;
  double rayleigh_scale = 1.0;

  void validate() const;
  /// d_i^(-p_l) for every plant.
  std::vector<double> slow_fading_gains() const;
};

/// Plant positions drawn uniformly in [-half_width, half_width]^2 around the access point.
struct Placement {
  std::vector<std::pair<double, double>> positions;
  std::vector<double> distances;
};

Placement random_placement(int m, double half_width, double min_distance, Rng& rng);

double slow_fading(double distance, double path_loss_exponent);

/// h_s * h_f with h_f ~ Rayleigh(scale).
double sample_fading(double slow_gain, double rayleigh_scale, Rng& rng);

Eigen::VectorXd sample_channel(const std::vector<double>& slow_gains, double rayleigh_scale, Rng& rng);

double snr(double h, double alpha);

/// Packet success probability 1 - exp(-snr).
double delivery_probability(double snr_value);

bool sample_delivery(double snr_value, Rng& rng);

}  // namespace wcs
