#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wcs/agents.hpp"
#include "wcs/dynamics.hpp"

namespace wcs {

/// Flat `section.key = value` text. Lines starting with '#' are comments.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::istream& in);

enum class PowerConstraint { none, instantaneous, expected };

/// Fully resolved experiment description.
struct ExperimentConfig {
  std::string scenario = "linear_power";
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  int m = 10;

  PlantKind plant_kind = PlantKind::linear;
  std::string plant_matrix = "power_allocation";
  double a_low = 1.05;
  double a_high = 1.15;
  double process_noise = 0.0;
  InitialDistribution initial = InitialDistribution::standard_normal;
  double initial_scale = 1.0;
  CartPoleParams cartpole;

  double rayleigh_scale = 1.0;
  double path_loss = 2.0;
  double area_half_width = 2.5;
  double min_distance = 0.05;

  double obs_noise_h = 1.0;
  double obs_noise_x = 1.0;

  std::vector<double> q_diag{1.0, 1.0, 1.0};
  std::vector<double> r_diag{1.0, 1.0, 1.0};

  PowerConstraint power = PowerConstraint::instantaneous;
  double p_max = 10.0;
  bool region = true;
  double region_half_width = 15.0;
  double region_time = 5.0;
  std::optional<std::pair<double, double>> control_bounds;

  TrainConfig train;
  NetworkSpec network;
  Topology topology = Topology::separate;
  std::vector<std::string> approaches{"allocation_lqr"};
  bool ideal_links_for_control_only = true;
  int schedule_size = 0;  // 0: max(1, m / 3)

  int eval_horizon = 120;
  int eval_tests = 10;
  int eval_group = 10;
  std::vector<std::string> baselines{"equal", "all_on", "round_robin", "channel_aware", "control_aware"};
  double divergence_threshold = 1e12;

  /// Canonical key/value form (sorted keys) written to the run manifest.
  KeyValues resolved;

  /// Per-step power handed out by heuristics and the simplex head.
  double allocation_budget() const;
  int effective_schedule_size() const;
  /// Hash of the resolved keys except output_dir.
  std::uint64_t hash() const;
};

/// Scenario defaults for `scenario`, then the file's keys on top.
/// Throws std::invalid_argument listing every unknown key.
ExperimentConfig make_config(const KeyValues& overrides);
ExperimentConfig load_config(const std::string& path);

std::vector<std::string> known_config_keys();

void write_key_values(std::ostream& out, const KeyValues& kv);

/// 64-bit FNV-1a of a string, hex encoded.
std::string fnv1a_hex(const std::string& text);

}  // namespace wcs
