#include "wcs/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace wcs {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

KeyValues common_defaults() {
  return {
      {"scenario", "linear_power"},
      {"seed", "1"},
      {"output_dir", "out"},
      {"system.m", "10"},
      {"plant.kind", "linear"},
      {"plant.matrix", "power_allocation"},
      {"plant.a_low", "1.05"},
      {"plant.a_high", "1.15"},
      {"plant.process_noise", "0.01"},
      {"plant.initial", "normal"},
      {"plant.initial_scale", "1"},
      {"cartpole.cart_mass", "1.0"},
      {"cartpole.pole_mass", "0.1"},
      {"cartpole.pole_half_length", "0.5"},
      {"cartpole.gravity", "9.8"},
      {"cartpole.time_step", "0.02"},
      {"channel.rayleigh_scale", "1"},
      {"channel.path_loss", "2"},
      {"channel.area_half_width", "auto"},
      {"channel.min_distance", "0.05"},
      {"observation.noise_h", "1"},
      {"observation.noise_x", "1"},
      {"cost.q", "1,1,1"},
      {"cost.r", "1,1,1"},
      {"constraint.power", "instantaneous"},
      {"constraint.p_max", "auto"},
      {"constraint.region", "true"},
      {"constraint.region_half_width", "15"},
      {"constraint.region_time", "5"},
      {"control.bounds", "none"},
      {"train.approaches", "allocation_lqr"},
      {"train.topology", "separate"},
      {"train.episodes", "2000"},
      {"train.horizon", "100"},
      {"train.workers", "16"},
      {"train.t_max", "5"},
      {"train.gamma", "0.99"},
      {"train.lr_actor", "5e-4"},
      {"train.lr_critic", "5e-4"},
      {"train.lr_dual", "1e-4"},
      {"train.optimizer", "rmsprop"},
      {"train.entropy", "0"},
      {"train.max_grad_norm", "0.5"},
      {"train.loss_reduction", "mean"},
      {"train.log_std_min", "-5"},
      {"train.log_std_max", "2"},
      {"train.cost_scale", "0.1"},
      {"train.warm_start_iterations", "0"},
      {"train.warm_start_batch", "64"},
      {"train.warm_start_lr", "1e-3"},
      {"train.lagrangian_ceiling", "1e12"},
      {"train.checkpoint_every", "0"},
      {"train.log_wall_time", "false"},
      {"train.ideal_links_for_control_only", "true"},
      {"train.schedule_size", "0"},
      {"network.hidden", "64,64"},
      {"network.activation", "tanh"},
      {"network.init_log_std", "-0.5"},
      {"network.output_gain", "0.1"},
      {"eval.horizon", "120"},
      {"eval.tests", "10"},
      {"eval.group_size", "10"},
      {"eval.baselines", "equal,all_on,round_robin,channel_aware,control_aware"},
      {"eval.divergence_threshold", "1e12"},
  };
}

void apply_scenario(KeyValues& kv, const std::string& scenario) {
  if (scenario == "linear_power" || scenario == "custom") {
    kv["train.warm_start_iterations"] = "500";
    kv["train.lr_actor"] = "1e-4";
    kv["train.cost_scale"] = "1e-3";
    return;
  }
  if (scenario == "linear_codesign") {
    kv["plant.matrix"] = "codesign";
    kv["cost.r"] = "1e-3,1e-3,1e-3";
    kv["constraint.power"] = "expected";
    kv["constraint.region"] = "false";
    kv["train.approaches"] = "codesign,allocation_lqr,control_equal";
    kv["eval.horizon"] = "100";
    kv["eval.baselines"] = "equal";
    return;
  }
  if (scenario == "cartpole_codesign") {
    kv["plant.kind"] = "cartpole";
    kv["plant.initial"] = "uniform";
    kv["plant.initial_scale"] = "0.05";
    kv["plant.process_noise"] = "0";
    kv["channel.rayleigh_scale"] = "2";
    kv["observation.noise_h"] = "0.1";
    kv["observation.noise_x"] = "0.1";
    kv["cost.q"] = "0.1,0,1,0";
    kv["cost.r"] = "1e-3";
    kv["constraint.power"] = "expected";
    kv["constraint.region"] = "false";
    kv["control.bounds"] = "-10,10";
    kv["train.approaches"] = "codesign,allocation_lqr,control_equal";
    kv["train.horizon"] = "80";
    kv["eval.horizon"] = "100";
    kv["eval.baselines"] = "equal";
    return;
  }
  throw std::invalid_argument("unknown scenario: " + scenario);
}

double to_double(const KeyValues& kv, const std::string& key) {
  const auto& v = kv.at(key);
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0') throw std::invalid_argument("config key " + key + ": not a number: " + v);
  return d;
}

long to_long(const KeyValues& kv, const std::string& key) {
  const auto& v = kv.at(key);
  char* end = nullptr;
  const long d = std::strtol(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0') throw std::invalid_argument("config key " + key + ": not an integer: " + v);
  return d;
}

bool to_bool(const KeyValues& kv, const std::string& key) {
  const auto& v = kv.at(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config key " + key + ": not a boolean: " + v);
}

std::vector<std::string> to_list(const KeyValues& kv, const std::string& key) {
  std::vector<std::string> out;
  std::stringstream ss(kv.at(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> to_doubles(const KeyValues& kv, const std::string& key) {
  std::vector<double> out;
  for (const auto& item : to_list(kv, key)) {
    char* end = nullptr;
    const double d = std::strtod(item.c_str(), &end);
    if (end == item.c_str() || *end != '\0') throw std::invalid_argument("config key " + key + ": not a number: " + item);
    out.push_back(d);
  }
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

KeyValues parse_key_values(std::istream& in) {
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
    kv[key] = value;
  }
  return kv;
}

std::vector<std::string> known_config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, v] : common_defaults()) keys.push_back(k);
  return keys;
}

double ExperimentConfig::allocation_budget() const {
  return power == PowerConstraint::expected ? (1.0 - train.gamma) * p_max : p_max;
}

int ExperimentConfig::effective_schedule_size() const {
  return schedule_size > 0 ? schedule_size : std::max(1, m / 3);
}

std::uint64_t ExperimentConfig::hash() const {
  // where results go does not change what is computed
  KeyValues content = resolved;
  content.erase("output_dir");
  std::ostringstream os;
  write_key_values(os, content);
  return std::stoull(fnv1a_hex(os.str()), nullptr, 16);
}

ExperimentConfig make_config(const KeyValues& overrides) {
  KeyValues kv = common_defaults();
  std::vector<std::string> unknown;
  for (const auto& [k, v] : overrides)
    if (!kv.count(k)) unknown.push_back(k);
  if (!unknown.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw std::invalid_argument(msg);
  }
  const std::string scenario = overrides.count("scenario") ? overrides.at("scenario") : kv["scenario"];
  apply_scenario(kv, scenario);
  for (const auto& [k, v] : overrides) kv[k] = v;

  ExperimentConfig c;
  c.scenario = kv["scenario"];
  c.seed = static_cast<std::uint64_t>(std::stoull(kv["seed"]));
  c.output_dir = kv["output_dir"];
  c.m = static_cast<int>(to_long(kv, "system.m"));
  if (c.m < 1) throw std::invalid_argument("system.m must be at least 1");

  const auto kind = kv["plant.kind"];
  if (kind == "linear") c.plant_kind = PlantKind::linear;
  else if (kind == "cartpole") c.plant_kind = PlantKind::cartpole;
  else throw std::invalid_argument("plant.kind must be linear or cartpole");
  c.plant_matrix = kv["plant.matrix"];
  if (c.plant_matrix != "power_allocation" && c.plant_matrix != "codesign")
    throw std::invalid_argument("plant.matrix must be power_allocation or codesign");
  c.a_low = to_double(kv, "plant.a_low");
  c.a_high = to_double(kv, "plant.a_high");
  c.process_noise = to_double(kv, "plant.process_noise");
  const auto initial = kv["plant.initial"];
  if (initial == "normal") c.initial = InitialDistribution::standard_normal;
  else if (initial == "uniform") c.initial = InitialDistribution::uniform;
  else throw std::invalid_argument("plant.initial must be normal or uniform");
  c.initial_scale = to_double(kv, "plant.initial_scale");
  c.cartpole.cart_mass = to_double(kv, "cartpole.cart_mass");
  c.cartpole.pole_mass = to_double(kv, "cartpole.pole_mass");
  c.cartpole.pole_half_length = to_double(kv, "cartpole.pole_half_length");
  c.cartpole.gravity = to_double(kv, "cartpole.gravity");
  c.cartpole.time_step = to_double(kv, "cartpole.time_step");

  c.rayleigh_scale = to_double(kv, "channel.rayleigh_scale");
  c.path_loss = to_double(kv, "channel.path_loss");
  if (kv["channel.area_half_width"] == "auto")
    kv["channel.area_half_width"] = format_double(scenario == "linear_power" || scenario == "custom" ? c.m / 4.0 : c.m / 3.0);
  c.area_half_width = to_double(kv, "channel.area_half_width");
  c.min_distance = to_double(kv, "channel.min_distance");
  c.obs_noise_h = to_double(kv, "observation.noise_h");
  c.obs_noise_x = to_double(kv, "observation.noise_x");
  c.q_diag = to_doubles(kv, "cost.q");
  c.r_diag = to_doubles(kv, "cost.r");

  const auto power = kv["constraint.power"];
  if (power == "none") c.power = PowerConstraint::none;
  else if (power == "instantaneous") c.power = PowerConstraint::instantaneous;
  else if (power == "expected") c.power = PowerConstraint::expected;
  else throw std::invalid_argument("constraint.power must be none, instantaneous or expected");
  if (kv["constraint.p_max"] == "auto")
    kv["constraint.p_max"] = format_double(c.power == PowerConstraint::expected ? 25.0 * c.m : c.m);
  c.p_max = to_double(kv, "constraint.p_max");
  c.region = to_bool(kv, "constraint.region");
  c.region_half_width = to_double(kv, "constraint.region_half_width");
  c.region_time = to_double(kv, "constraint.region_time");
  if (kv["control.bounds"] != "none") {
    const auto b = to_doubles(kv, "control.bounds");
    if (b.size() != 2) throw std::invalid_argument("control.bounds must be none or lo,hi");
    c.control_bounds = std::make_pair(b[0], b[1]);
  }

  c.approaches = to_list(kv, "train.approaches");
  for (const auto& a : c.approaches)
    if (a != "codesign" && a != "allocation_lqr" && a != "control_equal")
      throw std::invalid_argument("unknown approach: " + a);
  c.topology = topology_from_string(kv["train.topology"]);
  auto& t = c.train;
  t.episodes = static_cast<int>(to_long(kv, "train.episodes"));
  t.horizon = static_cast<int>(to_long(kv, "train.horizon"));
  t.workers = static_cast<int>(to_long(kv, "train.workers"));
  t.t_max = static_cast<int>(to_long(kv, "train.t_max"));
  t.gamma = to_double(kv, "train.gamma");
  t.lr_actor = to_double(kv, "train.lr_actor");
  t.lr_critic = to_double(kv, "train.lr_critic");
  t.lr_dual = to_double(kv, "train.lr_dual");
  t.optimizer = optimizer_from_string(kv["train.optimizer"]);
  t.update.entropy_coef = to_double(kv, "train.entropy");
  t.update.max_grad_norm = to_double(kv, "train.max_grad_norm");
  const auto reduction = kv["train.loss_reduction"];
  if (reduction != "sum" && reduction != "mean") throw std::invalid_argument("train.loss_reduction must be sum or mean");
  t.update.mean_reduction = reduction == "mean";
  t.update.log_std_min = to_double(kv, "train.log_std_min");
  t.update.log_std_max = to_double(kv, "train.log_std_max");
  t.cost_scale = to_double(kv, "train.cost_scale");
  t.warm_start_iterations = static_cast<int>(to_long(kv, "train.warm_start_iterations"));
  t.warm_start_batch = static_cast<int>(to_long(kv, "train.warm_start_batch"));
  t.warm_start_lr = to_double(kv, "train.warm_start_lr");
  t.lagrangian_ceiling = to_double(kv, "train.lagrangian_ceiling");
  t.checkpoint_every = static_cast<int>(to_long(kv, "train.checkpoint_every"));
  t.record_wall_time = to_bool(kv, "train.log_wall_time");
  t.seed = c.seed;
  t.validate();
  c.ideal_links_for_control_only = to_bool(kv, "train.ideal_links_for_control_only");
  c.schedule_size = static_cast<int>(to_long(kv, "train.schedule_size"));

  c.network.hidden.clear();
  for (const auto& h : to_list(kv, "network.hidden")) c.network.hidden.push_back(std::stoi(h));
  c.network.activation = nn::activation_from_string(kv["network.activation"]);
  c.network.init_log_std = to_double(kv, "network.init_log_std");
  c.network.output_gain = to_double(kv, "network.output_gain");

  c.eval_horizon = static_cast<int>(to_long(kv, "eval.horizon"));
  c.eval_tests = static_cast<int>(to_long(kv, "eval.tests"));
  c.eval_group = static_cast<int>(to_long(kv, "eval.group_size"));
  c.baselines = to_list(kv, "eval.baselines");
  for (const auto& b : c.baselines) allocation_rule_from_string(b);
  c.divergence_threshold = to_double(kv, "eval.divergence_threshold");
  if (c.eval_horizon < 1 || c.eval_tests < 1 || c.eval_group < 1)
    throw std::invalid_argument("evaluation horizon, tests and group size must be positive");

  c.resolved = kv;
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config: " + path);
  return make_config(parse_key_values(in));
}

void write_key_values(std::ostream& out, const KeyValues& kv) {
  for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace wcs
