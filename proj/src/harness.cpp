#include "wcs/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "wcs/baselines.hpp"
#include "wcs/learner.hpp"
#include "wcs/neuralnet.hpp"
#include "wcs/random.hpp"

namespace wcs {

namespace {

// Stream identifiers under the master seed.
constexpr std::uint64_t kPlacementStream = 1;
constexpr std::uint64_t kEnsembleStream = 2;
constexpr std::uint64_t kNetworkStream = 3;
constexpr std::uint64_t kTrainStream = 4;
constexpr std::uint64_t kEvaluationStream = 5;

std::uint64_t approach_index(const std::string& approach) {
  if (approach == "codesign") return 0;
  if (approach == "allocation_lqr") return 1;
  if (approach == "control_equal") return 2;
  throw std::invalid_argument("unknown approach: " + approach);
}

MatrixXd diagonal_blocks(const std::vector<double>& diag, int m, const char* what) {
  const auto n = static_cast<Eigen::Index>(diag.size());
  MatrixXd out = MatrixXd::Zero(m * n, m * n);
  for (int i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      if (diag[static_cast<std::size_t>(j)] < 0.0) throw std::invalid_argument(std::string(what) + " entries must be nonnegative");
      out(i * n + j, i * n + j) = diag[static_cast<std::size_t>(j)];
    }
  return out;
}

std::string hex_hash(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

void ensure_directory(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw std::runtime_error("cannot create output directory: " + dir);
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write output file: " + path);
  return out;
}

}  // namespace

BuiltEnvironment build_environment(const ExperimentConfig& config, std::optional<bool> forced_delivery) {
  const int m = config.m;
  EnvironmentConfig ec;
  Rng placement_rng = derive_rng(config.seed, {kPlacementStream});
  Placement placement = random_placement(m, config.area_half_width, config.min_distance, placement_rng);

  std::vector<double> instability;
  if (config.plant_kind == PlantKind::linear) {
    const MatrixXd W = config.process_noise * MatrixXd::Identity(3, 3);
    if (config.plant_matrix == "power_allocation") {
      Rng ensemble_rng = derive_rng(config.seed, {kEnsembleStream});
      ec.plants = make_linear_ensemble(m, config.a_low, config.a_high, W, ensemble_rng);
    } else {
      const MatrixXd A = codesign_matrix();
      const double radius = spectral_radius(A);
      for (int i = 0; i < m; ++i) {
        auto plant = PlantModel::linear(A, MatrixXd::Identity(3, 3), W);
        plant.instability = radius;
        ec.plants.push_back(std::move(plant));
      }
    }
  } else {
    for (int i = 0; i < m; ++i)
      ec.plants.push_back(PlantModel::cart_pole(config.cartpole, config.process_noise * MatrixXd::Identity(4, 4)));
  }
  for (const auto& plant : ec.plants) instability.push_back(plant.instability);

  const int p = ec.p();
  const int q = ec.q();
  if (static_cast<int>(config.q_diag.size()) != p)
    throw std::invalid_argument("cost.q needs " + std::to_string(p) + " entries");
  if (static_cast<int>(config.r_diag.size()) != q)
    throw std::invalid_argument("cost.r needs " + std::to_string(q) + " entries");
  ec.weights.Q = diagonal_blocks(config.q_diag, m, "cost.q");
  ec.weights.R = diagonal_blocks(config.r_diag, m, "cost.r");

  ec.channel.distances = placement.distances;
  ec.channel.path_loss_exponent = config.path_loss;
  ec.channel.rayleigh_scale = config.rayleigh_scale;

  VectorXd noise(m * (1 + p));
  noise.head(m).setConstant(config.obs_noise_h);
  noise.tail(m * p).setConstant(config.obs_noise_x);
  ec.observation_noise_cov = noise.asDiagonal();

  ec.constraints.gamma = config.train.gamma;
  if (config.power == PowerConstraint::instantaneous) ec.constraints.instantaneous_budget = config.p_max;
  if (config.power == PowerConstraint::expected) ec.constraints.components.push_back(ConstraintSpec::sum_power(config.p_max));
  if (config.region)
    for (int i = 0; i < m; ++i)
      ec.constraints.components.push_back(ConstraintSpec::region(i, config.region_half_width, p, config.region_time));

  ec.initial = config.initial;
  ec.initial_scale = config.initial_scale;
  ec.control_bounds = config.control_bounds;
  ec.forced_delivery = forced_delivery;
  return BuiltEnvironment{Environment(std::move(ec)), std::move(placement), std::move(instability)};
}

SystemLayout make_layout(const ExperimentConfig& config, AllocationRule allocation, ControlRule control) {
  SystemLayout layout;
  layout.allocation = allocation;
  layout.control = control;
  layout.topology = config.topology;
  layout.schedule_size = std::min(config.effective_schedule_size(), config.m);
  layout.allocation_budget = config.allocation_budget();
  layout.softplus_scale = layout.allocation_budget / config.m / std::log(2.0);
  return layout;
}

SystemLayout approach_layout(const ExperimentConfig& config, const std::string& approach) {
  switch (approach_index(approach)) {
    case 0: return make_layout(config, AllocationRule::learned, ControlRule::learned);
    case 1: return make_layout(config, AllocationRule::learned, ControlRule::lqr);
    default: return make_layout(config, AllocationRule::equal, ControlRule::learned);
  }
}

BatchPolicy deterministic_policy(const CoDesignSystem& system) {
  return [&system](const std::vector<Observation>& obs, int t) { return system.act(obs, t, nullptr); };
}

double EvaluationReport::mean_cost() const {
  if (costs.empty()) return 0.0;
  double s = 0.0;
  for (double c : costs) s += c;
  return s / static_cast<double>(costs.size());
}

EvaluationReport evaluate(const BatchPolicy& policy, const Environment& env, const EvaluationOptions& options,
                          const std::string& label) {
  if (options.tests < 1 || options.group_size < 1 || options.horizon < 1)
    throw std::invalid_argument("evaluation needs positive tests, group size and horizon");
  const int m = env.m();
  const int q = env.q();
  const int nc = env.config().constraints.size();
  const double gamma = env.config().constraints.gamma;
  (void)options.gamma;

  EvaluationReport report;
  report.label = label;
  report.group_size = options.group_size;
  report.constraint_sums = VectorXd::Zero(nc);

  const auto g = static_cast<std::size_t>(options.group_size);
  for (int test = 0; test < options.tests; ++test) {
    std::vector<EnvStreams> streams;
    std::vector<SystemState> states;
    for (std::size_t k = 0; k < g; ++k) {
      streams.push_back(EnvStreams::from_seed(derive_seed(options.seed, {static_cast<std::uint64_t>(test), k})));
      states.push_back(env.reset(streams.back()));
    }
    std::vector<double> cost(g, 0.0), peak(g, 0.0);
    std::vector<VectorXd> sums(g, VectorXd::Zero(nc));
    std::vector<bool> active(g, true);
    for (std::size_t k = 0; k < g; ++k) peak[k] = states[k].x.norm();

    double discount = 1.0;
    for (int t = 0; t < options.horizon; ++t) {
      std::vector<std::size_t> idx;
      std::vector<Observation> obs;
      for (std::size_t k = 0; k < g; ++k)
        if (active[k]) {
          idx.push_back(k);
          obs.push_back(env.observe(states[k], streams[k].observation));
        }
      if (idx.empty()) break;
      const auto actions = policy(obs, t);
      if (actions.size() != idx.size()) throw std::invalid_argument("dimension mismatch: policy returned wrong batch size");
      for (std::size_t j = 0; j < idx.size(); ++j) {
        const auto k = idx[j];
        const auto& a = actions[j];
        if (a.alpha.size() != m || a.u.rows() != m || a.u.cols() != q)
          throw std::invalid_argument("dimension mismatch: policy output");
        auto result = env.step(states[k], a, streams[k]);
        const double norm = result.next.x.norm();
        if (!std::isfinite(norm) || norm > options.divergence_threshold || !std::isfinite(result.stage_cost)) {
          cost[k] = options.divergence_threshold;
          peak[k] = std::numeric_limits<double>::infinity();
          active[k] = false;
          ++report.diverged;
          continue;
        }
        cost[k] += discount * result.stage_cost;
        sums[k] += discount * result.constraint_signals;
        peak[k] = std::max(peak[k], norm);
        states[k] = std::move(result.next);
        if (cost[k] > options.divergence_threshold) {
          cost[k] = options.divergence_threshold;
          active[k] = false;
          ++report.diverged;
        }
      }
      discount *= gamma;
    }

    TestPointStats stats;
    stats.min = *std::min_element(cost.begin(), cost.end());
    stats.max = *std::max_element(cost.begin(), cost.end());
    double s = 0.0;
    for (double c : cost) s += c;
    stats.mean = s / static_cast<double>(g);
    double v = 0.0;
    for (double c : cost) v += (c - stats.mean) * (c - stats.mean);
    stats.std = std::sqrt(v / static_cast<double>(g));
    report.tests.push_back(stats);
    for (std::size_t k = 0; k < g; ++k) {
      report.costs.push_back(cost[k]);
      report.max_state_norm.push_back(peak[k]);
      report.constraint_sums += sums[k];
    }
  }
  report.constraint_sums /= static_cast<double>(report.costs.size());
  return report;
}

EvaluationOptions evaluation_options(const ExperimentConfig& config) {
  EvaluationOptions o;
  o.tests = config.eval_tests;
  o.group_size = config.eval_group;
  o.horizon = config.eval_horizon;
  o.gamma = config.train.gamma;
  o.seed = derive_seed(config.seed, {kEvaluationStream});
  o.divergence_threshold = config.divergence_threshold;
  return o;
}

std::string provenance_line(const ExperimentConfig& config) {
  return "# seed=" + std::to_string(config.seed) + " config_hash=" + hex_hash(config.hash());
}

void write_evaluation_table(std::ostream& out, const std::vector<EvaluationReport>& reports) {
  out << "label,test,mean,std,min,max,group_size\n" << std::setprecision(17);
  for (const auto& r : reports)
    for (std::size_t t = 0; t < r.tests.size(); ++t) {
      const auto& s = r.tests[t];
      out << r.label << ',' << t << ',' << s.mean << ',' << s.std << ',' << s.min << ',' << s.max << ','
          << r.group_size << '\n';
    }
}

void write_evaluation_summary(std::ostream& out, const std::vector<EvaluationReport>& reports) {
  const auto nc = reports.empty() ? 0 : reports.front().constraint_sums.size();
  out << "label,mean_cost,diverged";
  for (Eigen::Index j = 0; j < nc; ++j) out << ",constraint_" << j;
  out << '\n' << std::setprecision(17);
  for (const auto& r : reports) {
    out << r.label << ',' << r.mean_cost() << ',' << r.diverged;
    for (Eigen::Index j = 0; j < r.constraint_sums.size(); ++j) out << ',' << r.constraint_sums(j);
    out << '\n';
  }
}

void write_manifest(std::ostream& out, const ExperimentConfig& config, const BuiltEnvironment& built) {
  out << provenance_line(config) << '\n';
  out << "# Resolved configuration; this file can be passed back to `wcsctl train`.\n";
  out << std::setprecision(17);
  out << "# placement_seed=" << derive_seed(config.seed, {kPlacementStream})
      << " ensemble_seed=" << derive_seed(config.seed, {kEnsembleStream})
      << " evaluation_seed=" << derive_seed(config.seed, {kEvaluationStream}) << '\n';
  for (std::size_t i = 0; i < built.placement.positions.size(); ++i) {
    out << "# plant " << i << " position=" << built.placement.positions[i].first << ','
        << built.placement.positions[i].second << " distance=" << built.placement.distances[i]
        << " instability=" << built.instability[i] << '\n';
  }
  out << "# format_version=1\n";
  write_key_values(out, config.resolved);
}

TrainResult train_approach(const ExperimentConfig& config, const BuiltEnvironment& built, const std::string& approach,
                           const CheckpointHook& hook) {
  const auto index = approach_index(approach);
  const auto layout = approach_layout(config, approach);
  std::optional<bool> forced;
  if (approach == "control_equal" && config.ideal_links_for_control_only) forced = true;
  const BuiltEnvironment train_env = forced ? build_environment(config, forced) : built;

  Rng net_rng = derive_rng(config.seed, {kNetworkStream, index});
  CoDesignSystem system(train_env.env, layout, config.network, net_rng);
  system.set_optimizer(config.train.optimizer);
  TrainConfig tc = config.train;
  tc.seed = derive_seed(config.seed, {kTrainStream, index});
  return train(tc, train_env.env, std::move(system), hook);
}

std::vector<EvaluationReport> evaluate_baselines(const ExperimentConfig& config, const BuiltEnvironment& built) {
  std::vector<EvaluationReport> out;
  const auto options = evaluation_options(config);
  for (const auto& name : config.baselines) {
    Rng unused(0);
    CoDesignSystem system(built.env, make_layout(config, allocation_rule_from_string(name), ControlRule::lqr),
                          config.network, unused);
    out.push_back(evaluate(deterministic_policy(system), built.env, options, name));
  }
  return out;
}

CoDesignSystem load_system(const ExperimentConfig& config, const Environment& env, std::istream& checkpoint) {
  std::string text((std::istreambuf_iterator<char>(checkpoint)), std::istreambuf_iterator<char>());
  std::istringstream head(text);
  std::string magic, word, alloc, control, topology;
  int version = 0;
  if (!(head >> magic >> version >> word >> alloc >> control >> topology) || word != "layout")
    throw std::runtime_error("checkpoint: missing layout");
  ExperimentConfig c = config;
  c.topology = topology_from_string(topology);
  Rng unused(0);
  CoDesignSystem system(env, make_layout(c, allocation_rule_from_string(alloc), control_rule_from_string(control)),
                        config.network, unused);
  std::istringstream body(text);
  system.load(body);
  return system;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const ProgressCallback& progress) {
  ensure_directory(config.output_dir);
  const auto dir = std::filesystem::path(config.output_dir);
  const auto built = build_environment(config);
  {
    auto out = open_output((dir / "manifest.txt").string());
    write_manifest(out, config, built);
  }
  const auto provenance = provenance_line(config);
  const auto options = evaluation_options(config);

  ExperimentResult result;
  std::vector<EvaluationReport> reports;
  for (const auto& approach : config.approaches) {
    if (progress) progress("training " + approach);
    CheckpointHook hook;
    if (config.train.checkpoint_every > 0) {
      hook = [&](int episode, const CoDesignSystem& system, const DualState&) {
        auto out = open_output((dir / ("checkpoint_" + approach + "_" + std::to_string(episode) + ".txt")).string());
        system.save(out);
      };
    }
    ApproachResult ar;
    ar.approach = approach;
    ar.training = train_approach(config, built, approach, hook);
    {
      auto out = open_output((dir / ("training_log_" + approach + ".csv")).string());
      out << provenance << '\n';
      write_train_log(out, ar.training.log, config.train.record_wall_time);
    }
    {
      auto out = open_output((dir / ("checkpoint_" + approach + ".txt")).string());
      ar.training.system.save(out);
    }
    if (progress) progress("evaluating " + approach);
    ar.report = evaluate(deterministic_policy(ar.training.system), built.env, options, approach);
    reports.push_back(ar.report);
    result.approaches.push_back(std::move(ar));
  }
  if (progress) progress("evaluating baselines");
  result.baselines = evaluate_baselines(config, built);
  reports.insert(reports.end(), result.baselines.begin(), result.baselines.end());
  {
    auto out = open_output((dir / "evaluation.csv").string());
    out << provenance << '\n';
    write_evaluation_table(out, reports);
  }
  {
    auto out = open_output((dir / "evaluation_summary.csv").string());
    out << provenance << '\n';
    write_evaluation_summary(out, reports);
  }
  return result;
}

// ---- gradient checks ----

double gradcheck_relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-5});
  return std::abs(analytic - numeric) / scale;
}

bool GradcheckReport::ok() const {
  if (!error.empty() || entries.empty()) return false;
  for (const auto& e : entries)
    if (!(e.max_relative_error < tolerance)) return false;
  return true;
}

namespace {

template <typename Loss, typename Setter>
double max_fd_error(const VectorXd& params, const VectorXd& analytic, double step, const Loss& loss, const Setter& set,
                    int& checks) {
  double worst = 0.0;
  VectorXd probe = params;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    probe(i) = params(i) + step;
    set(probe);
    const double up = loss();
    probe(i) = params(i) - step;
    set(probe);
    const double down = loss();
    probe(i) = params(i);
    worst = std::max(worst, gradcheck_relative_error(analytic(i), (up - down) / (2.0 * step)));
    ++checks;
  }
  set(params);
  return worst;
}

nn::HeadBlock random_head(nn::HeadKind kind, int count) {
  switch (kind) {
    case nn::HeadKind::simplex: return {kind, count, 3.0, 0.0};
    case nn::HeadKind::softplus: return {kind, count, 0.7, 0.0};
    case nn::HeadKind::interval: return {kind, count, -2.0, 1.5};
    case nn::HeadKind::identity: return {kind, count, 0.0, 0.0};
  }
  return {};
}

}  // namespace

GradcheckReport gradcheck(std::uint64_t seed, const GradcheckOptions& options) {
  GradcheckReport report;
  report.tolerance = options.tolerance;
  if (options.networks < 1 || options.max_input < 1 || options.batch < 1) {
    report.error = "zero-size gradient check";
    return report;
  }
  for (int h : options.hidden)
    if (h < 1) {
      report.error = "zero-size network: hidden layer width " + std::to_string(h);
      return report;
    }

  const nn::HeadKind kinds[] = {nn::HeadKind::simplex, nn::HeadKind::softplus, nn::HeadKind::interval,
                                nn::HeadKind::identity};
  std::vector<GradcheckEntry> policy_entries, head_entries;
  for (auto kind : kinds) {
    policy_entries.push_back({"policy_loss/" + nn::to_string(kind), 0.0, 0});
    head_entries.push_back({"head/" + nn::to_string(kind), 0.0, 0});
  }
  GradcheckEntry value_entry{"value_loss", 0.0, 0};

  Rng rng = derive_rng(seed, {0});
  std::uniform_int_distribution<int> input_dist(1, options.max_input);
  std::uniform_int_distribution<int> count_dist(1, 4);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int n = 0; n < options.networks; ++n) {
    const int input_dim = input_dist(rng);
    const int count = count_dist(rng);
    for (std::size_t k = 0; k < 4; ++k) {
      nn::PolicyHeads heads;
      heads.blocks.push_back(random_head(kinds[k], count));
      nn::GaussianPolicy policy(input_dim, options.hidden, nn::Activation::tanh, heads, -0.3, rng);
      for (Eigen::Index i = 0; i < policy.log_std.size(); ++i) policy.log_std(i) = 0.3 * normal(rng);

      RolloutBatch batch;
      batch.inputs = MatrixXd::NullaryExpr(input_dim, options.batch, [&] { return normal(rng); });
      batch.raw_actions = MatrixXd::NullaryExpr(heads.raw_dim(), options.batch, [&] { return normal(rng); });
      batch.returns = VectorXd::NullaryExpr(options.batch, [&] { return normal(rng); });
      batch.values = VectorXd::NullaryExpr(options.batch, [&] { return normal(rng); });
      UpdateOptions update;
      update.entropy_coef = 0.01;

      const VectorXd params = policy.parameters();
      const VectorXd grad = policy_gradient(policy, batch, update);
      auto& pe = policy_entries[k];
      pe.max_relative_error = std::max(
          pe.max_relative_error,
          max_fd_error(params, grad, options.step, [&] { return policy_loss(policy, batch, update); },
                       [&](const VectorXd& v) { policy.set_parameters(v); }, pe.checks));

      // Vector-Jacobian product of the head against finite differences of <g, transform(raw)>.
      const VectorXd raw = batch.raw_actions.col(0);
      const VectorXd g = VectorXd::NullaryExpr(heads.output_dim(), [&] { return normal(rng); });
      const VectorXd vjp = heads.transform_backward(raw, g);
      VectorXd probe = raw;
      auto& he = head_entries[k];
      he.max_relative_error = std::max(
          he.max_relative_error,
          max_fd_error(raw, vjp, options.step, [&] { return g.dot(heads.transform(probe)); },
                       [&](const VectorXd& v) { probe = v; }, he.checks));
    }

    nn::ValueNetwork critic(input_dim, options.hidden, nn::Activation::tanh, rng);
    RolloutBatch batch;
    batch.inputs = MatrixXd::NullaryExpr(input_dim, options.batch, [&] { return normal(rng); });
    batch.returns = VectorXd::NullaryExpr(options.batch, [&] { return normal(rng); });
    batch.values = VectorXd::Zero(options.batch);
    const VectorXd params = critic.net.parameters();
    const VectorXd grad = value_gradient(critic, batch);
    value_entry.max_relative_error = std::max(
        value_entry.max_relative_error,
        max_fd_error(params, grad, options.step, [&] { return value_loss(critic, batch); },
                     [&](const VectorXd& v) { critic.net.set_parameters(v); }, value_entry.checks));
  }
  report.entries = policy_entries;
  report.entries.push_back(value_entry);
  report.entries.insert(report.entries.end(), head_entries.begin(), head_entries.end());
  return report;
}

void write_gradcheck_report(std::ostream& out, const GradcheckReport& report) {
  if (!report.error.empty()) {
    out << "error," << report.error << '\n';
    return;
  }
  out << "check,max_relative_error,evaluations,status\n" << std::setprecision(6);
  for (const auto& e : report.entries)
    out << e.name << ',' << e.max_relative_error << ',' << e.checks << ','
        << (e.max_relative_error < report.tolerance ? "pass" : "fail") << '\n';
}

}  // namespace wcs
