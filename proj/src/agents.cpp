#include "wcs/agents.hpp"

#include <chrono>
#include <iomanip>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "wcs/baselines.hpp"

namespace wcs {

namespace {

template <typename E>
struct NamedValue {
  E value;
  const char* name;
};

constexpr NamedValue<Topology> kTopologies[] = {{Topology::single, "single"}, {Topology::separate, "separate"}};

constexpr NamedValue<AllocationRule> kAllocationRules[] = {
    {AllocationRule::learned, "learned"},
    {AllocationRule::equal, "equal"},
    {AllocationRule::all_on, "all_on"},
    {AllocationRule::round_robin, "round_robin"},
    {AllocationRule::channel_aware, "channel_aware"},
    {AllocationRule::control_aware, "control_aware"},
    {AllocationRule::instability_aware, "instability_aware"},
    {AllocationRule::zero, "zero"},
};

constexpr NamedValue<ControlRule> kControlRules[] = {
    {ControlRule::learned, "learned"}, {ControlRule::lqr, "lqr"}, {ControlRule::zero, "zero"}};

template <typename E, std::size_t N>
std::string name_of(const NamedValue<E> (&table)[N], E value) {
  for (const auto& entry : table)
    if (entry.value == value) return entry.name;
  return "?";
}

template <typename E, std::size_t N>
E value_of(const NamedValue<E> (&table)[N], const std::string& name, const char* what) {
  for (const auto& entry : table)
    if (name == entry.name) return entry.value;
  throw std::invalid_argument(std::string("unknown ") + what + ": " + name);
}

nn::HeadBlock allocation_head(int m, const EnvironmentConfig& env, const SystemLayout& layout) {
  if (env.constraints.instantaneous_budget) return {nn::HeadKind::simplex, m, layout.allocation_budget, 0.0};
  return {nn::HeadKind::softplus, m, layout.softplus_scale, 0.0};
}

nn::HeadBlock control_head(int count, const EnvironmentConfig& env) {
  if (env.control_bounds) return {nn::HeadKind::interval, count, env.control_bounds->first, env.control_bounds->second};
  return {nn::HeadKind::identity, count, 0.0, 0.0};
}

Agent make_agent(Agent::Role role, int plant, std::string name, int input_dim, nn::PolicyHeads heads,
                 const NetworkSpec& spec, Rng& rng) {
  Agent agent;
  agent.role = role;
  agent.plant = plant;
  agent.name = std::move(name);
  agent.actor = nn::GaussianPolicy(input_dim, spec.hidden, spec.activation, std::move(heads), spec.init_log_std, rng);
  agent.actor.net.scale_output_layer(spec.output_gain);
  agent.critic = nn::ValueNetwork(input_dim, spec.hidden, spec.activation, rng);
  return agent;
}

MatrixXd stacked_inputs(const std::vector<Observation>& obs) {
  const auto n = static_cast<Eigen::Index>(obs.size());
  MatrixXd s(obs.front().h.size() + obs.front().x.size(), n);
  for (Eigen::Index w = 0; w < n; ++w) s.col(w) = obs[static_cast<std::size_t>(w)].stacked();
  return s;
}

}  // namespace

std::string to_string(Topology t) { return name_of(kTopologies, t); }
std::string to_string(AllocationRule r) { return name_of(kAllocationRules, r); }
std::string to_string(ControlRule r) { return name_of(kControlRules, r); }
Topology topology_from_string(const std::string& s) { return value_of(kTopologies, s, "topology"); }
AllocationRule allocation_rule_from_string(const std::string& s) {
  return value_of(kAllocationRules, s, "allocation rule");
}
ControlRule control_rule_from_string(const std::string& s) { return value_of(kControlRules, s, "control rule"); }

CoDesignSystem::CoDesignSystem(const Environment& env, SystemLayout layout, const NetworkSpec& spec, Rng& rng)
    : layout_(layout), m_(env.m()), p_(env.p()), q_(env.q()), control_bounds_(env.config().control_bounds) {
  const auto& cfg = env.config();
  if (layout_.schedule_size < 1 || layout_.schedule_size > m_)
    throw std::invalid_argument("schedule size must lie in [1, m]");
  if (!(layout_.allocation_budget > 0.0)) throw std::invalid_argument("allocation budget must be positive");

  instability_ = VectorXd::Zero(m_);
  for (int i = 0; i < m_; ++i) instability_(i) = cfg.plants[static_cast<std::size_t>(i)].instability;

  if (layout_.control == ControlRule::lqr) {
    for (int i = 0; i < m_; ++i) {
      const auto& plant = cfg.plants[static_cast<std::size_t>(i)];
      MatrixXd A = plant.A, B = plant.B;
      if (plant.kind == PlantKind::cartpole)
        std::tie(A, B) = linearize(plant, VectorXd::Zero(p_), VectorXd::Zero(q_));
      const MatrixXd Qi = cfg.weights.Q.block(i * p_, i * p_, p_, p_);
      const MatrixXd Ri = cfg.weights.R.block(i * q_, i * q_, q_, q_);
      lqr_gains_.push_back(solve_dare(A, B, Qi, Ri, 1e-12, 100000, "plant " + std::to_string(i)).K);
    }
  }

  const bool learn_alloc = layout_.allocation == AllocationRule::learned;
  const bool learn_control = layout_.control == ControlRule::learned;
  const int obs_dim = env.observation_dim();
  if (learn_alloc && learn_control && layout_.topology == Topology::single) {
    nn::PolicyHeads heads{{allocation_head(m_, cfg, layout_), control_head(m_ * q_, cfg)}};
    agents_.push_back(make_agent(Agent::Role::joint, -1, "joint", obs_dim, heads, spec, rng));
    return;
  }
  if (learn_alloc) {
    nn::PolicyHeads heads{{allocation_head(m_, cfg, layout_)}};
    agents_.push_back(make_agent(Agent::Role::allocation, -1, "access_point", obs_dim, heads, spec, rng));
  }
  if (learn_control) {
    if (layout_.topology == Topology::separate) {
      for (int i = 0; i < m_; ++i) {
        nn::PolicyHeads heads{{control_head(q_, cfg)}};
        agents_.push_back(
            make_agent(Agent::Role::control, i, "controller_" + std::to_string(i), p_ + 2, heads, spec, rng));
      }
    } else {
      nn::PolicyHeads heads{{control_head(m_ * q_, cfg)}};
      agents_.push_back(make_agent(Agent::Role::control, -1, "controller", obs_dim + m_, heads, spec, rng));
    }
  }
}

void CoDesignSystem::set_optimizer(OptimizerKind kind) {
  for (auto& agent : agents_) {
    agent.actor_optimizer = Optimizer(kind);
    agent.critic_optimizer = Optimizer(kind);
  }
}

MatrixXd CoDesignSystem::heuristic_allocation(const std::vector<Observation>& obs, int t) const {
  const auto n = static_cast<Eigen::Index>(obs.size());
  MatrixXd alpha(m_, n);
  const double budget = layout_.allocation_budget;
  const int k = layout_.schedule_size;
  for (Eigen::Index w = 0; w < n; ++w) {
    const auto& o = obs[static_cast<std::size_t>(w)];
    switch (layout_.allocation) {
      case AllocationRule::equal:
      case AllocationRule::all_on: alpha.col(w) = equal_power(m_, budget); break;
      case AllocationRule::round_robin: alpha.col(w) = round_robin(t, m_, k, budget); break;
      case AllocationRule::channel_aware: alpha.col(w) = channel_aware(o.h, k, budget); break;
      case AllocationRule::control_aware: alpha.col(w) = control_aware(o.x, k, budget); break;
      case AllocationRule::instability_aware: alpha.col(w) = instability_aware(instability_, k, budget); break;
      case AllocationRule::zero: alpha.col(w).setZero(); break;
      case AllocationRule::learned: throw std::logic_error("learned allocation has no heuristic");
    }
  }
  return alpha;
}

std::vector<JointAction> CoDesignSystem::act(const std::vector<Observation>& obs, int t, std::vector<Rng>* rngs,
                                             ActRecord* record) const {
  if (obs.empty()) return {};
  const auto n = static_cast<Eigen::Index>(obs.size());
  for (const auto& o : obs)
    if (o.h.size() != m_ || o.x.rows() != m_ || o.x.cols() != p_)
      throw std::invalid_argument("dimension mismatch: observation");
  if (rngs && static_cast<Eigen::Index>(rngs->size()) != n)
    throw std::invalid_argument("one generator per observation is required");
  if (record) {
    record->inputs.assign(agents_.size(), MatrixXd());
    record->raw.assign(agents_.size(), MatrixXd());
  }

  auto run_agent = [&](std::size_t k, MatrixXd input) {
    const auto& actor = agents_[k].actor;
    MatrixXd raw = actor.net.forward(input);
    if (rngs) {
      const VectorXd std = actor.std();
      for (Eigen::Index w = 0; w < n; ++w)
        raw.col(w) = nn::gaussian_sample(raw.col(w), std, (*rngs)[static_cast<std::size_t>(w)]);
    }
    MatrixXd out(actor.heads.output_dim(), n);
    for (Eigen::Index w = 0; w < n; ++w) out.col(w) = actor.heads.transform(raw.col(w));
    if (record) {
      record->inputs[k] = std::move(input);
      record->raw[k] = std::move(raw);
    }
    return out;
  };

  MatrixXd alpha(m_, n);
  MatrixXd u = MatrixXd::Zero(m_ * q_, n);
  std::size_t next = 0;
  if (layout_.allocation == AllocationRule::learned) {
    const MatrixXd out = run_agent(next, stacked_inputs(obs));
    alpha = out.topRows(m_);
    if (agents_[next].role == Agent::Role::joint) u = out.bottomRows(m_ * q_);
    ++next;
  } else {
    alpha = heuristic_allocation(obs, t);
  }

  if (layout_.control == ControlRule::learned && !(next == 1 && agents_[0].role == Agent::Role::joint)) {
    if (layout_.topology == Topology::separate) {
      for (int i = 0; i < m_; ++i, ++next) {
        MatrixXd input(p_ + 2, n);
        for (Eigen::Index w = 0; w < n; ++w) {
          const auto& o = obs[static_cast<std::size_t>(w)];
          input(0, w) = o.h(i);
          input.block(1, w, p_, 1) = o.x.row(i).transpose();
          input(p_ + 1, w) = alpha(i, w);
        }
        u.middleRows(i * q_, q_) = run_agent(next, std::move(input));
      }
    } else {
      MatrixXd input(m_ * (1 + p_) + m_, n);
      input.topRows(m_ * (1 + p_)) = stacked_inputs(obs);
      input.bottomRows(m_) = alpha;
      u = run_agent(next, std::move(input));
    }
  } else if (layout_.control == ControlRule::lqr) {
    for (Eigen::Index w = 0; w < n; ++w)
      for (int i = 0; i < m_; ++i)
        u.block(i * q_, w, q_, 1) = lqr_control(lqr_gains_[static_cast<std::size_t>(i)],
                                                obs[static_cast<std::size_t>(w)].x.row(i).transpose());
  }

  std::vector<JointAction> actions(static_cast<std::size_t>(n));
  for (Eigen::Index w = 0; w < n; ++w) {
    auto& a = actions[static_cast<std::size_t>(w)];
    a.alpha = alpha.col(w);
    a.u.resize(m_, q_);
    for (int i = 0; i < m_; ++i) a.u.row(i) = u.block(i * q_, w, q_, 1).transpose();
  }
  return actions;
}

namespace {
constexpr const char* kSystemMagic = "wcs-system";
constexpr int kSystemVersion = 1;
}  // namespace

void CoDesignSystem::save(std::ostream& out) const {
  out << kSystemMagic << ' ' << kSystemVersion << '\n';
  out << "layout " << to_string(layout_.allocation) << ' ' << to_string(layout_.control) << ' '
      << to_string(layout_.topology) << '\n';
  out << "agents " << agents_.size() << '\n';
  for (const auto& agent : agents_) {
    nn::save_policy(out, agent.name, agent.actor);
    nn::save_value(out, agent.name + "_critic", agent.critic);
  }
}

void CoDesignSystem::load(std::istream& in) {
  std::string magic, word, alloc, control, topology;
  int version = 0;
  std::size_t count = 0;
  if (!(in >> magic >> version) || magic != kSystemMagic) throw std::runtime_error("checkpoint: not a system checkpoint");
  if (version != kSystemVersion) throw std::runtime_error("checkpoint: unsupported system version");
  if (!(in >> word >> alloc >> control >> topology) || word != "layout")
    throw std::runtime_error("checkpoint: missing layout");
  if (alloc != to_string(layout_.allocation) || control != to_string(layout_.control) ||
      topology != to_string(layout_.topology))
    throw std::runtime_error("checkpoint: layout " + alloc + "/" + control + "/" + topology +
                             " does not match the configured policy");
  if (!(in >> word >> count) || word != "agents" || count != agents_.size())
    throw std::runtime_error("checkpoint: agent count does not match");
  for (auto& agent : agents_) {
    auto actor = nn::load_policy(in, agent.name);
    auto critic = nn::load_value(in, agent.name + "_critic");
    if (actor.input_dim() != agent.actor.input_dim() || actor.heads.raw_dim() != agent.actor.heads.raw_dim())
      throw std::runtime_error("checkpoint: agent " + agent.name + " has incompatible dimensions");
    agent.actor = std::move(actor);
    agent.critic = std::move(critic);
  }
}

void TrainConfig::validate() const {
  if (!(lr_actor >= 0.0 && lr_critic >= 0.0 && lr_dual >= 0.0)) throw std::invalid_argument("learning rates must be nonnegative");
  if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("gamma must lie in [0, 1]");
  if (workers < 1) throw std::invalid_argument("need at least one worker");
  if (horizon < 1) throw std::invalid_argument("horizon must be positive");
  if (t_max < 1) throw std::invalid_argument("t_max must be positive");
  if (episodes < 0) throw std::invalid_argument("episodes must be nonnegative");
}

namespace {

double agent_cost(const Agent& agent, const StepResult& step, const VectorXd& lambda, const ConstraintSpec& spec) {
  if (agent.role == Agent::Role::control && agent.plant >= 0) {
    double c = step.plant_costs(agent.plant);
    for (int j = 0; j < spec.size(); ++j)
      if (spec.components[static_cast<std::size_t>(j)].plant == agent.plant)
        c += lambda(j) * step.constraint_signals(j);
    return c;
  }
  return penalized_cost(step.stage_cost, step.constraint_signals, lambda);
}

struct SegmentBuffer {
  std::vector<MatrixXd> inputs;
  std::vector<MatrixXd> raw;
  std::vector<VectorXd> values;
  std::vector<VectorXd> costs;

  void clear() {
    inputs.clear();
    raw.clear();
    values.clear();
    costs.clear();
  }
};

RolloutBatch assemble(const SegmentBuffer& buf, const VectorXd& bootstrap, double gamma) {
  const auto steps = static_cast<Eigen::Index>(buf.inputs.size());
  const auto n = buf.inputs.front().cols();
  RolloutBatch batch;
  batch.inputs.resize(buf.inputs.front().rows(), steps * n);
  batch.raw_actions.resize(buf.raw.front().rows(), steps * n);
  batch.returns.resize(steps * n);
  batch.values.resize(steps * n);
  for (Eigen::Index s = 0; s < steps; ++s) {
    batch.inputs.middleCols(s * n, n) = buf.inputs[static_cast<std::size_t>(s)];
    batch.raw_actions.middleCols(s * n, n) = buf.raw[static_cast<std::size_t>(s)];
    batch.values.segment(s * n, n) = buf.values[static_cast<std::size_t>(s)];
  }
  for (Eigen::Index w = 0; w < n; ++w) {
    VectorXd costs(steps);
    for (Eigen::Index s = 0; s < steps; ++s) costs(s) = buf.costs[static_cast<std::size_t>(s)](w);
    const VectorXd returns = compute_cost_to_go(costs, bootstrap(w), gamma);
    for (Eigen::Index s = 0; s < steps; ++s) batch.returns(s * n + w) = returns(s);
  }
  return batch;
}

}  // namespace

void warm_start_allocation(CoDesignSystem& system, const Environment& env, int iterations, int batch, double lr,
                           std::uint64_t seed) {
  if (iterations <= 0) return;
  if (batch < 1) throw std::invalid_argument("warm start batch must be positive");
  auto& agents = system.agents();
  auto it = std::find_if(agents.begin(), agents.end(), [](const Agent& a) {
    return a.role == Agent::Role::joint || a.role == Agent::Role::allocation;
  });
  if (it == agents.end()) return;
  auto& actor = it->actor;
  const nn::PolicyHeads alloc_heads{{actor.heads.blocks.front()}};
  const int alloc_raw = alloc_heads.raw_dim();
  const auto& layout = system.layout();
  Optimizer optimizer(OptimizerKind::adam);

  for (int iter = 0; iter < iterations; ++iter) {
    std::vector<Observation> obs;
    obs.reserve(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) {
      auto streams = EnvStreams::from_seed(derive_seed(seed, {static_cast<std::uint64_t>(iter), static_cast<std::uint64_t>(b)}));
      obs.push_back(env.observe(env.reset(streams), streams.observation));
    }
    const MatrixXd inputs = stacked_inputs(obs);
    nn::ForwardCache cache;
    const MatrixXd means = actor.net.forward(inputs, cache);
    MatrixXd grad_means = MatrixXd::Zero(means.rows(), means.cols());
    for (int b = 0; b < batch; ++b) {
      const VectorXd raw = means.col(b).head(alloc_raw);
      const VectorXd target = control_aware(obs[static_cast<std::size_t>(b)].x, layout.schedule_size, layout.allocation_budget);
      const VectorXd residual = (alloc_heads.transform(raw) - target) / static_cast<double>(batch);
      grad_means.col(b).head(alloc_raw) = alloc_heads.transform_backward(raw, residual);
    }
    VectorXd params = actor.net.parameters();
    optimizer.step(params, actor.net.backward(cache, grad_means), lr);
    actor.net.set_parameters(params);
  }
}

TrainResult train(const TrainConfig& config, const Environment& env, CoDesignSystem system,
                  const CheckpointHook& on_checkpoint) {
  config.validate();
  const auto& spec = env.config().constraints;
  const int r = spec.size();
  const int n = config.workers;
  const auto start = std::chrono::steady_clock::now();

  TrainResult result;
  result.dual.lambda = VectorXd::Zero(r);
  result.dual.step_size = config.lr_dual;
  system.set_optimizer(config.optimizer);
  warm_start_allocation(system, env, config.warm_start_iterations, config.warm_start_batch, config.warm_start_lr,
                        derive_seed(config.seed, {0xA11C}));

  auto& agents = system.agents();
  const std::size_t n_agents = agents.size();

  for (int episode = 1; episode <= config.episodes; ++episode) {
    const auto ep = static_cast<std::uint64_t>(episode);
    std::vector<EnvStreams> streams;
    std::vector<Rng> policy_rngs;
    std::vector<SystemState> states;
    std::vector<Observation> obs;
    for (int w = 0; w < n; ++w) {
      const auto ws = static_cast<std::uint64_t>(w);
      streams.push_back(EnvStreams::from_seed(derive_seed(config.seed, {ep, ws})));
      policy_rngs.push_back(derive_rng(config.seed, {ep, ws, 0xAC7}));
      states.push_back(env.reset(streams.back()));
      obs.push_back(env.observe(states.back(), streams.back().observation));
    }

    const VectorXd lambda = result.dual.lambda;
    VectorXd lagrangian = VectorXd::Zero(n), stage = VectorXd::Zero(n);
    MatrixXd violation = MatrixXd::Zero(r, n);
    std::vector<SegmentBuffer> buffers(n_agents);
    double discount = 1.0;

    for (int t = 0; t < config.horizon; ++t) {
      ActRecord record;
      const auto actions = system.act(obs, t, &policy_rngs, &record);
      for (std::size_t k = 0; k < n_agents; ++k) {
        buffers[k].values.push_back(agents[k].critic.net.forward(record.inputs[k]).row(0).transpose());
        buffers[k].inputs.push_back(std::move(record.inputs[k]));
        buffers[k].raw.push_back(std::move(record.raw[k]));
        buffers[k].costs.push_back(VectorXd(n));
      }
      for (int w = 0; w < n; ++w) {
        const auto ws = static_cast<std::size_t>(w);
        StepResult step = env.step(states[ws], actions[ws], streams[ws]);
        const double penalized = penalized_cost(step.stage_cost, step.constraint_signals, lambda);
        lagrangian(w) += discount * penalized;
        stage(w) += discount * step.stage_cost;
        violation.col(w) += discount * step.constraint_signals;
        for (std::size_t k = 0; k < n_agents; ++k)
          buffers[k].costs.back()(w) = config.cost_scale * agent_cost(agents[k], step, lambda, spec);
        states[ws] = std::move(step.next);
        obs[ws] = env.observe(states[ws], streams[ws].observation);
      }
      discount *= config.gamma;

      const bool episode_end = t + 1 == config.horizon;
      if ((t + 1) % config.t_max != 0 && !episode_end) continue;

      std::vector<VectorXd> bootstrap(n_agents, VectorXd::Zero(n));
      if (!episode_end) {
        ActRecord next;
        system.act(obs, t + 1, nullptr, &next);
        for (std::size_t k = 0; k < n_agents; ++k)
          bootstrap[k] = agents[k].critic.net.forward(next.inputs[k]).row(0).transpose();
      }
      for (std::size_t k = 0; k < n_agents; ++k) {
        const RolloutBatch batch = assemble(buffers[k], bootstrap[k], config.gamma);
        try {
          policy_update(agents[k].actor, batch, config.lr_actor, agents[k].actor_optimizer, config.update);
          value_update(agents[k].critic, batch, config.lr_critic, agents[k].critic_optimizer, config.update);
        } catch (const std::runtime_error& e) {
          throw std::runtime_error(std::string(e.what()) + " (agent " + agents[k].name + ", episode " +
                                   std::to_string(episode) + ", step " + std::to_string(t + 1) + ")");
        }
        buffers[k].clear();
      }
    }

    TrainLogEntry entry;
    entry.episode = episode;
    entry.lagrangian = lagrangian.mean();
    entry.cost = stage.mean();
    entry.violation = violation.rowwise().mean();
    entry.lambda = lambda;
    if (config.record_wall_time)
      entry.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(entry);
    result.dual.violation_history.push_back(entry.violation);
    result.dual.lambda = dual_update(lambda, entry.violation, config.lr_dual);

    if (!std::isfinite(entry.lagrangian) || entry.lagrangian > config.lagrangian_ceiling) {
      result.diverged = true;
      break;
    }
    if (on_checkpoint && config.checkpoint_every > 0 && episode % config.checkpoint_every == 0)
      on_checkpoint(episode, system, result.dual);
  }
  result.system = std::move(system);
  return result;
}

void write_train_log(std::ostream& out, const std::vector<TrainLogEntry>& log, bool with_wall_time) {
  const auto r = log.empty() ? 0 : log.front().violation.size();
  out << "episode,lagrangian,cost";
  for (Eigen::Index j = 0; j < r; ++j) out << ",violation_" << j;
  for (Eigen::Index j = 0; j < r; ++j) out << ",lambda_" << j;
  if (with_wall_time) out << ",wall_time";
  out << '\n';
  out << std::setprecision(17);
  for (const auto& e : log) {
    out << e.episode << ',' << e.lagrangian << ',' << e.cost;
    for (Eigen::Index j = 0; j < r; ++j) out << ',' << e.violation(j);
    for (Eigen::Index j = 0; j < r; ++j) out << ',' << e.lambda(j);
    if (with_wall_time) out << ',' << e.wall_time;
    out << '\n';
  }
}

}  // namespace wcs
