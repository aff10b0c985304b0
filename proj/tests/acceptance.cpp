// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   acceptance --configs <dir> --wcsctl <path> --work <dir> [--only 1,2,...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "wcs/baselines.hpp"
#include "wcs/harness.hpp"
#include "wcs/learner.hpp"
#include "wcs/neuralnet.hpp"
#include "wcs/wireless.hpp"

using namespace wcs;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

ExperimentConfig load_with_seed(const fs::path& path, std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  auto kv = parse_key_values(in);
  kv["seed"] = std::to_string(seed);
  return make_config(kv);
}

const std::vector<std::uint64_t> kSeeds{1, 2, 3};

// ---- 1 ----
Outcome gradient_correctness() {
  Stopwatch clock;
  const auto report = gradcheck(20240601);
  double worst = 0.0;
  for (const auto& e : report.entries) worst = std::max(worst, e.max_relative_error);
  const double seconds = clock.seconds();
  return {report.ok() && seconds < 60.0,
          "max relative error " + fmt(worst) + " (< 1e-4) over 50 networks in " + fmt(seconds) + " s (< 60)"};
}

// ---- 2 ----
Outcome delivery_statistics() {
  Rng rng = derive_rng(7, {2});
  const int draws = 100000;
  std::string detail;
  bool pass = true;
  for (double s : {0.25, 1.0, 3.0}) {
    int hits = 0;
    for (int k = 0; k < draws; ++k) hits += sample_delivery(s, rng) ? 1 : 0;
    const double p = 1.0 - std::exp(-s);
    const double z = (hits - draws * p) / std::sqrt(draws * p * (1.0 - p));
    pass = pass && std::abs(z) <= 3.0;
    detail += "snr " + fmt(s) + ": z=" + fmt(z) + "; ";
  }
  return {pass, detail + "|z| <= 3"};
}

// ---- 3 ----
Outcome cost_to_go_oracle() {
  Rng rng = derive_rng(7, {3});
  std::uniform_int_distribution<int> length(1, 20);
  std::uniform_int_distribution<int> pick(0, 3);
  std::normal_distribution<double> normal(0.0, 10.0);
  const double gammas[] = {0.0, 0.5, 0.99, 1.0};
  double worst = 0.0;
  for (int n = 0; n < 1000; ++n) {
    const int T = length(rng);
    const double gamma = gammas[pick(rng)];
    VectorXd c(T);
    for (int t = 0; t < T; ++t) c(t) = normal(rng);
    const double bootstrap = normal(rng);
    const VectorXd r = compute_cost_to_go(c, bootstrap, gamma);
    for (int t = 0; t < T; ++t) {
      double expected = 0.0;
      for (int k = t; k < T; ++k) expected += std::pow(gamma, k - t) * c(k);
      expected += std::pow(gamma, T - t) * bootstrap;
      worst = std::max(worst, std::abs(r(t) - expected));
    }
  }
  return {worst <= 1e-12, "max abs error " + fmt(worst) + " over 1000 segments (<= 1e-12)"};
}

// ---- 4 ----
Outcome riccati() {
  const auto scalar = solve_dare(MatrixXd::Constant(1, 1, 2.0), MatrixXd::Constant(1, 1, 1.0),
                                 MatrixXd::Constant(1, 1, 1.0), MatrixXd::Constant(1, 1, 1.0));
  const double p_err = std::abs(scalar.P(0, 0) - (2.0 + std::sqrt(5.0)));
  const double k_err = std::abs(scalar.K(0, 0) - (1.0 + std::sqrt(5.0)) / 2.0);
  double rho = 0.0;
  for (double a : {1.05, 1.15}) {
    const MatrixXd A = power_allocation_matrix(a);
    const MatrixXd I = MatrixXd::Identity(3, 3);
    const auto s = solve_dare(A, I, I, I);
    rho = std::max(rho, spectral_radius(A - s.K));
  }
  return {p_err <= 1e-9 && k_err <= 1e-9 && rho < 1.0,
          "|P err| " + fmt(p_err) + ", |K err| " + fmt(k_err) + " (<= 1e-9); max rho(A-BK) " + fmt(rho) + " (< 1)"};
}

// ---- 5 ----
Outcome feasible_outputs() {
  Rng rng = derive_rng(7, {5});
  std::normal_distribution<double> normal(0.0, 5.0);
  std::uniform_int_distribution<int> size(1, 12);
  std::uniform_real_distribution<double> budget(0.1, 100.0);
  int bad_simplex = 0, bad_interval = 0;
  for (int n = 0; n < 10000; ++n) {
    const int m = size(rng);
    const double alpha_max = budget(rng);
    VectorXd raw(m + 1);
    for (int i = 0; i <= m; ++i) raw(i) = normal(rng);
    const VectorXd alpha = nn::simplex_layer(raw, alpha_max);
    if ((alpha.array() < 0.0).any() || alpha.sum() > alpha_max + 1e-9) ++bad_simplex;
    const double lo = -budget(rng), hi = budget(rng);
    const double u = nn::interval_layer(10.0 * normal(rng), lo, hi);
    if (!(u >= lo && u <= hi)) ++bad_interval;
  }
  return {bad_simplex == 0 && bad_interval == 0,
          "10000 draws: " + std::to_string(bad_simplex) + " infeasible simplex outputs, " + std::to_string(bad_interval) +
              " interval outputs out of range"};
}

// ---- 6 ----
Outcome dual_descent_analytic() {
  const PrimalMinimizer primal = [](const VectorXd& lambda) {
    PrimalSolution s;
    s.theta = VectorXd::Constant(1, lambda(0) / 2.0);
    s.objective = s.theta(0) * s.theta(0);
    s.constraint = VectorXd::Constant(1, 1.0 - s.theta(0));
    return s;
  };
  const auto r = dual_descent(VectorXd::Zero(1), primal, 0.05, 500);
  return {std::abs(r.lambda(0) - 2.0) <= 0.05 && std::abs(r.theta(0) - 1.0) <= 0.05,
          "lambda " + fmt(r.lambda(0)) + " (2 +- 0.05), theta " + fmt(r.theta(0)) + " (1 +- 0.05) after 500 iterations"};
}

// ---- 7 and 8 ----
struct AllocationRun {
  VectorXd region_sums;  // one per plant
  double learned = 0.0;
  double best_baseline = 0.0;
  std::string best_label;
};

std::vector<AllocationRun> allocation_runs(const fs::path& config_path, double& seconds) {
  Stopwatch clock;
  std::vector<AllocationRun> runs;
  for (auto seed : kSeeds) {
    const auto config = load_with_seed(config_path, seed);
    const auto built = build_environment(config);
    const auto trained = train_approach(config, built, "allocation_lqr");
    const auto report = evaluate(deterministic_policy(trained.system), built.env, evaluation_options(config), "learned");
    AllocationRun run;
    run.region_sums = report.constraint_sums;
    run.learned = report.mean_cost();
    run.best_baseline = std::numeric_limits<double>::infinity();
    for (const auto& b : evaluate_baselines(config, built))
      if (b.mean_cost() < run.best_baseline) {
        run.best_baseline = b.mean_cost();
        run.best_label = b.label;
      }
    std::cout << "  seed " << seed << ": region sums " << run.region_sums.transpose() << ", learned cost " << run.learned
              << ", best baseline " << run.best_label << " " << run.best_baseline << std::endl;
    runs.push_back(run);
  }
  seconds = clock.seconds() / static_cast<double>(kSeeds.size());
  return runs;
}

Outcome constraint_feasibility(const std::vector<AllocationRun>& runs, double seconds_per_seed) {
  const auto plants = runs.front().region_sums.size();
  double worst = -1e300;
  for (Eigen::Index i = 0; i < plants; ++i) {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(r.region_sums(i));
    worst = std::max(worst, median3(v));
  }
  return {worst <= 0.2 && seconds_per_seed <= 900.0,
          "largest per-plant median region sum " + fmt(worst) + " (<= 0.2); " + fmt(seconds_per_seed) +
              " s per training seed (<= 900)"};
}

Outcome baseline_ordering(const std::vector<AllocationRun>& runs) {
  int wins = 0;
  std::string ratios;
  for (const auto& r : runs) {
    const double ratio = r.learned / r.best_baseline;
    wins += ratio <= 0.95 ? 1 : 0;
    ratios += fmt(ratio) + " ";
  }
  return {wins >= 2, "cost ratios to best baseline: " + ratios + "(<= 0.95 for at least 2 of 3 seeds)"};
}

// ---- 9 and 10 ----
struct CodesignRun {
  double codesign = 0.0;
  double allocation_lqr = 0.0;
  double stable_fraction = 0.0;
};

/// Fraction of trajectories from ||x0|| <= radius whose state norm stays below `bound`.
double stability_fraction(const CoDesignSystem& system, const Environment& env, std::uint64_t seed, int trajectories,
                          int horizon, double radius, double bound) {
  const auto policy = deterministic_policy(system);
  int stable = 0;
  for (int n = 0; n < trajectories; ++n) {
    auto streams = EnvStreams::from_seed(derive_seed(seed, {0x57AB, static_cast<std::uint64_t>(n)}));
    auto state = env.reset(streams);
    Rng init = derive_rng(seed, {0x1217, static_cast<std::uint64_t>(n)});
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    for (Eigen::Index i = 0; i < state.x.rows(); ++i)
      for (Eigen::Index j = 0; j < state.x.cols(); ++j) state.x(i, j) = normal(init);
    const double dim = static_cast<double>(state.x.size());
    state.x *= radius * std::pow(uniform(init), 1.0 / dim) / state.x.norm();

    double peak = state.x.norm();
    for (int t = 0; t < horizon && peak < bound; ++t) {
      const auto obs = env.observe(state, streams.observation);
      const auto action = policy({obs}, t).front();
      state = env.step(state, action, streams).next;
      peak = std::max(peak, state.x.norm());
    }
    stable += peak < bound ? 1 : 0;
  }
  return static_cast<double>(stable) / trajectories;
}

std::vector<CodesignRun> codesign_runs(const fs::path& config_path, double& seconds) {
  Stopwatch clock;
  std::vector<CodesignRun> runs;
  for (auto seed : kSeeds) {
    const auto config = load_with_seed(config_path, seed);
    const auto built = build_environment(config);
    const auto options = evaluation_options(config);
    CodesignRun run;
    const auto codesign = train_approach(config, built, "codesign");
    run.codesign = evaluate(deterministic_policy(codesign.system), built.env, options).mean_cost();
    const auto alloc = train_approach(config, built, "allocation_lqr");
    run.allocation_lqr = evaluate(deterministic_policy(alloc.system), built.env, options).mean_cost();
    run.stable_fraction = stability_fraction(codesign.system, built.env, config.seed, 200, 100, 0.1, 50.0);
    std::cout << "  seed " << seed << ": codesign " << run.codesign << ", allocation_lqr " << run.allocation_lqr
              << ", stable fraction " << run.stable_fraction << std::endl;
    runs.push_back(run);
  }
  seconds = clock.seconds();
  return runs;
}

Outcome codesign_sanity(const std::vector<CodesignRun>& runs, double seconds) {
  std::vector<double> ratios;
  for (const auto& r : runs) ratios.push_back(r.codesign / r.allocation_lqr);
  const double median = median3(ratios);
  return {median <= 1.1 && seconds <= 1200.0,
          "median cost ratio codesign/allocation_lqr " + fmt(median) + " (<= 1.1); " + fmt(seconds) + " s (<= 1200)"};
}

Outcome stability_probe(const std::vector<CodesignRun>& runs) {
  double worst = 1.0;
  std::string fractions;
  for (const auto& r : runs) {
    worst = std::min(worst, r.stable_fraction);
    fractions += fmt(r.stable_fraction) + " ";
  }
  return {worst >= 0.9, "stable fraction per trained seed: " + fractions + "(>= 0.9 for every seed)"};
}

// ---- 11 ----
std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int run(const std::string& command) { return std::system((command + " > /dev/null 2>&1").c_str()); }

Outcome determinism(const fs::path& configs, const std::string& wcsctl, const fs::path& work) {
  const auto a = work / "determinism_a", b = work / "determinism_b";
  fs::remove_all(a);
  fs::remove_all(b);
  const auto quote = [](const fs::path& p) { return "'" + p.string() + "'"; };
  if (run(quote(wcsctl) + " train " + quote(configs / "smoke.cfg") + " --out " + quote(a)) != 0)
    return {false, "wcsctl train failed"};
  // the second run starts from the first run's manifest
  if (run(quote(wcsctl) + " train " + quote(a / "manifest.txt") + " --out " + quote(b)) != 0)
    return {false, "wcsctl train from the manifest failed"};
  for (const auto& dir : {a, b})
    if (run(quote(wcsctl) + " evaluate " + quote(a / "manifest.txt") + " --policy " +
            quote(a / "checkpoint_allocation_lqr.txt") + " --out " + quote(dir)) != 0)
      return {false, "wcsctl evaluate failed"};

  int compared = 0;
  std::vector<std::string> differing;
  for (const auto& entry : fs::directory_iterator(a)) {
    if (entry.path().extension() != ".csv") continue;
    ++compared;
    if (read_file(entry.path()) != read_file(b / entry.path().filename()))
      differing.push_back(entry.path().filename().string());
  }
  std::string detail = std::to_string(compared) + " CSV files compared";
  for (const auto& d : differing) detail += ", differs: " + d;
  return {compared >= 4 && differing.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance suite"};
  std::string configs = "configs", wcsctl = "wcsctl", work = "acceptance_work", only;
  app.add_option("--configs", configs, "directory with the scenario files");
  app.add_option("--wcsctl", wcsctl, "path to the wcsctl executable");
  app.add_option("--work", work, "scratch directory");
  app.add_option("--only", only, "comma separated criteria to run");
  CLI11_PARSE(app, argc, argv);

  std::set<int> selected;
  std::stringstream list(only);
  for (std::string item; std::getline(list, item, ',');)
    if (!item.empty()) selected.insert(std::stoi(item));
  const auto wanted = [&](int k) { return selected.empty() || selected.count(k) > 0; };
  fs::create_directories(work);

  int failures = 0;
  const auto report = [&](int k, const Outcome& o) {
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << k << ": " << o.detail << std::endl;
    failures += o.pass ? 0 : 1;
  };
  const auto guarded = [&](int k, const auto& body) {
    if (!wanted(k)) return;
    try {
      report(k, body());
    } catch (const std::exception& e) {
      report(k, {false, std::string("error: ") + e.what()});
    }
  };

  guarded(1, gradient_correctness);
  guarded(2, delivery_statistics);
  guarded(3, cost_to_go_oracle);
  guarded(4, riccati);
  guarded(5, feasible_outputs);
  guarded(6, dual_descent_analytic);

  if (wanted(7) || wanted(8)) {
    try {
      double seconds = 0.0;
      const auto runs = allocation_runs(fs::path(configs) / "acceptance_allocation.cfg", seconds);
      if (wanted(7)) report(7, constraint_feasibility(runs, seconds));
      if (wanted(8)) report(8, baseline_ordering(runs));
    } catch (const std::exception& e) {
      if (wanted(7)) report(7, {false, std::string("error: ") + e.what()});
      if (wanted(8)) report(8, {false, std::string("error: ") + e.what()});
    }
  }
  if (wanted(9) || wanted(10)) {
    try {
      double seconds = 0.0;
      const auto runs = codesign_runs(fs::path(configs) / "acceptance_codesign.cfg", seconds);
      if (wanted(9)) report(9, codesign_sanity(runs, seconds));
      if (wanted(10)) report(10, stability_probe(runs));
    } catch (const std::exception& e) {
      if (wanted(9)) report(9, {false, std::string("error: ") + e.what()});
      if (wanted(10)) report(10, {false, std::string("error: ") + e.what()});
    }
  }
  guarded(11, [&] { return determinism(configs, wcsctl, work); });

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
