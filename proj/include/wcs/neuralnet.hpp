#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "wcs/random.hpp"

namespace wcs::nn {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Activation { tanh, relu, identity };

std::string to_string(Activation activation);
Activation activation_from_string(const std::string& name);

struct DenseLayer {
  MatrixXd weight;  // out x in
  VectorXd bias;
};

class Mlp;

/// Activations recorded by a forward pass; tied to the parameter version that produced them.
struct ForwardCache {
  std::vector<MatrixXd> inputs;  // input to each layer (batch in columns)
  std::vector<MatrixXd> pre;     // pre-activation of each layer
  const Mlp* owner = nullptr;
  std::uint64_t version = 0;
};

/// Fully connected network. Hidden layers use `hidden`, the last layer is linear.
/// Batches are matrices with one sample per column.
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::vector<int>& sizes, Activation hidden, Rng& rng);

  int input_dim() const;
  int output_dim() const;
  std::vector<int> sizes() const;
  Activation hidden_activation() const { return hidden_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  int parameter_count() const;

  MatrixXd forward(const MatrixXd& input) const;
  MatrixXd forward(const MatrixXd& input, ForwardCache& cache) const;
  VectorXd forward_one(const VectorXd& input) const;

  /// Gradient of sum_b <output_grad_b, output_b> w.r.t. every weight and bias,
  /// flattened in parameters() order. Throws on a cache from other parameters.
  VectorXd backward(const ForwardCache& cache, const MatrixXd& output_grad) const;

  /// Layer by layer: weight (column-major) then bias.
  VectorXd parameters() const;
  void set_parameters(const VectorXd& flat);
  DenseLayer& layer(std::size_t i);

  /// Scales the last layer's weights; small policy outputs at init.
  void scale_output_layer(double factor);

 private:
  void touch();

  std::vector<DenseLayer> layers_;
  Activation hidden_ = Activation::tanh;
  std::uint64_t version_ = 0;
};

// ---- Gaussian policy helpers ----

VectorXd gaussian_sample(const VectorXd& mean, const VectorXd& std, Rng& rng);

struct GaussianLogProb {
  double log_density = 0.0;
  VectorXd d_mean;
  VectorXd d_log_std;
};

GaussianLogProb gaussian_logprob_and_grad(const VectorXd& mean, const VectorXd& std, const VectorXd& action);

// ---- constrained output layers ----

/// Softmax over m + 1 logits (last is slack) scaled by alpha_max, slack dropped.
VectorXd simplex_layer(const VectorXd& raw, double alpha_max);
/// Vector-Jacobian product of simplex_layer.
VectorXd simplex_layer_backward(const VectorXd& raw, double alpha_max, const VectorXd& grad_out);

double interval_layer(double raw, double u_min, double u_max);
double interval_layer_backward(double raw, double u_min, double u_max, double grad_out);

/// scale * softplus(raw); nonnegative, unbounded.
double softplus_layer(double raw, double scale);
double softplus_layer_backward(double raw, double scale, double grad_out);

enum class HeadKind { simplex, softplus, interval, identity };

std::string to_string(HeadKind kind);
HeadKind head_kind_from_string(const std::string& name);

/// A block of policy outputs with its own structural constraint.
/// simplex: `count` outputs from count + 1 raw logits, param_a = alpha_max.
/// softplus: param_a = scale. interval: [param_a, param_b]. identity: none.
struct HeadBlock {
  HeadKind kind = HeadKind::identity;
  int count = 0;
  double param_a = 0.0;
  double param_b = 0.0;

  int raw_dim() const { return kind == HeadKind::simplex ? count + 1 : count; }
};

struct PolicyHeads {
  std::vector<HeadBlock> blocks;

  int raw_dim() const;
  int output_dim() const;
  VectorXd transform(const VectorXd& raw) const;
  VectorXd transform_backward(const VectorXd& raw, const VectorXd& grad_out) const;
};

/// Actor: MLP means over the raw Gaussian coordinates, state-independent log-stds,
/// and the constrained heads applied after sampling.
struct GaussianPolicy {
  Mlp net;
  VectorXd log_std;
  PolicyHeads heads;

  GaussianPolicy() = default;
  GaussianPolicy(int input_dim, const std::vector<int>& hidden, Activation activation, PolicyHeads heads,
                 double init_log_std, Rng& rng);

  int input_dim() const { return net.input_dim(); }
  VectorXd std() const { return log_std.array().exp(); }
  int parameter_count() const { return net.parameter_count() + static_cast<int>(log_std.size()); }
  VectorXd parameters() const;
  void set_parameters(const VectorXd& flat);
};

/// Critic: MLP with a single linear output.
struct ValueNetwork {
  Mlp net;

  ValueNetwork() = default;
  ValueNetwork(int input_dim, const std::vector<int>& hidden, Activation activation, Rng& rng);
};

// ---- checkpoints ----

void save_policy(std::ostream& out, const std::string& name, const GaussianPolicy& policy);
void save_value(std::ostream& out, const std::string& name, const ValueNetwork& value);
/// Throws std::runtime_error on a malformed or mismatched record.
GaussianPolicy load_policy(std::istream& in, const std::string& expected_name);
ValueNetwork load_value(std::istream& in, const std::string& expected_name);

}  // namespace wcs::nn
