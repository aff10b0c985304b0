#include "wcs/neuralnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace wcs::nn {

namespace {

MatrixXd activate(Activation a, const MatrixXd& z) {
  switch (a) {
    case Activation::tanh: return z.array().tanh().matrix();
    case Activation::relu: return z.cwiseMax(0.0);
    case Activation::identity: return z;
  }
  return z;
}

MatrixXd activation_derivative(Activation a, const MatrixXd& z) {
  switch (a) {
    case Activation::tanh: return (1.0 - z.array().tanh().square()).matrix();
    case Activation::relu: return (z.array() > 0.0).cast<double>().matrix();
    case Activation::identity: return MatrixXd::Ones(z.rows(), z.cols());
  }
  return MatrixXd::Ones(z.rows(), z.cols());
}

double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

std::string to_string(Activation activation) {
  switch (activation) {
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::identity: return "identity";
  }
  return "identity";
}

Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  if (name == "identity") return Activation::identity;
  throw std::invalid_argument("unknown activation: " + name);
}

Mlp::Mlp(const std::vector<int>& sizes, Activation hidden, Rng& rng) : hidden_(hidden) {
  if (sizes.size() < 2) throw std::invalid_argument("network needs an input and an output size");
  for (int s : sizes)
    if (s < 1) throw std::invalid_argument("network layer sizes must be positive");
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const int fan_in = sizes[l];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> init(-bound, bound);
    DenseLayer layer{MatrixXd(sizes[l + 1], fan_in), VectorXd(sizes[l + 1])};
    for (Eigen::Index j = 0; j < layer.weight.cols(); ++j)
      for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) layer.weight(i, j) = init(rng);
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = init(rng);
    layers_.push_back(std::move(layer));
  }
}

int Mlp::input_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.front().weight.cols()); }

int Mlp::output_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.back().weight.rows()); }

std::vector<int> Mlp::sizes() const {
  std::vector<int> s;
  if (layers_.empty()) return s;
  s.push_back(input_dim());
  for (const auto& layer : layers_) s.push_back(static_cast<int>(layer.weight.rows()));
  return s;
}

int Mlp::parameter_count() const {
  int n = 0;
  for (const auto& layer : layers_) n += static_cast<int>(layer.weight.size() + layer.bias.size());
  return n;
}

MatrixXd Mlp::forward(const MatrixXd& input) const {
  if (input.rows() != input_dim()) throw std::invalid_argument("dimension mismatch: network input");
  MatrixXd a = input;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    MatrixXd z = layers_[l].weight * a;
    z.colwise() += layers_[l].bias;
    a = l + 1 < layers_.size() ? activate(hidden_, z) : z;
  }
  return a;
}

MatrixXd Mlp::forward(const MatrixXd& input, ForwardCache& cache) const {
  if (input.rows() != input_dim()) throw std::invalid_argument("dimension mismatch: network input");
  cache.inputs.clear();
  cache.pre.clear();
  cache.owner = this;
  cache.version = version_;
  MatrixXd a = input;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    cache.inputs.push_back(a);
    MatrixXd z = layers_[l].weight * a;
    z.colwise() += layers_[l].bias;
    a = l + 1 < layers_.size() ? activate(hidden_, z) : z;
    cache.pre.push_back(std::move(z));
  }
  return a;
}

VectorXd Mlp::forward_one(const VectorXd& input) const { return forward(MatrixXd(input)).col(0); }

VectorXd Mlp::backward(const ForwardCache& cache, const MatrixXd& output_grad) const {
  if (cache.owner != this || cache.version != version_ || cache.pre.size() != layers_.size())
    throw std::logic_error("stale forward cache");
  if (output_grad.rows() != output_dim() || output_grad.cols() != cache.pre.back().cols())
    throw std::invalid_argument("dimension mismatch: output gradient");

  std::vector<MatrixXd> grad_w(layers_.size());
  std::vector<VectorXd> grad_b(layers_.size());
  MatrixXd delta = output_grad;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    if (k + 1 < layers_.size()) delta = delta.cwiseProduct(activation_derivative(hidden_, cache.pre[k]));
    grad_w[k] = delta * cache.inputs[k].transpose();
    grad_b[k] = delta.rowwise().sum();
    if (k > 0) delta = layers_[k].weight.transpose() * delta;
  }

  VectorXd flat(parameter_count());
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    flat.segment(offset, grad_w[l].size()) = Eigen::Map<const VectorXd>(grad_w[l].data(), grad_w[l].size());
    offset += grad_w[l].size();
    flat.segment(offset, grad_b[l].size()) = grad_b[l];
    offset += grad_b[l].size();
  }
  return flat;
}

VectorXd Mlp::parameters() const {
  VectorXd flat(parameter_count());
  Eigen::Index offset = 0;
  for (const auto& layer : layers_) {
    flat.segment(offset, layer.weight.size()) = Eigen::Map<const VectorXd>(layer.weight.data(), layer.weight.size());
    offset += layer.weight.size();
    flat.segment(offset, layer.bias.size()) = layer.bias;
    offset += layer.bias.size();
  }
  return flat;
}

void Mlp::set_parameters(const VectorXd& flat) {
  if (flat.size() != parameter_count()) throw std::invalid_argument("dimension mismatch: parameter vector");
  Eigen::Index offset = 0;
  for (auto& layer : layers_) {
    Eigen::Map<VectorXd>(layer.weight.data(), layer.weight.size()) = flat.segment(offset, layer.weight.size());
    offset += layer.weight.size();
    layer.bias = flat.segment(offset, layer.bias.size());
    offset += layer.bias.size();
  }
  touch();
}

DenseLayer& Mlp::layer(std::size_t i) {
  touch();
  return layers_.at(i);
}

void Mlp::scale_output_layer(double factor) {
  if (layers_.empty()) return;
  layers_.back().weight *= factor;
  touch();
}

void Mlp::touch() { ++version_; }

// ---- Gaussian policy helpers ----

VectorXd gaussian_sample(const VectorXd& mean, const VectorXd& std, Rng& rng) {
  if (mean.size() != std.size()) throw std::invalid_argument("dimension mismatch: mean vs std");
  if ((std.array() <= 0.0).any()) throw std::invalid_argument("standard deviations must be positive");
  std::normal_distribution<double> normal(0.0, 1.0);
  VectorXd sample(mean.size());
  for (Eigen::Index i = 0; i < mean.size(); ++i) sample(i) = mean(i) + std(i) * normal(rng);
  return sample;
}

GaussianLogProb gaussian_logprob_and_grad(const VectorXd& mean, const VectorXd& std, const VectorXd& action) {
  if (mean.size() != std.size() || mean.size() != action.size())
    throw std::invalid_argument("dimension mismatch: Gaussian log-density");
  if ((std.array() <= 0.0).any()) throw std::invalid_argument("standard deviations must be positive");
  const double half_log_two_pi = 0.5 * std::log(2.0 * std::numbers::pi);
  const VectorXd z = (action - mean).cwiseQuotient(std);
  GaussianLogProb out;
  out.log_density = -0.5 * z.squaredNorm() - std.array().log().sum() - half_log_two_pi * static_cast<double>(mean.size());
  out.d_mean = z.cwiseQuotient(std);
  out.d_log_std = (z.array().square() - 1.0).matrix();
  return out;
}

// ---- constrained output layers ----

VectorXd simplex_layer(const VectorXd& raw, double alpha_max) {
  if (raw.size() < 1) throw std::invalid_argument("simplex layer needs at least the slack logit");
  const VectorXd e = (raw.array() - raw.maxCoeff()).exp();
  return alpha_max * e.head(raw.size() - 1) / e.sum();
}

VectorXd simplex_layer_backward(const VectorXd& raw, double alpha_max, const VectorXd& grad_out) {
  if (grad_out.size() != raw.size() - 1) throw std::invalid_argument("dimension mismatch: simplex gradient");
  const VectorXd e = (raw.array() - raw.maxCoeff()).exp();
  const VectorXd s = e / e.sum();
  VectorXd g = VectorXd::Zero(raw.size());
  g.head(grad_out.size()) = alpha_max * grad_out;
  // softmax VJP: s .* (g - <g, s>)
  return s.cwiseProduct((g.array() - g.dot(s)).matrix());
}

double interval_layer(double raw, double u_min, double u_max) {
  if (!(u_min < u_max)) throw std::invalid_argument("interval layer requires u_min < u_max");
  // rounding can step past an end point once the sigmoid saturates
  return std::clamp(u_min + (u_max - u_min) * sigmoid(raw), u_min, u_max);
}

double interval_layer_backward(double raw, double u_min, double u_max, double grad_out) {
  if (!(u_min < u_max)) throw std::invalid_argument("interval layer requires u_min < u_max");
  const double s = sigmoid(raw);
  return grad_out * (u_max - u_min) * s * (1.0 - s);
}

double softplus_layer(double raw, double scale) {
  return scale * (raw > 0.0 ? raw + std::log1p(std::exp(-raw)) : std::log1p(std::exp(raw)));
}

double softplus_layer_backward(double raw, double scale, double grad_out) { return grad_out * scale * sigmoid(raw); }

std::string to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::simplex: return "simplex";
    case HeadKind::softplus: return "softplus";
    case HeadKind::interval: return "interval";
    case HeadKind::identity: return "identity";
  }
  return "identity";
}

HeadKind head_kind_from_string(const std::string& name) {
  if (name == "simplex") return HeadKind::simplex;
  if (name == "softplus") return HeadKind::softplus;
  if (name == "interval") return HeadKind::interval;
  if (name == "identity") return HeadKind::identity;
  throw std::invalid_argument("unknown head kind: " + name);
}

int PolicyHeads::raw_dim() const {
  int n = 0;
  for (const auto& b : blocks) n += b.raw_dim();
  return n;
}

int PolicyHeads::output_dim() const {
  int n = 0;
  for (const auto& b : blocks) n += b.count;
  return n;
}

VectorXd PolicyHeads::transform(const VectorXd& raw) const {
  if (raw.size() != raw_dim()) throw std::invalid_argument("dimension mismatch: raw policy output");
  VectorXd out(output_dim());
  Eigen::Index r = 0, o = 0;
  for (const auto& b : blocks) {
    switch (b.kind) {
      case HeadKind::simplex:
        out.segment(o, b.count) = simplex_layer(raw.segment(r, b.raw_dim()), b.param_a);
        break;
      case HeadKind::softplus:
        for (int i = 0; i < b.count; ++i) out(o + i) = softplus_layer(raw(r + i), b.param_a);
        break;
      case HeadKind::interval:
        for (int i = 0; i < b.count; ++i) out(o + i) = interval_layer(raw(r + i), b.param_a, b.param_b);
        break;
      case HeadKind::identity:
        out.segment(o, b.count) = raw.segment(r, b.count);
        break;
    }
    r += b.raw_dim();
    o += b.count;
  }
  return out;
}

VectorXd PolicyHeads::transform_backward(const VectorXd& raw, const VectorXd& grad_out) const {
  if (raw.size() != raw_dim() || grad_out.size() != output_dim())
    throw std::invalid_argument("dimension mismatch: head gradient");
  VectorXd g(raw_dim());
  Eigen::Index r = 0, o = 0;
  for (const auto& b : blocks) {
    switch (b.kind) {
      case HeadKind::simplex:
        g.segment(r, b.raw_dim()) = simplex_layer_backward(raw.segment(r, b.raw_dim()), b.param_a, grad_out.segment(o, b.count));
        break;
      case HeadKind::softplus:
        for (int i = 0; i < b.count; ++i) g(r + i) = softplus_layer_backward(raw(r + i), b.param_a, grad_out(o + i));
        break;
      case HeadKind::interval:
        for (int i = 0; i < b.count; ++i)
          g(r + i) = interval_layer_backward(raw(r + i), b.param_a, b.param_b, grad_out(o + i));
        break;
      case HeadKind::identity:
        g.segment(r, b.count) = grad_out.segment(o, b.count);
        break;
    }
    r += b.raw_dim();
    o += b.count;
  }
  return g;
}

GaussianPolicy::GaussianPolicy(int input_dim, const std::vector<int>& hidden, Activation activation, PolicyHeads heads_,
                               double init_log_std, Rng& rng)
    : heads(std::move(heads_)) {
  std::vector<int> sizes{input_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(heads.raw_dim());
  net = Mlp(sizes, activation, rng);
  log_std = VectorXd::Constant(heads.raw_dim(), init_log_std);
}

VectorXd GaussianPolicy::parameters() const {
  VectorXd flat(parameter_count());
  flat.head(net.parameter_count()) = net.parameters();
  flat.tail(log_std.size()) = log_std;
  return flat;
}

void GaussianPolicy::set_parameters(const VectorXd& flat) {
  if (flat.size() != parameter_count()) throw std::invalid_argument("dimension mismatch: policy parameters");
  net.set_parameters(flat.head(net.parameter_count()));
  log_std = flat.tail(log_std.size());
}

ValueNetwork::ValueNetwork(int input_dim, const std::vector<int>& hidden, Activation activation, Rng& rng) {
  std::vector<int> sizes{input_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  net = Mlp(sizes, activation, rng);
}

// ---- checkpoints ----

namespace {

constexpr const char* kNetworkMagic = "wcs-network";
constexpr int kNetworkVersion = 1;

void write_values(std::ostream& out, const VectorXd& v) {
  out << v.size();
  for (Eigen::Index i = 0; i < v.size(); ++i) out << ' ' << std::hexfloat << v(i) << std::defaultfloat;
  out << '\n';
}

std::string next_token(std::istream& in) {
  std::string tok;
  if (!(in >> tok)) throw std::runtime_error("checkpoint truncated");
  return tok;
}

void expect(std::istream& in, const std::string& word) {
  const auto tok = next_token(in);
  if (tok != word) throw std::runtime_error("checkpoint: expected '" + word + "', found '" + tok + "'");
}

double parse_double(const std::string& tok) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0') throw std::runtime_error("checkpoint: bad number '" + tok + "'");
  return v;
}

long parse_long(const std::string& tok) {
  char* end = nullptr;
  const long v = std::strtol(tok.c_str(), &end, 10);
  if (end == tok.c_str() || *end != '\0') throw std::runtime_error("checkpoint: bad integer '" + tok + "'");
  return v;
}

VectorXd read_values(std::istream& in) {
  const long n = parse_long(next_token(in));
  if (n < 0) throw std::runtime_error("checkpoint: negative length");
  VectorXd v(n);
  for (long i = 0; i < n; ++i) v(i) = parse_double(next_token(in));
  return v;
}

void write_mlp(std::ostream& out, const Mlp& net) {
  out << "activation " << to_string(net.hidden_activation()) << '\n';
  const auto sizes = net.sizes();
  out << "layers " << sizes.size();
  for (int s : sizes) out << ' ' << s;
  out << '\n';
  out << "params ";
  write_values(out, net.parameters());
}

Mlp read_mlp(std::istream& in) {
  expect(in, "activation");
  const auto activation = activation_from_string(next_token(in));
  expect(in, "layers");
  const long count = parse_long(next_token(in));
  std::vector<int> sizes;
  for (long i = 0; i < count; ++i) sizes.push_back(static_cast<int>(parse_long(next_token(in))));
  Rng scratch(0);
  Mlp net(sizes, activation, scratch);
  expect(in, "params");
  net.set_parameters(read_values(in));
  return net;
}

void read_header(std::istream& in, const std::string& kind, const std::string& expected_name) {
  expect(in, kNetworkMagic);
  const long version = parse_long(next_token(in));
  if (version != kNetworkVersion) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  expect(in, kind);
  const auto name = next_token(in);
  if (name != expected_name) throw std::runtime_error("checkpoint: expected network '" + expected_name + "', found '" + name + "'");
}

}  // namespace

void save_policy(std::ostream& out, const std::string& name, const GaussianPolicy& policy) {
  out << kNetworkMagic << ' ' << kNetworkVersion << " policy " << name << '\n';
  write_mlp(out, policy.net);
  out << "heads " << policy.heads.blocks.size() << '\n';
  for (const auto& b : policy.heads.blocks)
    out << "head " << to_string(b.kind) << ' ' << b.count << ' ' << std::hexfloat << b.param_a << ' ' << b.param_b
        << std::defaultfloat << '\n';
  out << "log_std ";
  write_values(out, policy.log_std);
}

void save_value(std::ostream& out, const std::string& name, const ValueNetwork& value) {
  out << kNetworkMagic << ' ' << kNetworkVersion << " value " << name << '\n';
  write_mlp(out, value.net);
}

GaussianPolicy load_policy(std::istream& in, const std::string& expected_name) {
  read_header(in, "policy", expected_name);
  GaussianPolicy policy;
  policy.net = read_mlp(in);
  expect(in, "heads");
  const long count = parse_long(next_token(in));
  for (long i = 0; i < count; ++i) {
    expect(in, "head");
    HeadBlock b;
    b.kind = head_kind_from_string(next_token(in));
    b.count = static_cast<int>(parse_long(next_token(in)));
    b.param_a = parse_double(next_token(in));
    b.param_b = parse_double(next_token(in));
    policy.heads.blocks.push_back(b);
  }
  expect(in, "log_std");
  policy.log_std = read_values(in);
  if (policy.log_std.size() != policy.heads.raw_dim() || policy.net.output_dim() != policy.heads.raw_dim())
    throw std::runtime_error("checkpoint: policy heads do not match the network output");
  return policy;
}

ValueNetwork load_value(std::istream& in, const std::string& expected_name) {
  read_header(in, "value", expected_name);
  ValueNetwork value;
  value.net = read_mlp(in);
  if (value.net.output_dim() != 1) throw std::runtime_error("checkpoint: value network must have one output");
  return value;
}

}  // namespace wcs::nn
