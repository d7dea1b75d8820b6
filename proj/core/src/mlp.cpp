#include "dtmdp/mlp.hpp"

#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "dtmdp/error.hpp"

namespace dtmdp {

Mlp::Mlp(std::vector<std::size_t> layer_dims, std::uint64_t seed) : dims_(std::move(layer_dims)) {
  if (dims_.size() < 2 || dims_.back() != 1) {
    throw Error(ErrorCode::InvalidArgument, "MLP needs >= 2 layer dims ending in 1");
  }
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) n += dims_[l + 1] * dims_[l] + dims_[l + 1];
  params_.resize(n);
  std::mt19937_64 rng(seed);
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims_[l]));
    std::uniform_real_distribution<double> u(-bound, bound);
    const std::size_t count = dims_[l + 1] * dims_[l] + dims_[l + 1];
    for (std::size_t i = 0; i < count; ++i) params_[offset + i] = u(rng);
    offset += count;
  }
}

Mlp Mlp::three_layer(std::size_t input_dim, std::size_t hidden_units, std::uint64_t seed) {
  return Mlp({input_dim, hidden_units, hidden_units, 1}, seed);
}

double Mlp::forward(std::span<const double> x) const {
  Tape tape;
  return forward(x, tape);
}

double Mlp::forward(std::span<const double> x, Tape& tape) const {
  if (x.size() != input_dim()) {
    throw Error(ErrorCode::DimensionMismatch, "network input width " + std::to_string(x.size()) +
                                                  " != " + std::to_string(input_dim()));
  }
  const std::size_t layers = dims_.size() - 1;
  tape.activations.resize(layers + 1);
  tape.activations[0].assign(x.begin(), x.end());
  std::size_t offset = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = dims_[l];
    const std::size_t out = dims_[l + 1];
    const double* w = params_.data() + offset;
    const double* b = w + out * in;
    const auto& a = tape.activations[l];
    auto& z = tape.activations[l + 1];
    z.resize(out);
    const bool hidden = l + 1 < layers;
    for (std::size_t o = 0; o < out; ++o) {
      double acc = b[o];
      const double* row = w + o * in;
      for (std::size_t i = 0; i < in; ++i) acc += row[i] * a[i];
      z[o] = hidden && acc < 0.0 ? 0.0 : acc;
    }
    offset += out * in + out;
  }
  return tape.activations.back()[0];
}

void Mlp::backward(const Tape& tape, double grad_out, std::span<double> grad) const {
  const std::size_t layers = dims_.size() - 1;
  std::vector<std::size_t> offsets(layers);
  std::size_t offset = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    offsets[l] = offset;
    offset += dims_[l + 1] * dims_[l] + dims_[l + 1];
  }
  std::vector<double> delta{grad_out};
  std::vector<double> prev;
  for (std::size_t l = layers; l-- > 0;) {
    const std::size_t in = dims_[l];
    const std::size_t out = dims_[l + 1];
    const double* w = params_.data() + offsets[l];
    double* gw = grad.data() + offsets[l];
    double* gb = gw + out * in;
    const auto& a = tape.activations[l];
    for (std::size_t o = 0; o < out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      gb[o] += d;
      double* grow = gw + o * in;
      for (std::size_t i = 0; i < in; ++i) grow[i] += d * a[i];
    }
    if (l == 0) break;
    prev.assign(in, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      const double* row = w + o * in;
      for (std::size_t i = 0; i < in; ++i) prev[i] += d * row[i];
    }
    // ReLU derivative: the stored activation is zero exactly where inactive.
    for (std::size_t i = 0; i < in; ++i) {
      if (a[i] <= 0.0) prev[i] = 0.0;
    }
    delta.swap(prev);
  }
}

Adam::Adam(std::size_t n, double step_size, double beta1, double beta2, double epsilon)
    : lr_(step_size), beta1_(beta1), beta2_(beta2), eps_(epsilon), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grad) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

nlohmann::json mlp_to_json(const Mlp& net) {
  return nlohmann::json{{"layer_dims", net.layer_dims()},
                        {"params", std::vector<double>(net.params().begin(), net.params().end())}};
}

Mlp mlp_from_json(const nlohmann::json& j) {
  Mlp net(j.at("layer_dims").get<std::vector<std::size_t>>(), 0);
  const auto params = j.at("params").get<std::vector<double>>();
  if (params.size() != net.param_count()) {
    throw Error(ErrorCode::DimensionMismatch, "parameter count does not match layer_dims");
  }
  std::copy(params.begin(), params.end(), net.params().begin());
  return net;
}

}  // namespace dtmdp
