#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace dtmdp {

/// Fully connected network with ReLU hidden layers and a scalar linear
/// output. Parameters live in one flat vector: per layer the row-major
/// weight matrix (out x in) followed by the bias.
class Mlp {
 public:
  /// Activations of a forward pass, kept for backward().
  struct Tape {
    std::vector<std::vector<double>> activations;
  };

  Mlp() = default;
  /// `layer_dims` = {input, hidden..., 1}. Uniform(+-1/sqrt(fan_in)) init.
  Mlp(std::vector<std::size_t> layer_dims, std::uint64_t seed);
  /// Three fully connected layers: input -> hidden -> hidden -> 1.
  static Mlp three_layer(std::size_t input_dim, std::size_t hidden_units, std::uint64_t seed);

  const std::vector<std::size_t>& layer_dims() const noexcept { return dims_; }
  std::size_t input_dim() const noexcept { return dims_.empty() ? 0 : dims_.front(); }
  std::size_t param_count() const noexcept { return params_.size(); }
  std::span<const double> params() const noexcept { return params_; }
  std::span<double> params() noexcept { return params_; }

  /// Throws Error(DimensionMismatch) when x has the wrong width.
  double forward(std::span<const double> x) const;
  double forward(std::span<const double> x, Tape& tape) const;
  /// Accumulates grad_out * d(output)/d(params) into `grad`.
  void backward(const Tape& tape, double grad_out, std::span<double> grad) const;

  bool operator==(const Mlp&) const = default;

 private:
  std::vector<std::size_t> dims_;
  std::vector<double> params_;
};

/// Adaptive-moment first-order optimizer over a flat parameter vector.
class Adam {
 public:
  Adam(std::size_t n, double step_size, double beta1 = 0.9, double beta2 = 0.999,
       double epsilon = 1e-8);
  void step(std::span<double> params, std::span<const double> grad);

 private:
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  long long t_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

nlohmann::json mlp_to_json(const Mlp& net);
Mlp mlp_from_json(const nlohmann::json& j);

}  // namespace dtmdp
