#pragma once

// Minimal feed-forward binary classifier: ReLU hidden layers, one sigmoid
// output unit, exact backprop for the three local objectives the strategies
// use (BCE, BCE + proximal, KL to a teacher), and SGD/Adam.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "dtfl/random.hpp"

namespace dtfl::nn {

/// Probabilities are clamped to [floor, 1 - floor] before any log.
inline constexpr double kProbabilityFloor = 1e-12;

/// layer_sizes = {input d, hidden..., 1}. Hidden layers use ReLU, the output
/// unit a sigmoid.
struct ModelArch {
  std::vector<std::size_t> layer_sizes;

  static ModelArch mlp(std::size_t input, std::vector<std::size_t> hidden);

  void validate() const;
  std::size_t input_size() const { return layer_sizes.front(); }
  /// Number of weight layers (hidden + output).
  std::size_t num_layers() const { return layer_sizes.size() - 1; }
  std::size_t fan_in(std::size_t layer) const { return layer_sizes[layer]; }
  std::size_t fan_out(std::size_t layer) const { return layer_sizes[layer + 1]; }
  std::size_t layer_param_count(std::size_t layer) const;
  std::size_t param_count() const;

  friend bool operator==(const ModelArch&, const ModelArch&) = default;
};

/// Row-major feature matrix view; `rows * cols == values.size()`.
struct BatchView {
  std::span<const double> values;
  std::size_t rows = 0;
  std::size_t cols = 0;

  const double* row(std::size_t i) const { return values.data() + i * cols; }
};

/// All weights and biases of one model in a single contiguous buffer.
/// Layer l stores its weight matrix (fan_out x fan_in, row-major) followed by
/// its bias vector, so element-wise algebra runs over `values()` directly and
/// per-layer operations use `layer(l)`.
class LayeredParams {
 public:
  LayeredParams() = default;
  /// Zero-filled parameters for `arch`.
  explicit LayeredParams(ModelArch arch);

  /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  static LayeredParams initialize(const ModelArch& arch, Rng& rng);

  const ModelArch& arch() const { return arch_; }
  std::size_t num_layers() const { return arch_.num_layers(); }
  std::size_t size() const { return values_.size(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  /// Weights and bias of layer `l` as one span.
  std::span<double> layer(std::size_t l);
  std::span<const double> layer(std::size_t l) const;
  std::span<double> weights(std::size_t l);
  std::span<const double> weights(std::size_t l) const;
  std::span<double> bias(std::size_t l);
  std::span<const double> bias(std::size_t l) const;

  bool same_shape(const LayeredParams& other) const { return arch_ == other.arch_; }
  bool all_finite() const;
  /// Bitwise equality of every scalar (distinguishes -0.0 from 0.0).
  bool bit_equal(const LayeredParams& other) const;

 private:
  ModelArch arch_;
  std::vector<double> values_;
  std::vector<std::size_t> offsets_;  // start of layer l; offsets_.back() == size()
};

void require_same_shape(const LayeredParams& a, const LayeredParams& b, std::string_view what);

// Element-wise algebra. All operands must share an architecture.
void axpy(double a, const LayeredParams& x, LayeredParams& y);  // y += a*x
void scale(LayeredParams& x, double a);
LayeredParams difference(const LayeredParams& a, const LayeredParams& b);  // a - b
double dot(const LayeredParams& a, const LayeredParams& b);
double squared_norm(const LayeredParams& a);

/// Sum of `items` with every coordinate accumulated in ascending value order,
/// so the result does not depend on the order of the list.
LayeredParams canonical_sum(std::span<const LayeredParams> items);
/// Arithmetic mean; permutation-invariant bit for bit. Throws on empty input.
LayeredParams mean(std::span<const LayeredParams> items);
/// sum_i weights[i] * items[i], permutation-invariant in (item, weight) pairs.
LayeredParams weighted_sum(std::span<const LayeredParams> items, std::span<const double> weights);

/// Output logits (pre-sigmoid), one per row.
std::vector<double> logits(const LayeredParams& params, BatchView batch);
/// P(anomalous | x) per row, in (0, 1).
std::vector<double> forward(const LayeredParams& params, BatchView batch);

struct LossAndGrad {
  double loss = 0.0;
  LayeredParams grad;
};

/// Mean binary cross-entropy and its gradient. Labels must be 0 or 1.
LossAndGrad bce_loss_and_grad(const LayeredParams& params, BatchView batch,
                              std::span<const std::uint8_t> labels);

/// Mean over rows of KL(teacher || student) for the two-class distribution
/// (q, 1-q) vs (p, 1-p). Gradient is with respect to the student only.
LossAndGrad kl_loss_and_grad(const LayeredParams& student, BatchView batch,
                             std::span<const double> teacher_probs);

/// Gradient of (mu/2) * ||params - anchor||^2, i.e. mu * (params - anchor).
LayeredParams proximal_term_grad(const LayeredParams& params, const LayeredParams& anchor, double mu);

/// Adds the proximal penalty and its gradient to an existing loss.
void add_proximal(LossAndGrad& lg, const LayeredParams& params, const LayeredParams& anchor, double mu);

enum class OptimizerKind { Sgd, Adam };

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

/// Optimizer state for one parameter set. Adam moment buffers are sized on
/// construction; SGD carries none.
class Optimizer {
 public:
  Optimizer(OptimizerSpec spec, const ModelArch& arch);

  /// In-place update. Throws NumericError on a non-finite gradient entry,
  /// leaving `params` untouched.
  void step(LayeredParams& params, const LayeredParams& grad);

  const OptimizerSpec& spec() const { return spec_; }
  std::size_t steps() const { return steps_; }

 private:
  OptimizerSpec spec_;
  ModelArch arch_;
  std::vector<double> first_moment_;
  std::vector<double> second_moment_;
  std::size_t steps_ = 0;
};

}  // namespace dtfl::nn
