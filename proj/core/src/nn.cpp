#include "dtfl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "dtfl/errors.hpp"

namespace dtfl::nn {

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double clamp_prob(double p) { return std::clamp(p, kProbabilityFloor, 1.0 - kProbabilityFloor); }

// -log(sigmoid(z)) computed from the logit, capped at -log(floor) like the
// clamped probability it stands for.
double neg_log_sigmoid(double z) {
  const double softplus = std::max(-z, 0.0) + std::log1p(std::exp(-std::abs(z)));
  return std::min(softplus, -std::log(kProbabilityFloor));
}

void check_batch(const LayeredParams& params, BatchView batch) {
  if (params.size() == 0) throw InvalidInput("parameters are empty");
  if (batch.cols != params.arch().input_size())
    throw InvalidInput("batch has " + std::to_string(batch.cols) + " columns, model expects " +
                       std::to_string(params.arch().input_size()));
  if (batch.values.size() != batch.rows * batch.cols)
    throw InvalidInput("batch buffer size does not match rows x cols");
}

// Activations of every layer for the whole batch; acts[0] is the input copy,
// acts[l] (l >= 1) the post-activation output of weight layer l-1, and the
// last entry holds raw logits.
std::vector<std::vector<double>> run_layers(const LayeredParams& params, BatchView batch) {
  const ModelArch& arch = params.arch();
  const std::size_t num_layers = arch.num_layers();
  std::vector<std::vector<double>> acts(num_layers + 1);
  acts[0].assign(batch.values.begin(), batch.values.end());
  for (std::size_t l = 0; l < num_layers; ++l) {
    const std::size_t in = arch.fan_in(l);
    const std::size_t out = arch.fan_out(l);
    const auto w = params.weights(l);
    const auto b = params.bias(l);
    const std::vector<double>& prev = acts[l];
    std::vector<double>& cur = acts[l + 1];
    cur.assign(batch.rows * out, 0.0);
    const bool hidden = l + 1 < num_layers;
    for (std::size_t r = 0; r < batch.rows; ++r) {
      const double* x = prev.data() + r * in;
      double* y = cur.data() + r * out;
      for (std::size_t o = 0; o < out; ++o) {
        const double* wrow = w.data() + o * in;
        double z = b[o];
        for (std::size_t i = 0; i < in; ++i) z += wrow[i] * x[i];
        y[o] = hidden ? std::max(z, 0.0) : z;
      }
    }
  }
  return acts;
}

// Backprop of dL/dlogit (one value per row) through cached activations.
LayeredParams backprop(const LayeredParams& params, const std::vector<std::vector<double>>& acts,
                       std::vector<double> delta, std::size_t rows) {
  const ModelArch& arch = params.arch();
  LayeredParams grad(arch);
  for (std::size_t l = arch.num_layers(); l-- > 0;) {
    const std::size_t in = arch.fan_in(l);
    const std::size_t out = arch.fan_out(l);
    const std::vector<double>& input = acts[l];
    auto gw = grad.weights(l);
    auto gb = grad.bias(l);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* x = input.data() + r * in;
      const double* d = delta.data() + r * out;
      for (std::size_t o = 0; o < out; ++o) {
        if (d[o] == 0.0) continue;
        double* grow = gw.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) grow[i] += d[o] * x[i];
        gb[o] += d[o];
      }
    }
    if (l == 0) break;
    // delta for the previous layer; ReLU derivative taken from its output.
    const auto w = params.weights(l);
    std::vector<double> prev_delta(rows * in, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* d = delta.data() + r * out;
      const double* a = input.data() + r * in;
      double* pd = prev_delta.data() + r * in;
      for (std::size_t o = 0; o < out; ++o) {
        if (d[o] == 0.0) continue;
        const double* wrow = w.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) pd[i] += d[o] * wrow[i];
      }
      for (std::size_t i = 0; i < in; ++i)
        if (a[i] <= 0.0) pd[i] = 0.0;
    }
    delta = std::move(prev_delta);
  }
  return grad;
}

}  // namespace

ModelArch ModelArch::mlp(std::size_t input, std::vector<std::size_t> hidden) {
  ModelArch arch;
  arch.layer_sizes.push_back(input);
  arch.layer_sizes.insert(arch.layer_sizes.end(), hidden.begin(), hidden.end());
  arch.layer_sizes.push_back(1);
  arch.validate();
  return arch;
}

void ModelArch::validate() const {
  if (layer_sizes.size() < 3) throw InvalidInput("architecture needs at least one hidden layer");
  if (layer_sizes.back() != 1) throw InvalidInput("output layer must have exactly one unit");
  for (std::size_t s : layer_sizes)
    if (s == 0) throw InvalidInput("layer sizes must be positive");
}

std::size_t ModelArch::layer_param_count(std::size_t layer) const {
  return fan_in(layer) * fan_out(layer) + fan_out(layer);
}

std::size_t ModelArch::param_count() const {
  std::size_t total = 0;
  for (std::size_t l = 0; l < num_layers(); ++l) total += layer_param_count(l);
  return total;
}

LayeredParams::LayeredParams(ModelArch arch) : arch_(std::move(arch)) {
  arch_.validate();
  offsets_.reserve(arch_.num_layers() + 1);
  std::size_t offset = 0;
  for (std::size_t l = 0; l < arch_.num_layers(); ++l) {
    offsets_.push_back(offset);
    offset += arch_.layer_param_count(l);
  }
  offsets_.push_back(offset);
  values_.assign(offset, 0.0);
}

LayeredParams LayeredParams::initialize(const ModelArch& arch, Rng& rng) {
  LayeredParams p(arch);
  for (std::size_t l = 0; l < arch.num_layers(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(arch.fan_in(l)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : p.layer(l)) v = dist(rng);
  }
  return p;
}

std::span<double> LayeredParams::layer(std::size_t l) {
  return std::span<double>(values_).subspan(offsets_[l], offsets_[l + 1] - offsets_[l]);
}
std::span<const double> LayeredParams::layer(std::size_t l) const {
  return std::span<const double>(values_).subspan(offsets_[l], offsets_[l + 1] - offsets_[l]);
}
std::span<double> LayeredParams::weights(std::size_t l) {
  return layer(l).first(arch_.fan_in(l) * arch_.fan_out(l));
}
std::span<const double> LayeredParams::weights(std::size_t l) const {
  return layer(l).first(arch_.fan_in(l) * arch_.fan_out(l));
}
std::span<double> LayeredParams::bias(std::size_t l) { return layer(l).last(arch_.fan_out(l)); }
std::span<const double> LayeredParams::bias(std::size_t l) const { return layer(l).last(arch_.fan_out(l)); }

bool LayeredParams::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

bool LayeredParams::bit_equal(const LayeredParams& other) const {
  return same_shape(other) &&
         std::memcmp(values_.data(), other.values_.data(), values_.size() * sizeof(double)) == 0;
}

void require_same_shape(const LayeredParams& a, const LayeredParams& b, std::string_view what) {
  if (!a.same_shape(b)) throw InvalidInput(std::string(what) + ": parameter architectures differ");
}

void axpy(double a, const LayeredParams& x, LayeredParams& y) {
  require_same_shape(x, y, "axpy");
  auto xv = x.values();
  auto yv = y.values();
  for (std::size_t i = 0; i < yv.size(); ++i) yv[i] += a * xv[i];
}

void scale(LayeredParams& x, double a) {
  for (double& v : x.values()) v *= a;
}

LayeredParams difference(const LayeredParams& a, const LayeredParams& b) {
  require_same_shape(a, b, "difference");
  LayeredParams out = a;
  auto ov = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] -= bv[i];
  return out;
}

double dot(const LayeredParams& a, const LayeredParams& b) {
  require_same_shape(a, b, "dot");
  auto av = a.values();
  auto bv = b.values();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  return s;
}

double squared_norm(const LayeredParams& a) { return dot(a, a); }

LayeredParams canonical_sum(std::span<const LayeredParams> items) {
  if (items.empty()) throw InvalidInput("cannot sum an empty parameter list");
  for (const auto& item : items) require_same_shape(items.front(), item, "canonical_sum");
  LayeredParams out(items.front().arch());
  auto ov = out.values();
  std::vector<double> column(items.size());
  for (std::size_t i = 0; i < ov.size(); ++i) {
    for (std::size_t k = 0; k < items.size(); ++k) column[k] = items[k].values()[i];
    std::sort(column.begin(), column.end());
    double s = 0.0;
    for (double v : column) s += v;
    ov[i] = s;
  }
  return out;
}

LayeredParams mean(std::span<const LayeredParams> items) {
  if (items.empty()) throw InvalidInput("cannot average an empty parameter list");
  if (items.size() == 1) return items.front();
  for (const auto& item : items) require_same_shape(items.front(), item, "mean");
  LayeredParams out(items.front().arch());
  auto ov = out.values();
  const double n = static_cast<double>(items.size());
  std::vector<double> column(items.size());
  for (std::size_t i = 0; i < ov.size(); ++i) {
    for (std::size_t k = 0; k < items.size(); ++k) column[k] = items[k].values()[i];
    std::sort(column.begin(), column.end());
    // Identical entries average to themselves exactly.
    if (column.front() == column.back()) {
      ov[i] = column.front();
      continue;
    }
    double s = 0.0;
    for (double v : column) s += v;
    ov[i] = s / n;
  }
  return out;
}

LayeredParams weighted_sum(std::span<const LayeredParams> items, std::span<const double> weights) {
  if (items.empty()) throw InvalidInput("cannot combine an empty parameter list");
  if (items.size() != weights.size()) throw InvalidInput("weighted_sum: one weight per item required");
  for (const auto& item : items) require_same_shape(items.front(), item, "weighted_sum");
  LayeredParams out(items.front().arch());
  auto ov = out.values();
  std::vector<double> column(items.size());
  for (std::size_t i = 0; i < ov.size(); ++i) {
    for (std::size_t k = 0; k < items.size(); ++k) column[k] = weights[k] * items[k].values()[i];
    std::sort(column.begin(), column.end());
    double s = 0.0;
    for (double v : column) s += v;
    ov[i] = s;
  }
  return out;
}

std::vector<double> logits(const LayeredParams& params, BatchView batch) {
  check_batch(params, batch);
  return run_layers(params, batch).back();
}

std::vector<double> forward(const LayeredParams& params, BatchView batch) {
  std::vector<double> out = logits(params, batch);
  for (double& z : out) z = sigmoid(z);
  return out;
}

LossAndGrad bce_loss_and_grad(const LayeredParams& params, BatchView batch,
                              std::span<const std::uint8_t> labels) {
  check_batch(params, batch);
  if (batch.rows == 0) throw InvalidInput("bce: empty batch");
  if (labels.size() != batch.rows) throw InvalidInput("bce: one label per row required");
  auto acts = run_layers(params, batch);
  const std::vector<double>& z = acts.back();
  const double n = static_cast<double>(batch.rows);
  std::vector<double> delta(batch.rows);
  double loss = 0.0;
  for (std::size_t r = 0; r < batch.rows; ++r) {
    if (labels[r] > 1) throw InvalidInput("bce: labels must be 0 or 1");
    const double p = sigmoid(z[r]);
    loss += labels[r] ? neg_log_sigmoid(z[r]) : neg_log_sigmoid(-z[r]);
    delta[r] = (p - labels[r]) / n;
  }
  return {loss / n, backprop(params, acts, std::move(delta), batch.rows)};
}

LossAndGrad kl_loss_and_grad(const LayeredParams& student, BatchView batch,
                             std::span<const double> teacher_probs) {
  check_batch(student, batch);
  if (batch.rows == 0) throw InvalidInput("kl: empty batch");
  if (teacher_probs.size() != batch.rows) throw InvalidInput("kl: one teacher probability per row required");
  auto acts = run_layers(student, batch);
  const std::vector<double>& z = acts.back();
  const double n = static_cast<double>(batch.rows);
  std::vector<double> delta(batch.rows);
  double loss = 0.0;
  for (std::size_t r = 0; r < batch.rows; ++r) {
    const double raw = teacher_probs[r];
    if (!(raw >= 0.0 && raw <= 1.0)) throw InvalidInput("kl: teacher probability outside [0, 1]");
    const double q = clamp_prob(raw);
    const double p = sigmoid(z[r]);
    loss += q * (std::log(q) + neg_log_sigmoid(z[r])) + (1.0 - q) * (std::log1p(-q) + neg_log_sigmoid(-z[r]));
    delta[r] = (p - q) / n;
  }
  return {loss / n, backprop(student, acts, std::move(delta), batch.rows)};
}

LayeredParams proximal_term_grad(const LayeredParams& params, const LayeredParams& anchor, double mu) {
  require_same_shape(params, anchor, "proximal term");
  if (!(mu >= 0.0)) throw InvalidInput("proximal mu must be non-negative");
  LayeredParams g = difference(params, anchor);
  scale(g, mu);
  return g;
}

void add_proximal(LossAndGrad& lg, const LayeredParams& params, const LayeredParams& anchor, double mu) {
  LayeredParams g = proximal_term_grad(params, anchor, mu);
  if (mu == 0.0) return;
  const LayeredParams diff = difference(params, anchor);
  lg.loss += 0.5 * mu * squared_norm(diff);
  axpy(1.0, g, lg.grad);
}

void OptimizerSpec::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw InvalidInput("learning rate must be positive");
  if (kind == OptimizerKind::Adam) {
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw InvalidInput("adam betas must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw InvalidInput("adam epsilon must be positive");
  }
}

Optimizer::Optimizer(OptimizerSpec spec, const ModelArch& arch) : spec_(spec), arch_(arch) {
  spec_.validate();
  if (spec_.kind == OptimizerKind::Adam) {
    first_moment_.assign(arch_.param_count(), 0.0);
    second_moment_.assign(arch_.param_count(), 0.0);
  }
}

void Optimizer::step(LayeredParams& params, const LayeredParams& grad) {
  if (params.arch() != arch_ || grad.arch() != arch_)
    throw InvalidInput("optimizer step: parameter shapes do not match optimizer state");
  if (!grad.all_finite())
    throw NumericError("non-finite gradient at optimizer step " + std::to_string(steps_ + 1));
  auto theta = params.values();
  auto g = grad.values();
  ++steps_;
  if (spec_.kind == OptimizerKind::Sgd) {
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= spec_.learning_rate * g[i];
    return;
  }
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(spec_.beta1, t);
  const double c2 = 1.0 - std::pow(spec_.beta2, t);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    first_moment_[i] = spec_.beta1 * first_moment_[i] + (1.0 - spec_.beta1) * g[i];
    second_moment_[i] = spec_.beta2 * second_moment_[i] + (1.0 - spec_.beta2) * g[i] * g[i];
    const double m_hat = first_moment_[i] / c1;
    const double v_hat = second_moment_[i] / c2;
    theta[i] -= spec_.learning_rate * m_hat / (std::sqrt(v_hat) + spec_.epsilon);
  }
}

}  // namespace dtfl::nn
