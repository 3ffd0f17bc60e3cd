#include "dtfl/methods.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>

#include "dtfl/errors.hpp"
#include "dtfl/random.hpp"

namespace dtfl::methods {

namespace {

// Client id used for twin-side training streams; never a real client.
constexpr std::size_t kTwinTrainer = std::numeric_limits<std::size_t>::max();

const data::Dataset& require_twin(const fl::Federation& federation, const std::string& strategy) {
  if (!federation.twin || federation.twin->empty())
    throw InvalidInput(strategy + " needs a twin dataset");
  return *federation.twin;
}

// Symmetric S = W W^T for a row-major (rows x cols) matrix.
std::vector<double> gram(std::span<const double> w, std::size_t rows, std::size_t cols) {
  std::vector<double> s(rows * rows, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = i; j < rows; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < cols; ++c) acc += w[i * cols + c] * w[j * cols + c];
      s[i * rows + j] = s[j * rows + i] = acc;
    }
  return s;
}

// tr(A B) for symmetric A, B equals the Frobenius inner product.
double trace_product(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

nn::LayeredParams pretrain_on_twin(const nn::LayeredParams& init, const data::Dataset& twin_data,
                                   const fl::LocalTrainSpec& spec, std::uint64_t seed) {
  fl::TrainContext ctx{seed, 0, kTwinTrainer, 0, "twin"};
  return fl::local_train(init, twin_data, spec, fl::BceObjective{}, ctx);
}

void DTMLConfig::validate() const {
  if (alpha && !(*alpha > 0.0 && std::isfinite(*alpha))) throw InvalidInput("DTML alpha must be positive");
  if (!(beta >= 0.0 && std::isfinite(beta))) throw InvalidInput("DTML beta must be >= 0");
}

nn::LayeredParams dtml_meta_update(const nn::LayeredParams& agg, const data::Dataset& twin_data, double beta,
                                   std::span<const std::size_t> twin_rows) {
  if (twin_data.empty()) throw InvalidInput("DTML needs a non-empty twin dataset");
  if (beta == 0.0) return agg;
  nn::LossAndGrad lg;
  if (twin_rows.empty()) {
    lg = nn::bce_loss_and_grad(agg, twin_data.view(), twin_data.labels);
  } else {
    const auto batch = twin_data.subset(twin_rows, twin_data.name);
    lg = nn::bce_loss_and_grad(agg, batch.view(), batch.labels);
  }
  if (!lg.grad.all_finite()) throw NumericError("non-finite meta gradient on twin data");
  nn::LayeredParams next = agg;
  nn::axpy(-beta, lg.grad, next);
  return next;
}

void FPFConfig::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw InvalidInput("FPF gamma must lie in [0, 1]");
}

double similarity_score(const nn::LayeredParams& a, const nn::LayeredParams& b, Similarity kind) {
  nn::require_same_shape(a, b, "similarity");
  if (kind == Similarity::FrobeniusCosine) {
    const double na = nn::squared_norm(a);
    const double nb = nn::squared_norm(b);
    if (na == 0.0 || nb == 0.0) throw InvalidInput("similarity of a zero parameter set");
    return nn::dot(a, b) / std::sqrt(na * nb);
  }
  double total = 0.0;
  for (std::size_t l = 0; l < a.num_layers(); ++l) {
    const std::size_t rows = a.arch().fan_out(l);
    const std::size_t cols = a.arch().fan_in(l);
    const auto sa = gram(a.weights(l), rows, cols);
    const auto sb = gram(b.weights(l), rows, cols);
    const double denom = std::sqrt(trace_product(sa, sa) * trace_product(sb, sb));
    if (denom == 0.0) throw InvalidInput("RV coefficient of a zero weight matrix (layer " + std::to_string(l + 1) + ")");
    total += trace_product(sa, sb) / denom;
  }
  return total / static_cast<double>(a.num_layers());
}

std::vector<double> softmax(std::span<const double> scores) {
  if (scores.empty()) throw InvalidInput("softmax of an empty score list");
  const double top = *std::max_element(scores.begin(), scores.end());
  std::vector<double> w(scores.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(scores[i] - top);
  std::vector<double> sorted = w;
  std::sort(sorted.begin(), sorted.end());
  const double z = std::accumulate(sorted.begin(), sorted.end(), 0.0);
  for (double& x : w) x /= z;
  return w;
}

nn::LayeredParams fpf_fuse(std::span<const nn::LayeredParams> clients, const nn::LayeredParams& twin,
                           const FPFConfig& config) {
  config.validate();
  if (clients.empty()) throw InvalidInput("FPF needs at least one client update");
  std::vector<double> scores(clients.size());
  for (std::size_t k = 0; k < clients.size(); ++k) scores[k] = similarity_score(clients[k], twin, config.similarity);
  if (config.gamma == 1.0) return twin;
  const auto w = softmax(scores);
  nn::LayeredParams fused = nn::weighted_sum(clients, w);
  nn::scale(fused, 1.0 - config.gamma);
  nn::axpy(config.gamma, twin, fused);
  return fused;
}

nn::LayeredParams fpf_aggregate(std::span<const nn::LayeredParams> clients, TwinState& twin, const FPFConfig& config) {
  auto fused = fpf_fuse(clients, twin.params, config);
  twin.params = fused;
  return fused;
}

ExchangeMap ExchangeMap::static_policy(std::size_t num_layers, std::size_t low, std::optional<std::size_t> high) {
  if (num_layers == 0) throw InvalidInput("exchange map for a model without layers");
  const std::size_t hi = high.value_or(num_layers - 1);
  if (low > num_layers || hi > num_layers) throw InvalidInput("exchange policy bounds exceed the layer count");
  if (low > hi) throw InvalidInput("exchange policy needs L_low <= L_high");
  ExchangeMap map;
  map.layers.resize(num_layers, LayerExchange::None);
  for (std::size_t l = 1; l <= num_layers; ++l) {
    if (l <= low) map.layers[l - 1] = LayerExchange::DTtoAgg;
    else if (l > hi) map.layers[l - 1] = LayerExchange::AggToDT;
  }
  return map;
}

ExchangeMap ExchangeMap::reverse_policy(std::size_t num_layers, std::size_t low, std::optional<std::size_t> high) {
  auto map = static_policy(num_layers, low, high);
  for (auto& e : map.layers) {
    if (e == LayerExchange::DTtoAgg) e = LayerExchange::AggToDT;
    else if (e == LayerExchange::AggToDT) e = LayerExchange::DTtoAgg;
  }
  return map;
}

ExchangeMap ExchangeMap::none(std::size_t num_layers) {
  return {std::vector<LayerExchange>(num_layers, LayerExchange::None)};
}

ExchangeMap ExchangeMap::custom(std::vector<LayerExchange> layers) {
  if (layers.empty()) throw InvalidInput("exchange map without layers");
  return {std::move(layers)};
}

ExchangeMap ExchangePolicy::resolve(std::size_t num_layers) const {
  switch (kind) {
    case Kind::Static: return ExchangeMap::static_policy(num_layers, low, high);
    case Kind::Reverse: return ExchangeMap::reverse_policy(num_layers, low, high);
    case Kind::None: return ExchangeMap::none(num_layers);
    case Kind::Custom: break;
  }
  if (custom.size() != num_layers)
    throw InvalidInput("custom exchange map has " + std::to_string(custom.size()) + " entries for a " +
                       std::to_string(num_layers) + "-layer model");
  return ExchangeMap::custom(custom);
}

LpeResult lpe_exchange(const nn::LayeredParams& agg, const nn::LayeredParams& twin, const ExchangeMap& map) {
  nn::require_same_shape(agg, twin, "layer exchange");
  if (map.size() != agg.num_layers())
    throw InvalidInput("exchange map has " + std::to_string(map.size()) + " entries for a " +
                       std::to_string(agg.num_layers()) + "-layer model");
  LpeResult out{agg, twin};
  for (std::size_t l = 0; l < map.size(); ++l) {
    if (map.layers[l] == LayerExchange::DTtoAgg) {
      const auto src = twin.layer(l);
      std::copy(src.begin(), src.end(), out.global.layer(l).begin());
    } else if (map.layers[l] == LayerExchange::AggToDT) {
      const auto src = agg.layer(l);
      std::copy(src.begin(), src.end(), out.twin.layer(l).begin());
    }
  }
  return out;
}

std::size_t lpe_accounting(const ExchangeMap& map, const nn::ModelArch& arch) {
  if (map.size() != arch.num_layers()) throw InvalidInput("exchange map does not match the architecture");
  std::size_t total = 0;
  for (std::size_t l = 0; l < map.size(); ++l)
    if (map.layers[l] != LayerExchange::None) total += arch.layer_param_count(l);
  return total;
}

nn::LayeredParams cwa_round(const nn::LayeredParams& agg, TwinState& twin, std::size_t round,
                            const CWAConfig& config) {
  nn::require_same_shape(agg, twin.params, "cyclic update");
  if (config.simultaneous_swap) {
    nn::LayeredParams previous = std::move(twin.params);
    twin.params = agg;
    return previous;
  }
  if (round % 2 == 0) {
    twin.params = agg;
    return agg;
  }
  return twin.params;
}

nn::LayeredParams dtkd_pretrain(const TwinState& twin, std::size_t epochs, const fl::LocalTrainSpec& spec,
                                std::uint64_t seed) {
  if (twin.data == nullptr || twin.data->empty()) throw InvalidInput("DTKD teacher needs labeled twin data");
  fl::LocalTrainSpec s = spec;
  s.epochs = epochs;
  return pretrain_on_twin(twin.params, *twin.data, s, seed);
}

nn::LayeredParams TwinStrategy::initialize(const nn::LayeredParams& random_init, const fl::Federation& federation,
                                           const fl::FLConfig& config) {
  twin_.data = &require_twin(federation, name());
  twin_.pretrain_epochs = options_.pretrain_epochs;
  twin_.params = pretrain_on_twin(random_init, *twin_.data,
                                  {options_.pretrain_epochs, config.batch_size, config.optimizer}, config.seed);
  return options_.init_from_twin ? twin_.params : random_init;
}

DTML::DTML(DTMLConfig config, TwinOptions options) : TwinStrategy(options), config_(config) { config_.validate(); }

fl::LocalTrainSpec DTML::local_spec(const fl::RoundContext& ctx) const {
  auto spec = ctx.local_spec();
  if (config_.alpha) spec.optimizer.learning_rate = *config_.alpha;
  return spec;
}

nn::LayeredParams DTML::aggregate(fl::RoundContext& ctx, std::vector<nn::LayeredParams> updates) {
  auto agg = fl::fedavg_aggregate(updates);
  const auto& twin_data = *twin_.data;
  if (config_.meta_batch == 0 || config_.meta_batch >= twin_data.size())
    return dtml_meta_update(agg, twin_data, config_.beta);
  std::vector<std::size_t> rows(twin_data.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  Rng rng = make_stream(ctx.config().seed, {stream::kMeta, ctx.round()});
  shuffle_in_place(rows, rng);
  rows.resize(config_.meta_batch);
  return dtml_meta_update(agg, twin_data, config_.beta, rows);
}

FPF::FPF(FPFConfig config, TwinOptions options) : TwinStrategy(options), config_(config) { config_.validate(); }

nn::LayeredParams FPF::aggregate(fl::RoundContext&, std::vector<nn::LayeredParams> updates) {
  return fpf_aggregate(updates, twin_, config_);
}

LPE::LPE(ExchangePolicy policy, TwinOptions options) : TwinStrategy(options), policy_(std::move(policy)) {}

nn::LayeredParams LPE::initialize(const nn::LayeredParams& random_init, const fl::Federation& federation,
                                  const fl::FLConfig& config) {
  map_ = policy_.resolve(federation.arch.num_layers());
  client_copy_.assign(config.num_clients, std::nullopt);
  return TwinStrategy::initialize(random_init, federation, config);
}

nn::LayeredParams LPE::execute_round(fl::RoundContext& ctx) {
  const auto& arch = ctx.federation().arch;
  const auto& global = ctx.global();
  const auto& sampled = ctx.sampled();

  for (std::size_t k : sampled) {
    auto& held = client_copy_.at(k);
    std::size_t changed = 0;
    for (std::size_t l = 0; l < arch.num_layers(); ++l) {
      const auto now = global.layer(l);
      if (!held || !std::equal(now.begin(), now.end(), held->layer(l).begin(), [](double x, double y) {
            return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y);
          }))
        changed += arch.layer_param_count(l);
    }
    ctx.transport().send(fl::Direction::Down, changed, "global->client " + std::to_string(k));
    held = global;
  }

  std::vector<const nn::LayeredParams*> starts(sampled.size(), &global);
  auto updates = ctx.train(sampled, starts, local_spec(ctx), [&](std::size_t k) { return objective(ctx, k); });

  // Layers the twin overwrites after aggregation are never uploaded.
  std::size_t upload = arch.param_count();
  for (std::size_t l = 0; l < arch.num_layers(); ++l)
    if (map_->layers[l] == LayerExchange::DTtoAgg) upload -= arch.layer_param_count(l);
  for (std::size_t k : sampled)
    ctx.transport().send(fl::Direction::Up, upload, "client " + std::to_string(k) + "->server");

  return aggregate(ctx, std::move(updates));
}

nn::LayeredParams LPE::aggregate(fl::RoundContext&, std::vector<nn::LayeredParams> updates) {
  auto exchanged = lpe_exchange(fl::fedavg_aggregate(updates), twin_.params, *map_);
  twin_.params = std::move(exchanged.twin);
  return std::move(exchanged.global);
}

CWA::CWA(CWAConfig config, TwinOptions options) : TwinStrategy(options), config_(config) {}

nn::LayeredParams CWA::aggregate(fl::RoundContext& ctx, std::vector<nn::LayeredParams> updates) {
  const bool pushes_twin = config_.simultaneous_swap || ctx.round() % 2 == 1;
  auto next = cwa_round(fl::fedavg_aggregate(updates), twin_, ctx.round(), config_);
  if (pushes_twin)
    for (std::size_t k : ctx.sampled())
      ctx.transport().send(fl::Direction::Down, ctx.param_count(), "twin->client " + std::to_string(k));
  return next;
}

DTKD::DTKD(DTKDConfig config) : config_(config) {
  if (config_.teacher_pretrain_epochs == 0) throw InvalidInput("DTKD teacher_pretrain_epochs must be positive");
}

nn::LayeredParams DTKD::initialize(const nn::LayeredParams& random_init, const fl::Federation& federation,
                                   const fl::FLConfig& config) {
  TwinState twin{random_init, &require_twin(federation, name()), config_.teacher_pretrain_epochs};
  teacher_ = dtkd_pretrain(twin, config_.teacher_pretrain_epochs, {1, config.batch_size, config.optimizer},
                           config.seed);
  soft_labels_.clear();
  if (config_.soft_label_cache)
    for (const auto& shard : federation.clients) soft_labels_.push_back(nn::forward(teacher_, shard.view()));
  has_teacher_.assign(federation.clients.size(), false);
  return random_init;
}

std::optional<double> DTKD::diagnostic(const nn::LayeredParams& global, const fl::Federation& federation) const {
  double total = 0.0;
  std::size_t rows = 0;
  for (const auto& shard : federation.clients) {
    const auto q = nn::forward(teacher_, shard.view());
    total += nn::kl_loss_and_grad(global, shard.view(), q).loss * static_cast<double>(shard.size());
    rows += shard.size();
  }
  return total / static_cast<double>(rows);
}

fl::LocalObjective DTKD::objective(const fl::RoundContext&, std::size_t client) const {
  fl::DistillObjective obj{&teacher_, {}};
  if (config_.soft_label_cache) obj.soft_labels = soft_labels_.at(client);
  return obj;
}

std::size_t DTKD::downlink_scalars(const fl::RoundContext& ctx, std::size_t client) const {
  return has_teacher_.at(client) ? ctx.param_count() : 2 * ctx.param_count();
}

nn::LayeredParams DTKD::aggregate(fl::RoundContext& ctx, std::vector<nn::LayeredParams> updates) {
  for (std::size_t k : ctx.sampled()) has_teacher_.at(k) = true;
  return fl::fedavg_aggregate(updates);
}

}  // namespace dtfl::methods
