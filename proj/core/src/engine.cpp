#include "dtfl/engine.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "dtfl/errors.hpp"
#include "dtfl/random.hpp"

namespace dtfl::fl {

namespace {

template <class>
inline constexpr bool kAlwaysFalse = false;

struct BatchScratch {
  std::vector<double> features;
  std::vector<std::uint8_t> labels;
  std::vector<double> soft;
};

nn::BatchView gather(const data::Dataset& ds, std::span<const std::size_t> rows, BatchScratch& s,
                     bool want_labels) {
  s.features.resize(rows.size() * ds.dim);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(ds.row(rows[i]), ds.row(rows[i]) + ds.dim, s.features.begin() + static_cast<std::ptrdiff_t>(i * ds.dim));
  if (want_labels) {
    s.labels.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) s.labels[i] = ds.labels[rows[i]];
  }
  return {s.features, rows.size(), ds.dim};
}

nn::LossAndGrad evaluate_objective(const nn::LayeredParams& params, const data::Dataset& ds,
                                   std::span<const std::size_t> rows, const LocalObjective& objective,
                                   BatchScratch& scratch) {
  return std::visit(
      [&](const auto& obj) -> nn::LossAndGrad {
        using T = std::decay_t<decltype(obj)>;
        if constexpr (std::is_same_v<T, BceObjective>) {
          auto view = gather(ds, rows, scratch, true);
          return nn::bce_loss_and_grad(params, view, scratch.labels);
        } else if constexpr (std::is_same_v<T, ProximalObjective>) {
          if (obj.anchor == nullptr) throw InvalidInput("proximal objective without anchor");
          auto view = gather(ds, rows, scratch, true);
          auto lg = nn::bce_loss_and_grad(params, view, scratch.labels);
          nn::add_proximal(lg, params, *obj.anchor, obj.mu);
          return lg;
        } else if constexpr (std::is_same_v<T, DistillObjective>) {
          if (obj.teacher == nullptr) throw InvalidInput("distillation objective without teacher");
          auto view = gather(ds, rows, scratch, false);
          if (!obj.soft_labels.empty()) {
            if (obj.soft_labels.size() != ds.size()) throw InvalidInput("soft label cache does not match shard");
            scratch.soft.resize(rows.size());
            for (std::size_t i = 0; i < rows.size(); ++i) scratch.soft[i] = obj.soft_labels[rows[i]];
          } else {
            scratch.soft = nn::forward(*obj.teacher, view);
          }
          return nn::kl_loss_and_grad(params, view, scratch.soft);
        } else {
          static_assert(kAlwaysFalse<T>, "unhandled objective");
        }
      },
      objective);
}

std::string where(const TrainContext& ctx) {
  std::string s = ctx.label + " " + std::to_string(ctx.client) + ", round " + std::to_string(ctx.round + 1);
  if (ctx.sub_round > 0) s += "." + std::to_string(ctx.sub_round);
  return s;
}

template <class F>
auto with_round_context(std::size_t round, const std::string& strategy, F&& f) {
  const std::string prefix = "round " + std::to_string(round + 1) + " [" + strategy + "]: ";
  try {
    return f();
  } catch (const NumericError& e) {
    throw NumericError(prefix + e.what());
  } catch (const InvalidInput& e) {
    throw InvalidInput(prefix + e.what());
  } catch (const std::exception& e) {
    throw std::runtime_error(prefix + e.what());
  }
}

}  // namespace

std::size_t FLConfig::clients_per_round() const {
  const double raw = std::floor(client_fraction * static_cast<double>(num_clients) + 1e-9);
  return std::max<std::size_t>(1, static_cast<std::size_t>(raw));
}

void FLConfig::validate() const {
  if (num_clients == 0) throw InvalidInput("K must be positive");
  if (!(client_fraction > 0.0 && client_fraction <= 1.0)) throw InvalidInput("C must lie in (0, 1]");
  if (local_epochs == 0) throw InvalidInput("E must be positive");
  if (batch_size == 0) throw InvalidInput("B must be positive");
  if (max_rounds == 0) throw InvalidInput("T_max must be positive");
  if (!(target_accuracy >= 0.0 && target_accuracy <= 1.0)) throw InvalidInput("target accuracy must lie in [0, 1]");
  if (eval_cadence == 0) throw InvalidInput("eval cadence must be positive");
  optimizer.validate();
}

std::vector<std::size_t> sample_clients(std::size_t round, std::size_t num_clients, double fraction,
                                        std::uint64_t seed) {
  FLConfig probe;
  probe.num_clients = num_clients;
  probe.client_fraction = fraction;
  const std::size_t m = std::min(probe.clients_per_round(), num_clients);
  if (m == num_clients) {
    std::vector<std::size_t> all(num_clients);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  Rng rng = make_stream(seed, {stream::kSampling, round});
  std::vector<std::size_t> ids(num_clients);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  // Partial Fisher-Yates: the first m slots end up uniformly sampled.
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, num_clients - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ids.resize(m);
  std::sort(ids.begin(), ids.end());
  return ids;
}

nn::LayeredParams local_train(const nn::LayeredParams& start, const data::Dataset& shard,
                              const LocalTrainSpec& spec, const LocalObjective& objective,
                              const TrainContext& ctx) {
  if (shard.empty()) throw InvalidInput(where(ctx) + ": empty shard");
  if (spec.batch_size == 0) throw InvalidInput("batch size must be positive");
  nn::LayeredParams params = start;
  if (spec.epochs == 0) return params;

  nn::Optimizer optimizer(spec.optimizer, params.arch());
  Rng rng = make_stream(ctx.seed, {stream::kLocalTrain, ctx.round, ctx.client, ctx.sub_round});
  std::vector<std::size_t> order(shard.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  BatchScratch scratch;
  const std::span<const std::size_t> all(order);

  for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
    shuffle_in_place(order, rng);
    std::size_t batch = 0;
    for (std::size_t pos = 0; pos < order.size(); pos += spec.batch_size, ++batch) {
      const auto rows = all.subspan(pos, std::min(spec.batch_size, order.size() - pos));
      auto lg = evaluate_objective(params, shard, rows, objective, scratch);
      const std::string at = [&] {
        return where(ctx) + ", epoch " + std::to_string(epoch + 1) + ", batch " + std::to_string(batch + 1);
      }();
      if (!std::isfinite(lg.loss)) throw NumericError(at + ": non-finite loss");
      try {
        optimizer.step(params, lg.grad);
      } catch (const NumericError& e) {
        throw NumericError(at + ": " + e.what());
      }
    }
  }
  return params;
}

double objective_value(const nn::LayeredParams& params, const data::Dataset& ds, const LocalObjective& objective) {
  std::vector<std::size_t> rows(ds.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  BatchScratch scratch;
  return evaluate_objective(params, ds, rows, objective, scratch).loss;
}

void Transport::send(Direction direction, std::size_t scalars, std::string what) {
  (direction == Direction::Up ? up_ : down_) += scalars;
  if (observer_) observer_(Payload{direction, scalars, std::move(what)});
}

void Federation::validate() const {
  arch.validate();
  if (clients.empty()) throw InvalidInput("federation has no clients");
  for (const auto& c : clients) {
    c.validate();
    if (c.dim != arch.input_size()) throw InvalidInput("client shard '" + c.name + "' does not match model input");
  }
  test.validate();
  if (test.dim != arch.input_size()) throw InvalidInput("test set does not match model input");
  if (twin) {
    twin->validate();
    if (twin->dim != arch.input_size()) throw InvalidInput("twin dataset does not match model input");
  }
}

RoundContext::RoundContext(std::size_t round, const FLConfig& config, const Federation& federation,
                           const nn::LayeredParams& global, std::vector<std::size_t> sampled, Transport& transport)
    : round_(round),
      config_(config),
      federation_(federation),
      global_(global),
      sampled_(std::move(sampled)),
      transport_(transport) {}

LocalTrainSpec RoundContext::local_spec() const {
  return {config_.local_epochs, config_.batch_size, config_.optimizer};
}

std::vector<nn::LayeredParams> RoundContext::train(std::span<const std::size_t> clients,
                                                   std::span<const nn::LayeredParams* const> starts,
                                                   const LocalTrainSpec& spec,
                                                   const std::function<LocalObjective(std::size_t)>& objective,
                                                   std::size_t sub_round) const {
  if (clients.size() != starts.size()) throw InvalidInput("train: one start model per client required");
  std::vector<nn::LayeredParams> out(clients.size());
  std::vector<std::exception_ptr> errors(clients.size());

  auto work = [&](std::size_t i) {
    try {
      const std::size_t k = clients[i];
      if (k >= federation_.clients.size()) throw InvalidInput("client id out of range");
      TrainContext tc{config_.seed, round_, k, sub_round, "client"};
      out[i] = local_train(*starts[i], federation_.clients[k], spec, objective(k), tc);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  const std::size_t workers = std::min(config_.threads, clients.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < clients.size(); ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < clients.size(); i = next++) work(i);
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

nn::LayeredParams Strategy::initialize(const nn::LayeredParams& random_init, const Federation&, const FLConfig&) {
  return random_init;
}

std::optional<double> Strategy::diagnostic(const nn::LayeredParams&, const Federation&) const { return std::nullopt; }

nn::LayeredParams SynchronousStrategy::execute_round(RoundContext& ctx) {
  const auto& sampled = ctx.sampled();
  for (std::size_t k : sampled)
    ctx.transport().send(Direction::Down, downlink_scalars(ctx, k), "global->client " + std::to_string(k));
  std::vector<const nn::LayeredParams*> starts(sampled.size(), &ctx.global());
  auto updates = ctx.train(sampled, starts, local_spec(ctx), [&](std::size_t k) { return objective(ctx, k); });
  for (std::size_t k : sampled)
    ctx.transport().send(Direction::Up, uplink_scalars(ctx, k), "client " + std::to_string(k) + "->server");
  return aggregate(ctx, std::move(updates));
}

LocalObjective SynchronousStrategy::objective(const RoundContext&, std::size_t) const { return BceObjective{}; }

std::size_t SynchronousStrategy::downlink_scalars(const RoundContext& ctx, std::size_t) const {
  return ctx.param_count();
}

std::size_t SynchronousStrategy::uplink_scalars(const RoundContext& ctx, std::size_t) const {
  return ctx.param_count();
}

RoundMetrics evaluate_model(const nn::LayeredParams& params, const data::Dataset& test) {
  const auto probs = nn::forward(params, test.view());
  const auto e = metrics::evaluate(probs, test.labels);
  return {e.basic.accuracy, e.basic.precision, e.basic.recall, e.basic.f1, e.auc};
}

nn::LayeredParams initial_params(const nn::ModelArch& arch, std::uint64_t seed) {
  Rng rng = make_stream(seed, {stream::kInit});
  return nn::LayeredParams::initialize(arch, rng);
}

Engine::Engine(FLConfig config, const Federation& federation, Strategy& strategy)
    : config_(std::move(config)), federation_(federation), strategy_(strategy) {
  config_.validate();
  federation_.validate();
  if (federation_.clients.size() != config_.num_clients)
    throw InvalidInput("federation has " + std::to_string(federation_.clients.size()) + " client shards, config K=" +
                       std::to_string(config_.num_clients));
  global_ = strategy_.initialize(initial_params(federation_.arch, config_.seed), federation_, config_);
  if (global_.arch() != federation_.arch) throw InvalidInput("strategy initialization changed the architecture");
}

bool Engine::finished() const {
  return records_.size() >= config_.max_rounds || (config_.stop_at_target && reached_);
}

RoundRecord Engine::run_round() {
  if (finished()) throw std::logic_error("engine already finished");
  const auto started = std::chrono::steady_clock::now();
  const std::size_t t = records_.size();
  const std::size_t up_before = transport_.up();
  const std::size_t down_before = transport_.down();

  nn::LayeredParams next = with_round_context(t, strategy_.name(), [&] {
    RoundContext ctx(t, config_, federation_, global_,
                     sample_clients(t, config_.num_clients, config_.client_fraction, config_.seed), transport_);
    return strategy_.execute_round(ctx);
  });
  if (!next.same_shape(global_)) throw InvalidInput("round " + std::to_string(t + 1) + ": aggregate changed shape");
  if (!next.all_finite())
    throw NumericError("round " + std::to_string(t + 1) + " [" + strategy_.name() + "]: non-finite global model");
  global_ = std::move(next);

  RoundRecord rec;
  rec.round = t + 1;
  rec.params_up = transport_.up() - up_before;
  rec.params_down = transport_.down() - down_before;
  if (rec.round % config_.eval_cadence == 0 || rec.round == config_.max_rounds) {
    rec.metrics = evaluate_model(global_, federation_.test);
    rec.reached_target = rec.metrics->accuracy >= config_.target_accuracy;
  }
  rec.diagnostic = strategy_.diagnostic(global_, federation_);
  reached_ = reached_ || rec.reached_target;
  rec.wall_time = std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - started);
  records_.push_back(rec);
  return rec;
}

ExperimentResult run_experiment(const FLConfig& config, Strategy& strategy, const Federation& federation) {
  Engine engine(config, federation, strategy);
  while (!engine.finished()) engine.run_round();

  ExperimentResult result;
  result.records = engine.records();
  result.final_global = engine.global();
  auto& s = result.summary;
  s.rounds_run = result.records.size();
  for (const auto& r : result.records) {
    s.total_up += r.params_up;
    s.total_down += r.params_down;
    if (r.metrics) s.final_metrics = r.metrics;
    if (r.reached_target && !s.rounds_to_target) s.rounds_to_target = r.round;
  }
  return result;
}

}  // namespace dtfl::fl
