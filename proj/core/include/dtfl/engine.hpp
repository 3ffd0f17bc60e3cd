#pragma once

// Synchronous federated round engine. A Strategy owns what happens inside a
// round (broadcast, local training, aggregation); the engine owns sampling,
// evaluation, stopping and accounting.

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dtfl/data.hpp"
#include "dtfl/metrics.hpp"
#include "dtfl/nn.hpp"

namespace dtfl::fl {

struct FLConfig {
  std::size_t num_clients = 20;      // K
  double client_fraction = 0.3;      // C
  std::size_t local_epochs = 2;      // E
  std::size_t batch_size = 10;       // B
  std::size_t max_rounds = 100;      // T_max
  double target_accuracy = 0.8;
  std::uint64_t seed = 0;
  nn::OptimizerSpec optimizer;
  std::size_t eval_cadence = 1;
  /// Worker threads for client training. Results do not depend on it.
  std::size_t threads = 1;
  /// Stop after the first round that reaches target_accuracy.
  bool stop_at_target = true;

  /// m = max(1, floor(C * K)).
  std::size_t clients_per_round() const;
  void validate() const;
};

/// Uniform sample of m client ids without replacement, ascending, keyed by
/// (seed, round).
std::vector<std::size_t> sample_clients(std::size_t round, std::size_t num_clients, double fraction,
                                        std::uint64_t seed);

struct BceObjective {};

/// BCE + (mu/2)||theta - anchor||^2.
struct ProximalObjective {
  double mu = 0.0;
  const nn::LayeredParams* anchor = nullptr;
};

/// KL(teacher || student). Ground-truth labels are never read. When
/// `soft_labels` is non-empty it holds the teacher probability of every shard
/// row and replaces per-batch teacher inference.
struct DistillObjective {
  const nn::LayeredParams* teacher = nullptr;
  std::span<const double> soft_labels;
};

using LocalObjective = std::variant<BceObjective, ProximalObjective, DistillObjective>;

struct LocalTrainSpec {
  std::size_t epochs = 1;
  std::size_t batch_size = 10;
  nn::OptimizerSpec optimizer;
};

/// Keys the shuffling stream and labels error messages.
struct TrainContext {
  std::uint64_t seed = 0;
  std::size_t round = 0;
  std::size_t client = 0;
  std::size_t sub_round = 0;
  std::string label = "client";
};

/// E epochs of seeded-shuffled mini-batches (last partial batch included),
/// fresh optimizer state. Throws NumericError naming client and round on a
/// non-finite loss or gradient.
nn::LayeredParams local_train(const nn::LayeredParams& start, const data::Dataset& shard,
                              const LocalTrainSpec& spec, const LocalObjective& objective,
                              const TrainContext& ctx);

/// Mean objective value of `params` over `ds` (used for diagnostics).
double objective_value(const nn::LayeredParams& params, const data::Dataset& ds, const LocalObjective& objective);

enum class Direction { Down, Up };

struct Payload {
  Direction direction = Direction::Down;
  std::size_t scalars = 0;
  std::string what;
};

/// Counts every parameter payload a strategy moves. `observer`, when set,
/// sees each payload individually.
class Transport {
 public:
  void send(Direction direction, std::size_t scalars, std::string what);

  std::size_t up() const { return up_; }
  std::size_t down() const { return down_; }
  void reset() { up_ = down_ = 0; }
  void set_observer(std::function<void(const Payload&)> observer) { observer_ = std::move(observer); }

 private:
  std::size_t up_ = 0;
  std::size_t down_ = 0;
  std::function<void(const Payload&)> observer_;
};

/// Everything a round runs against.
struct Federation {
  nn::ModelArch arch;
  std::vector<data::Dataset> clients;
  data::Dataset test;
  std::optional<data::Dataset> twin;

  void validate() const;
};

class RoundContext {
 public:
  RoundContext(std::size_t round, const FLConfig& config, const Federation& federation,
               const nn::LayeredParams& global, std::vector<std::size_t> sampled, Transport& transport);

  /// Zero-based round index t.
  std::size_t round() const { return round_; }
  const FLConfig& config() const { return config_; }
  const Federation& federation() const { return federation_; }
  const nn::LayeredParams& global() const { return global_; }
  const std::vector<std::size_t>& sampled() const { return sampled_; }
  Transport& transport() { return transport_; }
  std::size_t param_count() const { return federation_.arch.param_count(); }

  LocalTrainSpec local_spec() const;

  /// Trains `clients[i]` from `*starts[i]`, possibly concurrently; results
  /// are in input order and independent of the thread count.
  std::vector<nn::LayeredParams> train(std::span<const std::size_t> clients,
                                       std::span<const nn::LayeredParams* const> starts,
                                       const LocalTrainSpec& spec,
                                       const std::function<LocalObjective(std::size_t client)>& objective,
                                       std::size_t sub_round = 0) const;

 private:
  std::size_t round_;
  const FLConfig& config_;
  const Federation& federation_;
  const nn::LayeredParams& global_;
  std::vector<std::size_t> sampled_;
  Transport& transport_;
};

class Strategy {
 public:
  virtual ~Strategy() = default;
  virtual std::string name() const = 0;

  /// Runs once before round 0 and returns the initial global model. The
  /// default keeps the seeded random initialization.
  virtual nn::LayeredParams initialize(const nn::LayeredParams& random_init, const Federation& federation,
                                       const FLConfig& config);

  /// One full round; returns the next global model.
  virtual nn::LayeredParams execute_round(RoundContext& ctx) = 0;

  /// Strategy-specific scalar recorded with each round (e.g. distillation
  /// loss). None by default.
  virtual std::optional<double> diagnostic(const nn::LayeredParams& global, const Federation& federation) const;
};

/// Broadcast to S_t, local training, upload, aggregate. Subclasses choose the
/// local objective, the per-client payload sizes and the aggregation rule.
class SynchronousStrategy : public Strategy {
 public:
  nn::LayeredParams execute_round(RoundContext& ctx) override;

 protected:
  virtual LocalObjective objective(const RoundContext& ctx, std::size_t client) const;
  virtual LocalTrainSpec local_spec(const RoundContext& ctx) const { return ctx.local_spec(); }
  virtual std::size_t downlink_scalars(const RoundContext& ctx, std::size_t client) const;
  virtual std::size_t uplink_scalars(const RoundContext& ctx, std::size_t client) const;
  virtual nn::LayeredParams aggregate(RoundContext& ctx, std::vector<nn::LayeredParams> updates) = 0;
};

struct RoundMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> auc;
};

RoundMetrics evaluate_model(const nn::LayeredParams& params, const data::Dataset& test);

struct RoundRecord {
  std::size_t round = 0;  // 1-based
  std::optional<RoundMetrics> metrics;
  std::size_t params_up = 0;
  std::size_t params_down = 0;
  bool reached_target = false;
  std::chrono::nanoseconds wall_time{0};
  std::optional<double> diagnostic;
};

class Engine {
 public:
  Engine(FLConfig config, const Federation& federation, Strategy& strategy);

  RoundRecord run_round();
  bool finished() const;

  const nn::LayeredParams& global() const { return global_; }
  const std::vector<RoundRecord>& records() const { return records_; }
  Transport& transport() { return transport_; }
  const FLConfig& config() const { return config_; }

 private:
  FLConfig config_;
  const Federation& federation_;
  Strategy& strategy_;
  nn::LayeredParams global_;
  Transport transport_;
  std::vector<RoundRecord> records_;
  bool reached_ = false;
};

struct ExperimentSummary {
  std::optional<std::size_t> rounds_to_target;
  std::size_t rounds_run = 0;
  std::optional<RoundMetrics> final_metrics;
  std::size_t total_up = 0;
  std::size_t total_down = 0;
};

struct ExperimentResult {
  std::vector<RoundRecord> records;
  ExperimentSummary summary;
  nn::LayeredParams final_global;
};

/// Rounds until the target is reached (when stop_at_target) or T_max.
ExperimentResult run_experiment(const FLConfig& config, Strategy& strategy, const Federation& federation);

/// Seeded random initialization shared by every strategy for a given seed.
nn::LayeredParams initial_params(const nn::ModelArch& arch, std::uint64_t seed);

}  // namespace dtfl::fl
