#pragma once

// Digital-twin-integrated strategies. The twin lives at the server: it owns a
// synthetic dataset and a model pretrained on it, and each strategy couples
// that model (or its data) with the federated aggregate in a different way.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dtfl/baselines.hpp"
#include "dtfl/engine.hpp"

namespace dtfl::methods {

struct TwinState {
  nn::LayeredParams params;
  const data::Dataset* data = nullptr;
  std::size_t pretrain_epochs = 5;
};

/// Supervised BCE training of `init` on the twin dataset. Uses its own
/// shuffling stream, so it never collides with client training.
nn::LayeredParams pretrain_on_twin(const nn::LayeredParams& init, const data::Dataset& twin_data,
                                   const fl::LocalTrainSpec& spec, std::uint64_t seed);

/// Settings shared by every twin-backed strategy.
struct TwinOptions {
  std::size_t pretrain_epochs = 5;
  /// Start the federation from the pretrained twin instead of the random
  /// initialization.
  bool init_from_twin = true;
};

// ---- DTML -------------------------------------------------------------------

struct DTMLConfig {
  /// Local learning rate; unset means the experiment optimizer's rate.
  std::optional<double> alpha;
  double beta = 0.01;
  /// Rows per meta step; 0 is the full twin set.
  std::size_t meta_batch = 0;

  void validate() const;
};

/// agg - beta * grad of mean BCE on `twin_rows` (all rows when empty).
nn::LayeredParams dtml_meta_update(const nn::LayeredParams& agg, const data::Dataset& twin_data, double beta,
                                   std::span<const std::size_t> twin_rows = {});

// ---- FPF --------------------------------------------------------------------

enum class Similarity { FrobeniusCosine, MatrixRV };

struct FPFConfig {
  double gamma = 0.5;
  Similarity similarity = Similarity::FrobeniusCosine;

  void validate() const;
};

/// FrobeniusCosine: cosine of the flattened parameter vectors, in [-1, 1].
/// MatrixRV: mean over weight matrices of the RV coefficient of W W^T, in
/// [0, 1]. Throws InvalidInput on a zero-norm operand.
double similarity_score(const nn::LayeredParams& a, const nn::LayeredParams& b, Similarity kind);

/// Numerically stable softmax; the normalizer is summed in ascending order.
std::vector<double> softmax(std::span<const double> scores);

/// gamma * twin + (1 - gamma) * sum_k w_k client_k, w = softmax(sim(client_k, twin)).
nn::LayeredParams fpf_fuse(std::span<const nn::LayeredParams> clients, const nn::LayeredParams& twin,
                           const FPFConfig& config);

/// fpf_fuse, then twin.params <- fused.
nn::LayeredParams fpf_aggregate(std::span<const nn::LayeredParams> clients, TwinState& twin, const FPFConfig& config);

// ---- LPE --------------------------------------------------------------------

enum class LayerExchange { None, DTtoAgg, AggToDT };

struct ExchangeMap {
  std::vector<LayerExchange> layers;

  /// 1-based layer l: l <= low copies twin -> aggregate, l > high copies
  /// aggregate -> twin. Defaults: low = 1, high = L - 1.
  static ExchangeMap static_policy(std::size_t num_layers, std::size_t low = 1, std::optional<std::size_t> high = {});
  /// static_policy with both directions swapped.
  static ExchangeMap reverse_policy(std::size_t num_layers, std::size_t low = 1, std::optional<std::size_t> high = {});
  static ExchangeMap none(std::size_t num_layers);
  static ExchangeMap custom(std::vector<LayerExchange> layers);

  std::size_t size() const { return layers.size(); }
};

/// Depth-independent description of an exchange map, resolved once the model
/// depth is known.
struct ExchangePolicy {
  enum class Kind { Static, Reverse, None, Custom };
  Kind kind = Kind::Static;
  std::size_t low = 1;
  std::optional<std::size_t> high;
  std::vector<LayerExchange> custom;

  ExchangeMap resolve(std::size_t num_layers) const;
};

struct LpeResult {
  nn::LayeredParams global;
  nn::LayeredParams twin;
};

/// Layer-wise copy between the aggregate and the twin. Both sides read the
/// pre-exchange snapshots, so no layer is ever a blend.
LpeResult lpe_exchange(const nn::LayeredParams& agg, const nn::LayeredParams& twin, const ExchangeMap& map);

/// Scalars in the exchanged layers.
std::size_t lpe_accounting(const ExchangeMap& map, const nn::ModelArch& arch);

// ---- CWA --------------------------------------------------------------------

struct CWAConfig {
  /// Apply the one-shot swap (twin <- agg, global <- old twin) every round
  /// instead of the even/odd alternation.
  bool simultaneous_swap = false;
};

/// Even t: twin <- agg, global <- agg. Odd t: global <- twin, twin kept.
nn::LayeredParams cwa_round(const nn::LayeredParams& agg, TwinState& twin, std::size_t round, const CWAConfig& config);

// ---- DTKD -------------------------------------------------------------------

struct DTKDConfig {
  std::size_t teacher_pretrain_epochs = 5;
  bool soft_label_cache = false;
};

/// Teacher for distillation: `epochs` of supervised training on the twin data
/// starting from twin.params. The result is never modified afterwards.
nn::LayeredParams dtkd_pretrain(const TwinState& twin, std::size_t epochs, const fl::LocalTrainSpec& spec,
                                std::uint64_t seed);

// ---- Strategies ---------------------------------------------------------------

/// Shared twin bookkeeping: pretrains Θ_twin on the federation's twin data at
/// initialization.
class TwinStrategy : public fl::SynchronousStrategy {
 public:
  explicit TwinStrategy(TwinOptions options) : options_(options) {}

  nn::LayeredParams initialize(const nn::LayeredParams& random_init, const fl::Federation& federation,
                               const fl::FLConfig& config) override;

  const TwinState& twin() const { return twin_; }
  const TwinOptions& options() const { return options_; }

 protected:
  TwinOptions options_;
  TwinState twin_;
};

class DTML : public TwinStrategy {
 public:
  DTML(DTMLConfig config, TwinOptions options = {});
  std::string name() const override { return "dtml"; }

 protected:
  fl::LocalTrainSpec local_spec(const fl::RoundContext& ctx) const override;
  nn::LayeredParams aggregate(fl::RoundContext& ctx, std::vector<nn::LayeredParams> updates) override;

 private:
  DTMLConfig config_;
};

class FPF : public TwinStrategy {
 public:
  FPF(FPFConfig config, TwinOptions options = {});
  std::string name() const override { return "fpf"; }

 protected:
  nn::LayeredParams aggregate(fl::RoundContext& ctx, std::vector<nn::LayeredParams> updates) override;

 private:
  FPFConfig config_;
};

/// Clients skip uploading layers the twin overwrites, and the broadcast only
/// carries layers that differ from the copy a client already holds.
class LPE : public TwinStrategy {
 public:
  explicit LPE(ExchangePolicy policy = {}, TwinOptions options = {});
  std::string name() const override { return "lpe"; }

  nn::LayeredParams initialize(const nn::LayeredParams& random_init, const fl::Federation& federation,
                               const fl::FLConfig& config) override;
  nn::LayeredParams execute_round(fl::RoundContext& ctx) override;
  const ExchangeMap& map() const { return *map_; }

 protected:
  nn::LayeredParams aggregate(fl::RoundContext& ctx, std::vector<nn::LayeredParams> updates) override;

 private:
  ExchangePolicy policy_;
  std::optional<ExchangeMap> map_;
  std::vector<std::optional<nn::LayeredParams>> client_copy_;
};

/// Rounds in which the twin's model is handed to the clients (odd rounds, or
/// every round with simultaneous_swap) push it to S_t right after
/// aggregation, on top of the usual start-of-round broadcast.
class CWA : public TwinStrategy {
 public:
  CWA(CWAConfig config, TwinOptions options = {});
  std::string name() const override { return "cwa"; }

 protected:
  nn::LayeredParams aggregate(fl::RoundContext& ctx, std::vector<nn::LayeredParams> updates) override;

 private:
  CWAConfig config_;
};

/// Clients minimize KL to the frozen teacher and never read their labels.
/// The student starts from the random initialization; the teacher is sent
/// to each client once and cached there.
class DTKD : public fl::SynchronousStrategy {
 public:
  explicit DTKD(DTKDConfig config);
  std::string name() const override { return "dtkd"; }

  nn::LayeredParams initialize(const nn::LayeredParams& random_init, const fl::Federation& federation,
                               const fl::FLConfig& config) override;
  /// Mean KL(teacher || student) over every client row.
  std::optional<double> diagnostic(const nn::LayeredParams& global, const fl::Federation& federation) const override;

  const nn::LayeredParams& teacher() const { return teacher_; }

 protected:
  fl::LocalObjective objective(const fl::RoundContext& ctx, std::size_t client) const override;
  std::size_t downlink_scalars(const fl::RoundContext& ctx, std::size_t client) const override;
  nn::LayeredParams aggregate(fl::RoundContext& ctx, std::vector<nn::LayeredParams> updates) override;

 private:
  DTKDConfig config_;
  nn::LayeredParams teacher_;
  std::vector<std::vector<double>> soft_labels_;
  std::vector<bool> has_teacher_;
};

}  // namespace dtfl::methods
