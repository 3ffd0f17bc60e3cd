#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dtfl/engine.hpp"

namespace dtfl::fl {

/// Plain average of the client updates.
nn::LayeredParams fedavg_aggregate(std::span<const nn::LayeredParams> updates);

class FedAvg : public SynchronousStrategy {
 public:
  std::string name() const override { return "fedavg"; }

 protected:
  nn::LayeredParams aggregate(RoundContext& ctx, std::vector<nn::LayeredParams> updates) override;
};

/// FedAvg whose clients add (mu/2)||theta - global||^2 to their local loss.
class FedProx : public FedAvg {
 public:
  explicit FedProx(double mu = 0.01);
  std::string name() const override { return "fedprox"; }
  double mu() const { return mu_; }

 protected:
  LocalObjective objective(const RoundContext& ctx, std::size_t client) const override;

 private:
  double mu_;
};

struct HFLConfig {
  std::size_t num_edges = 4;  // H
  /// assignment[k] is the edge of client k. Empty means round-robin k % H.
  std::vector<std::size_t> assignment;
  std::size_t edge_period = 1;

  /// Resolved assignment for K clients; throws InvalidInput when invalid.
  std::vector<std::size_t> resolve(std::size_t num_clients) const;
};

/// Two-tier aggregation. Every round, each edge with at least one sampled
/// client runs `edge_period` sub-rounds of FedAvg over its sampled clients,
/// starting from the global model; the server then averages the edge models.
class HierarchicalFL : public Strategy {
 public:
  explicit HierarchicalFL(HFLConfig config = {});
  std::string name() const override { return "hfl"; }
  nn::LayeredParams execute_round(RoundContext& ctx) override;
  const HFLConfig& config() const { return config_; }

 private:
  HFLConfig config_;
};

}  // namespace dtfl::fl
