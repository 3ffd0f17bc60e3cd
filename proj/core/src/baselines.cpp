#include "dtfl/baselines.hpp"

#include <cmath>

#include "dtfl/errors.hpp"

namespace dtfl::fl {

nn::LayeredParams fedavg_aggregate(std::span<const nn::LayeredParams> updates) { return nn::mean(updates); }

nn::LayeredParams FedAvg::aggregate(RoundContext&, std::vector<nn::LayeredParams> updates) {
  return fedavg_aggregate(updates);
}

FedProx::FedProx(double mu) : mu_(mu) {
  if (!(mu >= 0.0) || !std::isfinite(mu)) throw InvalidInput("FedProx mu must be a finite value >= 0");
}

LocalObjective FedProx::objective(const RoundContext& ctx, std::size_t) const {
  return ProximalObjective{mu_, &ctx.global()};
}

std::vector<std::size_t> HFLConfig::resolve(std::size_t num_clients) const {
  if (num_edges == 0 || num_edges > num_clients)
    throw InvalidInput("HFL needs 1 <= H <= K (H=" + std::to_string(num_edges) + ", K=" + std::to_string(num_clients) +
                       ")");
  if (edge_period == 0) throw InvalidInput("HFL edge_period must be positive");
  if (assignment.empty()) {
    std::vector<std::size_t> rr(num_clients);
    for (std::size_t k = 0; k < num_clients; ++k) rr[k] = k % num_edges;
    return rr;
  }
  if (assignment.size() != num_clients)
    throw InvalidInput("HFL assignment has " + std::to_string(assignment.size()) + " entries for K=" +
                       std::to_string(num_clients));
  for (std::size_t e : assignment)
    if (e >= num_edges) throw InvalidInput("HFL assignment names edge " + std::to_string(e) + " >= H");
  return assignment;
}

HierarchicalFL::HierarchicalFL(HFLConfig config) : config_(std::move(config)) {
  if (config_.num_edges == 0) throw InvalidInput("HFL needs at least one edge");
  if (config_.edge_period == 0) throw InvalidInput("HFL edge_period must be positive");
}

nn::LayeredParams HierarchicalFL::execute_round(RoundContext& ctx) {
  const auto edge_of = config_.resolve(ctx.config().num_clients);
  const std::size_t P = ctx.param_count();

  std::vector<std::vector<std::size_t>> members(config_.num_edges);
  for (std::size_t k : ctx.sampled()) members[edge_of[k]].push_back(k);

  std::vector<nn::LayeredParams> edge_models;
  for (std::size_t e = 0; e < config_.num_edges; ++e) {
    const auto& group = members[e];
    if (group.empty()) continue;
    const std::string edge = "edge " + std::to_string(e);
    ctx.transport().send(Direction::Down, P, "server->" + edge);

    nn::LayeredParams model = ctx.global();
    for (std::size_t s = 0; s < config_.edge_period; ++s) {
      for (std::size_t k : group) ctx.transport().send(Direction::Down, P, edge + "->client " + std::to_string(k));
      std::vector<const nn::LayeredParams*> starts(group.size(), &model);
      auto updates = ctx.train(group, starts, ctx.local_spec(), [](std::size_t) { return BceObjective{}; }, s);
      for (std::size_t k : group) ctx.transport().send(Direction::Up, P, "client " + std::to_string(k) + "->" + edge);
      model = fedavg_aggregate(updates);
    }
    ctx.transport().send(Direction::Up, P, edge + "->server");
    edge_models.push_back(std::move(model));
  }
  return fedavg_aggregate(edge_models);
}

}  // namespace dtfl::fl
