#pragma once

#include "dtfl/experiment.hpp"

namespace dtfl::testkit {

/// A small synthetic federation that trains in milliseconds.
inline experiment::ExperimentConfig small_config(std::size_t clients = 6, std::size_t rows = 600,
                                                 std::size_t rounds = 4) {
  experiment::ExperimentConfig c;
  c.name = "small";
  c.data.synthetic.dim = 8;
  c.data.synthetic.n_real = rows;
  c.data.synthetic.n_twin = rows;
  c.hidden = {6, 4};
  c.fl.num_clients = clients;
  c.fl.client_fraction = 0.5;
  c.fl.local_epochs = 1;
  c.fl.batch_size = 10;
  c.fl.max_rounds = rounds;
  c.fl.stop_at_target = false;
  return c;
}

inline fl::ExperimentResult run_named(const experiment::ExperimentConfig& c, const std::string& strategy,
                                      const fl::Federation& federation, std::uint64_t seed = 0) {
  auto s = experiment::make_strategy(strategy, c.settings);
  auto cfg = c.fl;
  cfg.seed = seed;
  return fl::run_experiment(cfg, *s, federation);
}

}  // namespace dtfl::testkit
