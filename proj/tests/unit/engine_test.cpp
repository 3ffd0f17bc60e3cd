#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "dtfl/baselines.hpp"
#include "dtfl/errors.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

namespace {

using namespace dtfl;

class EngineTest : public ::testing::Test {
 protected:
  experiment::ExperimentConfig config = testkit::small_config();
  experiment::PreparedData prepared = experiment::prepare_data(config, 0);
  const fl::Federation& fed = prepared.federation;
};

TEST(SampleClients, SortedDistinctAndSeeded) {
  for (std::size_t t = 0; t < 20; ++t) {
    const auto s = fl::sample_clients(t, 20, 0.3, 5);
    ASSERT_EQ(s.size(), 6u);
    EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
    EXPECT_EQ(std::adjacent_find(s.begin(), s.end()), s.end());
    EXPECT_LT(s.back(), 20u);
    EXPECT_EQ(s, fl::sample_clients(t, 20, 0.3, 5));
  }
  EXPECT_NE(fl::sample_clients(0, 20, 0.3, 5), fl::sample_clients(1, 20, 0.3, 5));
  EXPECT_EQ(fl::sample_clients(0, 7, 1.0, 1), (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(fl::sample_clients(0, 3, 0.01, 1).size(), 1u);
}

TEST(FLConfig, ClientsPerRoundAndValidation) {
  fl::FLConfig c;
  EXPECT_EQ(c.clients_per_round(), 6u);
  c.client_fraction = 0.0;
  EXPECT_THROW(c.validate(), InvalidInput);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), InvalidInput);
}

TEST_F(EngineTest, PreparedFederationShape) {
  EXPECT_EQ(fed.clients.size(), 6u);
  EXPECT_EQ(fed.arch.param_count(), 8u * 6 + 6 + 6 * 4 + 4 + 4 + 1);
  std::size_t train = 0;
  for (const auto& c : fed.clients) train += c.size();
  EXPECT_EQ(train + fed.test.size(), 600u);
  EXPECT_EQ(fed.test.size(), 120u);
  ASSERT_TRUE(fed.twin.has_value());
  EXPECT_EQ(fed.twin->size(), 600u);
}

TEST_F(EngineTest, LocalTrainIsDeterministicAndKeyed) {
  const auto start = fl::initial_params(fed.arch, 3);
  const fl::LocalTrainSpec spec{2, 10, {}};
  const auto a = fl::local_train(start, fed.clients[0], spec, fl::BceObjective{}, {3, 1, 0, 0, "client"});
  const auto b = fl::local_train(start, fed.clients[0], spec, fl::BceObjective{}, {3, 1, 0, 0, "client"});
  const auto c = fl::local_train(start, fed.clients[0], spec, fl::BceObjective{}, {3, 2, 0, 0, "client"});
  EXPECT_TRUE(a.bit_equal(b));
  EXPECT_FALSE(a.bit_equal(c));
  EXPECT_FALSE(a.bit_equal(start));
}

TEST_F(EngineTest, LocalTrainReportsNumericFailureWithContext) {
  auto start = fl::initial_params(fed.arch, 0);
  start.values()[0] = std::numeric_limits<double>::infinity();
  try {
    (void)fl::local_train(start, fed.clients[2], {1, 10, {}}, fl::BceObjective{}, {0, 4, 2, 0, "client"});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("client 2"), std::string::npos) << what;
    EXPECT_NE(what.find("round 5"), std::string::npos) << what;
  }
}

TEST_F(EngineTest, TrainingLowersLoss) {
  const auto start = fl::initial_params(fed.arch, 1);
  const auto& shard = fed.clients[1];
  const double before = fl::objective_value(start, shard, fl::BceObjective{});
  const auto trained = fl::local_train(start, shard, {5, 10, {}}, fl::BceObjective{}, {1, 0, 1, 0, "client"});
  EXPECT_LT(fl::objective_value(trained, shard, fl::BceObjective{}), before);
}

TEST_F(EngineTest, ResultsIndependentOfThreadCount) {
  auto single = config;
  single.fl.threads = 1;
  auto multi = config;
  multi.fl.threads = 4;
  for (const char* name : {"fedavg", "hfl", "dtkd"}) {
    const auto a = testkit::run_named(single, name, fed, 2);
    const auto b = testkit::run_named(multi, name, fed, 2);
    EXPECT_TRUE(a.final_global.bit_equal(b.final_global)) << name;
  }
}

TEST_F(EngineTest, FedAvgAccountingIsTwoMPPerRound) {
  const auto r = testkit::run_named(config, "fedavg", fed);
  const std::size_t mp = 3 * fed.arch.param_count();
  ASSERT_EQ(r.records.size(), 4u);
  for (const auto& rec : r.records) {
    EXPECT_EQ(rec.params_up, mp);
    EXPECT_EQ(rec.params_down, mp);
    ASSERT_TRUE(rec.metrics.has_value());
  }
  EXPECT_EQ(r.summary.total_up, 4 * mp);
}

TEST_F(EngineTest, EvaluationCadenceAndStopAtTarget) {
  auto c = config;
  c.fl.eval_cadence = 3;
  c.fl.max_rounds = 4;
  auto r = testkit::run_named(c, "fedavg", fed);
  EXPECT_FALSE(r.records[0].metrics.has_value());
  EXPECT_TRUE(r.records[2].metrics.has_value());
  EXPECT_TRUE(r.records[3].metrics.has_value());

  c.fl.eval_cadence = 1;
  c.fl.stop_at_target = true;
  c.fl.target_accuracy = 0.0;
  r = testkit::run_named(c, "fedavg", fed);
  EXPECT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.summary.rounds_to_target, 1u);
}

TEST_F(EngineTest, EngineRejectsMismatchedClientCount) {
  fl::FedAvg s;
  auto c = config.fl;
  c.num_clients = 5;
  EXPECT_THROW(fl::Engine(c, fed, s), InvalidInput);
}

TEST_F(EngineTest, FedAvgAggregateMatchesFlatAverage) {
  std::vector<nn::LayeredParams> items;
  for (int i = 0; i < 9; ++i) items.push_back(testkit::random_params(fed.arch, 70 + i, 0.1 + i));
  const auto agg = fl::fedavg_aggregate(items);
  const auto ref = testkit::flat_average(items);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(agg.values()[i], ref[i], 1e-12);
}

TEST_F(EngineTest, FedProxWithZeroMuIsFedAvg) {
  auto c = config;
  c.settings.fedprox_mu = 0.0;
  const auto a = testkit::run_named(c, "fedavg", fed, 1);
  const auto b = testkit::run_named(c, "fedprox", fed, 1);
  EXPECT_TRUE(a.final_global.bit_equal(b.final_global));
  c.settings.fedprox_mu = 0.5;
  EXPECT_FALSE(testkit::run_named(c, "fedprox", fed, 1).final_global.bit_equal(a.final_global));
}

TEST_F(EngineTest, HflWithOneEdgeIsFedAvg) {
  auto c = config;
  c.settings.hfl.num_edges = 1;
  const auto a = testkit::run_named(c, "fedavg", fed, 1);
  const auto b = testkit::run_named(c, "hfl", fed, 1);
  EXPECT_TRUE(a.final_global.bit_equal(b.final_global));
}

TEST_F(EngineTest, HflAccountingCountsBothTiers) {
  auto c = config;
  c.fl.client_fraction = 1.0;
  c.settings.hfl.num_edges = 2;
  c.settings.hfl.edge_period = 2;
  const auto r = testkit::run_named(c, "hfl", fed);
  const std::size_t P = fed.arch.param_count();
  // Per edge: server->edge, then 2 sub-rounds of 3 clients each way, edge->server.
  EXPECT_EQ(r.records[0].params_down, 2 * (P + 2 * 3 * P));
  EXPECT_EQ(r.records[0].params_up, 2 * (2 * 3 * P + P));
}

TEST(HflConfig, ResolveValidates) {
  fl::HFLConfig h;
  h.num_edges = 3;
  EXPECT_EQ(h.resolve(5), (std::vector<std::size_t>{0, 1, 2, 0, 1}));
  h.assignment = {0, 0, 2};
  EXPECT_THROW(h.resolve(4), InvalidInput);
  h.assignment = {0, 3, 1, 1};
  EXPECT_THROW(h.resolve(4), InvalidInput);
  h = {};
  h.num_edges = 6;
  EXPECT_THROW(h.resolve(5), InvalidInput);
}

TEST(Transport, ObserverSeesEveryPayload) {
  fl::Transport t;
  std::vector<fl::Payload> seen;
  t.set_observer([&](const fl::Payload& p) { seen.push_back(p); });
  t.send(fl::Direction::Up, 5, "a");
  t.send(fl::Direction::Down, 7, "b");
  EXPECT_EQ(t.up(), 5u);
  EXPECT_EQ(t.down(), 7u);
  ASSERT_EQ(seen.size(), 2u);
  EXPECT_EQ(seen[1].what, "b");
}

}  // namespace
