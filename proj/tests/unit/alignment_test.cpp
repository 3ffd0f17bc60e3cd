#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "dtfl/alignment.hpp"
#include "dtfl/errors.hpp"
#include "json.hpp"
#include "oracles.hpp"

namespace {

using namespace dtfl;

data::Dataset shifted(const data::Dataset& ds, double delta) {
  data::Dataset out = ds;
  for (double& x : out.features) x += delta;
  return out;
}

TEST(LinearMmd, MatchesKernelDoubleSum) {
  for (int trial = 0; trial < 10; ++trial) {
    const auto a = testkit::random_dataset(20 + trial, 5, 10 + trial);
    const auto b = shifted(testkit::random_dataset(15 + 2 * trial, 5, 50 + trial), 0.1 * trial);
    EXPECT_NEAR(align::linear_mmd(a, b), testkit::kernel_mmd(a, b), 1e-9);
  }
}

TEST(LinearMmd, ConstantShiftGivesSquaredNorm) {
  const auto a = testkit::random_dataset(40, 4, 3);
  EXPECT_NEAR(align::linear_mmd(a, shifted(a, 0.5)), 4 * 0.25, 1e-12);
}

TEST(SlicedWasserstein, MatchesPerSliceSortedW1) {
  for (int trial = 0; trial < 6; ++trial) {
    const auto a = testkit::random_dataset(30, 4, 100 + trial);
    const auto b = shifted(testkit::random_dataset(30, 4, 200 + trial), 0.3 * trial);
    std::vector<std::vector<double>> dirs;
    for (std::size_t s = 0; s < 16; ++s) dirs.push_back(align::slice_direction(4, 7, s));
    EXPECT_NEAR(align::sliced_wasserstein(a, b, 16, 7), testkit::sliced_w1(a, b, dirs), 1e-9);
  }
}

TEST(SlicedWasserstein, DirectionsAreUnitAndSeeded) {
  const auto u = align::slice_direction(9, 3, 5);
  double norm = 0.0;
  for (double x : u) norm += x * x;
  EXPECT_NEAR(norm, 1.0, 1e-12);
  EXPECT_EQ(u, align::slice_direction(9, 3, 5));
  EXPECT_NE(u, align::slice_direction(9, 3, 6));
}

TEST(Wasserstein1d, HandValues) {
  EXPECT_DOUBLE_EQ(align::wasserstein1_1d({0.0, 1.0}, {2.0, 3.0}), 2.0);
  EXPECT_DOUBLE_EQ(align::wasserstein1_1d({3.0, 1.0, 2.0}, {1.0, 2.0, 3.0}), 0.0);
  // Two levels against a point mass: quantiles 0.25 and 0.75 of {0, 4}.
  EXPECT_DOUBLE_EQ(align::wasserstein1_1d({0.0, 4.0}, {1.0}), 2.0);
  EXPECT_THROW(align::wasserstein1_1d({}, {1.0}), InvalidInput);
}

TEST(Alignment, IdenticalDatasetsGiveZeroStatistics) {
  const auto a = testkit::random_dataset(200, 6, 8);
  for (bool standardize : {false, true}) {
    const auto rep = align::alignment_report(a, a, {standardize, 32, 1});
    EXPECT_LE(rep.mean_gap, 1e-12);
    EXPECT_LE(rep.var_gap, 1e-12);
    EXPECT_LE(rep.mmd, 1e-12);
    EXPECT_LE(rep.swd, 1e-12);
  }
}

TEST(Alignment, StatisticsGrowWithScenarioShift) {
  data::SyntheticScenario s;
  s.n_real = 1000;
  s.n_twin = 1000;
  s.seed = 4;
  std::vector<align::AlignmentReport> reps;
  for (double shift : {0.0, 0.5, 1.0, 2.0}) {
    s.shift = shift;
    const auto g = data::generate_scenario(s);
    reps.push_back(align::alignment_report(g.real, g.twin, {false, 64, 0}));
  }
  for (std::size_t i = 1; i < reps.size(); ++i) {
    EXPECT_GT(reps[i].mean_gap, reps[i - 1].mean_gap);
    EXPECT_GT(reps[i].mmd, reps[i - 1].mmd);
    EXPECT_GT(reps[i].swd, reps[i - 1].swd);
  }
}

TEST(Pca, RecoversDominantAxis) {
  data::Dataset a{"a", 2, {}, {}};
  for (int i = -5; i <= 5; ++i) {
    a.features.push_back(3.0 * i);
    a.features.push_back(0.1 * (i % 2));
    a.labels.push_back(0);
  }
  const auto p = align::pca2(a, a);
  EXPECT_NEAR(p.components[0][0], 1.0, 1e-3);
  EXPECT_GT(p.explained[0], 0.99);
  EXPECT_LE(p.explained[0] + p.explained[1], 1.0 + 1e-12);
  EXPECT_EQ(p.real.size(), 11u);
  EXPECT_EQ(p.real, p.twin);
}

TEST(Report, JsonAndCsvShape) {
  data::SyntheticScenario s;
  s.n_real = 50;
  s.n_twin = 40;
  const auto g = data::generate_scenario(s);
  const auto rep = align::alignment_report(g.real, g.twin);
  const auto j = nlohmann::json::parse(align::report_json(rep));
  for (const char* key : {"mean_gap", "var_gap", "mmd", "swd", "features", "samples", "pca_explained_variance"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j["features"], 20);
  std::ostringstream csv;
  align::write_pca_csv(csv, rep.pca);
  std::istringstream lines(csv.str());
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "component1,component2,source");
  std::size_t rows = 0;
  while (std::getline(lines, line)) ++rows;
  EXPECT_EQ(rows, 90u);
}

TEST(Alignment, RejectsMismatchedDimensions) {
  EXPECT_THROW(align::linear_mmd(testkit::random_dataset(5, 2, 1), testkit::random_dataset(5, 3, 1)), InvalidInput);
}

}  // namespace
