#pragma once

// Real-vs-twin distribution diagnostics: moment gaps, linear MMD, sliced
// Wasserstein distance and a shared 2-D PCA projection.

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dtfl/data.hpp"

namespace dtfl::align {

struct MomentGaps {
  double mean_gap = 0.0;  // (1/d) sum_j |mu_j(real) - mu_j(twin)|
  double var_gap = 0.0;   // (1/d) sum_j |var_j(real) - var_j(twin)|, population variances
};

MomentGaps moment_gaps(const data::Dataset& real, const data::Dataset& twin);

/// Biased linear-kernel MMD^2, i.e. ||mean(real) - mean(twin)||^2.
double linear_mmd(const data::Dataset& real, const data::Dataset& twin);

inline constexpr std::size_t kDefaultProjections = 64;

/// Unit direction used for slice `index`; depends only on (dim, seed, index).
std::vector<double> slice_direction(std::size_t dim, std::uint64_t seed, std::size_t index);

/// 1-D Wasserstein-1 distance between two empirical samples, matching
/// max(n_a, n_b) evenly spaced quantiles (midpoint levels, linear
/// interpolation). Exact for equal sizes.
double wasserstein1_1d(std::vector<double> a, std::vector<double> b);

/// Mean over `num_projections` seeded unit directions of the 1-D W1 distance
/// between the projected samples.
double sliced_wasserstein(const data::Dataset& real, const data::Dataset& twin,
                          std::size_t num_projections = kDefaultProjections, std::uint64_t seed = 0);

struct PcaProjection {
  std::vector<std::array<double, 2>> real;
  std::vector<std::array<double, 2>> twin;
  std::array<std::vector<double>, 2> components;  // unit loadings
  std::array<double, 2> eigenvalues{};
  std::array<double, 2> explained{};  // share of total pooled variance
  std::vector<double> pooled_mean;
};

/// Top-2 principal directions of the pooled (population) covariance, both
/// sets projected on the same basis. The first non-zero loading of each
/// component is positive.
PcaProjection pca2(const data::Dataset& real, const data::Dataset& twin);

struct AlignmentReport {
  std::size_t n_real = 0;
  std::size_t n_twin = 0;
  std::size_t dim = 0;
  double mean_gap = 0.0;
  double var_gap = 0.0;
  double mmd = 0.0;
  double swd = 0.0;
  std::size_t swd_projections = kDefaultProjections;
  std::uint64_t swd_seed = 0;
  PcaProjection pca;
};

struct AlignmentOptions {
  bool standardize = true;
  std::size_t num_projections = kDefaultProjections;
  std::uint64_t seed = 0;
};

/// Jointly standardizes (unless disabled) and computes every statistic.
AlignmentReport alignment_report(const data::Dataset& real, const data::Dataset& twin,
                                 const AlignmentOptions& options = {});

std::string report_json(const AlignmentReport& report);
/// Columns: component1,component2,source with source in {real, twin}.
void write_pca_csv(std::ostream& out, const PcaProjection& pca);

}  // namespace dtfl::align
