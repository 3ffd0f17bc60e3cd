#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dtfl/nn.hpp"

namespace dtfl::data {

/// Row-major feature matrix with binary labels (0 normal, 1 anomalous).
struct Dataset {
  std::string name;
  std::size_t dim = 0;
  std::vector<double> features;
  std::vector<std::uint8_t> labels;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  const double* row(std::size_t i) const { return features.data() + i * dim; }
  nn::BatchView view() const { return {features, size(), dim}; }

  /// Rows `indices` in the given order.
  Dataset subset(std::span<const std::size_t> indices, std::string subset_name) const;
  std::size_t anomaly_count() const;

  /// Throws InvalidInput unless n >= 1, buffers agree, labels are binary and
  /// every feature is finite.
  void validate() const;
};

/// How the label cell of a CSV row is mapped to {0, 1}.
enum class LabelRule {
  Binary,            // only "0"/"1" (or 0.0/1.0) accepted
  PositiveIsAnomaly  // > 0 is anomalous, anything else normal (BATADAL's -999)
};

struct CsvSchema {
  std::string label_column;
  /// Empty means every column except the label and `exclude_columns`.
  std::vector<std::string> feature_columns;
  std::vector<std::string> exclude_columns;
  bool header = true;
  /// Used when `header` is false.
  std::optional<std::size_t> label_index;
  LabelRule label_rule = LabelRule::Binary;

  /// Built-in layouts: "i40" (label column `label`/`Label`/`attack`) and
  /// "batadal" (`ATT_FLAG`, timestamp column dropped, -999 mapped to normal).
  static CsvSchema preset(const std::string& name);
};

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema);

/// Per-feature affine map x -> (x - mean) / stddev with population stddev;
/// zero-variance features use stddev 1.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> stddev;

  static Standardizer fit(std::span<const Dataset* const> pooled);
  Dataset apply(const Dataset& ds) const;
};

struct JointlyStandardized {
  Dataset a;
  Dataset b;
  Standardizer stats;
};

/// Statistics from the pooled rows of a and b, applied to both.
JointlyStandardized standardize_jointly(const Dataset& a, const Dataset& b);

enum class PartitionScheme { Iid, LabelSkew };

struct PartitionSpec {
  std::size_t num_clients = 20;
  PartitionScheme scheme = PartitionScheme::Iid;
  /// LabelSkew only: share of rows dealt out uniformly at random; the rest
  /// are dealt in label-sorted order. 1 is IID, 0 is maximally skewed.
  double minority_fraction = 0.5;
  std::uint64_t seed = 0;
};

/// Disjoint shards whose union is `ds`; every shard is non-empty.
std::vector<Dataset> partition(const Dataset& ds, const PartitionSpec& spec);

/// Class-conditional Gaussian stand-in for a physical asset and its twin.
/// Normal rows ~ N(0, noise_scale^2 I). Anomalous rows ~ N(separation * v,
/// (anomaly_spread * noise_scale)^2 I) for a seeded unit direction v. The twin
/// draws from the same law with every row translated by shift * u along an
/// independent seeded unit direction u.
struct SyntheticScenario {
  std::size_t dim = 20;
  std::size_t n_real = 4000;
  std::size_t n_twin = 4000;
  double anomaly_rate = 0.4;
  double shift = 0.5;
  double noise_scale = 0.15;
  double separation = 0.0;
  double anomaly_spread = 0.6;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ScenarioData {
  Dataset real;
  Dataset twin;
  std::vector<double> anomaly_direction;
  std::vector<double> shift_direction;
};

ScenarioData generate_scenario(const SyntheticScenario& s);

/// Seeded shuffle, then the first round(n * test_fraction) rows form the test
/// side. Both sides must be non-empty.
std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double test_fraction, std::uint64_t seed);

}  // namespace dtfl::data
