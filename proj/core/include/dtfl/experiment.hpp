#pragma once

// Experiment configuration, dataset wiring and result bundles. Configs are
// JSON trees; every default is filled in during parsing and the normalized
// tree is echoed into each bundle, so a bundle alone regenerates its run.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dtfl/alignment.hpp"
#include "dtfl/baselines.hpp"
#include "dtfl/data.hpp"
#include "dtfl/engine.hpp"
#include "dtfl/methods.hpp"

namespace dtfl::experiment {

/// Environment variable that overrides `output_root`.
inline constexpr const char* kOutputRootEnv = "DTFL_OUTPUT_ROOT";

enum class SourceKind { Synthetic, Csv };

struct CsvSource {
  std::filesystem::path real;
  std::filesystem::path twin;  // optional for runs, required for align
  std::string schema = "i40";
};

struct DataConfig {
  SourceKind source = SourceKind::Synthetic;
  data::SyntheticScenario synthetic;  // seed is taken from the run seed
  CsvSource csv;
  double test_fraction = 0.2;
  data::PartitionScheme partition = data::PartitionScheme::Iid;
  double minority_fraction = 0.5;
  bool standardize = true;
};

struct StrategySettings {
  double fedprox_mu = 0.01;
  fl::HFLConfig hfl;
  methods::TwinOptions twin;
  methods::DTMLConfig dtml;
  methods::FPFConfig fpf;
  methods::ExchangePolicy lpe;
  methods::CWAConfig cwa;
  methods::DTKDConfig dtkd;
};

struct SweepSpec {
  std::string param;
  std::vector<std::string> values;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::string preset;
  DataConfig data;
  std::vector<std::size_t> hidden{16, 8};
  fl::FLConfig fl;
  std::vector<std::string> strategies{"fedavg"};
  std::vector<std::uint64_t> seeds{0};
  StrategySettings settings;
  align::AlignmentOptions alignment;
  std::optional<SweepSpec> sweep;
  std::string output_root = "results";
  /// Sweep/run cells executed concurrently.
  std::size_t jobs = 1;
};

inline const std::vector<std::string>& strategy_names() {
  static const std::vector<std::string> names{"fedavg", "fedprox", "hfl", "dtml", "fpf", "lpe", "cwa", "dtkd"};
  return names;
}

inline const std::vector<std::string>& sweep_params() {
  static const std::vector<std::string> names{"E", "B", "C", "gamma", "teacher_epochs", "exchange_policy"};
  return names;
}

/// Parses a JSON config. A `preset` key ("convergence", "gamma-sweep",
/// "scale100") supplies defaults that the remaining keys override. Throws
/// ConfigError naming the offending field.
ExperimentConfig parse_config(std::string_view json_text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// The fully-defaulted config as pretty JSON. parse_config(normalized_json(c))
/// reproduces c.
std::string normalized_json(const ExperimentConfig& config);

/// Applies one sweep value; throws ConfigError for an unknown parameter or a
/// value of the wrong type.
void apply_sweep_value(ExperimentConfig& config, const std::string& param, const std::string& value);

std::unique_ptr<fl::Strategy> make_strategy(const std::string& name, const StrategySettings& settings);

struct PreparedData {
  fl::Federation federation;
  data::Dataset real;  // standardized, before the split
};

/// Loads or generates the data for `seed`, standardizes (real and twin
/// pooled), splits real into train/test and partitions train over K clients.
PreparedData prepare_data(const ExperimentConfig& config, std::uint64_t seed);

/// The real/twin pair for alignment analysis, unstandardized.
std::pair<data::Dataset, data::Dataset> alignment_pair(const ExperimentConfig& config);

struct Cell {
  std::string strategy;
  std::uint64_t seed = 0;
  std::string sweep_value;  // empty outside sweeps
  fl::ExperimentResult result;
};

/// Every (strategy, seed) cell of the config.
std::vector<Cell> run_cells(const ExperimentConfig& config);

/// round, accuracy, precision, recall, f1, auc, params_up, params_down,
/// reached_target, wall_time_ms.
void write_rounds_csv(std::ostream& out, const std::vector<fl::RoundRecord>& records);

/// Median with absent values ordered after every present one; absent when
/// the median itself falls on an absent value.
std::optional<double> median_rounds(const std::vector<std::optional<std::size_t>>& rounds);

std::filesystem::path bundle_dir(const ExperimentConfig& config);

/// Writes rounds CSVs and summary.json; returns the bundle directory.
std::filesystem::path write_run_bundle(const ExperimentConfig& config, const std::vector<Cell>& cells);

/// Runs one sweep (cells for every value x strategy x seed) and writes
/// sweep.json plus the per-cell CSVs.
std::filesystem::path run_sweep(ExperimentConfig config, const SweepSpec& sweep);

/// Writes alignment.json and pca.csv.
std::filesystem::path run_alignment(const ExperimentConfig& config);

}  // namespace dtfl::experiment
