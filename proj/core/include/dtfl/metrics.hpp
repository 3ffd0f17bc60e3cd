#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace dtfl::metrics {

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t tn = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + tn + fp + fn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// A score >= threshold predicts anomalous.
ConfusionCounts confusion(std::span<const double> scores, std::span<const std::uint8_t> labels,
                          double threshold = 0.5);

/// Ratios with a zero denominator are reported as 0.
struct BasicMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double tpr = 0.0;
  double fpr = 0.0;
};

BasicMetrics basic_metrics(const ConfusionCounts& c);

/// Mann-Whitney AUC: P(s+ > s-) + P(s+ == s-)/2, via one sort and tie-group
/// sweep. Throws InvalidInput unless both classes are present.
double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Accuracy, precision, recall, F1 and AUC of one evaluation.
struct Evaluation {
  ConfusionCounts counts;
  BasicMetrics basic;
  /// Absent when the evaluated set has a single class.
  std::optional<double> auc;
};

Evaluation evaluate(std::span<const double> scores, std::span<const std::uint8_t> labels, double threshold = 0.5);

/// 1-based round number of the first accuracy >= target, or nullopt.
/// `accuracies[i]` belongs to round i+1; nullopt entries were not evaluated.
std::optional<std::size_t> rounds_to_target(std::span<const std::optional<double>> accuracies, double target);

}  // namespace dtfl::metrics
