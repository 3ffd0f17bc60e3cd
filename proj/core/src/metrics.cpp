#include "dtfl/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "dtfl/errors.hpp"

namespace dtfl::metrics {

namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

void check_lengths(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw InvalidInput("scores and labels differ in length");
  for (std::uint8_t y : labels)
    if (y > 1) throw InvalidInput("labels must be 0 or 1");
}

}  // namespace

ConfusionCounts confusion(std::span<const double> scores, std::span<const std::uint8_t> labels, double threshold) {
  check_lengths(scores, labels);
  ConfusionCounts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (labels[i]) {
      predicted ? ++c.tp : ++c.fn;
    } else {
      predicted ? ++c.fp : ++c.tn;
    }
  }
  return c;
}

BasicMetrics basic_metrics(const ConfusionCounts& c) {
  BasicMetrics m;
  m.accuracy = ratio(c.tp + c.tn, c.total());
  m.precision = ratio(c.tp, c.tp + c.fp);
  m.recall = ratio(c.tp, c.tp + c.fn);
  m.tpr = m.recall;
  m.fpr = ratio(c.fp, c.fp + c.tn);
  // 2PR / (P + R) reduced to counts, so it rounds once.
  m.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  return m;
}

double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_lengths(scores, labels);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Walk tie groups in ascending score order. Each positive beats every
  // negative already passed and half-beats the negatives in its own group.
  double wins = 0.0;
  std::size_t negatives_below = 0;
  std::size_t positives = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    std::size_t group_pos = 0;
    std::size_t group_neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      labels[order[j]] ? ++group_pos : ++group_neg;
      ++j;
    }
    wins += static_cast<double>(group_pos) *
            (static_cast<double>(negatives_below) + 0.5 * static_cast<double>(group_neg));
    negatives_below += group_neg;
    positives += group_pos;
    i = j;
  }
  const std::size_t negatives = negatives_below;
  if (positives == 0 || negatives == 0) throw InvalidInput("AUC needs at least one positive and one negative");
  return wins / (static_cast<double>(positives) * static_cast<double>(negatives));
}

Evaluation evaluate(std::span<const double> scores, std::span<const std::uint8_t> labels, double threshold) {
  Evaluation e;
  e.counts = confusion(scores, labels, threshold);
  e.basic = basic_metrics(e.counts);
  const std::size_t positives = e.counts.tp + e.counts.fn;
  if (positives > 0 && positives < labels.size()) e.auc = roc_auc(scores, labels);
  return e;
}

std::optional<std::size_t> rounds_to_target(std::span<const std::optional<double>> accuracies, double target) {
  for (std::size_t i = 0; i < accuracies.size(); ++i)
    if (accuracies[i] && *accuracies[i] >= target) return i + 1;
  return std::nullopt;
}

}  // namespace dtfl::metrics
