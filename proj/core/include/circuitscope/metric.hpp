#pragma once

#include <span>
#include <variant>
#include <vector>

namespace circuitscope {

// logit[correct] - logit[incorrect]
struct LogitDiff {
  int correct = 0;
  int incorrect = 0;

  friend bool operator==(const LogitDiff&, const LogitDiff&) = default;
};

// sum_{y in correct} p(y) - sum_{y in incorrect} p(y)
struct ProbDiff {
  std::vector<int> correct;
  std::vector<int> incorrect;

  friend bool operator==(const ProbDiff&, const ProbDiff&) = default;
};

using MetricSpec = std::variant<LogitDiff, ProbDiff>;

// Checks ids < vocab_size, nonempty and disjoint sets. Throws
// Error(vocabulary_mismatch) or Error(invalid_argument).
void validate_metric(const MetricSpec& metric, int vocab_size);

double evaluate_metric(const MetricSpec& metric, std::span<const double> logits);

// d metric / d logits.
std::vector<double> metric_gradient(const MetricSpec& metric, std::span<const double> logits);

// Exchanges correct and incorrect roles; negates the metric exactly.
MetricSpec swap_roles(const MetricSpec& metric);

}  // namespace circuitscope
