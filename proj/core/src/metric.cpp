#include "circuitscope/metric.hpp"

#include <set>
#include <string>

#include "circuitscope/error.hpp"
#include "circuitscope/forward.hpp"

namespace circuitscope {

void validate_metric(const MetricSpec& metric, int vocab_size) {
  auto check_id = [&](int id) {
    if (id < 0 || id >= vocab_size) {
      fail(Errc::vocabulary_mismatch, "metric token " + std::to_string(id) +
                                          " outside vocabulary of " + std::to_string(vocab_size));
    }
  };
  if (const auto* ld = std::get_if<LogitDiff>(&metric)) {
    check_id(ld->correct);
    check_id(ld->incorrect);
    if (ld->correct == ld->incorrect) fail(Errc::invalid_argument, "logit diff of a token with itself");
    return;
  }
  const auto& pd = std::get<ProbDiff>(metric);
  if (pd.correct.empty() || pd.incorrect.empty()) {
    fail(Errc::invalid_argument, "prob diff sets must be nonempty");
  }
  std::set<int> seen;
  for (int id : pd.correct) {
    check_id(id);
    seen.insert(id);
  }
  for (int id : pd.incorrect) {
    check_id(id);
    if (seen.count(id)) fail(Errc::invalid_argument, "prob diff sets overlap");
  }
}

double evaluate_metric(const MetricSpec& metric, std::span<const double> logits) {
  if (const auto* ld = std::get_if<LogitDiff>(&metric)) {
    return logits[ld->correct] - logits[ld->incorrect];
  }
  const auto& pd = std::get<ProbDiff>(metric);
  const auto p = ops::softmax(logits);
  double pc = 0.0;
  double pi = 0.0;
  for (int id : pd.correct) pc += p[id];
  for (int id : pd.incorrect) pi += p[id];
  return pc - pi;
}

std::vector<double> metric_gradient(const MetricSpec& metric, std::span<const double> logits) {
  std::vector<double> g(logits.size(), 0.0);
  if (const auto* ld = std::get_if<LogitDiff>(&metric)) {
    g[ld->correct] += 1.0;
    g[ld->incorrect] -= 1.0;
    return g;
  }
  const auto& pd = std::get<ProbDiff>(metric);
  const auto p = ops::softmax(logits);
  std::vector<double> w(logits.size(), 0.0);
  for (int id : pd.correct) w[id] = 1.0;
  for (int id : pd.incorrect) w[id] = -1.0;
  double m = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) m += w[i] * p[i];
  for (std::size_t i = 0; i < p.size(); ++i) g[i] = p[i] * (w[i] - m);
  return g;
}

MetricSpec swap_roles(const MetricSpec& metric) {
  if (const auto* ld = std::get_if<LogitDiff>(&metric)) return LogitDiff{ld->incorrect, ld->correct};
  const auto& pd = std::get<ProbDiff>(metric);
  return ProbDiff{pd.incorrect, pd.correct};
}

}  // namespace circuitscope
