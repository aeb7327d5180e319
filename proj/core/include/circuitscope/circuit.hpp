#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "circuitscope/attribution.hpp"
#include "circuitscope/forward.hpp"

namespace circuitscope {

struct SearchPoint {
  std::size_t size = 0;
  double faithfulness = 0.0;

  friend bool operator==(const SearchPoint&, const SearchPoint&) = default;
};

struct Circuit {
  std::vector<Edge> edges;  // sorted in edge order
  double faithfulness = 0.0;
  std::string task;
  std::int64_t checkpoint_step = 0;
  double threshold = 0.0;
  std::vector<SearchPoint> search_trace;  // in evaluation order

  std::size_t n_edges() const { return edges.size(); }

  friend bool operator==(const Circuit&, const Circuit&) = default;
};

// Caches clean and corrupt runs of a dataset so that many circuits can be
// evaluated against one model.
class FaithfulnessEvaluator {
 public:
  // Throws degenerate_baseline when |mean clean - mean corrupt| < 1e-8.
  FaithfulnessEvaluator(const Model& model, const TaskDataset& dataset);

  // (mean M_circuit - mean M_corrupt) / (mean M_clean - mean M_corrupt),
  // where M_circuit patches every edge outside `in_circuit` (one flag per
  // graph edge) with its corrupt-run contribution.
  double operator()(const std::vector<char>& in_circuit) const;
  double operator()(const std::vector<Edge>& edges) const;

  double clean_metric() const { return clean_mean_; }
  double corrupt_metric() const { return corrupt_mean_; }

 private:
  const Model& model_;
  const TaskDataset& dataset_;
  std::vector<ActivationCache> corrupt_;
  double clean_mean_ = 0.0;
  double corrupt_mean_ = 0.0;
};

double faithfulness(const Model& model, const TaskDataset& dataset, const std::vector<Edge>& edges);

// The k edges with the largest |score|; ties go to the earlier edge in
// edge order. Throws k_out_of_range unless 1 <= k <= total edges.
Circuit greedy_circuit(const EdgeScores& scores, std::size_t k);

// Smallest greedy circuit reaching `threshold`, by binary search over sizes
// in [1, ceil(budget_fraction * E)], doubling the upper bound (capped at E)
// while it fails. Every evaluated size is recorded in search_trace.
// Throws unreachable_threshold when the full graph fails.
Circuit minimal_circuit(const Model& model, const TaskDataset& dataset, const EdgeScores& scores,
                        double threshold = 0.8, double budget_fraction = 0.05);

// {format_version, task, checkpoint_step, threshold, n_edges, faithfulness,
//  edges:[{src,dst,channel}], search_trace:[{size,faithfulness}]}
std::string circuit_to_json(const Circuit& circuit);
Circuit circuit_from_json(const std::string& text);

}  // namespace circuitscope
