#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "circuitscope/graph.hpp"
#include "circuitscope/model.hpp"
#include "circuitscope/tasks.hpp"

namespace circuitscope {

// One score per graph edge, aligned with EdgeGraph::edges().
struct EdgeScores {
  std::vector<Edge> edges;
  std::vector<double> scores;
  int m = 0;
  std::string dataset;
  std::int64_t checkpoint_step = 0;

  double score(const Edge& edge) const;

  friend bool operator==(const EdgeScores&, const EdgeScores&) = default;
};

inline EdgeGraph enumerate_edges(const ModelConfig& config) { return EdgeGraph(config); }

// Integrated-gradients edge attribution. For edge (u, v, c):
//   score = (z'_u - z_u) . (1/m) sum_{k=1..m} dL/dz_{v,c} at z' + (k/m)(z - z')
// with every node output blended jointly, the dot product taken over all
// positions up to the answer and all features, and the result averaged over
// examples. z is the clean run, z' the corrupt run, L the example metric.
// Per example: two cache forwards plus m blended forward/backward pairs.
EdgeScores eap_ig(const Model& model, const TaskDataset& dataset, int m = 5);

// Metric change from replacing only `edge`'s contribution with the
// corrupt-run value, averaged over examples.
double score_edge_exact(const Model& model, const TaskDataset& dataset, const Edge& edge);

// score_edge_exact for every edge, in graph order.
EdgeScores score_edges_exact(const Model& model, const TaskDataset& dataset);

// {format_version, checkpoint_step, m, dataset, edges:[{src,dst,channel,score}]}
std::string edge_scores_to_json(const EdgeScores& scores);
EdgeScores edge_scores_from_json(const std::string& text);

// Parses "a0.h1->m1.mlp_in"; throws unknown_edge.
Edge parse_edge(const std::string& text);

}  // namespace circuitscope
