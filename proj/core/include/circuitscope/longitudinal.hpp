#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "circuitscope/circuit.hpp"
#include "circuitscope/head_metrics.hpp"
#include "circuitscope/io.hpp"

namespace circuitscope {

using NodeSet = std::set<NodeId>;

// |a ∩ b| / |a ∪ b|; two empty sets give 1.
double jaccard(const NodeSet& a, const NodeSet& b);

// x̂_1 = x_1, x̂_t = (1 - alpha) x̂_{t-1} + alpha x_t. Throws empty_input.
std::vector<double> ewma_series(const std::vector<double>& values, double alpha = 0.5);

// Pearson correlation. Throws empty_input for fewer than 2 points or
// mismatched lengths, zero_variance when either side is constant.
double pearson(const std::vector<double>& xs, const std::vector<double>& ys);

// Distinct nodes incident to the circuit's edges.
NodeSet circuit_nodes(const Circuit& circuit);

// Per step, per-head values plus the top-1 and top-5 summary. Top-5 lists
// heads by descending value, ties to the lower (layer, head).
struct EmergencePoint {
  std::int64_t step = 0;
  std::int64_t tokens_seen = 0;
  int n_heads = 0;
  std::vector<double> values;  // layer-major
  std::vector<HeadId> top;     // up to 5
  double top1 = 0.0;
  double top5_mean = 0.0;
};

std::vector<EmergencePoint> emergence_series(const std::vector<HeadScoreTable>& tables,
                                             const std::vector<std::int64_t>& tokens_seen,
                                             HeadMetric metric);

struct S2ITest {
  double effect = 0.0;             // mean metric change through the NMH queries
  double io_attention_change = 0.0;
  double s_attention_change = 0.0;  // S1 + S2
  bool reduces_metric = false;
  bool reduces_io_attention = false;
  bool raises_s_attention = false;

  bool passed() const { return reduces_metric && reduces_io_attention && raises_s_attention; }
};

// Path-patches the candidate into the query inputs of every downstream NMH
// with the name order flipped (ABBA <-> BABA) and measures, at the answer
// position, the metric change and the NMHs' attention to the IO and subject
// tokens. Throws missing_nmh.
S2ITest s2i_test(const Model& model, HeadId candidate, const TaskDataset& ioi, const std::vector<HeadId>& nmh);

// Sum over senders of |path effect| into the given receiving heads' query,
// key and value inputs, with the corrupt prompts as the altered input. Each
// sender patches only the receivers downstream of it.
std::vector<double> effects_on_heads(const Model& model, const TaskDataset& ioi,
                                     const std::vector<HeadId>& senders,
                                     const std::vector<HeadId>& receivers);

// Ratios of absolute effects; a ratio is absent when the head sets it needs
// are empty or its denominator is zero.
struct IoiRatios {
  std::optional<double> direct;    // NMH ∪ CSH share of total |direct effect|
  std::optional<double> s2i;       // S2I share of |effect| on NMHs
  std::optional<double> induction; // induction/duplicate share of |effect| on S2I
  HeadClasses classes;

  // "complete", "partial" or "absent".
  std::string status() const;
};

// Every head type the ratios need is present: a name mover or copy
// suppressor, an S-inhibition head and an induction/duplicate head.
bool circuit_emerged(const HeadClasses& classes);

// Throws no_classified_heads when classification finds nothing.
IoiRatios ioi_consistency(const Model& model, const TaskDataset& ioi, const HeadClasses& classes);

// One analysed checkpoint of a training run.
struct CheckpointRecord {
  std::int64_t step = 0;
  std::int64_t tokens_seen = 0;
  std::filesystem::path path;
};

// Checkpoints of a directory in step order; every `stride`-th one is kept
// (plus the last). Throws no_artifacts when the directory has none.
std::vector<CheckpointRecord> checkpoint_series(const std::filesystem::path& dir, int stride = 1);

struct BehaviorRow {
  std::int64_t step = 0;
  std::int64_t tokens_seen = 0;
  std::string task;
  double metric = 0.0;
};

std::vector<BehaviorRow> behavior_series(const std::vector<CheckpointRecord>& checkpoints,
                                         const std::string& task, int n_examples, std::uint64_t seed);

struct StabilityRow {
  std::int64_t step = 0;
  std::int64_t tokens_seen = 0;
  std::size_t n_nodes = 0;
  std::size_t n_edges = 0;
  double faithfulness = 0.0;
  std::optional<double> jaccard;  // vs. the previous checkpoint; none for the first
  std::optional<double> ewma;
};

// Circuits per checkpoint (EAP-IG + minimal circuit search), their node
// counts and the smoothed Jaccard series of consecutive node sets.
// Checkpoints whose search is unreachable or degenerate are skipped.
struct CircuitSeries {
  std::vector<StabilityRow> rows;
  std::vector<Circuit> circuits;
};

CircuitSeries circuit_series(const std::vector<CheckpointRecord>& checkpoints, const TaskDataset& dataset,
                             const AnalysisOptions& options);

struct RatioRow {
  std::int64_t step = 0;
  std::int64_t tokens_seen = 0;
  IoiRatios ratios;
};

// Ratios per checkpoint. Until the first checkpoint where the circuit has
// emerged (circuit_emerged), rows keep their head classes but report the
// ratios as absent.
std::vector<RatioRow> ratio_series(const std::vector<CheckpointRecord>& checkpoints, const TaskDataset& ioi,
                                   const AnalysisOptions& options, std::uint64_t seed);

void write_behavior_csv(const std::filesystem::path& path, const std::vector<BehaviorRow>& rows);
void write_stability_csv(const std::filesystem::path& path, const std::vector<StabilityRow>& rows);
void write_node_counts_csv(const std::filesystem::path& path, const std::vector<StabilityRow>& rows);
void write_ratios_csv(const std::filesystem::path& path, const std::vector<RatioRow>& rows);
void write_emergence_csv(const std::filesystem::path& path, HeadMetric metric,
                         const std::vector<EmergencePoint>& points);

}  // namespace circuitscope
