#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "circuitscope/intervention.hpp"
#include "circuitscope/tasks.hpp"

namespace circuitscope {

enum class HeadMetric { Copy, Cspa, PrevToken, DuplicateToken, Induction, Successor };

std::string_view to_string(HeadMetric metric) noexcept;
// Throws invalid_argument for unknown names.
HeadMetric parse_head_metric(std::string_view name);
const std::vector<HeadMetric>& all_head_metrics();

// A token sequence and the position of a name inside it.
struct NameSample {
  std::vector<int> tokens;
  std::size_t position = 0;
};

// Both name occurrences (IO and S1 slots) of every clean IOI prompt.
std::vector<NameSample> name_samples(const TaskDataset& ioi);

// Fraction of samples whose name ranks in the top 5 when the residual stream
// after MLP 0 at the name position is sent through the head's OV circuit,
// the final norm's gain (no bias) and the unembedding. A sample fails when
// five or more other tokens score at least as high as the name, so an
// all-zero output fails. Throws empty_dataset.
double copy_score(const Model& model, HeadId head, std::span<const NameSample> samples);

// 1 - D_cspa / D_mean, where D_x is the mean KL(clean || ablated) of the
// next-token distribution over every position of the corpus. Mean ablation
// replaces the head's output with its corpus mean. Copy-suppression
// ablation keeps, for each destination, the top ceil(5% of sources) source
// positions ranked by the logit lens of the head's query input, and replaces
// their result vectors with the negative part of their projection onto the
// source token's unembedding; other sources contribute the mean output.
// The score is not clamped. Throws degenerate_baseline when D_mean < 1e-8.
double cspa_score(const Model& model, HeadId head, const std::vector<std::vector<int>>& corpus);

// Mean attention from each position t >= 1 to t - 1. Throws
// sequence_too_short for sequences under 2 tokens.
double prev_token_score(const Model& model, HeadId head, const std::vector<std::vector<int>>& corpus);

// Mean attention from t in [L, 2L) to t - L (duplicate) or t - L + 1
// (induction). Throw malformed_corpus.
double duplicate_token_score(const Model& model, HeadId head, const RepeatedCorpus& corpus);
double induction_score(const Model& model, HeadId head, const RepeatedCorpus& corpus);

// Attention score of uniform causal attention at offset t - L + 1:
// (1/L) * sum_{t=L}^{2L-1} 1/(t+1).
double uniform_induction_baseline(std::size_t segment_length);

// M = W_U^T OV(e + MLP_0(e)) for each x with embedding e; a pair (x, y)
// counts when M[x][y] is strictly above M[x][y'] for every other candidate.
// Throws empty_dataset.
double successor_score(const Model& model, HeadId head, const SuccessorDataset& dataset);

// Inputs shared by all metrics of one scoring run.
struct HeadMetricInputs {
  std::vector<NameSample> names;
  std::vector<std::vector<int>> text;  // CSPA and previous-token corpus
  RepeatedCorpus repeated;
  SuccessorDataset successor;

  // IOI names, a task-mixture text corpus of about `text_tokens` tokens,
  // repeated-segment sequences sized to the model context, and the
  // successor pairs. Deterministic in `seed`.
  static HeadMetricInputs standard(const ModelConfig& config, std::uint64_t seed,
                                   std::size_t text_tokens = 10000);
};

// Sequences from the task training generators, round-robin across tasks, until
// `target_tokens` is reached. Sequences longer than `max_len` are skipped.
std::vector<std::vector<int>> task_mixture_corpus(std::size_t target_tokens, std::size_t max_len,
                                                  std::uint64_t seed);

class HeadScoreTable {
 public:
  HeadScoreTable() = default;
  HeadScoreTable(std::int64_t step, int n_layers, int n_heads);

  std::int64_t step() const noexcept { return step_; }
  int n_layers() const noexcept { return n_layers_; }
  int n_heads() const noexcept { return n_heads_; }
  bool has(HeadMetric metric) const { return values_.contains(metric); }
  std::vector<HeadMetric> metrics() const;

  // Throws missing_inputs when the metric was not scored.
  double get(HeadMetric metric, HeadId head) const;
  const std::vector<double>& values(HeadMetric metric) const;
  void set(HeadMetric metric, HeadId head, double value);

  friend bool operator==(const HeadScoreTable&, const HeadScoreTable&) = default;

 private:
  std::int64_t step_ = 0;
  int n_layers_ = 0;
  int n_heads_ = 0;
  std::map<HeadMetric, std::vector<double>> values_;
};

// Scores every head on each requested metric. Heads whose CSPA baseline is
// degenerate receive 0.
HeadScoreTable score_heads(const Model& model, const std::vector<HeadMetric>& metrics,
                           const HeadMetricInputs& inputs);

// Long format (step, layer, head, metric, value), tables in order.
void write_head_scores_csv(const std::filesystem::path& path, const std::vector<HeadScoreTable>& tables);
std::vector<HeadScoreTable> read_head_scores_csv(const std::filesystem::path& path);

struct HeadClasses {
  std::vector<HeadId> direct;  // |direct effect| at or above the mean
  std::vector<HeadId> nmh;
  std::vector<HeadId> csh;
  std::vector<HeadId> s2i;
  std::vector<HeadId> induction;  // induction or duplicate-token heads
  std::vector<double> direct_effects;  // per head, layer-major

  bool empty() const { return nmh.empty() && csh.empty() && s2i.empty() && induction.empty(); }
};

// Labels IOI heads:
//  - NMH: direct head with copy score above the threshold;
//  - CSH: direct head, not an NMH, with CSPA above the threshold;
//  - S2I: head whose |path effect| on the NMH query/key/value inputs is at
//    least the mean over upstream heads and which passes s2i_test;
//  - induction/duplicate: head whose |path effect| on the S2I inputs is at
//    least the mean over upstream heads, with an above-mean induction or
//    duplicate-token score.
// `scores` must contain copy, CSPA, induction and duplicate-token values;
// otherwise throws missing_inputs. Empty `direct_effects` are computed.
HeadClasses classify_heads(const Model& model, const TaskDataset& ioi, const HeadScoreTable& scores,
                           std::vector<double> direct_effects = {}, double threshold = 0.10);

}  // namespace circuitscope
