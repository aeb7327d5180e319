#pragma once

#include <functional>
#include <string>
#include <vector>

#include "circuitscope/checkpoint.hpp"
#include "circuitscope/head_metrics.hpp"
#include "circuitscope/intervention.hpp"
#include "circuitscope/model.hpp"
#include "circuitscope/rng.hpp"
#include "circuitscope/tasks.hpp"
#include "models.hpp"

namespace cstest {

// Named access to a flat parameter vector for hand-built weights.
class ParamEditor {
 public:
  explicit ParamEditor(const circuitscope::ModelConfig& c, std::vector<double> params = {})
      : config_(c), layout_(c), p_(std::move(params)) {
    if (p_.empty()) p_.assign(layout_.total(), 0.0);
  }

  double* at(const std::string& name) { return p_.data() + layout_.at(name).offset; }
  std::size_t size(const std::string& name) const { return layout_.at(name).size; }
  void fill(const std::string& name, double v) {
    double* x = at(name);
    for (std::size_t i = 0; i < size(name); ++i) x[i] = v;
  }
  // Every norm gain set to 1 and bias to 0.
  void unit_norms() {
    for (const auto& e : layout_.entries()) {
      if (e.name.find("ln") != std::string::npos) {
        for (std::size_t i = 0; i < e.size; ++i) p_[e.offset + i] = e.name.ends_with(".w") ? 1.0 : 0.0;
      }
    }
  }
  // Zeroes W_V, b_V and W_O of one head.
  void zero_ov(int layer, int head) {
    const std::size_t d = static_cast<std::size_t>(config_.d_model);
    const std::size_t dh = config_.d_head();
    const std::string b = "blocks." + std::to_string(layer) + ".attn.";
    std::fill_n(at(b + "W_V") + static_cast<std::size_t>(head) * d * dh, d * dh, 0.0);
    std::fill_n(at(b + "b_V") + static_cast<std::size_t>(head) * dh, dh, 0.0);
    std::fill_n(at(b + "W_O") + static_cast<std::size_t>(head) * dh * d, dh * d, 0.0);
  }
  void zero_mlp(int layer) {
    const std::string b = "blocks." + std::to_string(layer) + ".mlp.";
    fill(b + "W_out", 0.0);
    fill(b + "b_out", 0.0);
  }

  circuitscope::Model model() const { return circuitscope::Model(config_, p_); }
  std::vector<double>& params() { return p_; }
  const circuitscope::ModelConfig& config() const { return config_; }

 private:
  circuitscope::ModelConfig config_;
  circuitscope::ParamLayout layout_;
  std::vector<double> p_;
};

// Clean/corrupt pairs of random tokens differing at one position, scored by
// the logit difference of two fixed tokens at the last position.
inline circuitscope::TaskDataset random_pairs(int n, std::size_t len, int vocab, std::uint64_t seed,
                                              std::size_t diff_pos = 1) {
  circuitscope::Rng rng(seed);
  circuitscope::TaskDataset ds;
  ds.task = "random";
  ds.seed = seed;
  for (int i = 0; i < n; ++i) {
    circuitscope::TaskExample ex;
    for (std::size_t t = 0; t < len; ++t) ex.clean.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab))));
    ex.corrupt = ex.clean;
    ex.corrupt[diff_pos] = (ex.clean[diff_pos] + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab - 1)))) % vocab;
    ex.answer_position = len - 1;
    ex.metric = circuitscope::LogitDiff{0, 1};
    ex.slots = {{"X", diff_pos}};
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

}  // namespace cstest

namespace cstest {

// Zero-mean code with entries +1/-1 at 2k and 2k+1 of `base + ...`; codes
// with distinct k are orthogonal and survive layer norm up to a scale.
inline void put_code(double* row, std::size_t k, double scale = 1.0) {
  row[2 * k] += scale;
  row[2 * k + 1] -= scale;
}

// Pointers into one head's d x d_head (Q, K, V) or d_head x d (O) block.
inline double* head_block(ParamEditor& ed, int layer, int head, const std::string& which) {
  const auto& c = ed.config();
  const std::size_t d = static_cast<std::size_t>(c.d_model);
  const std::size_t dh = c.d_head();
  return ed.at("blocks." + std::to_string(layer) + ".attn." + which) + static_cast<std::size_t>(head) * d * dh;
}

// Single-head layer whose attention goes from t to t - offset (rows with
// t < offset attend uniformly). Token embeddings are zero; position t
// carries code t. d_model must be at least 2 * max_seq_len.
inline circuitscope::Model positional_offset_model(int offset, int vocab = 32, int seq = 16, double sharp = 10.0) {
  auto c = tiny_config(1, 1, 2 * seq, vocab, seq);
  ParamEditor ed(c);
  ed.unit_norms();
  const std::size_t d = static_cast<std::size_t>(c.d_model);
  for (int t = 0; t < seq; ++t) put_code(ed.at("embed.W_pos") + static_cast<std::size_t>(t) * d, static_cast<std::size_t>(t));
  double* q = head_block(ed, 0, 0, "W_Q");
  double* k = head_block(ed, 0, 0, "W_K");
  for (std::size_t i = 0; i < d; ++i) q[i * d + i] = sharp;
  // Key of position s points at the code of s + offset.
  for (int s = 0; s + offset < seq; ++s) {
    const std::size_t from = 2 * static_cast<std::size_t>(s);
    const std::size_t to = 2 * static_cast<std::size_t>(s + offset);
    k[from * d + to] = 1.0;
    k[(from + 1) * d + to + 1] = 1.0;
  }
  return ed.model();
}

// Token vocabulary of the code-based planted models.
inline constexpr int kCodeVocab = 16;

inline std::vector<std::vector<int>> random_text(int n, std::size_t len, int vocab, std::uint64_t seed) {
  std::vector<std::vector<int>> out;
  for (int i = 0; i < n; ++i) out.push_back(cstest::random_tokens(len, vocab, seed + static_cast<std::uint64_t>(i)));
  return out;
}

inline circuitscope::RepeatedCorpus repeated(int n, std::size_t L, std::uint64_t seed) {
  circuitscope::RepeatedCorpus c;
  c.segment_length = L;
  circuitscope::Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    std::vector<int> ids(kCodeVocab);
    for (int j = 0; j < kCodeVocab; ++j) ids[static_cast<std::size_t>(j)] = j;
    rng.shuffle(ids.begin(), ids.end());
    std::vector<int> seq(ids.begin(), ids.begin() + static_cast<long>(L));
    seq.insert(seq.end(), ids.begin(), ids.begin() + static_cast<long>(L));
    c.sequences.push_back(seq);
  }
  return c;
}

// Direct double loop over attention rows.
inline double diagonal_oracle(const circuitscope::Model& m, circuitscope::HeadId h,
                              const std::vector<std::vector<int>>& seqs, std::size_t from, std::size_t offset) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& seq : seqs) {
    const circuitscope::Matrix a = circuitscope::attention_pattern(m, seq, h);
    for (std::size_t t = from; t < seq.size(); ++t) {
      s += a(t, t - offset);
      ++n;
    }
  }
  return s / static_cast<double>(n);
}

// Two layers, one head each. Tokens carry orthogonal codes, positions
// nothing, layer 0 and both MLPs are silent, and the unembedding reads the
// token codes back. Layer 1's OV circuit maps code i to code map(i).
inline circuitscope::Model token_code_model(const std::function<int(int)>& map, double ov_scale = 1.0) {
  const auto c = cstest::tiny_config(2, 1, 2 * kCodeVocab, kCodeVocab, 16);
  cstest::ParamEditor ed(c);
  ed.unit_norms();
  const std::size_t d = static_cast<std::size_t>(c.d_model);
  const std::size_t V = static_cast<std::size_t>(kCodeVocab);
  for (std::size_t t = 0; t < V; ++t) {
    cstest::put_code(ed.at("embed.W_E") + t * d, t);
    ed.at("unembed.W_U")[2 * t * V + t] = 1.0;
    ed.at("unembed.W_U")[(2 * t + 1) * V + t] = -1.0;
  }
  double* v = cstest::head_block(ed, 1, 0, "W_V");
  double* o = cstest::head_block(ed, 1, 0, "W_O");
  for (std::size_t i = 0; i < d; ++i) v[i * d + i] = 1.0;
  for (int t = 0; t < kCodeVocab; ++t) {
    const int to = map(t);
    if (to < 0) continue;
    for (std::size_t b = 0; b < 2; ++b) {
      o[(2 * static_cast<std::size_t>(t) + b) * d + 2 * static_cast<std::size_t>(to) + b] = ov_scale;
    }
  }
  return ed.model();
}

inline std::vector<circuitscope::NameSample> name_samples_small(int n, std::uint64_t seed) {
  std::vector<circuitscope::NameSample> out;
  circuitscope::Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    circuitscope::NameSample s{cstest::random_tokens(10, kCodeVocab, seed + static_cast<std::uint64_t>(i)),
                               rng.below(10)};
    out.push_back(s);
  }
  return out;
}

inline circuitscope::SuccessorDataset small_successor() {
  circuitscope::SuccessorDataset ds;
  for (int x = 0; x < 10; ++x) ds.pairs.push_back({x, x + 1, "counting"});
  for (int y = 1; y <= 10; ++y) ds.candidates.push_back(y);
  return ds;
}

// 1 layer, 1 head: only input -> logits carries signal.
inline circuitscope::Model one_live_edge_model() {
  const auto c = cstest::tiny_config(1, 1, 8);
  cstest::ParamEditor ed(c, cstest::random_params(c, 31));
  ed.zero_ov(0, 0);
  ed.zero_mlp(0);
  return ed.model();
}

}  // namespace cstest
