#include "circuitscope/head_metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "circuitscope/error.hpp"
#include "circuitscope/io.hpp"
#include "circuitscope/longitudinal.hpp"
#include "circuitscope/parallel.hpp"
#include "circuitscope/vocab.hpp"

namespace circuitscope {

namespace {

constexpr std::array<std::pair<HeadMetric, std::string_view>, 6> kMetricNames{{
    {HeadMetric::Copy, "copy"},
    {HeadMetric::Cspa, "cspa"},
    {HeadMetric::PrevToken, "prev_token"},
    {HeadMetric::DuplicateToken, "duplicate_token"},
    {HeadMetric::Induction, "induction"},
    {HeadMetric::Successor, "successor"},
}};

void check_head(const ModelConfig& c, HeadId h) {
  if (h.layer < 0 || h.layer >= c.n_layers || h.head < 0 || h.head >= c.n_heads) {
    fail(Errc::invalid_argument, "head " + h.name() + " outside the model");
  }
}

Matrix row_matrix(std::span<const double> row) {
  Matrix m(1, row.size());
  std::copy(row.begin(), row.end(), m.row(0).begin());
  return m;
}

// Residual stream after MLP 0 at `pos`.
Matrix residual_after_mlp0(const Model& model, const ActivationCache& cache, std::size_t pos) {
  const auto& g = model.graph();
  Matrix x = row_matrix(cache.output(g, NodeId::input()).row(pos));
  for (int h = 0; h < model.config().n_heads; ++h) x += row_matrix(cache.output(g, NodeId::attn(0, h)).row(pos));
  x += row_matrix(cache.output(g, NodeId::mlp(0)).row(pos));
  return x;
}

// Logits of the final norm without its bias followed by the unembedding.
std::vector<double> unembed_no_bias(const Model& model, const Matrix& x) {
  const auto& cfg = model.config();
  const auto& off = model.offsets();
  const std::vector<double> zero(static_cast<std::size_t>(cfg.d_model), 0.0);
  const Matrix n = ops::layer_norm(x, model.p(off.lnf_w), zero.data());
  Matrix logits(1, static_cast<std::size_t>(cfg.vocab_size));
  kernel::gemm_nn(n.data(), model.p(off.w_u), logits.data(), 1, cfg.d_model, cfg.vocab_size, false);
  return {logits.row(0).begin(), logits.row(0).end()};
}

bool in_top5(std::span<const double> logits, int target) {
  const double v = logits[static_cast<std::size_t>(target)];
  int at_least = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (static_cast<int>(i) != target && logits[i] >= v) ++at_least;
  }
  return at_least < 5;
}

double kl(std::span<const double> p, std::span<const double> q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) s += p[i] * (std::log(p[i]) - std::log(std::max(q[i], 1e-300)));
  }
  return s;
}

void check_text(const ModelConfig& c, const std::vector<std::vector<int>>& corpus) {
  if (corpus.empty()) fail(Errc::empty_dataset, "corpus is empty");
  for (const auto& s : corpus) check_tokens(c, s);
}

// Mean over sequences and rows t in [from(T), T) of attn[t][t - offset(T)].
template <class Rows>
double mean_diagonal(const Model& model, HeadId head, const std::vector<std::vector<int>>& corpus,
                     Rows rows) {
  const auto& cfg = model.config();
  std::vector<double> sums(corpus.size(), 0.0);
  std::vector<std::size_t> counts(corpus.size(), 0);
  parallel_for(corpus.size(), [&](std::size_t i) {
    const auto cache = forward(model, corpus[i]);
    const Matrix& a = cache.attention(cfg.n_heads, head.layer, head.head);
    const auto [from, offset] = rows(corpus[i].size());
    for (std::size_t t = from; t < corpus[i].size(); ++t) {
      sums[i] += a(t, t - offset);
      ++counts[i];
    }
  });
  const double total = std::accumulate(sums.begin(), sums.end(), 0.0);
  const std::size_t n = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  return total / static_cast<double>(n);
}

}  // namespace

std::string_view to_string(HeadMetric metric) noexcept {
  for (const auto& [m, name] : kMetricNames) {
    if (m == metric) return name;
  }
  return "?";
}

HeadMetric parse_head_metric(std::string_view name) {
  for (const auto& [m, n] : kMetricNames) {
    if (n == name) return m;
  }
  fail(Errc::invalid_argument, "unknown head metric '" + std::string(name) + "'");
}

const std::vector<HeadMetric>& all_head_metrics() {
  static const std::vector<HeadMetric> all = [] {
    std::vector<HeadMetric> v;
    for (const auto& [m, n] : kMetricNames) v.push_back(m);
    return v;
  }();
  return all;
}

std::vector<NameSample> name_samples(const TaskDataset& ioi) {
  std::vector<NameSample> out;
  for (const auto& ex : ioi.examples) {
    out.push_back({ex.clean, ex.slot("IO")});
    out.push_back({ex.clean, ex.slot("S1")});
  }
  return out;
}

double copy_score(const Model& model, HeadId head, std::span<const NameSample> samples) {
  const auto& cfg = model.config();
  check_head(cfg, head);
  if (samples.empty()) fail(Errc::empty_dataset, "copy score needs at least one name sample");
  std::vector<char> hit(samples.size(), 0);
  parallel_for(samples.size(), [&](std::size_t i) {
    const auto& s = samples[i];
    if (s.position >= s.tokens.size()) fail(Errc::invalid_argument, "name position outside sequence");
    const auto cache = forward(model, s.tokens);
    const Matrix x = residual_after_mlp0(model, cache, s.position);
    const auto logits = unembed_no_bias(model, ops::head_ov(model, head.layer, head.head, x));
    hit[i] = in_top5(logits, s.tokens[s.position]) ? 1 : 0;
  });
  return static_cast<double>(std::count(hit.begin(), hit.end(), 1)) / static_cast<double>(samples.size());
}

double cspa_score(const Model& model, HeadId head, const std::vector<std::vector<int>>& corpus) {
  const auto& cfg = model.config();
  const auto& g = model.graph();
  check_head(cfg, head);
  check_text(cfg, corpus);
  const std::size_t node = g.node_index(head.node());
  const std::size_t d = static_cast<std::size_t>(cfg.d_model);
  const std::size_t V = static_cast<std::size_t>(cfg.vocab_size);
  const double* w_u = model.p(model.offsets().w_u);

  std::vector<ActivationCache> clean(corpus.size());
  parallel_for(corpus.size(), [&](std::size_t i) { clean[i] = forward(model, corpus[i]); });

  // Mean head output over every position of the corpus.
  Matrix mean(1, d);
  std::size_t positions = 0;
  for (const auto& c : clean) {
    const Matrix& out = c.node_out[node];
    for (std::size_t t = 0; t < out.rows(); ++t) {
      for (std::size_t j = 0; j < d; ++j) mean(0, j) += out(t, j);
    }
    positions += out.rows();
  }
  for (double& v : mean.flat()) v /= static_cast<double>(positions);

  std::vector<double> d_cspa(corpus.size(), 0.0);
  std::vector<double> d_mean(corpus.size(), 0.0);
  parallel_for(corpus.size(), [&](std::size_t i) {
    const auto& toks = corpus[i];
    const auto& c = clean[i];
    const std::size_t T = toks.size();
    const Matrix& attn = c.attention(cfg.n_heads, head.layer, head.head);
    const Matrix result = ops::head_ov(model, head.layer, head.head, c.input(g, head.node(), Channel::V));
    const Matrix lens = ops::unembed(model, c.input(g, head.node(), Channel::Q));

    Matrix ablated_mean(T, d);
    Matrix ablated_cspa(T, d);
    std::vector<std::size_t> order;
    std::vector<double> u(d);
    for (std::size_t dst = 0; dst < T; ++dst) {
      std::copy(mean.row(0).begin(), mean.row(0).end(), ablated_mean.row(dst).begin());
      order.resize(dst + 1);
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return lens(dst, static_cast<std::size_t>(toks[a])) > lens(dst, static_cast<std::size_t>(toks[b]));
      });
      const std::size_t keep = static_cast<std::size_t>(std::ceil(0.05 * static_cast<double>(dst + 1)));
      std::vector<char> top(dst + 1, 0);
      for (std::size_t k = 0; k < keep; ++k) top[order[k]] = 1;
      auto out = ablated_cspa.row(dst);
      for (std::size_t src = 0; src <= dst; ++src) {
        const double a = attn(dst, src);
        if (!top[src]) {
          for (std::size_t j = 0; j < d; ++j) out[j] += a * mean(0, j);
          continue;
        }
        const std::size_t tok = static_cast<std::size_t>(toks[src]);
        double uu = 0.0;
        double ru = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          u[j] = w_u[j * V + tok];
          uu += u[j] * u[j];
          ru += result(src, j) * u[j];
        }
        if (uu == 0.0 || ru >= 0.0) continue;
        const double coef = a * ru / uu;
        for (std::size_t j = 0; j < d; ++j) out[j] += coef * u[j];
      }
    }

    auto run = [&](const Matrix& replacement) {
      Interventions iv;
      iv.node.assign(g.nodes().size(), nullptr);
      iv.node[node] = &replacement;
      return run_forward(model, toks, iv).logits;
    };
    const Matrix l_mean = run(ablated_mean);
    const Matrix l_cspa = run(ablated_cspa);
    for (std::size_t t = 0; t < T; ++t) {
      const auto p = ops::softmax(c.logits.row(t));
      d_mean[i] += kl(p, ops::softmax(l_mean.row(t)));
      d_cspa[i] += kl(p, ops::softmax(l_cspa.row(t)));
    }
  });
  const double dm = std::accumulate(d_mean.begin(), d_mean.end(), 0.0) / static_cast<double>(positions);
  const double dc = std::accumulate(d_cspa.begin(), d_cspa.end(), 0.0) / static_cast<double>(positions);
  if (dm < 1e-8) {
    fail(Errc::degenerate_baseline, "mean ablation of " + head.name() + " leaves the output unchanged");
  }
  return 1.0 - dc / dm;
}

double prev_token_score(const Model& model, HeadId head, const std::vector<std::vector<int>>& corpus) {
  check_head(model.config(), head);
  check_text(model.config(), corpus);
  for (const auto& s : corpus) {
    if (s.size() < 2) fail(Errc::sequence_too_short, "previous-token score needs sequences of length >= 2");
  }
  return mean_diagonal(model, head, corpus, [](std::size_t) { return std::pair<std::size_t, std::size_t>{1, 1}; });
}

double duplicate_token_score(const Model& model, HeadId head, const RepeatedCorpus& corpus) {
  check_head(model.config(), head);
  validate_repeated(corpus);
  const std::size_t L = corpus.segment_length;
  return mean_diagonal(model, head, corpus.sequences,
                       [L](std::size_t) { return std::pair<std::size_t, std::size_t>{L, L}; });
}

double induction_score(const Model& model, HeadId head, const RepeatedCorpus& corpus) {
  check_head(model.config(), head);
  validate_repeated(corpus);
  const std::size_t L = corpus.segment_length;
  return mean_diagonal(model, head, corpus.sequences,
                       [L](std::size_t) { return std::pair<std::size_t, std::size_t>{L, L - 1}; });
}

double uniform_induction_baseline(std::size_t segment_length) {
  if (segment_length == 0) fail(Errc::invalid_argument, "segment length must be positive");
  double s = 0.0;
  for (std::size_t t = segment_length; t < 2 * segment_length; ++t) s += 1.0 / static_cast<double>(t + 1);
  return s / static_cast<double>(segment_length);
}

double successor_score(const Model& model, HeadId head, const SuccessorDataset& dataset) {
  const auto& cfg = model.config();
  check_head(cfg, head);
  if (dataset.pairs.empty() || dataset.candidates.empty()) {
    fail(Errc::empty_dataset, "successor score needs at least one pair");
  }
  const std::size_t d = static_cast<std::size_t>(cfg.d_model);
  const std::size_t V = static_cast<std::size_t>(cfg.vocab_size);
  const double* w_e = model.p(model.offsets().w_e);
  const double* w_u = model.p(model.offsets().w_u);
  std::size_t hits = 0;
  for (const auto& pair : dataset.pairs) {
    if (pair.x < 0 || static_cast<std::size_t>(pair.x) >= V || pair.y < 0 || static_cast<std::size_t>(pair.y) >= V) {
      fail(Errc::vocabulary_mismatch, "successor pair outside the model vocabulary");
    }
    Matrix e(1, d);
    std::copy(w_e + static_cast<std::size_t>(pair.x) * d, w_e + static_cast<std::size_t>(pair.x + 1) * d,
              e.row(0).begin());
    e += ops::mlp_apply(model, 0, e);
    const Matrix ov = ops::head_ov(model, head.layer, head.head, e);
    auto score = [&](int y) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += ov(0, j) * w_u[j * V + static_cast<std::size_t>(y)];
      return s;
    };
    const double target = score(pair.y);
    bool best = true;
    for (int c : dataset.candidates) {
      if (c != pair.y && score(c) >= target) {
        best = false;
        break;
      }
    }
    hits += best ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(dataset.pairs.size());
}

std::vector<std::vector<int>> task_mixture_corpus(std::size_t target_tokens, std::size_t max_len,
                                                  std::uint64_t seed) {
  std::vector<std::vector<std::vector<int>>> pools;
  std::uint64_t k = 0;
  for (const auto& task : task_names()) {
    auto seqs = task_training_sequences(task, 400, seed + 1000 * ++k);
    std::erase_if(seqs, [&](const auto& s) { return s.size() > max_len; });
    if (!seqs.empty()) pools.push_back(std::move(seqs));
  }
  if (pools.empty()) fail(Errc::sequence_too_long, "no task sequence fits the model context");
  std::vector<std::vector<int>> out;
  std::size_t tokens = 0;
  for (std::size_t i = 0; tokens < target_tokens; ++i) {
    const auto& pool = pools[i % pools.size()];
    const auto& s = pool[(i / pools.size()) % pool.size()];
    out.push_back(s);
    tokens += s.size();
  }
  return out;
}

HeadMetricInputs HeadMetricInputs::standard(const ModelConfig& config, std::uint64_t seed,
                                            std::size_t text_tokens) {
  const std::size_t ctx = static_cast<std::size_t>(config.max_seq_len);
  HeadMetricInputs in;
  const auto ioi = gen_ioi(default_task_size(kIoi), seed);
  if (ioi.seq_len() <= ctx) in.names = name_samples(ioi);
  in.text = task_mixture_corpus(text_tokens, ctx, seed + 1);
  const int len = static_cast<int>(std::min<std::size_t>(ctx, 32) & ~std::size_t{1});
  in.repeated = gen_induction_corpus(200, len, seed + 2);
  in.successor = gen_successor_dataset(seed + 3);
  return in;
}

HeadScoreTable::HeadScoreTable(std::int64_t step, int n_layers, int n_heads)
    : step_(step), n_layers_(n_layers), n_heads_(n_heads) {}

std::vector<HeadMetric> HeadScoreTable::metrics() const {
  std::vector<HeadMetric> out;
  for (const auto& [m, v] : values_) out.push_back(m);
  return out;
}

const std::vector<double>& HeadScoreTable::values(HeadMetric metric) const {
  const auto it = values_.find(metric);
  if (it == values_.end()) {
    fail(Errc::missing_inputs, "head scores lack metric '" + std::string(to_string(metric)) + "'");
  }
  return it->second;
}

double HeadScoreTable::get(HeadMetric metric, HeadId head) const {
  if (head.layer < 0 || head.layer >= n_layers_ || head.head < 0 || head.head >= n_heads_) {
    fail(Errc::invalid_argument, "head " + head.name() + " outside the table");
  }
  return values(metric)[static_cast<std::size_t>(head.layer * n_heads_ + head.head)];
}

void HeadScoreTable::set(HeadMetric metric, HeadId head, double value) {
  if (head.layer < 0 || head.layer >= n_layers_ || head.head < 0 || head.head >= n_heads_) {
    fail(Errc::invalid_argument, "head " + head.name() + " outside the table");
  }
  auto& v = values_[metric];
  v.resize(static_cast<std::size_t>(n_layers_ * n_heads_), 0.0);
  v[static_cast<std::size_t>(head.layer * n_heads_ + head.head)] = value;
}

HeadScoreTable score_heads(const Model& model, const std::vector<HeadMetric>& metrics,
                           const HeadMetricInputs& inputs) {
  const auto& cfg = model.config();
  HeadScoreTable table(model.step(), cfg.n_layers, cfg.n_heads);
  for (HeadMetric m : metrics) {
    for (const HeadId h : all_heads(cfg)) {
      double v = 0.0;
      switch (m) {
        case HeadMetric::Copy: v = copy_score(model, h, inputs.names); break;
        case HeadMetric::Cspa:
          try {
            v = cspa_score(model, h, inputs.text);
          } catch (const Error& e) {
            if (e.code() != Errc::degenerate_baseline) throw;
          }
          break;
        case HeadMetric::PrevToken: v = prev_token_score(model, h, inputs.text); break;
        case HeadMetric::DuplicateToken: v = duplicate_token_score(model, h, inputs.repeated); break;
        case HeadMetric::Induction: v = induction_score(model, h, inputs.repeated); break;
        case HeadMetric::Successor: v = successor_score(model, h, inputs.successor); break;
      }
      table.set(m, h, v);
    }
  }
  return table;
}

void write_head_scores_csv(const std::filesystem::path& path, const std::vector<HeadScoreTable>& tables) {
  CsvWriter csv(path, columns::head_scores());
  for (const auto& t : tables) {
    for (HeadMetric m : t.metrics()) {
      for (int l = 0; l < t.n_layers(); ++l) {
        for (int h = 0; h < t.n_heads(); ++h) {
          csv.row({std::to_string(t.step()), std::to_string(l), std::to_string(h), std::string(to_string(m)),
                   format_double(t.get(m, {l, h}))});
        }
      }
    }
  }
  csv.close();
}

std::vector<HeadScoreTable> read_head_scores_csv(const std::filesystem::path& path) {
  const auto csv = read_csv(path, columns::head_scores());
  struct Cell {
    std::int64_t step;
    int layer, head;
    HeadMetric metric;
    double value;
  };
  std::vector<Cell> cells;
  for (const auto& r : csv.rows) {
    try {
      cells.push_back({std::stoll(r[0]), std::stoi(r[1]), std::stoi(r[2]), parse_head_metric(r[3]),
                       parse_double(r[4])});
    } catch (const std::logic_error&) {
      fail(Errc::schema_violation, "malformed head score row in " + path.string());
    }
    if (cells.back().layer < 0 || cells.back().head < 0) fail(Errc::schema_violation, "negative head index");
  }
  std::vector<HeadScoreTable> out;
  std::size_t i = 0;
  while (i < cells.size()) {
    std::size_t j = i;
    int L = 0;
    int H = 0;
    while (j < cells.size() && cells[j].step == cells[i].step) {
      L = std::max(L, cells[j].layer + 1);
      H = std::max(H, cells[j].head + 1);
      ++j;
    }
    HeadScoreTable t(cells[i].step, L, H);
    for (std::size_t k = i; k < j; ++k) t.set(cells[k].metric, {cells[k].layer, cells[k].head}, cells[k].value);
    out.push_back(std::move(t));
    i = j;
  }
  return out;
}

namespace {

std::vector<HeadId> at_or_above_mean(const std::vector<HeadId>& heads, const std::vector<double>& abs_values) {
  std::vector<HeadId> out;
  if (heads.empty()) return out;
  const double mean = std::accumulate(abs_values.begin(), abs_values.end(), 0.0) / static_cast<double>(heads.size());
  for (std::size_t i = 0; i < heads.size(); ++i) {
    if (abs_values[i] > 0.0 && abs_values[i] >= mean) out.push_back(heads[i]);
  }
  return out;
}

// Heads strictly upstream of at least one of `targets`.
std::vector<HeadId> upstream_of(const ModelConfig& c, const std::vector<HeadId>& targets) {
  int max_layer = -1;
  for (const auto& t : targets) max_layer = std::max(max_layer, t.layer);
  std::vector<HeadId> out;
  for (const HeadId h : all_heads(c)) {
    if (h.layer < max_layer) out.push_back(h);
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

HeadClasses classify_heads(const Model& model, const TaskDataset& ioi, const HeadScoreTable& scores,
                           std::vector<double> direct_effects, double threshold) {
  const auto& cfg = model.config();
  for (HeadMetric m : {HeadMetric::Copy, HeadMetric::Cspa, HeadMetric::Induction, HeadMetric::DuplicateToken}) {
    if (!scores.has(m)) {
      fail(Errc::missing_inputs, "classification needs '" + std::string(to_string(m)) + "' scores");
    }
  }
  if (scores.n_layers() != cfg.n_layers || scores.n_heads() != cfg.n_heads) {
    fail(Errc::missing_inputs, "head scores do not match the model shape");
  }
  const auto heads = all_heads(cfg);
  if (direct_effects.empty()) {
    direct_effects.resize(heads.size());
    for (std::size_t i = 0; i < heads.size(); ++i) direct_effects[i] = direct_effect(model, heads[i], ioi);
  }
  if (direct_effects.size() != heads.size()) fail(Errc::missing_inputs, "one direct effect per head required");

  HeadClasses out;
  out.direct_effects = direct_effects;
  std::vector<double> abs_de;
  for (double v : direct_effects) abs_de.push_back(std::abs(v));
  out.direct = at_or_above_mean(heads, abs_de);
  for (const HeadId h : out.direct) {
    if (scores.get(HeadMetric::Copy, h) > threshold) {
      out.nmh.push_back(h);
    } else if (scores.get(HeadMetric::Cspa, h) > threshold) {
      out.csh.push_back(h);
    }
  }
  if (out.nmh.empty()) return out;

  const auto s2i_candidates = upstream_of(cfg, out.nmh);
  const auto on_nmh = effects_on_heads(model, ioi, s2i_candidates, out.nmh);
  std::vector<double> abs_nmh;
  for (double v : on_nmh) abs_nmh.push_back(std::abs(v));
  for (const HeadId h : at_or_above_mean(s2i_candidates, abs_nmh)) {
    if (s2i_test(model, h, ioi, out.nmh).passed()) out.s2i.push_back(h);
  }
  if (out.s2i.empty()) return out;

  const auto ind_candidates = upstream_of(cfg, out.s2i);
  const auto on_s2i = effects_on_heads(model, ioi, ind_candidates, out.s2i);
  std::vector<double> abs_s2i;
  for (double v : on_s2i) abs_s2i.push_back(std::abs(v));
  const double mean_ind = mean_of(scores.values(HeadMetric::Induction));
  const double mean_dup = mean_of(scores.values(HeadMetric::DuplicateToken));
  for (const HeadId h : at_or_above_mean(ind_candidates, abs_s2i)) {
    if (scores.get(HeadMetric::Induction, h) > mean_ind || scores.get(HeadMetric::DuplicateToken, h) > mean_dup) {
      out.induction.push_back(h);
    }
  }
  return out;
}

}  // namespace circuitscope
