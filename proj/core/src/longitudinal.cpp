#include "circuitscope/longitudinal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "circuitscope/attribution.hpp"
#include "circuitscope/checkpoint.hpp"
#include "circuitscope/error.hpp"

namespace circuitscope {

double jaccard(const NodeSet& a, const NodeSet& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t common = 0;
  for (const auto& n : a) common += b.contains(n) ? 1 : 0;
  return static_cast<double>(common) / static_cast<double>(a.size() + b.size() - common);
}

std::vector<double> ewma_series(const std::vector<double>& values, double alpha) {
  if (values.empty()) fail(Errc::empty_input, "moving average of an empty series");
  if (!(alpha > 0.0 && alpha <= 1.0)) fail(Errc::invalid_argument, "smoothing factor must lie in (0, 1]");
  std::vector<double> out;
  out.reserve(values.size());
  out.push_back(values.front());
  for (std::size_t t = 1; t < values.size(); ++t) out.push_back((1.0 - alpha) * out.back() + alpha * values[t]);
  return out;
}

double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2) {
    fail(Errc::empty_input, "correlation needs two equally long series of at least 2 points");
  }
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) fail(Errc::zero_variance, "correlation of a constant series");
  return sxy / std::sqrt(sxx * syy);
}

NodeSet circuit_nodes(const Circuit& circuit) {
  NodeSet out;
  for (const auto& e : circuit.edges) {
    out.insert(e.src);
    out.insert(e.dst);
  }
  return out;
}

std::vector<EmergencePoint> emergence_series(const std::vector<HeadScoreTable>& tables,
                                             const std::vector<std::int64_t>& tokens_seen,
                                             HeadMetric metric) {
  if (tokens_seen.size() != tables.size()) fail(Errc::invalid_argument, "one token count per table required");
  std::vector<EmergencePoint> out;
  for (std::size_t i = 0; i < tables.size(); ++i) {
    const auto& t = tables[i];
    EmergencePoint p;
    p.step = t.step();
    p.tokens_seen = tokens_seen[i];
    p.n_heads = t.n_heads();
    p.values = t.values(metric);
    std::vector<std::size_t> order(p.values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p.values[a] > p.values[b]; });
    const std::size_t k = std::min<std::size_t>(5, order.size());
    double sum = 0.0;
    for (std::size_t r = 0; r < k; ++r) {
      const int idx = static_cast<int>(order[r]);
      p.top.push_back({idx / t.n_heads(), idx % t.n_heads()});
      sum += p.values[order[r]];
    }
    p.top1 = k > 0 ? p.values[order[0]] : 0.0;
    p.top5_mean = k > 0 ? sum / static_cast<double>(k) : 0.0;
    out.push_back(std::move(p));
  }
  return out;
}

S2ITest s2i_test(const Model& model, HeadId candidate, const TaskDataset& ioi, const std::vector<HeadId>& nmh) {
  if (nmh.empty()) fail(Errc::missing_nmh, "S2I test requires name mover heads");
  std::vector<HeadId> targets;
  std::vector<Receiver> receivers;
  for (const HeadId h : nmh) {
    if (h.layer > candidate.layer) {
      targets.push_back(h);
      receivers.push_back({h.node(), Channel::Q});
    }
  }
  S2ITest out;
  if (receivers.empty()) return out;
  const TaskDataset flipped = flip_ioi_name_order(ioi);
  const auto runs = path_patch_runs(model, {candidate.node(), receivers, &ioi, &flipped});
  const int H = model.config().n_heads;
  double io = 0.0;
  double s = 0.0;
  double effect = 0.0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& ex = ioi.examples[i];
    const std::size_t a = ex.answer_position;
    effect += runs[i].patched_metric - runs[i].clean_metric;
    for (const HeadId h : targets) {
      const Matrix& pc = runs[i].clean.attention(H, h.layer, h.head);
      const Matrix& pp = runs[i].patched.attention(H, h.layer, h.head);
      io += pp(a, ex.slot("IO")) - pc(a, ex.slot("IO"));
      s += pp(a, ex.slot("S1")) + pp(a, ex.slot("S2")) - pc(a, ex.slot("S1")) - pc(a, ex.slot("S2"));
    }
  }
  const double n = static_cast<double>(runs.size());
  const double nt = n * static_cast<double>(targets.size());
  out.effect = effect / n;
  out.io_attention_change = io / nt;
  out.s_attention_change = s / nt;
  out.reduces_metric = out.effect < 0.0;
  out.reduces_io_attention = out.io_attention_change < 0.0;
  out.raises_s_attention = out.s_attention_change > 0.0;
  return out;
}

std::vector<double> effects_on_heads(const Model& model, const TaskDataset& ioi, const std::vector<HeadId>& senders,
                                     const std::vector<HeadId>& receivers) {
  const TaskDataset altered = corrupted_view(ioi);
  std::vector<double> out;
  for (const HeadId s : senders) {
    std::vector<Receiver> rs;
    for (const HeadId r : receivers) {
      if (r.layer <= s.layer) continue;
      for (Channel c : {Channel::Q, Channel::K, Channel::V}) rs.push_back({r.node(), c});
    }
    out.push_back(rs.empty() ? 0.0 : path_patch(model, {s.node(), rs, &ioi, &altered}));
  }
  return out;
}

namespace {

std::optional<double> share(const std::vector<HeadId>& senders, const std::vector<double>& effects,
                            const std::vector<HeadId>& numerator) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < senders.size(); ++i) {
    const double a = std::abs(effects[i]);
    den += a;
    if (std::find(numerator.begin(), numerator.end(), senders[i]) != numerator.end()) num += a;
  }
  if (den == 0.0) return std::nullopt;
  return num / den;
}

std::vector<HeadId> heads_below(const ModelConfig& c, const std::vector<HeadId>& targets) {
  int max_layer = -1;
  for (const auto& t : targets) max_layer = std::max(max_layer, t.layer);
  std::vector<HeadId> out;
  for (const HeadId h : all_heads(c)) {
    if (h.layer < max_layer) out.push_back(h);
  }
  return out;
}

}  // namespace

bool circuit_emerged(const HeadClasses& classes) {
  return (!classes.nmh.empty() || !classes.csh.empty()) && !classes.s2i.empty() && !classes.induction.empty();
}

std::string IoiRatios::status() const {
  const int n = (direct ? 1 : 0) + (s2i ? 1 : 0) + (induction ? 1 : 0);
  return n == 3 ? "complete" : n == 0 ? "absent" : "partial";
}

IoiRatios ioi_consistency(const Model& model, const TaskDataset& ioi, const HeadClasses& classes) {
  if (classes.empty()) fail(Errc::no_classified_heads, "no IOI head classes found");
  const auto& cfg = model.config();
  const auto heads = all_heads(cfg);
  IoiRatios out;
  out.classes = classes;
  std::vector<double> de = classes.direct_effects;
  if (de.size() != heads.size()) {
    de.clear();
    for (const HeadId h : heads) de.push_back(direct_effect(model, h, ioi));
  }
  std::vector<HeadId> movers = classes.nmh;
  movers.insert(movers.end(), classes.csh.begin(), classes.csh.end());
  if (!movers.empty()) out.direct = share(heads, de, movers);
  if (!classes.nmh.empty() && !classes.s2i.empty()) {
    const auto senders = heads_below(cfg, classes.nmh);
    out.s2i = share(senders, effects_on_heads(model, ioi, senders, classes.nmh), classes.s2i);
  }
  if (!classes.s2i.empty() && !classes.induction.empty()) {
    const auto senders = heads_below(cfg, classes.s2i);
    out.induction = share(senders, effects_on_heads(model, ioi, senders, classes.s2i), classes.induction);
  }
  return out;
}

std::vector<CheckpointRecord> checkpoint_series(const std::filesystem::path& dir, int stride) {
  if (stride < 1) fail(Errc::invalid_argument, "checkpoint stride must be >= 1");
  const auto paths = list_checkpoints(dir);
  if (paths.empty()) fail(Errc::no_artifacts, "no artifacts found in " + dir.string());
  std::vector<CheckpointRecord> out;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    if (i % static_cast<std::size_t>(stride) != 0 && i + 1 != paths.size()) continue;
    const auto ckpt = load_checkpoint(paths[i]);
    out.push_back({ckpt.step, ckpt.tokens_seen, paths[i]});
  }
  return out;
}

std::vector<BehaviorRow> behavior_series(const std::vector<CheckpointRecord>& checkpoints, const std::string& task,
                                         int n_examples, std::uint64_t seed) {
  const TaskDataset ds = make_task(task, n_examples, seed);
  std::vector<BehaviorRow> out;
  for (const auto& c : checkpoints) {
    const Model model(load_checkpoint(c.path));
    out.push_back({c.step, c.tokens_seen, task, eval_task(model, ds)});
  }
  return out;
}

CircuitSeries circuit_series(const std::vector<CheckpointRecord>& checkpoints, const TaskDataset& dataset,
                             const AnalysisOptions& options) {
  CircuitSeries out;
  std::optional<NodeSet> previous;
  std::optional<double> smoothed;
  for (const auto& c : checkpoints) {
    const Model model(load_checkpoint(c.path));
    Circuit circuit;
    try {
      const auto scores = eap_ig(model, dataset, options.m);
      circuit = minimal_circuit(model, dataset, scores, options.faithfulness_threshold, options.edge_budget_fraction);
    } catch (const Error& e) {
      if (e.code() != Errc::unreachable_threshold && e.code() != Errc::degenerate_baseline) throw;
      continue;
    }
    const NodeSet nodes = circuit_nodes(circuit);
    StabilityRow row{c.step, c.tokens_seen, nodes.size(), circuit.n_edges(), circuit.faithfulness, {}, {}};
    if (previous) {
      row.jaccard = jaccard(nodes, *previous);
      smoothed = smoothed ? (1.0 - options.ewma_alpha) * *smoothed + options.ewma_alpha * *row.jaccard : *row.jaccard;
      row.ewma = smoothed;
    }
    previous = nodes;
    out.rows.push_back(row);
    out.circuits.push_back(std::move(circuit));
  }
  return out;
}

std::vector<RatioRow> ratio_series(const std::vector<CheckpointRecord>& checkpoints, const TaskDataset& ioi,
                                   const AnalysisOptions& options, std::uint64_t seed) {
  const std::vector<HeadMetric> needed{HeadMetric::Copy, HeadMetric::Cspa, HeadMetric::Induction,
                                       HeadMetric::DuplicateToken};
  std::vector<RatioRow> out;
  bool emerged = false;
  for (const auto& c : checkpoints) {
    const Model model(load_checkpoint(c.path));
    const auto inputs = HeadMetricInputs::standard(model.config(), seed);
    const auto scores = score_heads(model, needed, inputs);
    RatioRow row{c.step, c.tokens_seen, {}};
    row.ratios.classes = classify_heads(model, ioi, scores, {}, options.classification_threshold);
    emerged = emerged || circuit_emerged(row.ratios.classes);
    if (emerged && !row.ratios.classes.empty()) row.ratios = ioi_consistency(model, ioi, row.ratios.classes);
    out.push_back(std::move(row));
  }
  return out;
}

namespace {

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

}  // namespace

void write_behavior_csv(const std::filesystem::path& path, const std::vector<BehaviorRow>& rows) {
  CsvWriter csv(path, columns::behavior());
  for (const auto& r : rows) {
    csv.row({std::to_string(r.step), std::to_string(r.tokens_seen), r.task, format_double(r.metric)});
  }
  csv.close();
}

void write_stability_csv(const std::filesystem::path& path, const std::vector<StabilityRow>& rows) {
  CsvWriter csv(path, columns::stability());
  for (const auto& r : rows) {
    csv.row({std::to_string(r.step), std::to_string(r.tokens_seen), std::to_string(r.n_edges),
             format_double(r.faithfulness), opt(r.jaccard), opt(r.ewma)});
  }
  csv.close();
}

void write_node_counts_csv(const std::filesystem::path& path, const std::vector<StabilityRow>& rows) {
  CsvWriter csv(path, columns::node_counts());
  for (const auto& r : rows) {
    csv.row({std::to_string(r.step), std::to_string(r.tokens_seen), std::to_string(r.n_nodes),
             std::to_string(r.n_edges)});
  }
  csv.close();
}

void write_ratios_csv(const std::filesystem::path& path, const std::vector<RatioRow>& rows) {
  CsvWriter csv(path, columns::ratios());
  for (const auto& r : rows) {
    csv.row({std::to_string(r.step), std::to_string(r.tokens_seen), opt(r.ratios.direct), opt(r.ratios.s2i),
             opt(r.ratios.induction), r.ratios.status()});
  }
  csv.close();
}

void write_emergence_csv(const std::filesystem::path& path, HeadMetric metric,
                         const std::vector<EmergencePoint>& points) {
  CsvWriter csv(path, columns::emergence());
  for (const auto& p : points) {
    for (std::size_t r = 0; r < p.top.size(); ++r) {
      const HeadId h = p.top[r];
      csv.row({std::to_string(p.step), std::to_string(p.tokens_seen), std::string(to_string(metric)),
               std::to_string(r + 1), std::to_string(h.layer), std::to_string(h.head),
               format_double(p.values[static_cast<std::size_t>(h.layer * p.n_heads + h.head)])});
    }
  }
  csv.close();
}

}  // namespace circuitscope
