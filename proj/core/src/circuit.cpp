#include "circuitscope/circuit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "circuitscope/checkpoint.hpp"
#include "circuitscope/error.hpp"
#include "circuitscope/parallel.hpp"
#include "json.hpp"

namespace circuitscope {

using nlohmann::json;

namespace {

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

FaithfulnessEvaluator::FaithfulnessEvaluator(const Model& model, const TaskDataset& dataset)
    : model_(model), dataset_(dataset) {
  dataset.validate(model.config().vocab_size);
  const std::size_t n = dataset.examples.size();
  corrupt_.resize(n);
  std::vector<double> clean(n), corrupt(n);
  parallel_for(n, [&](std::size_t i) {
    const auto& ex = dataset.examples[i];
    corrupt_[i] = forward(model, ex.corrupt);
    clean[i] = evaluate_metric(ex.metric, forward(model, ex.clean).logits.row(ex.answer_position));
    corrupt[i] = evaluate_metric(ex.metric, corrupt_[i].logits.row(ex.answer_position));
  });
  clean_mean_ = mean(clean);
  corrupt_mean_ = mean(corrupt);
  if (std::abs(clean_mean_ - corrupt_mean_) < 1e-8) {
    fail(Errc::degenerate_baseline, "clean and corrupt metrics coincide (" + std::to_string(clean_mean_) +
                                        "); faithfulness is undefined");
  }
}

double FaithfulnessEvaluator::operator()(const std::vector<char>& in_circuit) const {
  const auto& g = model_.graph();
  if (in_circuit.size() != g.total_edges()) fail(Errc::shape_mismatch, "circuit mask has wrong size");
  std::vector<double> values(dataset_.examples.size());
  parallel_for(values.size(), [&](std::size_t i) {
    const auto& ex = dataset_.examples[i];
    EdgeOverrides ov(g);
    for (std::size_t e = 0; e < g.total_edges(); ++e) {
      if (!in_circuit[e]) ov.set_ref(e, corrupt_[i].node_out[g.edge_src_index(e)]);
    }
    values[i] = evaluate_metric(ex.metric, forward_patched(model_, ex.clean, ov).row(ex.answer_position));
  });
  // "+ 0.0" maps a negative zero (empty circuit, negative baseline gap) to +0.
  return (mean(values) - corrupt_mean_) / (clean_mean_ - corrupt_mean_) + 0.0;
}

double FaithfulnessEvaluator::operator()(const std::vector<Edge>& edges) const {
  const auto& g = model_.graph();
  std::vector<char> mask(g.total_edges(), 0);
  for (const auto& e : edges) mask[g.index_of(e)] = 1;
  return (*this)(mask);
}

double faithfulness(const Model& model, const TaskDataset& dataset, const std::vector<Edge>& edges) {
  return FaithfulnessEvaluator(model, dataset)(edges);
}

namespace {

// Edge indices ordered by descending |score|, ties by index.
std::vector<std::size_t> rank_edges(const EdgeScores& scores) {
  std::vector<std::size_t> order(scores.scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(scores.scores[a]) > std::abs(scores.scores[b]);
  });
  return order;
}

Circuit take_top(const EdgeScores& scores, const std::vector<std::size_t>& order, std::size_t k) {
  std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<long>(k));
  std::sort(chosen.begin(), chosen.end());
  Circuit c;
  for (std::size_t i : chosen) c.edges.push_back(scores.edges[i]);
  c.task = scores.dataset;
  c.checkpoint_step = scores.checkpoint_step;
  return c;
}

void check_sorted(const EdgeScores& scores) {
  if (scores.edges.size() != scores.scores.size()) fail(Errc::shape_mismatch, "edge/score count mismatch");
  if (!std::is_sorted(scores.edges.begin(), scores.edges.end())) {
    fail(Errc::invalid_argument, "edge scores must be in edge order");
  }
}

}  // namespace

Circuit greedy_circuit(const EdgeScores& scores, std::size_t k) {
  check_sorted(scores);
  if (k < 1 || k > scores.edges.size()) {
    fail(Errc::k_out_of_range, "k = " + std::to_string(k) + " outside [1, " + std::to_string(scores.edges.size()) + "]");
  }
  return take_top(scores, rank_edges(scores), k);
}

Circuit minimal_circuit(const Model& model, const TaskDataset& dataset, const EdgeScores& scores, double threshold,
                        double budget_fraction) {
  check_sorted(scores);
  if (!(threshold > 0.0 && threshold <= 1.0)) fail(Errc::invalid_argument, "threshold must lie in (0, 1]");
  if (!(budget_fraction > 0.0 && budget_fraction <= 1.0)) {
    fail(Errc::invalid_argument, "budget fraction must lie in (0, 1]");
  }
  if (scores.edges != model.graph().edges()) fail(Errc::shape_mismatch, "scores do not match the model graph");
  const FaithfulnessEvaluator eval(model, dataset);
  const auto order = rank_edges(scores);
  const std::size_t E = scores.edges.size();

  std::map<std::size_t, double> cache;
  std::vector<SearchPoint> trace;
  auto faith = [&](std::size_t k) {
    const auto it = cache.find(k);
    if (it != cache.end()) return it->second;
    const double f = eval(take_top(scores, order, k).edges);
    cache.emplace(k, f);
    trace.push_back({k, f});
    return f;
  };

  std::size_t lo = 1;
  std::size_t hi = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(budget_fraction * static_cast<double>(E) - 1e-9)), 1, E);
  while (faith(hi) < threshold) {
    if (hi == E) {
      fail(Errc::unreachable_threshold, "even the full graph reaches faithfulness " + std::to_string(cache[E]) +
                                            " < " + std::to_string(threshold));
    }
    lo = hi + 1;
    hi = std::min(2 * hi, E);
  }
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (faith(mid) >= threshold) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  Circuit c = take_top(scores, order, hi);
  c.faithfulness = cache.at(hi);
  c.task = dataset.task;
  c.threshold = threshold;
  c.search_trace = std::move(trace);
  return c;
}

std::string circuit_to_json(const Circuit& c) {
  json edges = json::array();
  for (const auto& e : c.edges) {
    edges.push_back({{"src", e.src.name()}, {"dst", e.dst.name()}, {"channel", std::string(to_string(e.channel))}});
  }
  json trace = json::array();
  for (const auto& p : c.search_trace) trace.push_back({{"size", p.size}, {"faithfulness", p.faithfulness}});
  const json j{{"format_version", kFormatVersion},
               {"task", c.task},
               {"checkpoint_step", c.checkpoint_step},
               {"threshold", c.threshold},
               {"n_edges", c.n_edges()},
               {"faithfulness", c.faithfulness},
               {"edges", edges},
               {"search_trace", trace}};
  return j.dump(2) + "\n";
}

Circuit circuit_from_json(const std::string& text) {
  Circuit c;
  try {
    const json j = json::parse(text);
    if (j.at("format_version").get<int>() != kFormatVersion) {
      fail(Errc::version_mismatch, "circuit format_version not supported");
    }
    c.task = j.at("task").get<std::string>();
    c.checkpoint_step = j.at("checkpoint_step").get<std::int64_t>();
    c.threshold = j.at("threshold").get<double>();
    c.faithfulness = j.at("faithfulness").get<double>();
    for (const auto& e : j.at("edges")) {
      c.edges.push_back(parse_edge(e.at("src").get<std::string>() + "->" + e.at("dst").get<std::string>() + "." +
                                   e.at("channel").get<std::string>()));
    }
    for (const auto& p : j.at("search_trace")) {
      c.search_trace.push_back({p.at("size").get<std::size_t>(), p.at("faithfulness").get<double>()});
    }
    if (j.at("n_edges").get<std::size_t>() != c.edges.size()) {
      fail(Errc::schema_violation, "circuit n_edges does not match its edge list");
    }
  } catch (const json::exception& e) {
    fail(Errc::schema_violation, std::string("circuit: ") + e.what());
  }
  return c;
}

}  // namespace circuitscope
