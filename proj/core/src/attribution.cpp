#include "circuitscope/attribution.hpp"

#include "circuitscope/backward.hpp"
#include "circuitscope/checkpoint.hpp"
#include "circuitscope/error.hpp"
#include "circuitscope/forward.hpp"
#include "circuitscope/parallel.hpp"
#include "json.hpp"

namespace circuitscope {

using nlohmann::json;

double EdgeScores::score(const Edge& edge) const {
  for (std::size_t i = 0; i < edges.size(); ++i)
    if (edges[i] == edge) return scores[i];
  fail(Errc::unknown_edge, "no score for edge " + edge.name());
}

namespace {

// Dot product restricted to rows [0, rows).
double dot_rows(const Matrix& a, const Matrix& b, std::size_t rows) {
  const std::size_t n = rows * a.cols();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a.data()[i] * b.data()[i];
  return acc;
}

std::vector<double> mean_in_order(const std::vector<std::vector<double>>& per_example) {
  std::vector<double> out(per_example.at(0).size(), 0.0);
  for (const auto& v : per_example)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
  for (double& v : out) v /= static_cast<double>(per_example.size());
  return out;
}

}  // namespace

EdgeScores eap_ig(const Model& model, const TaskDataset& dataset, int m) {
  if (m < 1) fail(Errc::invalid_m, "m must be >= 1, got " + std::to_string(m));
  dataset.validate(model.config().vocab_size);
  const auto& g = model.graph();
  const std::size_t n_writers = g.n_writers();

  std::vector<std::vector<double>> per_example(dataset.examples.size());
  parallel_for(dataset.examples.size(), [&](std::size_t x) {
    const auto& ex = dataset.examples[x];
    const auto clean = forward(model, ex.clean);
    const auto corrupt = forward(model, ex.corrupt);
    std::vector<Matrix> grad_sum(g.receivers().size());
    for (int k = 1; k <= m; ++k) {
      const Blend blend{&clean, &corrupt, static_cast<double>(k) / m};
      auto grads = backward_metric(model, ex.clean, ex.answer_position, ex.metric, &blend);
      for (std::size_t r = 0; r < grad_sum.size(); ++r) {
        if (k == 1) {
          grad_sum[r] = std::move(grads.receiver_grad[r]);
        } else {
          grad_sum[r] += grads.receiver_grad[r];
        }
      }
    }
    std::vector<Matrix> delta(n_writers);
    for (std::size_t w = 0; w < n_writers; ++w) {
      delta[w] = corrupt.node_out[w];
      auto d = delta[w].flat();
      const auto c = clean.node_out[w].flat();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= c[i];
    }
    const std::size_t rows = ex.answer_position + 1;
    auto& out = per_example[x];
    out.assign(g.total_edges(), 0.0);
    for (std::size_t e = 0; e < g.total_edges(); ++e) {
      out[e] = dot_rows(delta[g.edge_src_index(e)], grad_sum[g.edge_receiver_index(e)], rows) / m;
    }
  });

  EdgeScores result;
  result.edges = g.edges();
  result.scores = mean_in_order(per_example);
  result.m = m;
  result.dataset = dataset.task;
  result.checkpoint_step = model.step();
  return result;
}

double score_edge_exact(const Model& model, const TaskDataset& dataset, const Edge& edge) {
  const auto& g = model.graph();
  const std::size_t e = g.index_of(edge);
  dataset.validate(model.config().vocab_size);
  std::vector<double> deltas(dataset.examples.size());
  parallel_for(deltas.size(), [&](std::size_t x) {
    const auto& ex = dataset.examples[x];
    const auto clean = forward(model, ex.clean);
    const auto corrupt = forward(model, ex.corrupt);
    EdgeOverrides ov(g);
    ov.set_ref(e, corrupt.node_out[g.edge_src_index(e)]);
    const Matrix logits = forward_patched(model, ex.clean, ov);
    deltas[x] = evaluate_metric(ex.metric, logits.row(ex.answer_position)) -
                evaluate_metric(ex.metric, clean.logits.row(ex.answer_position));
  });
  double sum = 0.0;
  for (double d : deltas) sum += d;
  return sum / static_cast<double>(deltas.size());
}

EdgeScores score_edges_exact(const Model& model, const TaskDataset& dataset) {
  const auto& g = model.graph();
  dataset.validate(model.config().vocab_size);
  std::vector<std::vector<double>> per_example(dataset.examples.size());
  parallel_for(dataset.examples.size(), [&](std::size_t x) {
    const auto& ex = dataset.examples[x];
    const auto clean = forward(model, ex.clean);
    const auto corrupt = forward(model, ex.corrupt);
    const double base = evaluate_metric(ex.metric, clean.logits.row(ex.answer_position));
    auto& out = per_example[x];
    out.assign(g.total_edges(), 0.0);
    EdgeOverrides ov(g);
    for (std::size_t e = 0; e < g.total_edges(); ++e) {
      ov.set_ref(e, corrupt.node_out[g.edge_src_index(e)]);
      const Matrix logits = forward_patched(model, ex.clean, ov);
      out[e] = evaluate_metric(ex.metric, logits.row(ex.answer_position)) - base;
      ov.clear(e);
    }
  });
  EdgeScores result;
  result.edges = g.edges();
  result.scores = mean_in_order(per_example);
  result.m = 0;
  result.dataset = dataset.task;
  result.checkpoint_step = model.step();
  return result;
}

Edge parse_edge(const std::string& text) {
  const auto arrow = text.find("->");
  const auto dot = text.rfind('.');
  if (arrow == std::string::npos || dot == std::string::npos || dot < arrow) {
    fail(Errc::unknown_edge, "malformed edge '" + text + "'");
  }
  const auto src = NodeId::parse(text.substr(0, arrow));
  const auto dst = NodeId::parse(text.substr(arrow + 2, dot - arrow - 2));
  const auto ch = parse_channel(text.substr(dot + 1));
  if (!src || !dst || !ch || !channel_valid_for(*dst, *ch)) {
    fail(Errc::unknown_edge, "malformed edge '" + text + "'");
  }
  return Edge{*src, *dst, *ch};
}

std::string edge_scores_to_json(const EdgeScores& s) {
  json edges = json::array();
  for (std::size_t i = 0; i < s.edges.size(); ++i) {
    const auto& e = s.edges[i];
    edges.push_back({{"src", e.src.name()},
                     {"dst", e.dst.name()},
                     {"channel", std::string(to_string(e.channel))},
                     {"score", s.scores[i]}});
  }
  const json j{{"format_version", kFormatVersion},
               {"checkpoint_step", s.checkpoint_step},
               {"m", s.m},
               {"dataset", s.dataset},
               {"edges", edges}};
  return j.dump(2) + "\n";
}

EdgeScores edge_scores_from_json(const std::string& text) {
  EdgeScores s;
  try {
    const json j = json::parse(text);
    if (j.at("format_version").get<int>() != kFormatVersion) {
      fail(Errc::version_mismatch, "edge scores format_version not supported");
    }
    s.checkpoint_step = j.at("checkpoint_step").get<std::int64_t>();
    s.m = j.at("m").get<int>();
    s.dataset = j.at("dataset").get<std::string>();
    for (const auto& e : j.at("edges")) {
      s.edges.push_back(parse_edge(e.at("src").get<std::string>() + "->" + e.at("dst").get<std::string>() + "." +
                                   e.at("channel").get<std::string>()));
      s.scores.push_back(e.at("score").get<double>());
    }
  } catch (const json::exception& e) {
    fail(Errc::schema_violation, std::string("edge scores: ") + e.what());
  }
  return s;
}

}  // namespace circuitscope
