#include "circuitscope/forward.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>

#include "circuitscope/error.hpp"

namespace circuitscope {

namespace detail {
std::atomic<std::uint64_t> forward_passes{0};
std::atomic<std::uint64_t> backward_passes{0};
}  // namespace detail

PassCounts pass_counts() noexcept {
  return {detail::forward_passes.load(std::memory_order_relaxed),
          detail::backward_passes.load(std::memory_order_relaxed)};
}

Model::Model(const Checkpoint& ckpt)
    : Model(ckpt.config, std::vector<double>(ckpt.params.begin(), ckpt.params.end()), ckpt.step) {}

Model::Model(const ModelConfig& config, std::vector<double> params, std::int64_t step)
    : config_(std::make_shared<const ModelConfig>(config)),
      graph_(std::make_shared<const EdgeGraph>(config)),
      offsets_(std::make_shared<const ParamOffsets>(config)),
      params_(std::move(params)),
      step_(step) {
  if (params_.size() != offsets_->total) {
    fail(Errc::shape_mismatch, "parameter count " + std::to_string(params_.size()) +
                                   " does not match layout total " + std::to_string(offsets_->total));
  }
}

void check_tokens(const ModelConfig& config, std::span<const int> tokens) {
  if (tokens.empty()) fail(Errc::sequence_too_short, "empty token sequence");
  if (tokens.size() > static_cast<std::size_t>(config.max_seq_len)) {
    fail(Errc::sequence_too_long, "sequence of length " + std::to_string(tokens.size()) +
                                      " exceeds max_seq_len " + std::to_string(config.max_seq_len));
  }
  for (int t : tokens) {
    if (t < 0 || t >= config.vocab_size) {
      fail(Errc::token_out_of_range, "token id " + std::to_string(t) + " outside vocabulary of " +
                                         std::to_string(config.vocab_size));
    }
  }
}

namespace ops {

void layer_norm(const Matrix& x, const double* gain, const double* bias, NormTape& tape) {
  const std::size_t T = x.rows();
  const std::size_t d = x.cols();
  tape.xhat = Matrix(T, d);
  tape.y = Matrix(T, d);
  tape.rstd.assign(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const auto row = x.row(t);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    tape.rstd[t] = rstd;
    auto xh = tape.xhat.row(t);
    auto y = tape.y.row(t);
    for (std::size_t i = 0; i < d; ++i) {
      xh[i] = (row[i] - mean) * rstd;
      y[i] = xh[i] * gain[i] + bias[i];
    }
  }
}

Matrix layer_norm(const Matrix& x, const double* gain, const double* bias) {
  NormTape tape;
  layer_norm(x, gain, bias, tape);
  return std::move(tape.y);
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

Matrix head_ov(const Model& model, int layer, int head, const Matrix& x) {
  const auto& cfg = model.config();
  const auto& lo = model.offsets().layers.at(layer);
  const auto& ho = lo.heads.at(head);
  const std::size_t d = cfg.d_model;
  const std::size_t dh = cfg.d_head();
  const Matrix n = layer_norm(x, model.p(lo.ln1_w), model.p(lo.ln1_b));
  Matrix v(x.rows(), dh);
  kernel::gemm_nn(n.data(), model.p(ho.w_v), v.data(), x.rows(), d, dh, false);
  kernel::add_row_bias(v.data(), model.p(ho.b_v), x.rows(), dh);
  Matrix out(x.rows(), d);
  kernel::gemm_nn(v.data(), model.p(ho.w_o), out.data(), x.rows(), dh, d, false);
  return out;
}

Matrix mlp_apply(const Model& model, int layer, const Matrix& x) {
  const auto& cfg = model.config();
  const auto& lo = model.offsets().layers.at(layer);
  const std::size_t d = cfg.d_model;
  const std::size_t F = cfg.d_mlp;
  const Matrix n = layer_norm(x, model.p(lo.ln2_w), model.p(lo.ln2_b));
  Matrix pre(x.rows(), F);
  kernel::gemm_nn(n.data(), model.p(lo.w_in), pre.data(), x.rows(), d, F, false);
  kernel::add_row_bias(pre.data(), model.p(lo.b_in), x.rows(), F);
  for (double& v : pre.flat()) v = gelu(v);
  Matrix out(x.rows(), d);
  kernel::gemm_nn(pre.data(), model.p(lo.w_out), out.data(), x.rows(), F, d, false);
  kernel::add_row_bias(out.data(), model.p(lo.b_out), x.rows(), d);
  return out;
}

Matrix unembed(const Model& model, const Matrix& x) {
  const auto& cfg = model.config();
  const auto& off = model.offsets();
  const Matrix n = layer_norm(x, model.p(off.lnf_w), model.p(off.lnf_b));
  Matrix logits(x.rows(), cfg.vocab_size);
  kernel::gemm_nn(n.data(), model.p(off.w_u), logits.data(), x.rows(), cfg.d_model,
                  cfg.vocab_size, false);
  return logits;
}

}  // namespace ops

namespace {

void project(const Model& m, const Matrix& x, std::size_t w, std::size_t b, std::size_t out_cols,
             Matrix& out) {
  out = Matrix(x.rows(), out_cols);
  kernel::gemm_nn(x.data(), m.p(w), out.data(), x.rows(), x.cols(), out_cols, false);
  kernel::add_row_bias(out.data(), m.p(b), x.rows(), out_cols);
}

void head_forward(const Model& m, int layer, int head, const Matrix& xq, const Matrix& xk,
                  const Matrix& xv, HeadTape& tape, Matrix& out) {
  const auto& cfg = m.config();
  const auto& lo = m.offsets().layers[layer];
  const auto& ho = lo.heads[head];
  const std::size_t T = xq.rows();
  const std::size_t d = cfg.d_model;
  const std::size_t dh = cfg.d_head();

  ops::layer_norm(xq, m.p(lo.ln1_w), m.p(lo.ln1_b), tape.nq);
  ops::layer_norm(xk, m.p(lo.ln1_w), m.p(lo.ln1_b), tape.nk);
  ops::layer_norm(xv, m.p(lo.ln1_w), m.p(lo.ln1_b), tape.nv);
  project(m, tape.nq.y, ho.w_q, ho.b_q, dh, tape.q);
  project(m, tape.nk.y, ho.w_k, ho.b_k, dh, tape.k);
  project(m, tape.nv.y, ho.w_v, ho.b_v, dh, tape.v);

  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  tape.attn = Matrix(T, T);
  for (std::size_t t = 0; t < T; ++t) {
    auto row = tape.attn.row(t);
    const auto q = tape.q.row(t);
    double mx = -INFINITY;
    for (std::size_t s = 0; s <= t; ++s) {
      const auto k = tape.k.row(s);
      double acc = 0.0;
      for (std::size_t j = 0; j < dh; ++j) acc += q[j] * k[j];
      row[s] = acc * scale;
      mx = std::max(mx, row[s]);
    }
    double sum = 0.0;
    for (std::size_t s = 0; s <= t; ++s) {
      row[s] = std::exp(row[s] - mx);
      sum += row[s];
    }
    for (std::size_t s = 0; s <= t; ++s) row[s] /= sum;
  }
  tape.z = Matrix(T, dh);
  kernel::gemm_nn(tape.attn.data(), tape.v.data(), tape.z.data(), T, T, dh, false);
  out = Matrix(T, d);
  kernel::gemm_nn(tape.z.data(), m.p(ho.w_o), out.data(), T, dh, d, false);
}

void mlp_forward(const Model& m, int layer, const Matrix& x, MlpTape& tape, Matrix& out) {
  const auto& cfg = m.config();
  const auto& lo = m.offsets().layers[layer];
  const std::size_t T = x.rows();
  const std::size_t d = cfg.d_model;
  const std::size_t F = cfg.d_mlp;
  ops::layer_norm(x, m.p(lo.ln2_w), m.p(lo.ln2_b), tape.n);
  project(m, tape.n.y, lo.w_in, lo.b_in, F, tape.pre);
  tape.act = Matrix(T, F);
  for (std::size_t i = 0; i < tape.pre.size(); ++i) tape.act.data()[i] = ops::gelu(tape.pre.data()[i]);
  project(m, tape.act, lo.w_out, lo.b_out, d, out);
}

void check_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* what) {
  if (m.rows() != rows || m.cols() != cols) {
    fail(Errc::shape_mismatch, std::string(what) + " replacement is " + std::to_string(m.rows()) +
                                   "x" + std::to_string(m.cols()) + ", expected " +
                                   std::to_string(rows) + "x" + std::to_string(cols));
  }
}

}  // namespace

ActivationCache run_forward(const Model& model, std::span<const int> tokens,
                            const Interventions& iv) {
  const auto& cfg = model.config();
  check_tokens(cfg, tokens);
  detail::forward_passes.fetch_add(1, std::memory_order_relaxed);
  const auto& g = model.graph();
  const auto& off = model.offsets();
  const std::size_t T = tokens.size();
  const std::size_t d = cfg.d_model;
  const int L = cfg.n_layers;
  const int H = cfg.n_heads;

  if (!iv.edge.empty() && iv.edge.size() != g.total_edges()) {
    fail(Errc::shape_mismatch, "edge intervention table has wrong size");
  }
  if (!iv.node.empty() && iv.node.size() != g.nodes().size()) {
    fail(Errc::shape_mismatch, "node intervention table has wrong size");
  }
  if (!iv.receiver.empty() && iv.receiver.size() != g.receivers().size()) {
    fail(Errc::shape_mismatch, "receiver intervention table has wrong size");
  }

  // Receivers with at least one overridden incoming edge.
  std::vector<char> patched(g.receivers().size(), 0);
  bool any_edge = false;
  for (std::size_t e = 0; e < iv.edge.size(); ++e) {
    if (iv.edge[e] != nullptr) {
      check_shape(*iv.edge[e], T, d, "edge");
      patched[g.edge_receiver_index(e)] = 1;
      any_edge = true;
    }
  }

  ActivationCache c;
  c.tokens.assign(tokens.begin(), tokens.end());
  c.node_out.resize(g.nodes().size());
  c.receiver_in.resize(g.receivers().size());
  c.heads.resize(static_cast<std::size_t>(L * H));
  c.mlps.resize(static_cast<std::size_t>(L));
  c.edge_patched = any_edge;

  auto finish_node = [&](std::size_t n, Matrix&& computed) {
    if (!iv.node.empty() && iv.node[n] != nullptr) {
      check_shape(*iv.node[n], T, d, "node");
      c.node_out[n] = *iv.node[n];
    } else {
      c.node_out[n] = std::move(computed);
    }
  };

  {
    Matrix emb(T, d);
    for (std::size_t t = 0; t < T; ++t) {
      const double* we = model.p(off.w_e) + static_cast<std::size_t>(tokens[t]) * d;
      const double* wp = model.p(off.w_pos) + t * d;
      auto row = emb.row(t);
      for (std::size_t i = 0; i < d; ++i) row[i] = we[i] + wp[i];
    }
    finish_node(0, std::move(emb));
  }

  // Running prefix sum of node outputs in residual order.
  Matrix resid = c.node_out[0];

  auto receiver_input = [&](std::size_t r) -> Matrix {
    if (!iv.receiver.empty() && iv.receiver[r] != nullptr) {
      check_shape(*iv.receiver[r], T, d, "receiver");
      return *iv.receiver[r];
    }
    if (!patched[r]) return resid;
    const std::size_t up = g.upstream_count(r);
    auto contribution = [&](std::size_t w) -> const Matrix& {
      const std::size_t e = *g.edge_index(w, r);
      return iv.edge[e] != nullptr ? *iv.edge[e] : c.node_out[w];
    };
    Matrix acc = contribution(0);
    for (std::size_t w = 1; w < up; ++w) acc += contribution(w);
    return acc;
  };

  for (int l = 0; l < L; ++l) {
    for (int h = 0; h < H; ++h) {
      const NodeId node = NodeId::attn(l, h);
      const std::size_t rq = g.receiver_index(node, Channel::Q);
      c.receiver_in[rq] = receiver_input(rq);
      c.receiver_in[rq + 1] = receiver_input(rq + 1);
      c.receiver_in[rq + 2] = receiver_input(rq + 2);
      Matrix out;
      head_forward(model, l, h, c.receiver_in[rq], c.receiver_in[rq + 1], c.receiver_in[rq + 2],
                   c.heads[static_cast<std::size_t>(l * H + h)], out);
      finish_node(g.node_index(node), std::move(out));
    }
    for (int h = 0; h < H; ++h) resid += c.node_out[g.node_index(NodeId::attn(l, h))];

    const NodeId mnode = NodeId::mlp(l);
    const std::size_t rm = g.receiver_index(mnode, Channel::MlpIn);
    c.receiver_in[rm] = receiver_input(rm);
    Matrix out;
    mlp_forward(model, l, c.receiver_in[rm], c.mlps[static_cast<std::size_t>(l)], out);
    finish_node(g.node_index(mnode), std::move(out));
    resid += c.node_out[g.node_index(mnode)];
  }

  const std::size_t rl = g.receivers().size() - 1;
  c.receiver_in[rl] = receiver_input(rl);
  ops::layer_norm(c.receiver_in[rl], model.p(off.lnf_w), model.p(off.lnf_b), c.final_norm);
  c.logits = Matrix(T, cfg.vocab_size);
  kernel::gemm_nn(c.final_norm.y.data(), model.p(off.w_u), c.logits.data(), T, d, cfg.vocab_size,
                  false);
  return c;
}

EdgeOverrides::EdgeOverrides(const EdgeGraph& graph) : ptrs_(graph.total_edges(), nullptr), graph_(&graph) {}

void EdgeOverrides::set(const Edge& edge, Matrix value) {
  const std::size_t e = graph_->index_of(edge);
  owned_.push_back(std::move(value));
  if (ptrs_[e] == nullptr) ++count_;
  ptrs_[e] = &owned_.back();
}

void EdgeOverrides::set_ref(std::size_t edge_index, const Matrix& value) {
  if (edge_index >= ptrs_.size()) fail(Errc::unknown_edge, "edge index out of range");
  if (ptrs_[edge_index] == nullptr) ++count_;
  ptrs_[edge_index] = &value;
}

void EdgeOverrides::clear(std::size_t edge_index) {
  if (edge_index >= ptrs_.size()) fail(Errc::unknown_edge, "edge index out of range");
  if (ptrs_[edge_index] != nullptr) --count_;
  ptrs_[edge_index] = nullptr;
}

Matrix forward_patched(const Model& model, std::span<const int> tokens,
                       const EdgeOverrides& overrides) {
  if (overrides.pointers().size() != model.graph().total_edges()) {
    fail(Errc::unknown_edge, "overrides were built for a different graph");
  }
  Interventions iv;
  if (!overrides.empty()) iv.edge = overrides.pointers();
  return run_forward(model, tokens, iv).logits;
}

}  // namespace circuitscope
