#include "circuitscope/backward.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "circuitscope/error.hpp"

namespace circuitscope {

namespace detail {
extern std::atomic<std::uint64_t> backward_passes;
}  // namespace detail

namespace {

// Returns dL/dx for y = LN(x) and accumulates gain/bias gradients.
Matrix ln_backward(const NormTape& tape, const Matrix& g_y, const double* gain, double* g_gain,
                   double* g_bias) {
  const std::size_t T = g_y.rows();
  const std::size_t d = g_y.cols();
  Matrix g_x(T, d);
  std::vector<double> gxhat(d);
  for (std::size_t t = 0; t < T; ++t) {
    const auto gy = g_y.row(t);
    const auto xh = tape.xhat.row(t);
    double mean1 = 0.0;
    double mean2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      gxhat[i] = gy[i] * gain[i];
      mean1 += gxhat[i];
      mean2 += gxhat[i] * xh[i];
    }
    mean1 /= static_cast<double>(d);
    mean2 /= static_cast<double>(d);
    auto gx = g_x.row(t);
    const double rstd = tape.rstd[t];
    for (std::size_t i = 0; i < d; ++i) gx[i] = rstd * (gxhat[i] - mean1 - xh[i] * mean2);
    if (g_gain != nullptr) {
      for (std::size_t i = 0; i < d; ++i) {
        g_gain[i] += gy[i] * xh[i];
        g_bias[i] += gy[i];
      }
    }
  }
  return g_x;
}

// Backward through y W + b; returns dL/dy.
Matrix linear_backward(const Matrix& y, const Matrix& g_out, const double* w, double* g_w,
                       double* g_b) {
  const std::size_t T = y.rows();
  const std::size_t in = y.cols();
  const std::size_t out = g_out.cols();
  Matrix g_y(T, in);
  kernel::gemm_nt(g_out.data(), w, g_y.data(), T, out, in, false);
  if (g_w != nullptr) {
    kernel::gemm_tn(y.data(), g_out.data(), g_w, T, in, out, true);
    if (g_b != nullptr) kernel::sum_rows(g_out.data(), g_b, T, out);
  }
  return g_y;
}

struct HeadGrads {
  Matrix q, k, v;
};

HeadGrads head_backward(const Model& m, int layer, int head, const HeadTape& tape,
                        const Matrix& g_out, double* pg) {
  const auto& cfg = m.config();
  const auto& lo = m.offsets().layers[layer];
  const auto& ho = lo.heads[head];
  const std::size_t T = g_out.rows();
  const std::size_t d = cfg.d_model;
  const std::size_t dh = cfg.d_head();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  auto pgp = [&](std::size_t off) { return pg == nullptr ? nullptr : pg + off; };

  Matrix g_z(T, dh);
  kernel::gemm_nt(g_out.data(), m.p(ho.w_o), g_z.data(), T, d, dh, false);
  if (pg != nullptr) kernel::gemm_tn(tape.z.data(), g_out.data(), pg + ho.w_o, T, dh, d, true);

  Matrix g_attn(T, T);
  kernel::gemm_nt(g_z.data(), tape.v.data(), g_attn.data(), T, dh, T, false);
  Matrix g_v(T, dh);
  kernel::gemm_tn(tape.attn.data(), g_z.data(), g_v.data(), T, T, dh, false);

  Matrix g_scores(T, T);
  for (std::size_t t = 0; t < T; ++t) {
    const auto a = tape.attn.row(t);
    const auto ga = g_attn.row(t);
    double inner = 0.0;
    for (std::size_t s = 0; s <= t; ++s) inner += a[s] * ga[s];
    auto gs = g_scores.row(t);
    for (std::size_t s = 0; s <= t; ++s) gs[s] = scale * a[s] * (ga[s] - inner);
  }
  Matrix g_q(T, dh);
  kernel::gemm_nn(g_scores.data(), tape.k.data(), g_q.data(), T, T, dh, false);
  Matrix g_k(T, dh);
  kernel::gemm_tn(g_scores.data(), tape.q.data(), g_k.data(), T, T, dh, false);

  const Matrix g_yq = linear_backward(tape.nq.y, g_q, m.p(ho.w_q), pgp(ho.w_q), pgp(ho.b_q));
  const Matrix g_yk = linear_backward(tape.nk.y, g_k, m.p(ho.w_k), pgp(ho.w_k), pgp(ho.b_k));
  const Matrix g_yv = linear_backward(tape.nv.y, g_v, m.p(ho.w_v), pgp(ho.w_v), pgp(ho.b_v));

  const double* gain = m.p(lo.ln1_w);
  HeadGrads out;
  out.q = ln_backward(tape.nq, g_yq, gain, pgp(lo.ln1_w), pgp(lo.ln1_b));
  out.k = ln_backward(tape.nk, g_yk, gain, pgp(lo.ln1_w), pgp(lo.ln1_b));
  out.v = ln_backward(tape.nv, g_yv, gain, pgp(lo.ln1_w), pgp(lo.ln1_b));
  return out;
}

Matrix mlp_backward(const Model& m, int layer, const MlpTape& tape, const Matrix& g_out, double* pg) {
  const auto& lo = m.offsets().layers[layer];
  auto pgp = [&](std::size_t off) { return pg == nullptr ? nullptr : pg + off; };
  Matrix g_pre = linear_backward(tape.act, g_out, m.p(lo.w_out), pgp(lo.w_out), pgp(lo.b_out));
  for (std::size_t i = 0; i < g_pre.size(); ++i) g_pre.data()[i] *= ops::gelu_grad(tape.pre.data()[i]);
  const Matrix g_y = linear_backward(tape.n.y, g_pre, m.p(lo.w_in), pgp(lo.w_in), pgp(lo.b_in));
  return ln_backward(tape.n, g_y, m.p(lo.ln2_w), pgp(lo.ln2_w), pgp(lo.ln2_b));
}

}  // namespace

GradientCache backward(const Model& model, const ActivationCache& cache, const Matrix& dlogits,
                       std::span<double> param_grad) {
  if (cache.edge_patched) {
    fail(Errc::invalid_argument, "backward requires a cache without edge overrides");
  }
  const auto& cfg = model.config();
  const auto& g = model.graph();
  const auto& off = model.offsets();
  const std::size_t T = cache.tokens.size();
  const std::size_t d = cfg.d_model;
  const int L = cfg.n_layers;
  const int H = cfg.n_heads;
  if (dlogits.rows() != T || dlogits.cols() != static_cast<std::size_t>(cfg.vocab_size)) {
    fail(Errc::shape_mismatch, "dlogits must be T x vocab");
  }
  if (!param_grad.empty() && param_grad.size() != off.total) {
    fail(Errc::shape_mismatch, "parameter gradient buffer has wrong size");
  }
  double* pg = param_grad.empty() ? nullptr : param_grad.data();
  detail::backward_passes.fetch_add(1, std::memory_order_relaxed);

  GradientCache out;
  out.receiver_grad.resize(g.receivers().size());

  const Matrix g_y = linear_backward(cache.final_norm.y, dlogits, model.p(off.w_u),
                                     pg ? pg + off.w_u : nullptr, nullptr);
  const std::size_t rl = g.receivers().size() - 1;
  out.receiver_grad[rl] = ln_backward(cache.final_norm, g_y, model.p(off.lnf_w),
                                      pg ? pg + off.lnf_w : nullptr, pg ? pg + off.lnf_b : nullptr);

  // Sum of input gradients of every receiver downstream of the current point;
  // equals dL/d(output) of each node about to be visited.
  Matrix downstream = out.receiver_grad[rl];
  for (int l = L - 1; l >= 0; --l) {
    const std::size_t rm = g.receiver_index(NodeId::mlp(l), Channel::MlpIn);
    out.receiver_grad[rm] = mlp_backward(model, l, cache.mlps[static_cast<std::size_t>(l)], downstream, pg);
    downstream += out.receiver_grad[rm];

    for (int h = 0; h < H; ++h) {
      HeadGrads hg = head_backward(model, l, h, cache.heads[static_cast<std::size_t>(l * H + h)],
                                   downstream, pg);
      const std::size_t rq = g.receiver_index(NodeId::attn(l, h), Channel::Q);
      out.receiver_grad[rq] = std::move(hg.q);
      out.receiver_grad[rq + 1] = std::move(hg.k);
      out.receiver_grad[rq + 2] = std::move(hg.v);
    }
    for (int h = 0; h < H; ++h) {
      const std::size_t rq = g.receiver_index(NodeId::attn(l, h), Channel::Q);
      downstream += out.receiver_grad[rq];
      downstream += out.receiver_grad[rq + 1];
      downstream += out.receiver_grad[rq + 2];
    }
  }

  if (pg != nullptr) {
    for (std::size_t t = 0; t < T; ++t) {
      double* ge = pg + off.w_e + static_cast<std::size_t>(cache.tokens[t]) * d;
      double* gp = pg + off.w_pos + t * d;
      const auto row = downstream.row(t);
      for (std::size_t i = 0; i < d; ++i) {
        ge[i] += row[i];
        gp[i] += row[i];
      }
    }
  }
  return out;
}

GradientCache backward_metric(const Model& model, std::span<const int> tokens,
                              std::size_t answer_position, const MetricSpec& metric,
                              const Blend* blend) {
  if (answer_position >= tokens.size()) {
    fail(Errc::invalid_argument, "answer position outside sequence");
  }
  validate_metric(metric, model.config().vocab_size);
  ActivationCache cache;
  if (blend != nullptr) {
    if (!(blend->alpha >= 0.0 && blend->alpha <= 1.0)) {
      fail(Errc::invalid_blend, "blend coefficient " + std::to_string(blend->alpha) + " outside [0, 1]");
    }
    if (blend->clean == nullptr || blend->corrupt == nullptr) {
      fail(Errc::invalid_blend, "blend requires clean and corrupt caches");
    }
    const auto& clean = *blend->clean;
    const auto& corrupt = *blend->corrupt;
    if (clean.node_out.size() != corrupt.node_out.size() || clean.tokens.size() != tokens.size() ||
        corrupt.tokens.size() != tokens.size()) {
      fail(Errc::mismatched_pairs, "blend caches do not match the sequence");
    }
    std::vector<Matrix> blended(clean.node_out.size());
    Interventions iv;
    iv.node.assign(clean.node_out.size(), nullptr);
    for (std::size_t n = 0; n + 1 < clean.node_out.size(); ++n) {
      blended[n] = lerp(corrupt.node_out[n], clean.node_out[n], blend->alpha);
      iv.node[n] = &blended[n];
    }
    cache = run_forward(model, tokens, iv);
  } else {
    cache = run_forward(model, tokens);
  }
  const auto row = cache.logits.row(answer_position);
  Matrix dlogits(tokens.size(), static_cast<std::size_t>(model.config().vocab_size));
  const auto gm = metric_gradient(metric, row);
  std::copy(gm.begin(), gm.end(), dlogits.row(answer_position).begin());
  GradientCache out = backward(model, cache, dlogits);
  out.metric_value = evaluate_metric(metric, row);
  return out;
}

}  // namespace circuitscope
