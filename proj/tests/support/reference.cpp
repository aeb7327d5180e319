#include "reference.hpp"

#include <cmath>
#include <string>

#include "circuitscope/checkpoint.hpp"

namespace cstest {

namespace {

struct Params {
  const circuitscope::ParamLayout layout;
  const std::vector<double>& p;

  double at(const std::string& name, std::size_t i) const { return p[layout.at(name).offset + i]; }
};

Vec layer_norm(const Vec& x, const Params& P, const std::string& prefix) {
  const std::size_t d = x.size();
  double mean = 0;
  for (double v : x) mean += v;
  mean /= d;
  double var = 0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= d;
  Vec y(d);
  for (std::size_t i = 0; i < d; ++i) {
    y[i] = (x[i] - mean) / std::sqrt(var + 1e-5) * P.at(prefix + ".w", i) + P.at(prefix + ".b", i);
  }
  return y;
}

}  // namespace

ReferenceRun reference_forward(const circuitscope::ModelConfig& c, const std::vector<double>& params,
                               const std::vector<int>& tokens) {
  const Params P{circuitscope::ParamLayout(c), params};
  const std::size_t T = tokens.size();
  const std::size_t d = c.d_model;
  const std::size_t H = c.n_heads;
  const std::size_t dh = d / H;
  const std::size_t F = c.d_mlp;
  const std::size_t V = c.vocab_size;

  ReferenceRun run;
  Mat resid(T, Vec(d));
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < d; ++i) {
      resid[t][i] = P.at("embed.W_E", tokens[t] * d + i) + P.at("embed.W_pos", t * d + i);
    }
  }
  run.embed = resid;

  for (int l = 0; l < c.n_layers; ++l) {
    const std::string b = "blocks." + std::to_string(l) + ".";
    Mat normed(T);
    for (std::size_t t = 0; t < T; ++t) normed[t] = layer_norm(resid[t], P, b + "ln1");
    Mat attn_total(T, Vec(d, 0.0));
    run.attn.emplace_back();
    run.head_out.emplace_back();
    for (std::size_t h = 0; h < H; ++h) {
      Mat q(T, Vec(dh)), k(T, Vec(dh)), v(T, Vec(dh));
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t j = 0; j < dh; ++j) {
          double sq = P.at(b + "attn.b_Q", h * dh + j);
          double sk = P.at(b + "attn.b_K", h * dh + j);
          double sv = P.at(b + "attn.b_V", h * dh + j);
          for (std::size_t i = 0; i < d; ++i) {
            const std::size_t w = h * d * dh + i * dh + j;
            sq += normed[t][i] * P.at(b + "attn.W_Q", w);
            sk += normed[t][i] * P.at(b + "attn.W_K", w);
            sv += normed[t][i] * P.at(b + "attn.W_V", w);
          }
          q[t][j] = sq;
          k[t][j] = sk;
          v[t][j] = sv;
        }
      }
      Mat A(T, Vec(T, 0.0));
      for (std::size_t t = 0; t < T; ++t) {
        Vec s(t + 1);
        double mx = -1e300;
        for (std::size_t u = 0; u <= t; ++u) {
          double acc = 0;
          for (std::size_t j = 0; j < dh; ++j) acc += q[t][j] * k[u][j];
          s[u] = acc / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, s[u]);
        }
        double z = 0;
        for (std::size_t u = 0; u <= t; ++u) z += std::exp(s[u] - mx);
        for (std::size_t u = 0; u <= t; ++u) A[t][u] = std::exp(s[u] - mx) / z;
      }
      Mat out(T, Vec(d, 0.0));
      for (std::size_t t = 0; t < T; ++t) {
        Vec zt(dh, 0.0);
        for (std::size_t u = 0; u <= t; ++u)
          for (std::size_t j = 0; j < dh; ++j) zt[j] += A[t][u] * v[u][j];
        for (std::size_t i = 0; i < d; ++i) {
          double acc = 0;
          for (std::size_t j = 0; j < dh; ++j) acc += zt[j] * P.at(b + "attn.W_O", h * dh * d + j * d + i);
          out[t][i] = acc;
          attn_total[t][i] += acc;
        }
      }
      run.attn.back().push_back(A);
      run.head_out.back().push_back(out);
    }
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < d; ++i) resid[t][i] += attn_total[t][i];

    Mat mout(T, Vec(d));
    for (std::size_t t = 0; t < T; ++t) {
      const Vec n = layer_norm(resid[t], P, b + "ln2");
      Vec act(F);
      for (std::size_t f = 0; f < F; ++f) {
        double s = P.at(b + "mlp.b_in", f);
        for (std::size_t i = 0; i < d; ++i) s += n[i] * P.at(b + "mlp.W_in", i * F + f);
        act[f] = 0.5 * s * (1.0 + std::erf(s / std::sqrt(2.0)));
      }
      for (std::size_t i = 0; i < d; ++i) {
        double s = P.at(b + "mlp.b_out", i);
        for (std::size_t f = 0; f < F; ++f) s += act[f] * P.at(b + "mlp.W_out", f * d + i);
        mout[t][i] = s;
      }
    }
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < d; ++i) resid[t][i] += mout[t][i];
    run.mlp_out.push_back(mout);
  }

  run.logits.assign(T, Vec(V, 0.0));
  for (std::size_t t = 0; t < T; ++t) {
    const Vec n = layer_norm(resid[t], P, "ln_final");
    for (std::size_t v = 0; v < V; ++v) {
      double s = 0;
      for (std::size_t i = 0; i < d; ++i) s += n[i] * P.at("unembed.W_U", i * V + v);
      run.logits[t][v] = s;
    }
  }
  return run;
}

}  // namespace cstest
