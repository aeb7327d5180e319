#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "circuitscope/model.hpp"
#include "circuitscope/tensor.hpp"

namespace circuitscope {

// Saved normalization state of one receiving channel.
struct NormTape {
  Matrix xhat;               // (x - mean) * rstd
  Matrix y;                  // xhat * gain + bias
  std::vector<double> rstd;  // per position
};

struct HeadTape {
  NormTape nq, nk, nv;
  Matrix q, k, v;  // T x d_head
  Matrix attn;     // T x T, row-stochastic, causal
  Matrix z;        // T x d_head
};

struct MlpTape {
  NormTape n;
  Matrix pre;  // T x d_mlp
  Matrix act;  // gelu(pre)
};

// Everything a forward pass produced. node_out holds each writer node's
// contribution to the residual stream (T x d_model, indexed by node index;
// the Logits slot stays empty). receiver_in holds the exact input each
// receiving channel consumed, so residual additivity can be checked against
// the node outputs.
struct ActivationCache {
  std::vector<int> tokens;
  std::vector<Matrix> node_out;
  std::vector<Matrix> receiver_in;
  Matrix logits;  // T x vocab
  std::vector<HeadTape> heads;  // layer * n_heads + head
  std::vector<MlpTape> mlps;
  NormTape final_norm;
  bool edge_patched = false;

  const Matrix& output(const EdgeGraph& g, NodeId node) const { return node_out[g.node_index(node)]; }
  const Matrix& input(const EdgeGraph& g, NodeId node, Channel c) const {
    return receiver_in[g.receiver_index(node, c)];
  }
  const Matrix& attention(int n_heads, int layer, int head) const {
    return heads[static_cast<std::size_t>(layer * n_heads + head)].attn;
  }
};

// Low-level interventions, all non-owning and indexed by graph position.
// Empty vectors mean "no intervention of that kind".
//  - edge[e]:     replaces writer u's contribution to receiver r for edge e
//  - node[n]:     replaces node n's output (the node still computes its tape
//                 from its actual inputs; downstream sees the replacement)
//  - receiver[r]: replaces the whole input of receiver r
struct Interventions {
  std::vector<const Matrix*> edge;
  std::vector<const Matrix*> node;
  std::vector<const Matrix*> receiver;
};

// Forward pass. Receiver inputs are sums of upstream contributions in node
// order, so an unpatched run and a fully spelled-out edge sum agree bitwise.
ActivationCache run_forward(const Model& model, std::span<const int> tokens,
                            const Interventions& interventions = {});

inline ActivationCache forward(const Model& model, std::span<const int> tokens) {
  return run_forward(model, tokens);
}

// Owning map EdgeId -> replacement contribution.
class EdgeOverrides {
 public:
  explicit EdgeOverrides(const EdgeGraph& graph);

  // Throws unknown-edge for edges not in the graph.
  void set(const Edge& edge, Matrix value);
  // Non-owning: `value` must outlive every forward that uses these overrides.
  void set_ref(std::size_t edge_index, const Matrix& value);
  void clear(std::size_t edge_index);

  bool empty() const noexcept { return count_ == 0; }
  std::size_t count() const noexcept { return count_; }
  const std::vector<const Matrix*>& pointers() const noexcept { return ptrs_; }

 private:
  std::deque<Matrix> owned_;
  std::vector<const Matrix*> ptrs_;
  const EdgeGraph* graph_;
  std::size_t count_ = 0;
};

// Forward with edge-level overrides; returns logits (T x vocab).
// Throws shape-mismatch when a replacement is not T x d_model.
Matrix forward_patched(const Model& model, std::span<const int> tokens,
                       const EdgeOverrides& overrides);

// Process-wide counts of forward and backward sweeps, for verifying pass
// budgets of analyses.
struct PassCounts {
  std::uint64_t forward = 0;
  std::uint64_t backward = 0;
};
PassCounts pass_counts() noexcept;

// Validates token ids and length against the model config.
void check_tokens(const ModelConfig& config, std::span<const int> tokens);

// Building blocks shared with analyses that apply pieces of the network.
namespace ops {

// Per-row layer norm of x (rows x d) with gain/bias of length d.
void layer_norm(const Matrix& x, const double* gain, const double* bias, NormTape& tape);
Matrix layer_norm(const Matrix& x, const double* gain, const double* bias);
double gelu(double x);
double gelu_grad(double x);

// Row-wise softmax of a vector.
std::vector<double> softmax(std::span<const double> logits);

// Head output for residual rows `x` as if the head attended fully to each
// row: (LN_l(x) W_V + b_V) W_O.
Matrix head_ov(const Model& model, int layer, int head, const Matrix& x);
// Output of MLP `layer` for residual rows `x`.
Matrix mlp_apply(const Model& model, int layer, const Matrix& x);
// LN_final(x) W_U.
Matrix unembed(const Model& model, const Matrix& x);

}  // namespace ops

}  // namespace circuitscope
