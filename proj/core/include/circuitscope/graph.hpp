#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace circuitscope {

struct ModelConfig {
  int n_layers = 2;
  int n_heads = 4;
  int d_model = 64;
  int d_mlp = 256;
  int vocab_size = 512;
  int max_seq_len = 32;
  std::uint64_t seed = 0;

  int d_head() const noexcept { return d_model / n_heads; }

  // Throws Error(invalid_config) when a dimension constraint is violated.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class NodeKind : std::uint8_t { Input, AttnHead, Mlp, Logits };

// A node of the residual-stream graph. Ordering follows the residual stream:
// Input, then per layer the heads (by index) and the MLP, then Logits.
struct NodeId {
  NodeKind kind = NodeKind::Input;
  int layer = -1;
  int head = -1;

  static NodeId input() { return {NodeKind::Input, -1, -1}; }
  static NodeId attn(int layer, int head) { return {NodeKind::AttnHead, layer, head}; }
  static NodeId mlp(int layer) { return {NodeKind::Mlp, layer, -1}; }
  static NodeId logits() { return {NodeKind::Logits, -1, -1}; }

  // "input", "a1.h3", "m0", "logits"
  std::string name() const;
  static std::optional<NodeId> parse(std::string_view text);

  friend bool operator==(const NodeId&, const NodeId&) = default;
  friend std::strong_ordering operator<=>(const NodeId& a, const NodeId& b);
};

enum class Channel : std::uint8_t { Q, K, V, MlpIn, LogitsIn };

std::string_view to_string(Channel channel) noexcept;
std::optional<Channel> parse_channel(std::string_view text);

// True when `channel` is a legal input channel of `node`.
bool channel_valid_for(NodeId node, Channel channel) noexcept;

// A receiving (node, channel) pair.
struct Receiver {
  NodeId node;
  Channel channel = Channel::LogitsIn;

  friend bool operator==(const Receiver&, const Receiver&) = default;
  friend auto operator<=>(const Receiver&, const Receiver&) = default;
};

// Edge (src -> dst.channel). Total order: (src, dst, channel) with nodes in
// residual-stream order; this is the tie order used by circuit selection.
struct Edge {
  NodeId src;
  NodeId dst;
  Channel channel = Channel::LogitsIn;

  Receiver receiver() const { return {dst, channel}; }
  std::string name() const;  // "a0.h1->m1.mlp_in"

  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

// Complete edge set implied by a ModelConfig. Writers are every node except
// Logits; receivers are (head, Q|K|V), (mlp, MlpIn) and (logits, LogitsIn).
// A writer feeds a receiver iff it precedes the receiver's layer group.
class EdgeGraph {
 public:
  explicit EdgeGraph(const ModelConfig& config);

  const std::vector<NodeId>& nodes() const noexcept { return nodes_; }
  const std::vector<Receiver>& receivers() const noexcept { return receivers_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  std::size_t total_edges() const noexcept { return edges_.size(); }
  std::size_t n_writers() const noexcept { return nodes_.size() - 1; }

  std::size_t node_index(NodeId node) const;
  std::size_t receiver_index(NodeId node, Channel channel) const;
  std::size_t receiver_index(const Receiver& r) const { return receiver_index(r.node, r.channel); }

  // Number of writer nodes feeding receiver r; they are nodes [0, count).
  std::size_t upstream_count(std::size_t receiver) const { return upstream_[receiver]; }

  // Index of edge writer->receiver, or nullopt when no such edge exists.
  std::optional<std::size_t> edge_index(std::size_t writer, std::size_t receiver) const;
  std::optional<std::size_t> find(const Edge& edge) const;
  // Like find(), but throws Error(unknown_edge).
  std::size_t index_of(const Edge& edge) const;

  std::size_t edge_src_index(std::size_t edge) const { return edge_src_[edge]; }
  std::size_t edge_receiver_index(std::size_t edge) const { return edge_recv_[edge]; }

  // True when `writer` feeds `receiver` through some directed path (or
  // directly); i.e. the receiver lies strictly downstream.
  bool is_upstream(NodeId writer, NodeId receiver) const;

  const ModelConfig& config() const noexcept { return config_; }

  // Closed-form edge count, independent of enumeration.
  static std::size_t count_edges(const ModelConfig& config);

 private:
  ModelConfig config_;
  std::vector<NodeId> nodes_;
  std::vector<Receiver> receivers_;
  std::vector<std::size_t> upstream_;
  std::vector<Edge> edges_;
  std::vector<std::size_t> edge_src_;
  std::vector<std::size_t> edge_recv_;
  std::vector<long> table_;  // receiver * n_writers + writer -> edge index or -1
};

}  // namespace circuitscope
