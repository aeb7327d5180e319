#include "circuitscope/graph.hpp"

#include <charconv>
#include <climits>
#include <tuple>

#include "circuitscope/error.hpp"

namespace circuitscope {

void ModelConfig::validate() const {
  auto bad = [](const std::string& what) { fail(Errc::invalid_config, what); };
  if (n_layers < 1) bad("n_layers must be >= 1");
  if (n_heads < 1) bad("n_heads must be >= 1");
  if (d_model < 1) bad("d_model must be >= 1");
  if (d_mlp < 1) bad("d_mlp must be >= 1");
  if (vocab_size < 1) bad("vocab_size must be >= 1");
  if (max_seq_len < 2) bad("max_seq_len must be >= 2");
  if (d_model % n_heads != 0) {
    bad("d_model (" + std::to_string(d_model) + ") is not divisible by n_heads (" +
        std::to_string(n_heads) + ")");
  }
}

namespace {

std::tuple<int, int, int> order_key(const NodeId& n) {
  switch (n.kind) {
    case NodeKind::Input: return {-1, 0, 0};
    case NodeKind::AttnHead: return {n.layer, 1, n.head};
    case NodeKind::Mlp: return {n.layer, 2, 0};
    case NodeKind::Logits: return {INT_MAX, 3, 0};
  }
  return {0, 0, 0};
}

bool parse_int(std::string_view s, int& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && out >= 0;
}

}  // namespace

std::strong_ordering operator<=>(const NodeId& a, const NodeId& b) {
  return order_key(a) <=> order_key(b);
}

std::string NodeId::name() const {
  switch (kind) {
    case NodeKind::Input: return "input";
    case NodeKind::AttnHead: return "a" + std::to_string(layer) + ".h" + std::to_string(head);
    case NodeKind::Mlp: return "m" + std::to_string(layer);
    case NodeKind::Logits: return "logits";
  }
  return "?";
}

std::optional<NodeId> NodeId::parse(std::string_view text) {
  if (text == "input") return input();
  if (text == "logits") return logits();
  if (text.size() >= 2 && text[0] == 'm') {
    int layer = 0;
    if (parse_int(text.substr(1), layer)) return mlp(layer);
    return std::nullopt;
  }
  if (text.size() >= 5 && text[0] == 'a') {
    const auto dot = text.find(".h");
    if (dot == std::string_view::npos) return std::nullopt;
    int layer = 0;
    int head = 0;
    if (parse_int(text.substr(1, dot - 1), layer) && parse_int(text.substr(dot + 2), head)) {
      return attn(layer, head);
    }
  }
  return std::nullopt;
}

std::string_view to_string(Channel channel) noexcept {
  switch (channel) {
    case Channel::Q: return "q";
    case Channel::K: return "k";
    case Channel::V: return "v";
    case Channel::MlpIn: return "mlp_in";
    case Channel::LogitsIn: return "logits_in";
  }
  return "?";
}

std::optional<Channel> parse_channel(std::string_view text) {
  for (Channel c : {Channel::Q, Channel::K, Channel::V, Channel::MlpIn, Channel::LogitsIn}) {
    if (to_string(c) == text) return c;
  }
  return std::nullopt;
}

bool channel_valid_for(NodeId node, Channel channel) noexcept {
  switch (node.kind) {
    case NodeKind::AttnHead:
      return channel == Channel::Q || channel == Channel::K || channel == Channel::V;
    case NodeKind::Mlp: return channel == Channel::MlpIn;
    case NodeKind::Logits: return channel == Channel::LogitsIn;
    case NodeKind::Input: return false;
  }
  return false;
}

std::string Edge::name() const {
  std::string out = src.name();
  out += "->";
  out += dst.name();
  out += '.';
  out += to_string(channel);
  return out;
}

EdgeGraph::EdgeGraph(const ModelConfig& config) : config_(config) {
  config.validate();
  const int L = config.n_layers;
  const int H = config.n_heads;

  nodes_.push_back(NodeId::input());
  for (int l = 0; l < L; ++l) {
    for (int h = 0; h < H; ++h) nodes_.push_back(NodeId::attn(l, h));
    nodes_.push_back(NodeId::mlp(l));
  }
  nodes_.push_back(NodeId::logits());

  for (int l = 0; l < L; ++l) {
    const std::size_t before_layer = 1 + static_cast<std::size_t>(l) * (H + 1);
    for (int h = 0; h < H; ++h) {
      for (Channel c : {Channel::Q, Channel::K, Channel::V}) {
        receivers_.push_back({NodeId::attn(l, h), c});
        upstream_.push_back(before_layer);
      }
    }
    receivers_.push_back({NodeId::mlp(l), Channel::MlpIn});
    upstream_.push_back(before_layer + H);
  }
  receivers_.push_back({NodeId::logits(), Channel::LogitsIn});
  upstream_.push_back(n_writers());

  table_.assign(receivers_.size() * n_writers(), -1);
  for (std::size_t w = 0; w < n_writers(); ++w) {
    for (std::size_t r = 0; r < receivers_.size(); ++r) {
      if (w >= upstream_[r]) continue;
      table_[r * n_writers() + w] = static_cast<long>(edges_.size());
      edges_.push_back({nodes_[w], receivers_[r].node, receivers_[r].channel});
      edge_src_.push_back(w);
      edge_recv_.push_back(r);
    }
  }
}

std::size_t EdgeGraph::node_index(NodeId node) const {
  const int L = config_.n_layers;
  const int H = config_.n_heads;
  switch (node.kind) {
    case NodeKind::Input: return 0;
    case NodeKind::AttnHead:
      if (node.layer < 0 || node.layer >= L || node.head < 0 || node.head >= H) break;
      return 1 + static_cast<std::size_t>(node.layer) * (H + 1) + node.head;
    case NodeKind::Mlp:
      if (node.layer < 0 || node.layer >= L) break;
      return 1 + static_cast<std::size_t>(node.layer) * (H + 1) + H;
    case NodeKind::Logits: return nodes_.size() - 1;
  }
  fail(Errc::invalid_argument, "node " + node.name() + " is not part of this model");
}

std::size_t EdgeGraph::receiver_index(NodeId node, Channel channel) const {
  if (!channel_valid_for(node, channel)) {
    fail(Errc::invalid_receiver, node.name() + " has no channel " + std::string(to_string(channel)));
  }
  const std::size_t H = static_cast<std::size_t>(config_.n_heads);
  const std::size_t per_layer = 3 * H + 1;
  (void)node_index(node);  // range check
  switch (node.kind) {
    case NodeKind::AttnHead:
      return node.layer * per_layer + 3 * node.head + static_cast<std::size_t>(channel);
    case NodeKind::Mlp: return node.layer * per_layer + 3 * H;
    case NodeKind::Logits: return receivers_.size() - 1;
    case NodeKind::Input: break;
  }
  fail(Errc::invalid_receiver, "input node has no receiving channel");
}

std::optional<std::size_t> EdgeGraph::edge_index(std::size_t writer, std::size_t receiver) const {
  if (writer >= n_writers() || receiver >= receivers_.size()) return std::nullopt;
  const long idx = table_[receiver * n_writers() + writer];
  if (idx < 0) return std::nullopt;
  return static_cast<std::size_t>(idx);
}

std::optional<std::size_t> EdgeGraph::find(const Edge& edge) const {
  if (!channel_valid_for(edge.dst, edge.channel)) return std::nullopt;
  if (edge.src.kind == NodeKind::Logits) return std::nullopt;
  try {
    return edge_index(node_index(edge.src), receiver_index(edge.dst, edge.channel));
  } catch (const Error&) {
    return std::nullopt;
  }
}

std::size_t EdgeGraph::index_of(const Edge& edge) const {
  if (auto idx = find(edge)) return *idx;
  fail(Errc::unknown_edge, "unknown edge " + edge.name());
}

bool EdgeGraph::is_upstream(NodeId writer, NodeId receiver) const {
  if (writer.kind == NodeKind::Logits || receiver.kind == NodeKind::Input) return false;
  const std::size_t w = node_index(writer);
  const std::size_t r = node_index(receiver);
  if (w >= r) return false;
  // Heads of one layer do not feed each other.
  return !(writer.kind == NodeKind::AttnHead && receiver.kind == NodeKind::AttnHead &&
           writer.layer == receiver.layer);
}

std::size_t EdgeGraph::count_edges(const ModelConfig& c) {
  const std::size_t L = static_cast<std::size_t>(c.n_layers);
  const std::size_t H = static_cast<std::size_t>(c.n_heads);
  const std::size_t tri = (H + 1) * L * (L - 1) / 2;  // sum_l l*(H+1)
  const std::size_t into_heads = 3 * H * (L + tri);
  const std::size_t into_mlps = L * (1 + H) + tri;
  const std::size_t into_logits = 1 + L * (H + 1);
  return into_heads + into_mlps + into_logits;
}

}  // namespace circuitscope
