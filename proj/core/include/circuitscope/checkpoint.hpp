#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "circuitscope/graph.hpp"

namespace circuitscope {

inline constexpr int kFormatVersion = 1;

// One named tensor in the flat parameter store.
struct ParamEntry {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;

  friend bool operator==(const ParamEntry&, const ParamEntry&) = default;
};

// Declared, ordered parameter layout. With d = d_model, dh = d_head,
// H = n_heads, V = vocab, S = max_seq_len, F = d_mlp:
//
//   embed.W_E            [V, d]
//   embed.W_pos          [S, d]
//   per layer l:
//     blocks.l.ln1.w     [d]        blocks.l.ln1.b  [d]
//     blocks.l.attn.W_Q  [H, d, dh] blocks.l.attn.b_Q [H, dh]
//     blocks.l.attn.W_K  [H, d, dh] blocks.l.attn.b_K [H, dh]
//     blocks.l.attn.W_V  [H, d, dh] blocks.l.attn.b_V [H, dh]
//     blocks.l.attn.W_O  [H, dh, d]
//     blocks.l.ln2.w     [d]        blocks.l.ln2.b  [d]
//     blocks.l.mlp.W_in  [d, F]     blocks.l.mlp.b_in  [F]
//     blocks.l.mlp.W_out [F, d]     blocks.l.mlp.b_out [d]
//   ln_final.w [d]  ln_final.b [d]
//   unembed.W_U          [d, V]
class ParamLayout {
 public:
  explicit ParamLayout(const ModelConfig& config);

  const std::vector<ParamEntry>& entries() const noexcept { return entries_; }
  std::size_t total() const noexcept { return total_; }
  const ParamEntry& at(const std::string& name) const;

 private:
  std::vector<ParamEntry> entries_;
  std::size_t total_ = 0;
};

// Offsets into the flat store for the forward/backward kernels.
struct HeadOffsets {
  std::size_t w_q, b_q, w_k, b_k, w_v, b_v, w_o;
};

struct LayerOffsets {
  std::size_t ln1_w, ln1_b;
  std::vector<HeadOffsets> heads;
  std::size_t ln2_w, ln2_b, w_in, b_in, w_out, b_out;
};

struct ParamOffsets {
  std::size_t w_e, w_pos;
  std::vector<LayerOffsets> layers;
  std::size_t lnf_w, lnf_b, w_u;
  std::size_t total;

  explicit ParamOffsets(const ModelConfig& config);
};

// Batch shape of the run that produced a checkpoint; tokens_seen is
// step * batch_size * seq_len.
struct TrainingShape {
  int batch_size = 0;
  int seq_len = 0;

  friend bool operator==(const TrainingShape&, const TrainingShape&) = default;
};

struct Checkpoint {
  ModelConfig config;
  std::vector<float> params;
  std::int64_t step = 0;
  std::int64_t tokens_seen = 0;
  TrainingShape training;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

// Deterministic initialization from config.seed. step = tokens_seen = 0.
Checkpoint build_model(const ModelConfig& config);

// "CKPT1" | u32 LE header length | UTF-8 JSON header | f32 LE params.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// All *.ckpt files in a directory, ordered by step.
std::vector<std::filesystem::path> list_checkpoints(const std::filesystem::path& dir);
std::string checkpoint_filename(std::int64_t step);

}  // namespace circuitscope
