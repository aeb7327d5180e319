#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "circuitscope/forward.hpp"
#include "circuitscope/tasks.hpp"

namespace circuitscope {

struct HeadId {
  int layer = 0;
  int head = 0;

  NodeId node() const { return NodeId::attn(layer, head); }
  std::string name() const { return node().name(); }

  friend bool operator==(const HeadId&, const HeadId&) = default;
  friend auto operator<=>(const HeadId&, const HeadId&) = default;
};

std::vector<HeadId> all_heads(const ModelConfig& config);

// Sender head, receiving channels, and aligned clean/altered datasets. The
// metric of each clean example is used.
struct PatchSpec {
  NodeId sender;
  std::vector<Receiver> receivers;
  const TaskDataset* clean = nullptr;
  const TaskDataset* altered = nullptr;
};

// Per-example record of the final patched run next to the clean run.
struct PatchRun {
  ActivationCache clean;
  ActivationCache patched;
  double clean_metric = 0.0;
  double patched_metric = 0.0;
};

// Three-phase path patching:
//  1. run x_orig and x_altered;
//  2. run x_orig with the sender's output taken from x_altered and every
//     other head frozen to its x_orig output (MLPs recompute), recording
//     the receivers' inputs;
//  3. run x_orig with only the receivers' inputs replaced by those records.
// Throws misaligned_datasets and invalid_receiver.
std::vector<PatchRun> path_patch_runs(const Model& model, const PatchSpec& spec);

// Mean of (patched metric - clean metric) over examples.
double path_patch(const Model& model, const PatchSpec& spec);

// The dataset's corrupt prompts as clean prompts (metrics kept), for use as
// x_altered.
TaskDataset corrupted_view(const TaskDataset& dataset);

// Path patching into the logits with x_altered = the corrupt prompts.
double direct_effect(const Model& model, HeadId head, const TaskDataset& dataset);

// Causal, row-stochastic attention of one head on `tokens`.
Matrix attention_pattern(const Model& model, std::span<const int> tokens, HeadId head);

// Receiver set name for effect tables: receivers joined by '|', e.g.
// "a3.h1.q|a3.h1.k"; the logits receiver is "logits".
std::string receiver_set_name(const std::vector<Receiver>& receivers);

struct EffectRow {
  HeadId head;
  std::string receiver_set;
  double effect = 0.0;
};

// CSV columns (layer, head, receiver_set, effect).
void write_effects_csv(const std::filesystem::path& path, const std::vector<EffectRow>& rows);
std::vector<EffectRow> read_effects_csv(const std::filesystem::path& path);

}  // namespace circuitscope
