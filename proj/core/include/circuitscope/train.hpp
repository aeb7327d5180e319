#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "circuitscope/checkpoint.hpp"
#include "circuitscope/model.hpp"

namespace circuitscope {

// Steps at which checkpoints are written. Strictly increasing, first step 0.
struct CheckpointSchedule {
  std::vector<std::int64_t> steps;

  // 0, 1, 2, 4, ..., 512, then every 500 steps from 1000 to 5000.
  static CheckpointSchedule desk_default();
  // 0, 1, 2, 4, ... up to 512 (or last_step if smaller), then every
  // `stride` steps starting at 2 * stride, through last_step.
  static CheckpointSchedule log_then_linear(std::int64_t last_step, std::int64_t stride);

  // Throws invalid_argument.
  void validate() const;
  std::int64_t last() const { return steps.back(); }

  friend bool operator==(const CheckpointSchedule&, const CheckpointSchedule&) = default;
};

// Adaptive steps without momentum: v <- b2 v + (1 - b2) g^2 and
// p <- p - lr_t g / (sqrt(v / (1 - b2^t)) + eps), with lr_t ramping
// linearly over the first warmup_steps updates.
struct TrainingOptions {
  int batch_size = 16;
  double learning_rate = 3e-3;
  int warmup_steps = 10;
  double beta2 = 0.99;
  double eps = 1e-8;
  std::uint64_t seed = 0;

  friend bool operator==(const TrainingOptions&, const TrainingOptions&) = default;
};

// Sequences right-padded with pad_id to a common length; pad targets do not
// contribute to the loss.
struct TrainingCorpus {
  std::vector<std::vector<int>> sequences;
  int pad_id = 0;

  static TrainingCorpus from_sequences(std::vector<std::vector<int>> sequences, int pad_id = 0);
  std::size_t seq_len() const { return sequences.empty() ? 0 : sequences[0].size(); }
};

struct LossRecord {
  std::int64_t step = 0;
  std::int64_t tokens_seen = 0;
  double loss = 0.0;
};

struct TrainingResult {
  std::vector<std::filesystem::path> checkpoints;
  std::vector<LossRecord> log;
};

// Mean next-token cross-entropy of one sequence (pad targets skipped) and,
// when `param_grad` is nonempty, its gradient accumulated into param_grad.
double sequence_loss(const Model& model, std::span<const int> tokens, int pad_id,
                     std::span<double> param_grad = {});

// Per-position next-token cross-entropy; entry t is the loss of predicting
// tokens[t + 1].
std::vector<double> token_losses(const Model& model, std::span<const int> tokens);

// Called with each checkpoint right after it is written.
using CheckpointCallback = std::function<void(const Checkpoint&)>;

// Trains from build_model(config), writing step_XXXXXXXX.ckpt at every
// scheduled step and training_log.csv with (step, tokens_seen, loss) into
// out_dir. Throws divergence when the loss becomes non-finite, io_failure
// on write errors.
TrainingResult train(const ModelConfig& config, const TrainingCorpus& corpus, const CheckpointSchedule& schedule,
                     const TrainingOptions& options, const std::filesystem::path& out_dir,
                     const CheckpointCallback& on_checkpoint = {});

void write_training_log(const std::filesystem::path& path, const std::vector<LossRecord>& log);
std::vector<LossRecord> read_training_log(const std::filesystem::path& path);

}  // namespace circuitscope
