#include "circuitscope/train.hpp"

#include <algorithm>
#include <cmath>

#include "circuitscope/backward.hpp"
#include "circuitscope/error.hpp"
#include "circuitscope/forward.hpp"
#include "circuitscope/io.hpp"
#include "circuitscope/parallel.hpp"
#include "circuitscope/rng.hpp"

namespace circuitscope {

namespace fs = std::filesystem;

CheckpointSchedule CheckpointSchedule::desk_default() { return log_then_linear(5000, 500); }

CheckpointSchedule CheckpointSchedule::log_then_linear(std::int64_t last_step, std::int64_t stride) {
  if (last_step < 0 || stride < 1) fail(Errc::invalid_argument, "bad schedule parameters");
  CheckpointSchedule s;
  s.steps.push_back(0);
  for (std::int64_t p = 1; p <= std::min<std::int64_t>(512, last_step); p *= 2) s.steps.push_back(p);
  for (std::int64_t t = 2 * stride; t <= last_step; t += stride) {
    if (t > s.steps.back()) s.steps.push_back(t);
  }
  if (s.steps.back() != last_step) s.steps.push_back(last_step);
  return s;
}

void CheckpointSchedule::validate() const {
  if (steps.empty() || steps.front() != 0) fail(Errc::invalid_argument, "schedule must start at step 0");
  for (std::size_t i = 1; i < steps.size(); ++i) {
    if (steps[i] <= steps[i - 1]) fail(Errc::invalid_argument, "schedule must be strictly increasing");
  }
}

TrainingCorpus TrainingCorpus::from_sequences(std::vector<std::vector<int>> sequences, int pad_id) {
  if (sequences.empty()) fail(Errc::empty_dataset, "training corpus is empty");
  std::size_t len = 0;
  for (const auto& s : sequences) len = std::max(len, s.size());
  for (auto& s : sequences) s.resize(len, pad_id);
  return TrainingCorpus{std::move(sequences), pad_id};
}

namespace {

// Loss and dlogits for next-token prediction; returns the number of
// non-pad targets.
double next_token_loss(const Matrix& logits, std::span<const int> tokens, int pad_id, Matrix* dlogits) {
  const std::size_t T = tokens.size();
  std::size_t count = 0;
  for (std::size_t t = 0; t + 1 < T; ++t) count += tokens[t + 1] != pad_id;
  if (count == 0) return 0.0;
  double loss = 0.0;
  for (std::size_t t = 0; t + 1 < T; ++t) {
    const int target = tokens[t + 1];
    if (target == pad_id) continue;
    const auto p = ops::softmax(logits.row(t));
    loss -= std::log(std::max(p[static_cast<std::size_t>(target)], 1e-300));
    if (dlogits != nullptr) {
      auto g = dlogits->row(t);
      for (std::size_t v = 0; v < p.size(); ++v) g[v] = p[v] / static_cast<double>(count);
      g[static_cast<std::size_t>(target)] -= 1.0 / static_cast<double>(count);
    }
  }
  return loss / static_cast<double>(count);
}

Checkpoint snapshot(const ModelConfig& config, const std::vector<double>& params, std::int64_t step,
                    const TrainingShape& shape) {
  Checkpoint ck;
  ck.config = config;
  ck.params.assign(params.begin(), params.end());
  ck.step = step;
  ck.training = shape;
  ck.tokens_seen = step * shape.batch_size * shape.seq_len;
  return ck;
}

}  // namespace

double sequence_loss(const Model& model, std::span<const int> tokens, int pad_id, std::span<double> param_grad) {
  const auto cache = forward(model, tokens);
  if (param_grad.empty()) return next_token_loss(cache.logits, tokens, pad_id, nullptr);
  Matrix dlogits(tokens.size(), static_cast<std::size_t>(model.config().vocab_size));
  const double loss = next_token_loss(cache.logits, tokens, pad_id, &dlogits);
  backward(model, cache, dlogits, param_grad);
  return loss;
}

std::vector<double> token_losses(const Model& model, std::span<const int> tokens) {
  const auto cache = forward(model, tokens);
  std::vector<double> out;
  for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
    const auto p = ops::softmax(cache.logits.row(t));
    out.push_back(-std::log(std::max(p[static_cast<std::size_t>(tokens[t + 1])], 1e-300)));
  }
  return out;
}

TrainingResult train(const ModelConfig& config, const TrainingCorpus& corpus, const CheckpointSchedule& schedule,
                     const TrainingOptions& options, const fs::path& out_dir,
                     const CheckpointCallback& on_checkpoint) {
  config.validate();
  schedule.validate();
  if (corpus.sequences.empty()) fail(Errc::empty_dataset, "training corpus is empty");
  if (options.batch_size < 1) fail(Errc::invalid_argument, "batch_size must be >= 1");
  const std::size_t seq_len = corpus.seq_len();
  for (const auto& s : corpus.sequences) {
    if (s.size() != seq_len) fail(Errc::invalid_argument, "training sequences must share one length");
    check_tokens(config, s);
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail(Errc::io_failure, "cannot create " + out_dir.string() + ": " + ec.message());

  const Checkpoint init = build_model(config);
  std::vector<double> params(init.params.begin(), init.params.end());
  std::vector<double> second_moment(params.size(), 0.0);
  const std::size_t B = static_cast<std::size_t>(options.batch_size);
  std::vector<std::vector<double>> grads(B, std::vector<double>(params.size()));
  std::vector<double> losses(B);
  std::vector<std::size_t> batch(B);
  const TrainingShape shape{options.batch_size, static_cast<int>(seq_len)};

  Rng rng(options.seed);
  TrainingResult result;
  std::size_t next_ckpt = 0;
  for (std::int64_t step = 0;; ++step) {
    if (next_ckpt < schedule.steps.size() && schedule.steps[next_ckpt] == step) {
      const Checkpoint ck = snapshot(config, params, step, shape);
      const fs::path path = out_dir / checkpoint_filename(step);
      save_checkpoint(ck, path);
      result.checkpoints.push_back(path);
      if (on_checkpoint) on_checkpoint(ck);
      ++next_ckpt;
    }

    for (auto& b : batch) b = rng.below(corpus.sequences.size());
    const bool update = step < schedule.last();
    const Model model(config, params, step);
    parallel_for(B, [&](std::size_t i) {
      std::fill(grads[i].begin(), grads[i].end(), 0.0);
      const auto& seq = corpus.sequences[batch[i]];
      losses[i] = sequence_loss(model, seq, corpus.pad_id, update ? std::span<double>(grads[i]) : std::span<double>());
    });
    double loss = 0.0;
    for (double l : losses) loss += l;
    loss /= static_cast<double>(B);
    if (!std::isfinite(loss)) {
      fail(Errc::divergence, "training loss became non-finite at step " + std::to_string(step));
    }
    result.log.push_back({step, step * shape.batch_size * shape.seq_len, loss});
    if (!update) break;

    const double warm = options.warmup_steps > 0
                            ? std::min(1.0, static_cast<double>(step + 1) / options.warmup_steps)
                            : 1.0;
    const double lr = options.learning_rate * warm;
    const double correction = 1.0 - std::pow(options.beta2, static_cast<double>(step + 1));
    for (std::size_t j = 0; j < params.size(); ++j) {
      double g = 0.0;
      for (std::size_t i = 0; i < B; ++i) g += grads[i][j];
      g /= static_cast<double>(B);
      second_moment[j] = options.beta2 * second_moment[j] + (1.0 - options.beta2) * g * g;
      params[j] -= lr * g / (std::sqrt(second_moment[j] / correction) + options.eps);
    }
  }
  write_training_log(out_dir / "training_log.csv", result.log);
  return result;
}

void write_training_log(const fs::path& path, const std::vector<LossRecord>& log) {
  CsvWriter csv(path, columns::training_log());
  for (const auto& r : log) csv.row({std::to_string(r.step), std::to_string(r.tokens_seen), format_double(r.loss)});
  csv.close();
}

std::vector<LossRecord> read_training_log(const fs::path& path) {
  const auto table = read_csv(path, columns::training_log());
  std::vector<LossRecord> out;
  for (const auto& row : table.rows) {
    out.push_back({std::stoll(row[0]), std::stoll(row[1]), parse_double(row[2])});
  }
  return out;
}

}  // namespace circuitscope
