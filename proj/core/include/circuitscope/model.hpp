#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "circuitscope/checkpoint.hpp"
#include "circuitscope/graph.hpp"

namespace circuitscope {

inline constexpr double kLayerNormEps = 1e-5;

// Runtime view of a checkpoint: parameters widened to double, plus the edge
// graph and parameter offsets. Immutable and shareable across threads.
class Model {
 public:
  explicit Model(const Checkpoint& ckpt);
  Model(const ModelConfig& config, std::vector<double> params, std::int64_t step = 0);

  const ModelConfig& config() const noexcept { return *config_; }
  const EdgeGraph& graph() const noexcept { return *graph_; }
  const ParamOffsets& offsets() const noexcept { return *offsets_; }
  std::span<const double> params() const noexcept { return params_; }
  const double* p(std::size_t offset) const noexcept { return params_.data() + offset; }
  std::int64_t step() const noexcept { return step_; }

 private:
  std::shared_ptr<const ModelConfig> config_;
  std::shared_ptr<const EdgeGraph> graph_;
  std::shared_ptr<const ParamOffsets> offsets_;
  std::vector<double> params_;
  std::int64_t step_ = 0;
};

}  // namespace circuitscope
