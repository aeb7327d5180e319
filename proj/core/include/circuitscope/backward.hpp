#pragma once

#include <span>
#include <vector>

#include "circuitscope/forward.hpp"
#include "circuitscope/metric.hpp"

namespace circuitscope {

// dL/d(input of every receiving channel), indexed like ActivationCache::receiver_in.
struct GradientCache {
  std::vector<Matrix> receiver_grad;
  double metric_value = 0.0;

  const Matrix& grad(const EdgeGraph& g, NodeId node, Channel c) const {
    return receiver_grad[g.receiver_index(node, c)];
  }
};

// Reverse sweep from dL/dlogits (T x vocab). Every node is differentiated at
// the inputs recorded in `cache`, including nodes whose output was replaced
// by a node intervention; the cache must not come from an edge-patched run.
// When `param_grad` is nonempty (size = parameter count) parameter gradients
// are accumulated into it.
GradientCache backward(const Model& model, const ActivationCache& cache, const Matrix& dlogits,
                       std::span<double> param_grad = {});

// Convex blend of two caches: every writer node's output is set to
// (1 - alpha) * corrupt + alpha * clean.
struct Blend {
  const ActivationCache* clean = nullptr;
  const ActivationCache* corrupt = nullptr;
  double alpha = 1.0;
};

// Gradient of `metric` at `answer_position` w.r.t. every receiver input,
// evaluated either on `tokens` or at a blended activation point.
// Throws invalid-blend when alpha lies outside [0, 1].
GradientCache backward_metric(const Model& model, std::span<const int> tokens,
                              std::size_t answer_position, const MetricSpec& metric,
                              const Blend* blend = nullptr);

}  // namespace circuitscope
