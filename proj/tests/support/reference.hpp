#pragma once

#include <vector>

#include "circuitscope/graph.hpp"

namespace cstest {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

// Straight-line scalar implementation of the transformer, written without
// any of the library's kernels or offset tables. Parameters are located by
// name through ParamLayout.
struct ReferenceRun {
  Mat logits;                          // T x V
  std::vector<std::vector<Mat>> attn;  // [layer][head] T x T
  std::vector<std::vector<Mat>> head_out;
  std::vector<Mat> mlp_out;
  Mat embed;
};

ReferenceRun reference_forward(const circuitscope::ModelConfig& config, const std::vector<double>& params,
                               const std::vector<int>& tokens);

}  // namespace cstest
