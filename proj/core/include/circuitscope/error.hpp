#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace circuitscope {

enum class Errc {
  invalid_config,
  invalid_argument,
  token_out_of_range,
  sequence_too_long,
  sequence_too_short,
  invalid_blend,
  unknown_edge,
  shape_mismatch,
  io_failure,
  divergence,
  insufficient_vocabulary,
  vocabulary_mismatch,
  invalid_m,
  mismatched_pairs,
  degenerate_baseline,
  k_out_of_range,
  unreachable_threshold,
  misaligned_datasets,
  invalid_receiver,
  empty_dataset,
  malformed_corpus,
  missing_inputs,
  empty_input,
  zero_variance,
  no_classified_heads,
  missing_nmh,
  missing_file,
  schema_violation,
  version_mismatch,
  no_artifacts,
  locked,
};

// Stable kebab-case identifier, used in machine-readable CLI error lines.
std::string_view to_string(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace circuitscope
