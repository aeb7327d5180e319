#include "circuitscope/error.hpp"

namespace circuitscope {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_config: return "invalid-config";
    case Errc::invalid_argument: return "invalid-argument";
    case Errc::token_out_of_range: return "token-out-of-range";
    case Errc::sequence_too_long: return "sequence-too-long";
    case Errc::sequence_too_short: return "sequence-too-short";
    case Errc::invalid_blend: return "invalid-blend";
    case Errc::unknown_edge: return "unknown-edge";
    case Errc::shape_mismatch: return "shape-mismatch";
    case Errc::io_failure: return "io-failure";
    case Errc::divergence: return "divergence";
    case Errc::insufficient_vocabulary: return "insufficient-vocabulary";
    case Errc::vocabulary_mismatch: return "vocabulary-mismatch";
    case Errc::invalid_m: return "invalid-m";
    case Errc::mismatched_pairs: return "mismatched-pairs";
    case Errc::degenerate_baseline: return "degenerate-baseline";
    case Errc::k_out_of_range: return "k-out-of-range";
    case Errc::unreachable_threshold: return "unreachable-threshold";
    case Errc::misaligned_datasets: return "misaligned-datasets";
    case Errc::invalid_receiver: return "invalid-receiver";
    case Errc::empty_dataset: return "empty-dataset";
    case Errc::malformed_corpus: return "malformed-corpus";
    case Errc::missing_inputs: return "missing-inputs";
    case Errc::empty_input: return "empty-input";
    case Errc::zero_variance: return "zero-variance";
    case Errc::no_classified_heads: return "no-classified-heads";
    case Errc::missing_nmh: return "missing-NMH";
    case Errc::missing_file: return "missing-file";
    case Errc::schema_violation: return "schema-violation";
    case Errc::version_mismatch: return "version-mismatch";
    case Errc::no_artifacts: return "no-artifacts";
    case Errc::locked: return "locked";
  }
  return "unknown";
}

}  // namespace circuitscope
