#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace circuitscope {

// Closed token vocabulary. Every word used by the task templates is a
// single token, so task answers never span several ids.
class Vocab {
 public:
  explicit Vocab(std::vector<std::string> tokens);

  int size() const noexcept { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  std::optional<int> find(std::string_view word) const;

  // Throws Error(insufficient_vocabulary) when a word is missing.
  int id(std::string_view word) const;
  std::vector<int> ids(const std::vector<std::string>& words) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

inline constexpr int kToyVocabSize = 512;

// The fixed 512-token vocabulary shared by all generators: "<pad>", "<bos>",
// template words, names, year tokens "00".."99", ordinal families, and
// filler tokens "w000".. up to the full size.
const Vocab& toy_vocab();

// Word lists the templates draw from.
namespace lexicon {

const std::vector<std::string>& male_names();
const std::vector<std::string>& female_names();
const std::vector<std::string>& places();
const std::vector<std::string>& ioi_verbs();
const std::vector<std::string>& objects();
const std::vector<std::string>& roles();
const std::vector<std::string>& event_nouns();
const std::vector<std::string>& singular_nouns();
const std::vector<std::string>& plural_nouns();  // aligned with singular_nouns()
const std::vector<std::string>& prepositions();
const std::vector<std::string>& singular_verbs();  // is, was, has
const std::vector<std::string>& plural_verbs();    // are, were, have
std::vector<std::string> years();                  // "00".."99"
const std::vector<std::string>& digits();
const std::vector<std::string>& number_words();
const std::vector<std::string>& weekdays();
const std::vector<std::string>& months();
// Filler tokens present in `vocab` (used by the repeated-segment corpus).
std::vector<int> filler_ids(const Vocab& vocab);

}  // namespace lexicon

}  // namespace circuitscope
