#include "circuitscope/vocab.hpp"

#include <cstdio>

#include "circuitscope/error.hpp"

namespace circuitscope {

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      fail(Errc::invalid_argument, "duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

std::optional<int> Vocab::find(std::string_view word) const {
  const auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocab::id(std::string_view word) const {
  const auto found = find(word);
  if (!found) fail(Errc::insufficient_vocabulary, "vocabulary lacks token '" + std::string(word) + "'");
  return *found;
}

std::vector<int> Vocab::ids(const std::vector<std::string>& words) const {
  std::vector<int> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(id(w));
  return out;
}

namespace lexicon {

const std::vector<std::string>& male_names() {
  static const std::vector<std::string> v = {"John", "Paul", "James", "Mark",  "David", "Tom",
                                             "Peter", "Luke", "Adam", "Sam",   "Kevin", "Ryan",
                                             "Eric", "Jack", "Ben",  "Chris"};
  return v;
}

const std::vector<std::string>& female_names() {
  static const std::vector<std::string> v = {"Mary", "Anna",  "Emma", "Lisa", "Sarah", "Kate",
                                             "Julia", "Rose", "Amy",  "Laura", "Helen", "Grace",
                                             "Alice", "Jane", "Lucy", "Nora"};
  return v;
}

const std::vector<std::string>& places() {
  static const std::vector<std::string> v = {"store", "park",   "school", "garden",
                                             "office", "market", "beach", "library"};
  return v;
}

const std::vector<std::string>& ioi_verbs() {
  static const std::vector<std::string> v = {"gave", "handed", "passed", "sent", "brought"};
  return v;
}

const std::vector<std::string>& objects() {
  static const std::vector<std::string> v = {"drink", "book", "ball", "letter", "gift", "snack"};
  return v;
}

const std::vector<std::string>& roles() {
  static const std::vector<std::string> v = {"cook",    "friend", "singer", "dancer",
                                             "student", "driver", "writer", "player"};
  return v;
}

const std::vector<std::string>& event_nouns() {
  static const std::vector<std::string> v = {"war", "drought", "strike", "reign", "project", "voyage"};
  return v;
}

const std::vector<std::string>& singular_nouns() {
  static const std::vector<std::string> v = {"key",   "dog",    "cabinet", "author", "table", "lamp",
                                             "child", "farmer", "bottle",  "window", "car",   "tree"};
  return v;
}

const std::vector<std::string>& plural_nouns() {
  static const std::vector<std::string> v = {"keys",     "dogs",    "cabinets", "authors",
                                             "tables",   "lamps",   "children", "farmers",
                                             "bottles",  "windows", "cars",     "trees"};
  return v;
}

const std::vector<std::string>& prepositions() {
  static const std::vector<std::string> v = {"on", "near", "behind", "beside", "under"};
  return v;
}

const std::vector<std::string>& singular_verbs() {
  static const std::vector<std::string> v = {"is", "was", "has"};
  return v;
}

const std::vector<std::string>& plural_verbs() {
  static const std::vector<std::string> v = {"are", "were", "have"};
  return v;
}

std::vector<std::string> years() {
  std::vector<std::string> v;
  for (int y = 0; y < 100; ++y) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%02d", y);
    v.emplace_back(buf);
  }
  return v;
}

const std::vector<std::string>& digits() {
  static const std::vector<std::string> v = {"0", "1", "2", "3", "4", "5", "6", "7", "8", "9"};
  return v;
}

const std::vector<std::string>& number_words() {
  static const std::vector<std::string> v = {"one", "two",   "three", "four", "five",
                                             "six", "seven", "eight", "nine", "ten"};
  return v;
}

const std::vector<std::string>& weekdays() {
  static const std::vector<std::string> v = {"Monday", "Tuesday",  "Wednesday", "Thursday",
                                             "Friday", "Saturday", "Sunday"};
  return v;
}

const std::vector<std::string>& months() {
  static const std::vector<std::string> v = {"January", "February", "March",     "April",
                                             "May",     "June",     "July",      "August",
                                             "September", "October", "November", "December"};
  return v;
}

std::vector<int> filler_ids(const Vocab& vocab) {
  std::vector<int> out;
  for (int i = 0; i < vocab.size(); ++i) {
    const auto& t = vocab.token(i);
    if (t.size() == 4 && t[0] == 'w' && t.find_first_not_of("0123456789", 1) == std::string::npos) {
      out.push_back(i);
    }
  }
  return out;
}

}  // namespace lexicon

namespace {

std::vector<std::string> toy_tokens() {
  using namespace lexicon;
  std::vector<std::string> t = {"<pad>", "<bos>"};
  for (const char* w : {"When", "and", "went", "to", "the", ",", "a", "The", "lasted", "from", "year",
                        "So", "such", "good", "isn't", "he", "she"}) {
    t.emplace_back(w);
  }
  auto append = [&t](const std::vector<std::string>& words) { t.insert(t.end(), words.begin(), words.end()); };
  append(male_names());
  append(female_names());
  append(places());
  append(ioi_verbs());
  append(objects());
  append(roles());
  append(event_nouns());
  append(singular_nouns());
  append(plural_nouns());
  append(prepositions());
  append(singular_verbs());
  append(plural_verbs());
  append(years());
  append(digits());
  append(number_words());
  append(weekdays());
  append(months());
  for (int i = 0; t.size() < static_cast<std::size_t>(kToyVocabSize); ++i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "w%03d", i);
    t.emplace_back(buf);
  }
  return t;
}

}  // namespace

const Vocab& toy_vocab() {
  static const Vocab v(toy_tokens());
  return v;
}

}  // namespace circuitscope
