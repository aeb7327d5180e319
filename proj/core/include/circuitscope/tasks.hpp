#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "circuitscope/metric.hpp"
#include "circuitscope/model.hpp"
#include "circuitscope/vocab.hpp"

namespace circuitscope {

// A clean/corrupt prompt pair. `slots` names the template positions the
// generator filled with sampled words (e.g. "IO", "S1", "S2" for IOI); the
// corrupt prompt differs from the clean one only at declared slots.
struct TaskExample {
  std::vector<int> clean;
  std::vector<int> corrupt;
  std::size_t answer_position = 0;
  MetricSpec metric;
  std::vector<std::pair<std::string, std::size_t>> slots;

  // Position of a named slot; throws invalid_argument when absent.
  std::size_t slot(std::string_view name) const;

  friend bool operator==(const TaskExample&, const TaskExample&) = default;
};

struct TaskDataset {
  std::string task;
  std::vector<TaskExample> examples;
  std::uint64_t seed = 0;

  // Nonempty, equal lengths, matched clean/corrupt lengths, valid metrics.
  void validate(int vocab_size) const;
  std::size_t seq_len() const { return examples.at(0).clean.size(); }

  friend bool operator==(const TaskDataset&, const TaskDataset&) = default;
};

inline constexpr std::string_view kIoi = "ioi";
inline constexpr std::string_view kGreaterThan = "greater-than";
inline constexpr std::string_view kGenderedPronoun = "gendered-pronoun";
inline constexpr std::string_view kSva = "sva";

// Default dataset sizes per task.
int default_task_size(std::string_view task);
const std::vector<std::string>& task_names();

// "When A and B went to the PLACE , S2 VERB a OBJ to" with ABBA and BABA
// orders alternating. Slots IO, S1 (first-clause positions) and S2; the
// corrupt prompt puts the IO name at S2. Metric LogitDiff(IO, S).
TaskDataset gen_ioi(int n = 70, std::uint64_t seed = 0, const Vocab& vocab = toy_vocab());

// "The NOUN lasted from the year CC YY to the year CC" with YY in 02..98;
// the corrupt prompt uses YY = "01". Metric ProbDiff(years > YY, years <= YY).
TaskDataset gen_greater_than(int n = 200, std::uint64_t seed = 0, const Vocab& vocab = toy_vocab());

// "So NAME is such a good ROLE , isn't" with alternating name gender; the
// corrupt prompt has an opposite-gender name. Metric LogitDiff(he, she) for
// male names and LogitDiff(she, he) for female names.
TaskDataset gen_gendered_pronoun(int n = 70, std::uint64_t seed = 0, const Vocab& vocab = toy_vocab());

// "The NOUN PREP the ATTR" with independent subject and attractor number;
// the corrupt prompt toggles only the subject's number. Metric
// ProbDiff(agreeing verb forms, disagreeing verb forms).
TaskDataset gen_sva(int n = 200, std::uint64_t seed = 0, const Vocab& vocab = toy_vocab());

// Dispatch by task name (one of task_names()).
TaskDataset make_task(std::string_view task, int n, std::uint64_t seed, const Vocab& vocab = toy_vocab());

// IOI dataset with the two first-clause names swapped in both prompts
// (ABBA <-> BABA). Token identities and answers are unchanged; only the
// positions of IO and S1 move.
TaskDataset flip_ioi_name_order(const TaskDataset& ioi);

// Sequences [A][A] of two identical segments of distinct filler tokens.
struct RepeatedCorpus {
  std::vector<std::vector<int>> sequences;
  std::size_t segment_length = 0;
};

RepeatedCorpus gen_induction_corpus(int n, int seq_len, std::uint64_t seed,
                                    const Vocab& vocab = toy_vocab());

// Training sequences holding one repeated segment each: a prefix of P filler
// tokens, a segment A of L tokens, then A again, with L uniform in
// [4, max_len / 2] and P uniform in [0, max_len - 2L]. All P + L tokens are
// distinct. Varying P and L leaves no positional route to the repeat.
std::vector<std::vector<int>> induction_training_sequences(int n, int max_len, std::uint64_t seed,
                                                           const Vocab& vocab = toy_vocab());

// Throws malformed_corpus unless every sequence has two equal halves.
void validate_repeated(const RepeatedCorpus& corpus);

struct SuccessorPair {
  int x = 0;
  int y = 0;
  std::string family;
};

// Consecutive pairs within the digit, number-word, weekday and month
// families (no wrap-around). `candidates` is the sorted set of all answers.
struct SuccessorDataset {
  std::vector<SuccessorPair> pairs;
  std::vector<int> candidates;
};

SuccessorDataset gen_successor_dataset(std::uint64_t seed = 0, const Vocab& vocab = toy_vocab());

// Metric value of every example on its clean (or corrupt) prompt.
std::vector<double> per_example_metric(const Model& model, const TaskDataset& dataset, bool corrupt = false);

// Mean clean-prompt metric. Throws vocabulary_mismatch when the dataset uses
// ids outside the model vocabulary.
double eval_task(const Model& model, const TaskDataset& dataset);

// Line-delimited JSON, one example per line:
// {"task","clean","corrupt","answer_position","metric","slots","seed","format_version"}.
void write_dataset_jsonl(const TaskDataset& dataset, std::ostream& out);
TaskDataset read_dataset_jsonl(std::istream& in);

// Next-token training sequences for a task: each clean prompt followed by
// a correct answer token, so the answer is predicted at answer_position.
std::vector<std::vector<int>> task_training_sequences(std::string_view task, int n, std::uint64_t seed,
                                                      const Vocab& vocab = toy_vocab());

}  // namespace circuitscope
