#include "circuitscope/tasks.hpp"

#include <algorithm>
#include <istream>
#include <numeric>
#include <ostream>

#include "circuitscope/checkpoint.hpp"
#include "circuitscope/error.hpp"
#include "circuitscope/forward.hpp"
#include "circuitscope/parallel.hpp"
#include "circuitscope/rng.hpp"
#include "json.hpp"

namespace circuitscope {

using nlohmann::json;

std::size_t TaskExample::slot(std::string_view name) const {
  for (const auto& [n, pos] : slots) {
    if (n == name) return pos;
  }
  fail(Errc::invalid_argument, "example has no slot named " + std::string(name));
}

void TaskDataset::validate(int vocab_size) const {
  if (examples.empty()) fail(Errc::empty_dataset, "dataset '" + task + "' has no examples");
  const std::size_t len = examples[0].clean.size();
  for (const auto& ex : examples) {
    if (ex.clean.size() != len || ex.corrupt.size() != len) {
      fail(Errc::mismatched_pairs, "dataset '" + task + "' has examples of unequal length");
    }
    if (ex.answer_position >= len) fail(Errc::invalid_argument, "answer position outside prompt");
    for (const auto* seq : {&ex.clean, &ex.corrupt}) {
      for (int t : *seq) {
        if (t < 0 || t >= vocab_size) {
          fail(Errc::vocabulary_mismatch, "token id " + std::to_string(t) + " outside vocabulary of " +
                                              std::to_string(vocab_size));
        }
      }
    }
    validate_metric(ex.metric, vocab_size);
  }
}

const std::vector<std::string>& task_names() {
  static const std::vector<std::string> names = {std::string(kIoi), std::string(kGreaterThan),
                                                 std::string(kGenderedPronoun), std::string(kSva)};
  return names;
}

int default_task_size(std::string_view task) {
  if (task == kIoi || task == kGenderedPronoun) return 70;
  if (task == kGreaterThan || task == kSva) return 200;
  fail(Errc::invalid_argument, "unknown task '" + std::string(task) + "'");
}

namespace {

void check_n(int n) {
  if (n < 1) fail(Errc::invalid_argument, "dataset size must be >= 1");
}

template <class T>
const T& pick(Rng& rng, const std::vector<T>& v) {
  return v[rng.below(v.size())];
}

std::vector<int> all_names(const Vocab& vocab) {
  auto names = vocab.ids(lexicon::male_names());
  const auto f = vocab.ids(lexicon::female_names());
  names.insert(names.end(), f.begin(), f.end());
  return names;
}

}  // namespace

TaskDataset gen_ioi(int n, std::uint64_t seed, const Vocab& vocab) {
  check_n(n);
  const auto names = all_names(vocab);
  if (names.size() < 2) fail(Errc::insufficient_vocabulary, "IOI needs at least two names");
  const auto places = vocab.ids(lexicon::places());
  const auto verbs = vocab.ids(lexicon::ioi_verbs());
  const auto objects = vocab.ids(lexicon::objects());
  const int bos = vocab.id("<bos>"), when = vocab.id("When"), and_ = vocab.id("and"),
            went = vocab.id("went"), to = vocab.id("to"), the = vocab.id("the"), comma = vocab.id(","),
            a = vocab.id("a");

  Rng rng(seed);
  TaskDataset ds{std::string(kIoi), {}, seed};
  for (int i = 0; i < n; ++i) {
    const int io = pick(rng, names);
    int s = pick(rng, names);
    while (s == io) s = pick(rng, names);
    const bool abba = i % 2 == 0;
    const int first = abba ? io : s;
    const int second = abba ? s : io;
    TaskExample ex;
    ex.clean = {bos,   when, first, and_,  second, went,             to, the,
                pick(rng, places), comma, s,  pick(rng, verbs), a,  pick(rng, objects), to};
    ex.corrupt = ex.clean;
    ex.corrupt[10] = io;
    ex.answer_position = 14;
    ex.metric = LogitDiff{io, s};
    ex.slots = {{"IO", abba ? 2u : 4u}, {"S1", abba ? 4u : 2u}, {"S2", 10}};
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

TaskDataset gen_greater_than(int n, std::uint64_t seed, const Vocab& vocab) {
  check_n(n);
  const auto years = vocab.ids(lexicon::years());
  const auto nouns = vocab.ids(lexicon::event_nouns());
  const int bos = vocab.id("<bos>"), the_cap = vocab.id("The"), lasted = vocab.id("lasted"),
            from = vocab.id("from"), the = vocab.id("the"), year = vocab.id("year"), to = vocab.id("to");
  Rng rng(seed);
  TaskDataset ds{std::string(kGreaterThan), {}, seed};
  for (int i = 0; i < n; ++i) {
    const int cc = years[11 + rng.below(9)];
    const int yy = 2 + static_cast<int>(rng.below(97));
    TaskExample ex;
    ex.clean = {bos, the_cap, pick(rng, nouns), lasted, from, the, year, cc, years[yy], to, the, year, cc};
    ex.corrupt = ex.clean;
    ex.corrupt[8] = years[1];
    ex.answer_position = 12;
    ProbDiff pd;
    for (int y = 0; y < 100; ++y) (y > yy ? pd.correct : pd.incorrect).push_back(years[y]);
    ex.metric = std::move(pd);
    ex.slots = {{"NOUN", 2}, {"CC", 7}, {"YY", 8}};
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

TaskDataset gen_gendered_pronoun(int n, std::uint64_t seed, const Vocab& vocab) {
  check_n(n);
  const auto male = vocab.ids(lexicon::male_names());
  const auto female = vocab.ids(lexicon::female_names());
  const auto roles = vocab.ids(lexicon::roles());
  if (male.empty() || female.empty()) fail(Errc::insufficient_vocabulary, "pronoun task needs both name pools");
  const int bos = vocab.id("<bos>"), so = vocab.id("So"), is = vocab.id("is"), such = vocab.id("such"),
            a = vocab.id("a"), good = vocab.id("good"), comma = vocab.id(","), isnt = vocab.id("isn't"),
            he = vocab.id("he"), she = vocab.id("she");
  Rng rng(seed);
  TaskDataset ds{std::string(kGenderedPronoun), {}, seed};
  for (int i = 0; i < n; ++i) {
    const bool is_male = i % 2 == 0;
    const int name = pick(rng, is_male ? male : female);
    const int other = pick(rng, is_male ? female : male);
    TaskExample ex;
    ex.clean = {bos, so, name, is, such, a, good, pick(rng, roles), comma, isnt};
    ex.corrupt = ex.clean;
    ex.corrupt[2] = other;
    ex.answer_position = 9;
    ex.metric = is_male ? LogitDiff{he, she} : LogitDiff{she, he};
    ex.slots = {{"NAME", 2}, {"ROLE", 7}};
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

TaskDataset gen_sva(int n, std::uint64_t seed, const Vocab& vocab) {
  check_n(n);
  const auto sing = vocab.ids(lexicon::singular_nouns());
  const auto plur = vocab.ids(lexicon::plural_nouns());
  const auto preps = vocab.ids(lexicon::prepositions());
  const auto vs = vocab.ids(lexicon::singular_verbs());
  const auto vp = vocab.ids(lexicon::plural_verbs());
  if (sing.size() < 2) fail(Errc::insufficient_vocabulary, "SVA needs at least two nouns");
  const int bos = vocab.id("<bos>"), the_cap = vocab.id("The"), the = vocab.id("the");
  Rng rng(seed);
  TaskDataset ds{std::string(kSva), {}, seed};
  for (int i = 0; i < n; ++i) {
    const std::size_t subj = rng.below(sing.size());
    std::size_t attr = rng.below(sing.size());
    while (attr == subj) attr = rng.below(sing.size());
    const bool plural = rng.below(2) == 1;
    const bool attr_plural = rng.below(2) == 1;
    TaskExample ex;
    ex.clean = {bos, the_cap, (plural ? plur : sing)[subj], pick(rng, preps), the,
                (attr_plural ? plur : sing)[attr]};
    ex.corrupt = ex.clean;
    ex.corrupt[2] = (plural ? sing : plur)[subj];
    ex.answer_position = 5;
    ex.metric = plural ? ProbDiff{vp, vs} : ProbDiff{vs, vp};
    ex.slots = {{"SUBJECT", 2}, {"ATTRACTOR", 5}};
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

TaskDataset make_task(std::string_view task, int n, std::uint64_t seed, const Vocab& vocab) {
  if (task == kIoi) return gen_ioi(n, seed, vocab);
  if (task == kGreaterThan) return gen_greater_than(n, seed, vocab);
  if (task == kGenderedPronoun) return gen_gendered_pronoun(n, seed, vocab);
  if (task == kSva) return gen_sva(n, seed, vocab);
  fail(Errc::invalid_argument, "unknown task '" + std::string(task) + "'");
}

TaskDataset flip_ioi_name_order(const TaskDataset& ioi) {
  TaskDataset out = ioi;
  for (auto& ex : out.examples) {
    const std::size_t io = ex.slot("IO");
    const std::size_t s1 = ex.slot("S1");
    std::swap(ex.clean[io], ex.clean[s1]);
    std::swap(ex.corrupt[io], ex.corrupt[s1]);
    for (auto& [name, pos] : ex.slots) {
      if (name == "IO") pos = s1;
      if (name == "S1") pos = io;
    }
  }
  return out;
}

RepeatedCorpus gen_induction_corpus(int n, int seq_len, std::uint64_t seed, const Vocab& vocab) {
  check_n(n);
  if (seq_len < 2 || seq_len % 2 != 0) {
    fail(Errc::invalid_argument, "repeated-segment sequences need an even length >= 2");
  }
  auto filler = lexicon::filler_ids(vocab);
  const std::size_t L = static_cast<std::size_t>(seq_len / 2);
  if (filler.size() < L) fail(Errc::insufficient_vocabulary, "not enough filler tokens for the segment length");
  Rng rng(seed);
  RepeatedCorpus corpus;
  corpus.segment_length = L;
  for (int i = 0; i < n; ++i) {
    // Partial Fisher-Yates: the first L entries become a uniform sample
    // without replacement.
    for (std::size_t j = 0; j < L; ++j) std::swap(filler[j], filler[j + rng.below(filler.size() - j)]);
    std::vector<int> seq(filler.begin(), filler.begin() + static_cast<long>(L));
    seq.insert(seq.end(), filler.begin(), filler.begin() + static_cast<long>(L));
    corpus.sequences.push_back(std::move(seq));
  }
  return corpus;
}

std::vector<std::vector<int>> induction_training_sequences(int n, int max_len, std::uint64_t seed,
                                                           const Vocab& vocab) {
  check_n(n);
  if (max_len < 8) fail(Errc::invalid_argument, "repeated-segment training sequences need max_len >= 8");
  auto filler = lexicon::filler_ids(vocab);
  const std::size_t max_l = static_cast<std::size_t>(max_len / 2);
  if (filler.size() < static_cast<std::size_t>(max_len)) {
    fail(Errc::insufficient_vocabulary, "not enough filler tokens for the sequence length");
  }
  Rng rng(seed);
  std::vector<std::vector<int>> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const std::size_t L = 4 + rng.below(max_l - 3);
    const std::size_t P = rng.below(static_cast<std::size_t>(max_len) - 2 * L + 1);
    for (std::size_t j = 0; j < P + L; ++j) std::swap(filler[j], filler[j + rng.below(filler.size() - j)]);
    std::vector<int> seq(filler.begin(), filler.begin() + static_cast<long>(P + L));
    seq.insert(seq.end(), filler.begin() + static_cast<long>(P), filler.begin() + static_cast<long>(P + L));
    out.push_back(std::move(seq));
  }
  return out;
}

void validate_repeated(const RepeatedCorpus& corpus) {
  if (corpus.sequences.empty()) fail(Errc::empty_dataset, "repeated corpus is empty");
  const std::size_t L = corpus.segment_length;
  for (const auto& s : corpus.sequences) {
    if (L == 0 || s.size() != 2 * L || !std::equal(s.begin(), s.begin() + static_cast<long>(L),
                                                   s.begin() + static_cast<long>(L))) {
      fail(Errc::malformed_corpus, "sequence is not two identical segments of length " + std::to_string(L));
    }
  }
}

SuccessorDataset gen_successor_dataset(std::uint64_t seed, const Vocab& vocab) {
  const std::pair<const char*, const std::vector<std::string>*> families[] = {
      {"digits", &lexicon::digits()},
      {"number_words", &lexicon::number_words()},
      {"weekdays", &lexicon::weekdays()},
      {"months", &lexicon::months()}};
  SuccessorDataset ds;
  for (const auto& [name, words] : families) {
    const auto ids = vocab.ids(*words);
    for (std::size_t i = 0; i + 1 < ids.size(); ++i) ds.pairs.push_back({ids[i], ids[i + 1], name});
  }
  Rng rng(seed);
  rng.shuffle(ds.pairs.begin(), ds.pairs.end());
  for (const auto& p : ds.pairs) ds.candidates.push_back(p.y);
  std::sort(ds.candidates.begin(), ds.candidates.end());
  ds.candidates.erase(std::unique(ds.candidates.begin(), ds.candidates.end()), ds.candidates.end());
  return ds;
}

std::vector<double> per_example_metric(const Model& model, const TaskDataset& dataset, bool corrupt) {
  dataset.validate(model.config().vocab_size);
  std::vector<double> out(dataset.examples.size());
  parallel_for(out.size(), [&](std::size_t i) {
    const auto& ex = dataset.examples[i];
    const auto cache = forward(model, corrupt ? ex.corrupt : ex.clean);
    out[i] = evaluate_metric(ex.metric, cache.logits.row(ex.answer_position));
  });
  return out;
}

double eval_task(const Model& model, const TaskDataset& dataset) {
  const auto values = per_example_metric(model, dataset);
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

namespace {

json metric_to_json(const MetricSpec& m) {
  if (const auto* ld = std::get_if<LogitDiff>(&m)) {
    return {{"kind", "logit_diff"}, {"correct", ld->correct}, {"incorrect", ld->incorrect}};
  }
  const auto& pd = std::get<ProbDiff>(m);
  return {{"kind", "prob_diff"}, {"correct", pd.correct}, {"incorrect", pd.incorrect}};
}

MetricSpec metric_from_json(const json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "logit_diff") return LogitDiff{j.at("correct").get<int>(), j.at("incorrect").get<int>()};
  if (kind == "prob_diff") {
    return ProbDiff{j.at("correct").get<std::vector<int>>(), j.at("incorrect").get<std::vector<int>>()};
  }
  fail(Errc::schema_violation, "unknown metric kind '" + kind + "'");
}

}  // namespace

void write_dataset_jsonl(const TaskDataset& dataset, std::ostream& out) {
  for (const auto& ex : dataset.examples) {
    json slots = json::array();
    for (const auto& [name, pos] : ex.slots) slots.push_back({{"name", name}, {"position", pos}});
    const json line{{"format_version", kFormatVersion},
                    {"task", dataset.task},
                    {"seed", dataset.seed},
                    {"clean", ex.clean},
                    {"corrupt", ex.corrupt},
                    {"answer_position", ex.answer_position},
                    {"metric", metric_to_json(ex.metric)},
                    {"slots", slots}};
    out << line.dump() << '\n';
  }
  if (!out) fail(Errc::io_failure, "failed writing dataset");
}

TaskDataset read_dataset_jsonl(std::istream& in) {
  TaskDataset ds;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (j.at("format_version").get<int>() != kFormatVersion) {
        fail(Errc::version_mismatch, "dataset format_version not supported");
      }
      if (first) {
        ds.task = j.at("task").get<std::string>();
        ds.seed = j.at("seed").get<std::uint64_t>();
        first = false;
      }
      TaskExample ex;
      ex.clean = j.at("clean").get<std::vector<int>>();
      ex.corrupt = j.at("corrupt").get<std::vector<int>>();
      ex.answer_position = j.at("answer_position").get<std::size_t>();
      ex.metric = metric_from_json(j.at("metric"));
      for (const auto& s : j.at("slots")) {
        ex.slots.emplace_back(s.at("name").get<std::string>(), s.at("position").get<std::size_t>());
      }
      ds.examples.push_back(std::move(ex));
    } catch (const json::exception& e) {
      fail(Errc::schema_violation, std::string("dataset line: ") + e.what());
    }
  }
  if (ds.examples.empty()) fail(Errc::empty_dataset, "dataset file has no examples");
  return ds;
}

std::vector<std::vector<int>> task_training_sequences(std::string_view task, int n, std::uint64_t seed,
                                                      const Vocab& vocab) {
  const TaskDataset ds = make_task(task, n, seed, vocab);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::vector<int>> out;
  out.reserve(ds.examples.size());
  for (const auto& ex : ds.examples) {
    std::vector<int> seq(ex.clean.begin(), ex.clean.begin() + static_cast<long>(ex.answer_position) + 1);
    if (const auto* ld = std::get_if<LogitDiff>(&ex.metric)) {
      seq.push_back(ld->correct);
    } else {
      seq.push_back(pick(rng, std::get<ProbDiff>(ex.metric).correct));
    }
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace circuitscope
