#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "circuitscope/error.hpp"
#include "circuitscope/tasks.hpp"
#include "models.hpp"

using namespace circuitscope;

namespace {

std::vector<std::size_t> diff_positions(const TaskExample& ex) {
  std::vector<std::size_t> d;
  for (std::size_t i = 0; i < ex.clean.size(); ++i)
    if (ex.clean[i] != ex.corrupt[i]) d.push_back(i);
  return d;
}

const Vocab& V() { return toy_vocab(); }

}  // namespace

TEST(Vocab, HasFixedSizeAndRequiredFamilies) {
  EXPECT_EQ(V().size(), 512);
  EXPECT_EQ(V().token(0), "<pad>");
  EXPECT_EQ(V().token(1), "<bos>");
  for (int y = 0; y < 100; ++y) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "%02d", y);
    EXPECT_TRUE(V().find(buf).has_value());
  }
  EXPECT_GE(lexicon::male_names().size(), 8u);
  EXPECT_GE(lexicon::female_names().size(), 8u);
  EXPECT_GE(lexicon::filler_ids(V()).size(), 200u);
}

TEST(Tasks, DefaultSizes) {
  EXPECT_EQ(default_task_size(kIoi), 70);
  EXPECT_EQ(default_task_size(kGreaterThan), 200);
  EXPECT_EQ(default_task_size(kGenderedPronoun), 70);
  EXPECT_EQ(default_task_size(kSva), 200);
  EXPECT_EQ(gen_ioi().examples.size(), 70u);
  EXPECT_EQ(gen_greater_than().examples.size(), 200u);
  EXPECT_EQ(gen_gendered_pronoun().examples.size(), 70u);
  EXPECT_EQ(gen_sva().examples.size(), 200u);
}

TEST(Tasks, GenerationIsDeterministic) {
  for (const auto& name : task_names()) {
    EXPECT_EQ(make_task(name, 30, 5), make_task(name, 30, 5));
    EXPECT_NE(make_task(name, 30, 5), make_task(name, 30, 6));
  }
}

TEST(Tasks, PairsDifferOnlyAtDeclaredSlots) {
  const std::map<std::string, std::string> slot = {
      {"ioi", "S2"}, {"greater-than", "YY"}, {"gendered-pronoun", "NAME"}, {"sva", "SUBJECT"}};
  for (const auto& name : task_names()) {
    const auto ds = make_task(name, default_task_size(name), 3);
    ds.validate(V().size());
    for (const auto& ex : ds.examples) {
      const auto d = diff_positions(ex);
      ASSERT_EQ(d.size(), 1u) << name;
      EXPECT_EQ(d[0], ex.slot(slot.at(name))) << name;
    }
  }
}

TEST(Ioi, TemplateAndMetric) {
  const auto ds = gen_ioi(70, 1);
  int abba = 0;
  for (const auto& ex : ds.examples) {
    EXPECT_EQ(ex.clean.size(), 15u);
    EXPECT_EQ(ex.answer_position, 14u);
    const auto ld = std::get<LogitDiff>(ex.metric);
    EXPECT_EQ(ex.clean[ex.slot("IO")], ld.correct);
    EXPECT_EQ(ex.clean[ex.slot("S1")], ld.incorrect);
    EXPECT_EQ(ex.clean[ex.slot("S2")], ld.incorrect);
    EXPECT_EQ(ex.corrupt[ex.slot("S2")], ld.correct);
    EXPECT_NE(ex.clean, ex.corrupt);
    abba += ex.slot("IO") == 2;
  }
  EXPECT_EQ(abba, 35);
}

TEST(Ioi, FlipSwapsFirstClauseNames) {
  const auto ds = gen_ioi(10, 1);
  const auto fl = flip_ioi_name_order(ds);
  for (std::size_t i = 0; i < ds.examples.size(); ++i) {
    const auto& a = ds.examples[i];
    const auto& b = fl.examples[i];
    EXPECT_EQ(a.clean[2], b.clean[4]);
    EXPECT_EQ(a.clean[4], b.clean[2]);
    EXPECT_EQ(a.slot("IO"), b.slot("S1"));
    EXPECT_EQ(a.metric, b.metric);
    EXPECT_EQ(b.clean[b.slot("IO")], std::get<LogitDiff>(b.metric).correct);
  }
}

TEST(GreaterThan, CorruptYearIs01AndSetsPartitionYears) {
  const int y01 = V().id("01");
  for (const auto& ex : gen_greater_than(200, 2).examples) {
    EXPECT_EQ(ex.corrupt[ex.slot("YY")], y01);
    const auto& pd = std::get<ProbDiff>(ex.metric);
    std::set<int> all(pd.correct.begin(), pd.correct.end());
    all.insert(pd.incorrect.begin(), pd.incorrect.end());
    EXPECT_EQ(all.size(), 100u);
    EXPECT_EQ(pd.correct.size() + pd.incorrect.size(), 100u);
    const int yy = std::stoi(V().token(ex.clean[ex.slot("YY")]));
    EXPECT_GE(yy, 2);
    EXPECT_LE(yy, 98);
    for (int c : pd.correct) EXPECT_GT(std::stoi(V().token(c)), yy);
  }
}

TEST(GenderedPronoun, BalancedDirections) {
  const int he = V().id("he");
  int male = 0, female = 0;
  for (const auto& ex : gen_gendered_pronoun(70, 4).examples) {
    (std::get<LogitDiff>(ex.metric).correct == he ? male : female)++;
  }
  EXPECT_EQ(male, 35);
  EXPECT_EQ(female, 35);
}

TEST(GenderedPronoun, SwappingRolesNegatesMetricOnACheckpoint) {
  auto c = cstest::tiny_config(1, 2, 16, 512, 16);
  const Model m = cstest::random_model(c, 9, 0.1);
  auto ds = gen_gendered_pronoun(20, 1);
  const auto a = per_example_metric(m, ds);
  for (auto& ex : ds.examples) ex.metric = swap_roles(ex.metric);
  const auto b = per_example_metric(m, ds);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], -b[i]);
}

TEST(Sva, SubjectToggledAttractorKept) {
  for (const auto& ex : gen_sva(200, 5).examples) {
    EXPECT_NE(ex.clean[ex.slot("SUBJECT")], ex.corrupt[ex.slot("SUBJECT")]);
    EXPECT_EQ(ex.clean[ex.slot("ATTRACTOR")], ex.corrupt[ex.slot("ATTRACTOR")]);
  }
}

TEST(Sva, UniformLogitsGiveZeroProbDiff) {
  const std::vector<double> logits(512, 0.25);
  for (const auto& ex : gen_sva(20, 5).examples) EXPECT_NEAR(evaluate_metric(ex.metric, logits), 0.0, 1e-15);
}

TEST(Induction, SecondHalfEqualsFirst) {
  const auto corpus = gen_induction_corpus(50, 32, 3);
  EXPECT_EQ(corpus.segment_length, 16u);
  validate_repeated(corpus);
  for (const auto& s : corpus.sequences) {
    ASSERT_EQ(s.size(), 32u);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(s[i], s[i + 16]);
    EXPECT_EQ(std::set<int>(s.begin(), s.begin() + 16).size(), 16u);
  }
  EXPECT_THROW(gen_induction_corpus(1, 7, 0), Error);
  auto bad = corpus;
  bad.sequences[3][20] = bad.sequences[3][4] + 1;
  try {
    validate_repeated(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::malformed_corpus);
  }
}

TEST(Successor, ContainsDocumentedPairsAndFamilySuccessors) {
  const auto ds = gen_successor_dataset(0);
  EXPECT_EQ(ds.pairs.size(), 35u);
  auto has = [&](const char* x, const char* y) {
    for (const auto& p : ds.pairs)
      if (p.x == V().id(x) && p.y == V().id(y)) return true;
    return false;
  };
  EXPECT_TRUE(has("3", "4"));
  EXPECT_TRUE(has("Tuesday", "Wednesday"));
  EXPECT_FALSE(has("Sunday", "Monday"));
  // Family-table oracle: y is the element after x in x's family.
  const std::map<std::string, std::vector<std::string>> table = {
      {"digits", lexicon::digits()}, {"number_words", lexicon::number_words()},
      {"weekdays", lexicon::weekdays()}, {"months", lexicon::months()}};
  for (const auto& p : ds.pairs) {
    const auto& fam = table.at(p.family);
    const auto it = std::find(fam.begin(), fam.end(), V().token(p.x));
    ASSERT_NE(it, fam.end());
    ASSERT_NE(it + 1, fam.end());
    EXPECT_EQ(*(it + 1), V().token(p.y));
  }
}

TEST(EvalTask, UniformLogitsGiveZeroLogitDiff) {
  auto c = cstest::tiny_config(1, 1, 8, 512, 16);
  auto p = cstest::random_params(c, 2);
  const ParamLayout layout(c);
  const auto& wu = layout.at("unembed.W_U");
  std::fill_n(p.begin() + static_cast<long>(wu.offset), wu.size, 0.0);
  const Model m(c, p);
  EXPECT_EQ(eval_task(m, gen_ioi(10, 0)), 0.0);
}

TEST(Metric, HandSetLogits) {
  std::vector<double> logits(6, 0.0);
  logits[2] = 2.0;
  logits[4] = 0.5;
  EXPECT_DOUBLE_EQ(evaluate_metric(LogitDiff{2, 4}, logits), 1.5);
  // Independent softmax: p_i = e^{l_i} / sum_j e^{l_j}.
  double z = 0;
  for (double l : logits) z += std::exp(l);
  const double expected = (std::exp(2.0) + 1.0) / z - std::exp(0.5) / z;
  EXPECT_NEAR(evaluate_metric(ProbDiff{{2, 0}, {4}}, logits), expected, 1e-15);
}

TEST(Metric, SwapRolesNegatesExactly) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> logits(20);
    for (auto& l : logits) l = 3 * rng.normal();
    const MetricSpec ld = LogitDiff{1, 7};
    const MetricSpec pd = ProbDiff{{0, 3, 5}, {7, 9}};
    EXPECT_EQ(evaluate_metric(swap_roles(ld), logits), -evaluate_metric(ld, logits));
    EXPECT_EQ(evaluate_metric(swap_roles(pd), logits), -evaluate_metric(pd, logits));
  }
}

TEST(Metric, Validation) {
  EXPECT_THROW(validate_metric(ProbDiff{{1}, {}}, 10), Error);
  EXPECT_THROW(validate_metric(ProbDiff{{1, 2}, {2}}, 10), Error);
  try {
    validate_metric(LogitDiff{1, 10}, 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::vocabulary_mismatch);
  }
}

TEST(EvalTask, VocabularyMismatch) {
  const Model m = cstest::random_model(cstest::tiny_config(1, 1, 8, 64, 16), 1);
  try {
    eval_task(m, gen_ioi(4, 0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::vocabulary_mismatch);
  }
}

TEST(Tasks, InsufficientVocabulary) {
  const Vocab small({"<pad>", "<bos>", "When", "and"});
  for (const auto& name : task_names()) {
    try {
      make_task(name, 4, 0, small);
      FAIL() << name;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::insufficient_vocabulary);
    }
  }
}

TEST(Tasks, JsonlRoundTrip) {
  for (const auto& name : task_names()) {
    const auto ds = make_task(name, 12, 8);
    std::stringstream ss;
    write_dataset_jsonl(ds, ss);
    EXPECT_EQ(read_dataset_jsonl(ss), ds);
  }
}

TEST(Tasks, TrainingSequencesEndWithACorrectAnswer) {
  const auto seqs = task_training_sequences(kIoi, 10, 2);
  const auto ds = gen_ioi(10, 2);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    EXPECT_EQ(seqs[i].size(), 16u);
    EXPECT_EQ(seqs[i].back(), std::get<LogitDiff>(ds.examples[i].metric).correct);
  }
}
