#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "circuitscope/error.hpp"
#include "circuitscope/longitudinal.hpp"
#include "circuitscope/vocab.hpp"
#include "models.hpp"
#include "planted.hpp"

using namespace circuitscope;

namespace {

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::invalid_argument;
}

}  // namespace

TEST(Jaccard, Definition) {
  const NodeSet a{NodeId::attn(0, 0), NodeId::attn(0, 1)};
  const NodeSet b{NodeId::attn(0, 1), NodeId::mlp(0)};
  EXPECT_EQ(jaccard(a, b), 1.0 / 3.0);
  EXPECT_EQ(jaccard(a, a), 1.0);
  EXPECT_EQ(jaccard(a, {NodeId::logits()}), 0.0);
  EXPECT_EQ(jaccard({}, {}), 1.0);
  EXPECT_EQ(jaccard(a, {}), 0.0);
}

TEST(Ewma, HandEvaluated) {
  EXPECT_EQ(ewma_series({1.0 / 3.0, 1.0}), (std::vector<double>{1.0 / 3.0, 2.0 / 3.0}));
  EXPECT_EQ(ewma_series({1.0, 0.0, 0.0, 1.0}), (std::vector<double>{1.0, 0.5, 0.25, 0.625}));
  EXPECT_EQ(ewma_series({0.7, 0.7, 0.7}), (std::vector<double>{0.7, 0.7, 0.7}));
  EXPECT_EQ(code_of([] { ewma_series({}); }), Errc::empty_input);
}

TEST(Ewma, StaysWithinInputRange) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(1 + rng.below(30));
    for (double& v : x) v = rng.uniform();
    const auto y = ewma_series(x);
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    for (double v : y) {
      EXPECT_GE(v, *lo);
      EXPECT_LE(v, *hi);
    }
  }
}

TEST(Pearson, LinearAndOracle) {
  const std::vector<double> x{1, 2, 3, 4, 5};
  std::vector<double> up, down;
  for (double v : x) {
    up.push_back(2 * v + 1);
    down.push_back(-3 * v + 2);
  }
  EXPECT_NEAR(pearson(x, up), 1.0, 1e-15);
  EXPECT_NEAR(pearson(x, down), -1.0, 1e-15);

  // Raw-moment formula as an independent computation.
  Rng rng(4);
  std::vector<double> a(10), b(10);
  for (std::size_t i = 0; i < 10; ++i) {
    a[i] = rng.normal();
    b[i] = 0.5 * a[i] + rng.normal();
  }
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    sa += a[i];
    sb += b[i];
    saa += a[i] * a[i];
    sbb += b[i] * b[i];
    sab += a[i] * b[i];
  }
  const double n = 10;
  const double oracle = (n * sab - sa * sb) / std::sqrt((n * saa - sa * sa) * (n * sbb - sb * sb));
  EXPECT_NEAR(pearson(a, b), oracle, 1e-10);

  EXPECT_EQ(code_of([] { pearson({1, 2, 3}, {4, 4, 4}); }), Errc::zero_variance);
  EXPECT_EQ(code_of([] { pearson({1}, {2}); }), Errc::empty_input);
  EXPECT_EQ(code_of([] { pearson({1, 2}, {2}); }), Errc::empty_input);
}

TEST(CircuitNodes, DistinctEndpoints) {
  Circuit c;
  c.edges = {{NodeId::input(), NodeId::attn(0, 1), Channel::V},
             {NodeId::attn(0, 1), NodeId::mlp(0), Channel::MlpIn},
             {NodeId::input(), NodeId::mlp(0), Channel::MlpIn}};
  EXPECT_EQ(circuit_nodes(c), (NodeSet{NodeId::input(), NodeId::attn(0, 1), NodeId::mlp(0)}));
  EXPECT_TRUE(circuit_nodes(Circuit{}).empty());
}

TEST(Emergence, TopSeriesKeepHeadIdentity) {
  HeadScoreTable a(0, 2, 4), b(10, 2, 4);
  const std::vector<double> va{0.1, 0.9, 0.3, 0.3, 0.0, 0.5, 0.2, 0.7};
  const std::vector<double> vb{0.8, 0.0, 0.0, 0.0, 0.6, 0.1, 0.1, 0.1};
  for (int i = 0; i < 8; ++i) {
    a.set(HeadMetric::Induction, {i / 4, i % 4}, va[static_cast<std::size_t>(i)]);
    b.set(HeadMetric::Induction, {i / 4, i % 4}, vb[static_cast<std::size_t>(i)]);
  }
  const auto s = emergence_series({a, b}, {0, 5120}, HeadMetric::Induction);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].top, (std::vector<HeadId>{{0, 1}, {1, 3}, {1, 1}, {0, 2}, {0, 3}}));
  EXPECT_EQ(s[0].top1, 0.9);
  EXPECT_NEAR(s[0].top5_mean, (0.9 + 0.7 + 0.5 + 0.3 + 0.3) / 5, 1e-15);
  EXPECT_EQ(s[1].top.front(), (HeadId{0, 0}));
  EXPECT_EQ(s[1].tokens_seen, 5120);
  for (const auto& p : s) EXPECT_GE(p.top1, p.top5_mean);
  EXPECT_EQ(code_of([&] { emergence_series({a}, {0}, HeadMetric::Copy); }), Errc::missing_inputs);
}

TEST(S2I, NeedsNameMovers) {
  const auto m = cstest::random_model(cstest::tiny_config(2, 2, 8, kToyVocabSize, 16), 30);
  const auto ioi = gen_ioi(4, 31);
  EXPECT_EQ(code_of([&] { s2i_test(m, {0, 0}, ioi, {}); }), Errc::missing_nmh);
}

TEST(S2I, SilentHeadFails) {
  const auto c = cstest::tiny_config(2, 2, 8, kToyVocabSize, 16);
  cstest::ParamEditor ed(c, cstest::random_params(c, 32));
  ed.zero_ov(0, 1);
  const auto m = ed.model();
  const auto ioi = gen_ioi(6, 33);
  const auto r = s2i_test(m, {0, 1}, ioi, {{1, 0}});
  EXPECT_EQ(r.effect, 0.0);
  EXPECT_FALSE(r.reduces_metric);
  EXPECT_FALSE(r.passed());
  // A head with no NMH downstream cannot pass either.
  EXPECT_FALSE(s2i_test(m, {1, 1}, ioi, {{1, 0}}).passed());
}

TEST(IoiConsistency, NoClassesIsAnError) {
  const auto m = cstest::random_model(cstest::tiny_config(2, 2, 8, kToyVocabSize, 16), 34);
  EXPECT_EQ(code_of([&] { ioi_consistency(m, gen_ioi(4, 35), HeadClasses{}); }), Errc::no_classified_heads);
}

TEST(IoiConsistency, AllDirectHeadsGiveFullShare) {
  const auto m = cstest::random_model(cstest::tiny_config(2, 2, 8, kToyVocabSize, 16), 36);
  const auto ioi = gen_ioi(6, 37);
  HeadClasses cls;
  cls.nmh = all_heads(m.config());
  const auto r = ioi_consistency(m, ioi, cls);
  ASSERT_TRUE(r.direct.has_value());
  EXPECT_NEAR(*r.direct, 1.0, 1e-15);
  EXPECT_FALSE(r.s2i.has_value());
  EXPECT_EQ(r.status(), "partial");

  HeadClasses some;
  some.nmh = {{1, 0}};
  some.s2i = {{0, 1}};
  some.induction = {{0, 0}};
  const auto q = ioi_consistency(m, ioi, some);
  for (const auto& v : {q.direct, q.s2i}) {
    ASSERT_TRUE(v.has_value());
    EXPECT_GE(*v, 0.0);
    EXPECT_LE(*v, 1.0);
  }
  // Induction heads must sit upstream of an S2I head in layer 0: none.
  EXPECT_FALSE(q.induction.has_value());
}

TEST(CheckpointSeries, EmptyDirectory) {
  const auto dir = std::filesystem::temp_directory_path() / "cs_empty_series";
  std::filesystem::create_directories(dir);
  EXPECT_EQ(code_of([&] { checkpoint_series(dir); }), Errc::no_artifacts);
  std::filesystem::remove_all(dir);
}

TEST(CheckpointSeries, StrideKeepsLast) {
  const auto dir = std::filesystem::temp_directory_path() / "cs_series";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  auto ck = build_model(cstest::tiny_config(1, 1, 8));
  for (std::int64_t s : {0, 1, 2, 4, 8}) {
    ck.step = s;
    ck.tokens_seen = s * 32;
    save_checkpoint(ck, dir / checkpoint_filename(s));
  }
  const auto all = checkpoint_series(dir, 1);
  ASSERT_EQ(all.size(), 5u);
  EXPECT_EQ(all[3].tokens_seen, 128);
  std::vector<std::int64_t> steps;
  for (const auto& r : checkpoint_series(dir, 3)) steps.push_back(r.step);
  EXPECT_EQ(steps, (std::vector<std::int64_t>{0, 4, 8}));
  std::filesystem::remove_all(dir);
}
