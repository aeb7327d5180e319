#include <gtest/gtest.h>

#include <filesystem>
#include <functional>

#include "circuitscope/attribution.hpp"
#include "circuitscope/error.hpp"
#include "circuitscope/intervention.hpp"
#include "models.hpp"
#include "planted.hpp"
#include "reference.hpp"

using namespace circuitscope;

namespace {

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::invalid_argument;
}

}  // namespace

TEST(PathPatch, IdenticalInputsChangeNothing) {
  const auto model = cstest::random_model(cstest::tiny_config(3, 2, 8), 60);
  const auto ds = cstest::random_pairs(3, 8, 32, 61);
  const PatchSpec spec{NodeId::attn(0, 1),
                       {{NodeId::attn(2, 0), Channel::K}, {NodeId::logits(), Channel::LogitsIn}},
                       &ds,
                       &ds};
  for (const auto& run : path_patch_runs(model, spec)) {
    EXPECT_EQ(run.patched.logits, run.clean.logits);
    EXPECT_EQ(run.patched.receiver_in, run.clean.receiver_in);
  }
  EXPECT_EQ(path_patch(model, spec), 0.0);
}

TEST(PathPatch, NonReceiversUpstreamStayClean) {
  const auto model = cstest::random_model(cstest::tiny_config(3, 2, 8), 62);
  const auto ds = cstest::random_pairs(3, 8, 32, 63);
  const auto alt = corrupted_view(ds);
  const Receiver target{NodeId::attn(2, 1), Channel::V};
  const auto runs = path_patch_runs(model, {NodeId::attn(0, 0), {target}, &ds, &alt});
  const auto& g = model.graph();
  const std::size_t tr = g.receiver_index(target);
  for (const auto& run : runs) {
    for (std::size_t r = 0; r < g.receivers().size(); ++r) {
      const auto& node = g.receivers()[r].node;
      // Receivers not downstream of the patched head are untouched.
      if (r != tr && !g.is_upstream(target.node, node)) {
        EXPECT_EQ(run.patched.receiver_in[r], run.clean.receiver_in[r]) << r;
      }
    }
    EXPECT_NE(run.patched.receiver_in[tr], run.clean.receiver_in[tr]);
  }
}

TEST(PathPatch, LastLayerSenderIntoLogitsEqualsActivationPatch) {
  const auto model = cstest::random_model(cstest::tiny_config(2, 2, 8), 64);
  const auto ds = cstest::random_pairs(4, 8, 32, 65);
  const auto alt = corrupted_view(ds);
  const HeadId head{1, 0};
  const double pp = direct_effect(model, head, ds);

  const auto& g = model.graph();
  double sum = 0.0;
  for (const auto& ex : ds.examples) {
    const auto clean = forward(model, ex.clean);
    const auto altered = forward(model, ex.corrupt);
    Interventions iv;
    iv.node.assign(g.nodes().size(), nullptr);
    iv.node[g.node_index(head.node())] = &altered.node_out[g.node_index(head.node())];
    const auto patched = run_forward(model, ex.clean, iv);
    sum += evaluate_metric(ex.metric, patched.logits.row(ex.answer_position)) -
           evaluate_metric(ex.metric, clean.logits.row(ex.answer_position));
  }
  const double act = sum / static_cast<double>(ds.examples.size());
  EXPECT_NEAR(pp, act, 1e-5 * std::max(1.0, std::abs(act)));
  EXPECT_NE(act, 0.0);
}

TEST(DirectEffect, MatchesExactEdgeScoreWithoutMlp) {
  const auto c = cstest::tiny_config(1, 2, 8);
  cstest::ParamEditor ed(c, cstest::random_params(c, 66));
  ed.zero_mlp(0);
  const auto model = ed.model();
  const auto ds = cstest::random_pairs(5, 8, 32, 67);
  for (int h = 0; h < 2; ++h) {
    const Edge e{NodeId::attn(0, h), NodeId::logits(), Channel::LogitsIn};
    EXPECT_NEAR(direct_effect(model, {0, h}, ds), score_edge_exact(model, ds, e), 1e-9);
  }
}

TEST(DirectEffect, ZeroOvHeadHasNone) {
  const auto c = cstest::tiny_config(2, 2, 8);
  cstest::ParamEditor ed(c, cstest::random_params(c, 68));
  ed.zero_ov(1, 1);
  const auto model = ed.model();
  const auto ds = cstest::random_pairs(3, 8, 32, 69);
  EXPECT_EQ(direct_effect(model, {1, 1}, ds), 0.0);
}

TEST(PathPatch, Errors) {
  const auto model = cstest::random_model(cstest::tiny_config(2, 2, 8), 70);
  const auto ds = cstest::random_pairs(3, 8, 32, 71);
  const auto shorter = cstest::random_pairs(2, 8, 32, 72);
  const auto other_len = cstest::random_pairs(3, 6, 32, 73);
  const std::vector<Receiver> logits{{NodeId::logits(), Channel::LogitsIn}};
  EXPECT_EQ(code_of([&] { path_patch(model, {NodeId::attn(0, 0), logits, &ds, &shorter}); }),
            Errc::misaligned_datasets);
  EXPECT_EQ(code_of([&] { path_patch(model, {NodeId::attn(0, 0), logits, &ds, &other_len}); }),
            Errc::misaligned_datasets);
  EXPECT_EQ(code_of([&] { path_patch(model, {NodeId::attn(1, 0), {{NodeId::attn(0, 1), Channel::Q}}, &ds, &ds}); }),
            Errc::invalid_receiver);
  EXPECT_EQ(code_of([&] { path_patch(model, {NodeId::attn(1, 0), {{NodeId::attn(1, 1), Channel::Q}}, &ds, &ds}); }),
            Errc::invalid_receiver);
  EXPECT_EQ(code_of([&] { path_patch(model, {NodeId::attn(0, 0), {}, &ds, &ds}); }), Errc::invalid_receiver);
}

TEST(AttentionPattern, CausalStochasticAndMatchesOracle) {
  const auto c = cstest::tiny_config(2, 2, 8);
  const auto params = cstest::random_params(c, 74);
  const Model model(c, params);
  const auto tokens = cstest::random_tokens(10, 32, 75);
  const auto ref = cstest::reference_forward(c, params, tokens);
  for (int l = 0; l < 2; ++l) {
    for (int h = 0; h < 2; ++h) {
      const Matrix a = attention_pattern(model, tokens, {l, h});
      for (std::size_t t = 0; t < tokens.size(); ++t) {
        double row = 0.0;
        for (std::size_t s = 0; s < tokens.size(); ++s) {
          if (s > t) EXPECT_EQ(a(t, s), 0.0);
          row += a(t, s);
          EXPECT_NEAR(a(t, s), ref.attn[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)][t][s], 1e-12);
        }
        EXPECT_NEAR(row, 1.0, 1e-6);
      }
    }
  }
  EXPECT_THROW(attention_pattern(model, tokens, {2, 0}), Error);
}

TEST(EffectsCsv, RoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "cs_effects_test.csv";
  const std::vector<EffectRow> rows{{{0, 1}, "logits", -0.25}, {{1, 0}, "a2.h1.q|a2.h1.k", 1.0 / 3.0}};
  write_effects_csv(path, rows);
  const auto back = read_effects_csv(path);
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].head, rows[i].head);
    EXPECT_EQ(back[i].receiver_set, rows[i].receiver_set);
    EXPECT_EQ(back[i].effect, rows[i].effect);
  }
  EXPECT_EQ(receiver_set_name({{NodeId::attn(2, 1), Channel::Q}, {NodeId::logits(), Channel::LogitsIn}}),
            "a2.h1.q|logits");
  std::filesystem::remove(path);
}
