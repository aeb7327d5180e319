#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <set>

#include "circuitscope/error.hpp"
#include "circuitscope/io.hpp"
#include "circuitscope/longitudinal.hpp"
#include "circuitscope/report.hpp"
#include "circuitscope/tasks.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace circuitscope;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cs_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::invalid_argument;
}

}  // namespace

TEST(RunConfig, DefaultsDumpAndParseBack) {
  const RunConfig defaults;
  EXPECT_EQ(parse_run_config(dump_run_config(defaults)), defaults);
  EXPECT_EQ(defaults.analysis.m, 5);
  EXPECT_EQ(defaults.analysis.faithfulness_threshold, 0.8);
  EXPECT_EQ(defaults.analysis.edge_budget_fraction, 0.05);
  EXPECT_EQ(defaults.analysis.ewma_alpha, 0.5);
  EXPECT_EQ(defaults.analysis.classification_threshold, 0.10);
  EXPECT_NO_THROW(defaults.validate());
}

TEST(RunConfig, MissingKeysTakeDefaults) {
  const auto c = parse_run_config(R"({"model": {"n_layers": 4}, "analysis": {"m": 3}})");
  EXPECT_EQ(c.model.n_layers, 4);
  EXPECT_EQ(c.model.n_heads, RunConfig{}.model.n_heads);
  EXPECT_EQ(c.analysis.m, 3);
  EXPECT_EQ(c.analysis.faithfulness_threshold, 0.8);
}

TEST(RunConfig, StrictParsing) {
  EXPECT_EQ(code_of([] { parse_run_config("{\"seed\": 1 // note\n}"); }), Errc::schema_violation);
  EXPECT_EQ(code_of([] { parse_run_config(R"({"sed": 1})"); }), Errc::schema_violation);
  EXPECT_EQ(code_of([] { parse_run_config(R"({"model": {"layers": 2}})"); }), Errc::schema_violation);
  EXPECT_EQ(code_of([] { parse_run_config(R"({"seed": "one"})"); }), Errc::schema_violation);
}

TEST(RunConfig, ValidationBounds) {
  auto with = [](auto edit) {
    RunConfig c;
    edit(c);
    return code_of([&] { c.validate(); });
  };
  EXPECT_EQ(with([](RunConfig& c) { c.analysis.m = 0; }), Errc::invalid_config);
  EXPECT_EQ(with([](RunConfig& c) { c.analysis.faithfulness_threshold = 0.0; }), Errc::invalid_config);
  EXPECT_EQ(with([](RunConfig& c) { c.analysis.ewma_alpha = 1.5; }), Errc::invalid_config);
  EXPECT_EQ(with([](RunConfig& c) { c.schedule.steps = {1, 2}; }), Errc::invalid_config);
  EXPECT_EQ(with([](RunConfig& c) { c.tasks.clear(); }), Errc::invalid_config);
  RunConfig ok;
  ok.analysis.faithfulness_threshold = 1.0;
  EXPECT_NO_THROW(ok.validate());
}

TEST(Csv, ReaderChecksVersionAndSchema) {
  const auto dir = scratch("csv");
  {
    CsvWriter w(dir / "a.csv", {"x", "y"});
    w.row({"1", "2"});
    w.close();
  }
  const auto t = read_csv(dir / "a.csv", {"x", "y"});
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(t.rows[0][t.column("y")], "2");
  EXPECT_EQ(code_of([&] { read_csv(dir / "a.csv", {"x", "z"}); }), Errc::schema_violation);
  EXPECT_EQ(code_of([&] { read_csv(dir / "none.csv"); }), Errc::missing_file);

  std::ofstream(dir / "v2.csv") << "# format_version: 2\nx,y\n";
  EXPECT_EQ(code_of([&] { read_csv(dir / "v2.csv"); }), Errc::version_mismatch);
  std::ofstream(dir / "bare.csv") << "x,y\n1,2\n";
  EXPECT_EQ(code_of([&] { read_csv(dir / "bare.csv"); }), Errc::schema_violation);
  std::ofstream(dir / "ragged.csv") << "# format_version: 1\nx,y\n1\n";
  EXPECT_EQ(code_of([&] { read_csv(dir / "ragged.csv"); }), Errc::schema_violation);
}

TEST(Csv, DoublesRoundTripExactly) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 12345.678}) EXPECT_EQ(parse_double(format_double(v)), v);
}

TEST(DirectoryLock, SecondHolderIsRefused) {
  const auto dir = scratch("lock");
  {
    DirectoryLock a(dir);
    EXPECT_EQ(code_of([&] { DirectoryLock b(dir); }), Errc::locked);
  }
  EXPECT_NO_THROW(DirectoryLock c(dir));
}

TEST(Report, EmptyRunDirectoryHasNoArtifacts) {
  const auto dir = scratch("empty");
  try {
    collect_plots(dir);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::no_artifacts);
    EXPECT_NE(std::string(e.what()).find("no artifacts found"), std::string::npos);
  }
}

TEST(Report, PlotsFromSeriesCsvs) {
  const auto dir = scratch("report");
  write_behavior_csv(dir / "behavior_ioi.csv", {{0, 0, "ioi", 0.1}, {10, 100, "ioi", 2.0}});
  StabilityRow a{0, 0, 3, 2, 0.9, {}, {}};
  StabilityRow b{10, 100, 4, 3, 0.85, 0.5, 0.5};
  write_stability_csv(dir / "stability_ioi.csv", {a, b});
  write_node_counts_csv(dir / "node_counts_ioi.csv", {a, b});

  const auto plots = collect_plots(dir);
  ASSERT_EQ(plots.size(), 3u);
  EXPECT_EQ(plots[0].id, "behavior_ioi");
  EXPECT_EQ(plots[0].series[0].y, (std::vector<double>{0.1, 2.0}));
  // The first stability row has no Jaccard value and is left out.
  EXPECT_EQ(plots[2].id, "stability_ioi");
  EXPECT_EQ(plots[2].series[0].x, (std::vector<double>{100}));

  const auto j = nlohmann::json::parse(plots_to_json(plots));
  EXPECT_EQ(j.at("format_version"), 1);
  EXPECT_EQ(j.at("plots").size(), 3u);

  const auto files = write_report(dir);
  EXPECT_TRUE(fs::exists(files.plot_data));
  ASSERT_EQ(files.charts.size(), 3u);
  const std::string svg = read_text_file(files.charts[0]);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("<polyline"), std::string::npos);
  // Rerunning over the same inputs reproduces the bundle byte for byte.
  const std::string first = read_text_file(files.plot_data);
  write_report(dir);
  EXPECT_EQ(read_text_file(files.plot_data), first);
  EXPECT_EQ(read_text_file(files.charts[0]), svg);
}

TEST(Report, SvgEscapesText) {
  Plot p{"x", "a < b & c", "x", "y", {{"s", {0, 1}, {1, 2}}}};
  const auto svg = render_svg(p);
  EXPECT_NE(svg.find("a &lt; b &amp; c"), std::string::npos);
  EXPECT_EQ(svg.find("a < b"), std::string::npos);
}

TEST(InductionTraining, OneRepeatedSegmentAfterAPrefix) {
  const auto seqs = induction_training_sequences(300, 32, 5);
  ASSERT_EQ(seqs.size(), 300u);
  std::set<std::size_t> lengths;
  for (const auto& s : seqs) {
    ASSERT_LE(s.size(), 32u);
    // Find the split: the longest tail that repeats immediately before it.
    std::size_t L = 0;
    for (std::size_t l = s.size() / 2; l >= 4; --l) {
      if (std::equal(s.end() - static_cast<long>(l), s.end(), s.end() - static_cast<long>(2 * l))) {
        L = l;
        break;
      }
    }
    ASSERT_GE(L, 4u);
    const std::set<int> distinct(s.begin(), s.end() - static_cast<long>(L));
    EXPECT_EQ(distinct.size(), s.size() - L);
    lengths.insert(s.size());
  }
  EXPECT_GT(lengths.size(), 10u);
  EXPECT_EQ(induction_training_sequences(300, 32, 5), seqs);
}
