#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "circuitscope/circuit.hpp"
#include "circuitscope/error.hpp"
#include "circuitscope/head_metrics.hpp"
#include "circuitscope/io.hpp"
#include "circuitscope/longitudinal.hpp"
#include "circuitscope/report.hpp"
#include "circuitscope/tasks.hpp"
#include "circuitscope/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace circuitscope;

namespace {

constexpr std::string_view kInductionTask = "induction";

TaskDataset load_task(const std::string& task, int n, std::uint64_t seed) {
  return make_task(task, n > 0 ? n : default_task_size(task), seed);
}

// Mixed next-token corpus over the configured tasks; "induction" adds
// repeated-segment sequences sized to the model context.
TrainingCorpus run_corpus(const RunConfig& cfg) {
  std::vector<std::vector<int>> seqs;
  for (std::size_t k = 0; k < cfg.tasks.size(); ++k) {
    const auto& task = cfg.tasks[k];
    const std::uint64_t seed = cfg.seed + 1000 * k;
    if (task == kInductionTask) {
      for (auto& s : induction_training_sequences(cfg.examples_per_task, cfg.model.max_seq_len, seed)) {
        seqs.push_back(std::move(s));
      }
    } else if (std::find(task_names().begin(), task_names().end(), task) != task_names().end()) {
      for (auto& s : task_training_sequences(task, cfg.examples_per_task, seed)) seqs.push_back(std::move(s));
    } else {
      fail(Errc::invalid_config, "unknown task '" + task + "'");
    }
  }
  return TrainingCorpus::from_sequences(std::move(seqs));
}

AnalysisOptions analysis_options(const std::optional<std::string>& config_path) {
  if (!config_path) return {};
  return parse_run_config(read_text_file(*config_path)).analysis;
}

fs::path ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(Errc::io_failure, "cannot create " + dir.string() + ": " + ec.message());
  return dir;
}

void require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) fail(Errc::missing_file, p.string() + " not found");
}

std::vector<HeadMetric> metrics_from(const std::string& name) {
  if (name == "all") return all_head_metrics();
  return {parse_head_metric(name)};
}

int report_error(const std::string& code, const std::string& message) {
  const nlohmann::json line{{"error", code}, {"message", message}};
  std::cerr << line.dump() << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Circuit discovery and analysis across training checkpoints of small transformers"};
  app.require_subcommand(0, 1);
  bool print_config = false;
  app.add_flag("--print-config", print_config, "Print the default run configuration and exit");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoints plus training_log.csv");
  std::string config_path;
  std::optional<std::string> out_override;
  train_cmd->add_option("--config", config_path, "Run configuration (strict JSON)")->required();
  train_cmd->add_option("--out", out_override, "Override the configured output directory");

  // eval-task
  auto* eval_cmd = app.add_subcommand("eval-task", "Task behavior at every checkpoint -> behavior_<task>.csv");
  std::string ckpt_dir;
  std::string task;
  int n_examples = 0;
  std::uint64_t seed = 0;
  int stride = 1;
  std::optional<std::string> out_dir;
  std::optional<std::string> analysis_config;
  eval_cmd->add_option("--ckpt-dir", ckpt_dir)->required();
  eval_cmd->add_option("--task", task)->required();
  eval_cmd->add_option("--n", n_examples, "Examples (default: task size)");
  eval_cmd->add_option("--seed", seed);
  eval_cmd->add_option("--stride", stride, "Keep every stride-th checkpoint");
  eval_cmd->add_option("--out", out_dir, "Output directory (default: --ckpt-dir)");

  // find-circuit
  auto* circuit_cmd = app.add_subcommand("find-circuit", "Minimal faithful circuit of one checkpoint -> JSON");
  std::string ckpt;
  int m = 5;
  double threshold = 0.8;
  double budget = 0.05;
  std::optional<std::string> out_file;
  circuit_cmd->add_option("--ckpt", ckpt)->required();
  circuit_cmd->add_option("--task", task)->required();
  circuit_cmd->add_option("--m", m, "Integrated-gradient steps")->capture_default_str();
  circuit_cmd->add_option("--threshold", threshold, "Faithfulness target")->capture_default_str();
  circuit_cmd->add_option("--budget", budget, "Initial edge budget fraction")->capture_default_str();
  circuit_cmd->add_option("--n", n_examples);
  circuit_cmd->add_option("--seed", seed);
  circuit_cmd->add_option("--out", out_file, "Output file (default: circuit_<task>_<step>.json next to the checkpoint)");

  // score-heads
  auto* heads_cmd = app.add_subcommand("score-heads", "Per-head metric scores -> head_scores.csv");
  std::string metric = "all";
  heads_cmd->add_option("--ckpt", ckpt, "Checkpoint file, or a directory to score every checkpoint")->required();
  heads_cmd->add_option("--metric", metric, "copy|cspa|prev_token|duplicate_token|induction|successor|all")
      ->capture_default_str();
  heads_cmd->add_option("--seed", seed);
  heads_cmd->add_option("--stride", stride);
  heads_cmd->add_option("--out", out_dir, "Output directory (default: the checkpoint directory)");

  // ioi-consistency
  auto* ioi_cmd = app.add_subcommand("ioi-consistency", "IOI head-class ratios per checkpoint -> ratios.csv");
  ioi_cmd->add_option("--ckpt-dir", ckpt_dir)->required();
  ioi_cmd->add_option("--n", n_examples);
  ioi_cmd->add_option("--seed", seed);
  ioi_cmd->add_option("--stride", stride);
  ioi_cmd->add_option("--config", analysis_config, "Run configuration supplying analysis options");
  ioi_cmd->add_option("--out", out_dir);

  // longitudinal
  auto* long_cmd =
      app.add_subcommand("longitudinal", "Circuit stability per checkpoint -> stability_<task>.csv, node_counts_<task>.csv");
  long_cmd->add_option("--ckpt-dir", ckpt_dir)->required();
  long_cmd->add_option("--task", task)->required();
  long_cmd->add_option("--n", n_examples);
  long_cmd->add_option("--seed", seed);
  long_cmd->add_option("--stride", stride);
  long_cmd->add_option("--config", analysis_config);
  long_cmd->add_option("--out", out_dir);

  // report
  auto* report_cmd = app.add_subcommand("report", "Plot data JSON and SVG charts from a run directory's CSVs");
  std::string run_dir;
  report_cmd->add_option("--run-dir", run_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("invalid-argument", e.what());
  }

  try {
    if (print_config) {
      std::cout << dump_run_config(RunConfig{});
      return 0;
    }
    if (app.get_subcommands().empty()) {
      std::cout << app.help();
      return 0;
    }
    auto out_or = [&](const std::string& fallback) { return ensure_dir(out_dir ? fs::path(*out_dir) : fs::path(fallback)); };

    if (*train_cmd) {
      RunConfig cfg = parse_run_config(read_text_file(config_path));
      if (out_override) cfg.output_dir = *out_override;
      cfg.validate();
      const fs::path out = ensure_dir(cfg.output_dir);
      DirectoryLock lock(out);
      const auto corpus = run_corpus(cfg);
      if (corpus.seq_len() > static_cast<std::size_t>(cfg.model.max_seq_len)) {
        fail(Errc::invalid_config, "task sequences of length " + std::to_string(corpus.seq_len()) +
                                       " exceed model.max_seq_len");
      }
      write_text_file(out / "config.json", dump_run_config(cfg));
      TrainingOptions opts = cfg.training;
      const auto res = train(cfg.model, corpus, cfg.schedule, opts, out, [](const Checkpoint& c) {
        std::printf("checkpoint step %lld\n", static_cast<long long>(c.step));
        std::fflush(stdout);
      });
      std::printf("%zu checkpoints, final loss %s\n", res.checkpoints.size(),
                  format_double(res.log.back().loss).c_str());
    } else if (*eval_cmd) {
      const auto cps = checkpoint_series(ckpt_dir, stride);
      const fs::path out = out_or(ckpt_dir);
      DirectoryLock lock(out);
      const int n = n_examples > 0 ? n_examples : default_task_size(task);
      const auto rows = behavior_series(cps, task, n, seed);
      write_behavior_csv(out / ("behavior_" + task + ".csv"), rows);
      for (const auto& r : rows) {
        std::printf("step %lld  %s\n", static_cast<long long>(r.step), format_double(r.metric).c_str());
      }
    } else if (*circuit_cmd) {
      require_file(ckpt);
      const Checkpoint c = load_checkpoint(ckpt);
      const Model model(c);
      const TaskDataset ds = load_task(task, n_examples, seed);
      const auto scores = eap_ig(model, ds, m);
      Circuit circuit = minimal_circuit(model, ds, scores, threshold, budget);
      circuit.task = task;
      circuit.checkpoint_step = c.step;
      const fs::path target = out_file ? fs::path(*out_file)
                                       : fs::path(ckpt).parent_path() /
                                             ("circuit_" + task + "_" + std::to_string(c.step) + ".json");
      if (target.has_parent_path()) ensure_dir(target.parent_path());
      DirectoryLock lock(target.has_parent_path() ? target.parent_path() : fs::path("."));
      write_text_file(target, circuit_to_json(circuit));
      std::printf("%zu edges of %zu, faithfulness %s -> %s\n", circuit.n_edges(), scores.edges.size(),
                  format_double(circuit.faithfulness).c_str(), target.string().c_str());
    } else if (*heads_cmd) {
      const auto metrics = metrics_from(metric);
      std::vector<CheckpointRecord> cps;
      if (fs::is_directory(ckpt)) {
        cps = checkpoint_series(ckpt, stride);
      } else {
        require_file(ckpt);
        const Checkpoint c = load_checkpoint(ckpt);
        cps.push_back({c.step, c.tokens_seen, ckpt});
      }
      const fs::path out = out_or(fs::is_directory(ckpt) ? fs::path(ckpt) : fs::path(ckpt).parent_path());
      DirectoryLock lock(out);
      std::vector<HeadScoreTable> tables;
      std::vector<std::int64_t> tokens;
      std::optional<HeadMetricInputs> inputs;
      for (const auto& rec : cps) {
        const Checkpoint c = load_checkpoint(rec.path);
        if (!inputs) inputs = HeadMetricInputs::standard(c.config, seed);
        HeadScoreTable t = score_heads(Model(c), metrics, *inputs);
        tables.push_back(std::move(t));
        tokens.push_back(rec.tokens_seen);
        std::printf("scored step %lld\n", static_cast<long long>(rec.step));
        std::fflush(stdout);
      }
      write_head_scores_csv(out / "head_scores.csv", tables);
      if (cps.size() > 1) {
        for (HeadMetric hm : metrics) {
          write_emergence_csv(out / ("emergence_" + std::string(to_string(hm)) + ".csv"), hm, emergence_series(tables, tokens, hm));
        }
      }
    } else if (*ioi_cmd) {
      const auto cps = checkpoint_series(ckpt_dir, stride);
      const fs::path out = out_or(ckpt_dir);
      DirectoryLock lock(out);
      const TaskDataset ioi = load_task(std::string(kIoi), n_examples, seed);
      const auto rows = ratio_series(cps, ioi, analysis_options(analysis_config), seed);
      write_ratios_csv(out / "ratios.csv", rows);
      for (const auto& r : rows) {
        std::printf("step %lld  %s\n", static_cast<long long>(r.step), r.ratios.status().c_str());
      }
    } else if (*long_cmd) {
      const auto cps = checkpoint_series(ckpt_dir, stride);
      const fs::path out = out_or(ckpt_dir);
      DirectoryLock lock(out);
      const TaskDataset ds = load_task(task, n_examples, seed);
      const auto series = circuit_series(cps, ds, analysis_options(analysis_config));
      write_stability_csv(out / ("stability_" + task + ".csv"), series.rows);
      write_node_counts_csv(out / ("node_counts_" + task + ".csv"), series.rows);
      const fs::path cdir = ensure_dir(out / ("circuits_" + task));
      for (const auto& c : series.circuits) {
        write_text_file(cdir / ("step_" + std::to_string(c.checkpoint_step) + ".json"), circuit_to_json(c));
      }
      std::printf("%zu of %zu checkpoints yielded circuits\n", series.rows.size(), cps.size());
    } else if (*report_cmd) {
      if (!fs::is_directory(run_dir)) fail(Errc::missing_file, "run directory " + run_dir + " not found");
      DirectoryLock lock(run_dir);
      const auto files = write_report(run_dir);
      std::printf("%s and %zu charts\n", files.plot_data.string().c_str(), files.charts.size());
    }
  } catch (const Error& e) {
    return report_error(std::string(to_string(e.code())), e.what());
  } catch (const std::exception& e) {
    return report_error("internal", e.what());
  }
  return 0;
}
