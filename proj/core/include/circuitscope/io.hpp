#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "circuitscope/graph.hpp"
#include "circuitscope/train.hpp"

namespace circuitscope {

// CSV files start with "# format_version: N", then the header row.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, std::vector<std::string> columns);
  void row(const std::vector<std::string>& cells);
  // Flushes and checks the stream; throws io_failure.
  void close();

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::size_t width_;
};

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;
};

// Throws missing_file, version_mismatch, or schema_violation when the header
// differs from `expected_columns` (if nonempty) or a row is ragged.
CsvTable read_csv(const std::filesystem::path& path, const std::vector<std::string>& expected_columns = {});

// Shortest decimal text that parses back to the same double.
std::string format_double(double value);
double parse_double(const std::string& text);

// Fixed column orders of every CSV the toolkit writes.
namespace columns {
const std::vector<std::string>& training_log();     // step, tokens_seen, loss
const std::vector<std::string>& behavior();         // step, tokens_seen, task, metric
const std::vector<std::string>& head_scores();      // step, layer, head, metric, value
const std::vector<std::string>& effects();          // layer, head, receiver_set, effect
const std::vector<std::string>& ratios();           // step, tokens_seen, ratio1, ratio2, ratio3, status
const std::vector<std::string>& stability();        // step, tokens_seen, n_edges, faithfulness, jaccard, ewma
const std::vector<std::string>& node_counts();      // step, tokens_seen, n_nodes, n_edges
const std::vector<std::string>& emergence();        // step, tokens_seen, metric, rank, layer, head, value
}  // namespace columns

std::string read_text_file(const std::filesystem::path& path);
// Writes to a sibling temporary file and renames it into place.
void write_text_file(const std::filesystem::path& path, const std::string& text);

// Exclusive lock on an output directory, held for the object's lifetime.
// Throws locked when another process holds it.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  std::filesystem::path file_;
};

struct AnalysisOptions {
  int m = 5;
  double faithfulness_threshold = 0.8;
  double edge_budget_fraction = 0.05;
  double ewma_alpha = 0.5;
  double classification_threshold = 0.10;

  friend bool operator==(const AnalysisOptions&, const AnalysisOptions&) = default;
};

struct RunConfig {
  ModelConfig model;
  std::vector<std::string> tasks = {"ioi"};
  CheckpointSchedule schedule = CheckpointSchedule::desk_default();
  TrainingOptions training;
  int examples_per_task = 2000;
  AnalysisOptions analysis;
  std::filesystem::path output_dir = "run";
  std::uint64_t seed = 0;

  // Throws invalid_config.
  void validate() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// Strict JSON (no comments, no unknown keys). Missing keys take defaults.
RunConfig parse_run_config(const std::string& text);
std::string dump_run_config(const RunConfig& config);

}  // namespace circuitscope
