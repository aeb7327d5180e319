#include "circuitscope/io.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <charconv>
#include <cstdio>
#include <set>
#include <sstream>

#include "circuitscope/checkpoint.hpp"
#include "circuitscope/error.hpp"
#include "json.hpp"

namespace circuitscope {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kVersionLine = "# format_version: " + std::to_string(kFormatVersion);

std::string join(const std::vector<std::string>& cells) {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out += ',';
    out += cells[i];
  }
  return out;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

CsvWriter::CsvWriter(const fs::path& path, std::vector<std::string> columns)
    : path_(path), out_(path, std::ios::trunc), width_(columns.size()) {
  if (!out_) fail(Errc::io_failure, "cannot open " + path.string() + " for writing");
  out_ << kVersionLine << '\n' << join(columns) << '\n';
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  if (cells.size() != width_) fail(Errc::invalid_argument, "CSV row width does not match header");
  for (const auto& c : cells) {
    if (c.find_first_of(",\n") != std::string::npos) {
      fail(Errc::invalid_argument, "CSV cell contains a separator: " + c);
    }
  }
  out_ << join(cells) << '\n';
}

void CsvWriter::close() {
  out_.flush();
  if (!out_) fail(Errc::io_failure, "write failed for " + path_.string());
  out_.close();
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == name) return i;
  fail(Errc::schema_violation, "CSV has no column '" + name + "'");
}

CsvTable read_csv(const fs::path& path, const std::vector<std::string>& expected_columns) {
  std::ifstream in(path);
  if (!in) fail(Errc::missing_file, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("# format_version:", 0) != 0) {
    fail(Errc::schema_violation, path.string() + " lacks a format_version line");
  }
  if (line != kVersionLine) fail(Errc::version_mismatch, path.string() + ": unsupported " + line.substr(2));
  CsvTable t;
  if (!std::getline(in, line)) fail(Errc::schema_violation, path.string() + " lacks a header row");
  t.columns = split(line);
  if (!expected_columns.empty() && t.columns != expected_columns) {
    fail(Errc::schema_violation, path.string() + " header '" + line + "' does not match '" +
                                     join(expected_columns) + "'");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != t.columns.size()) fail(Errc::schema_violation, path.string() + " has a ragged row");
    t.rows.push_back(std::move(cells));
  }
  return t;
}

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& text) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    fail(Errc::schema_violation, "not a number: '" + text + "'");
  }
  return v;
}

namespace columns {

const std::vector<std::string>& training_log() {
  static const std::vector<std::string> c = {"step", "tokens_seen", "loss"};
  return c;
}
const std::vector<std::string>& behavior() {
  static const std::vector<std::string> c = {"step", "tokens_seen", "task", "metric"};
  return c;
}
const std::vector<std::string>& head_scores() {
  static const std::vector<std::string> c = {"step", "layer", "head", "metric", "value"};
  return c;
}
const std::vector<std::string>& effects() {
  static const std::vector<std::string> c = {"layer", "head", "receiver_set", "effect"};
  return c;
}
const std::vector<std::string>& ratios() {
  static const std::vector<std::string> c = {"step", "tokens_seen", "ratio1", "ratio2", "ratio3", "status"};
  return c;
}
const std::vector<std::string>& stability() {
  static const std::vector<std::string> c = {"step", "tokens_seen", "n_edges", "faithfulness", "jaccard", "ewma"};
  return c;
}
const std::vector<std::string>& node_counts() {
  static const std::vector<std::string> c = {"step", "tokens_seen", "n_nodes", "n_edges"};
  return c;
}
const std::vector<std::string>& emergence() {
  static const std::vector<std::string> c = {"step", "tokens_seen", "metric", "rank", "layer", "head", "value"};
  return c;
}

}  // namespace columns

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::missing_file, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(Errc::io_failure, "cannot open " + tmp.string() + " for writing");
    out << text;
    out.flush();
    if (!out) fail(Errc::io_failure, "write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail(Errc::io_failure, "cannot move " + tmp.string() + " into place: " + ec.message());
}

DirectoryLock::DirectoryLock(const fs::path& dir) : file_(dir / ".circuitscope.lock") {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(Errc::io_failure, "cannot create " + dir.string() + ": " + ec.message());
  const int fd = ::open(file_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST) fail(Errc::locked, dir.string() + " is locked by another run (" + file_.string() + ")");
    fail(Errc::io_failure, "cannot create lock file " + file_.string());
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

DirectoryLock::~DirectoryLock() {
  std::error_code ec;
  fs::remove(file_, ec);
}

void RunConfig::validate() const {
  model.validate();
  auto bad = [](const std::string& m) { fail(Errc::invalid_config, m); };
  if (tasks.empty()) bad("tasks must be nonempty");
  const auto in_unit = [](double v) { return v > 0.0 && v <= 1.0; };
  if (analysis.m < 1) bad("analysis.m must be >= 1");
  if (!in_unit(analysis.faithfulness_threshold)) bad("faithfulness_threshold must lie in (0, 1]");
  if (!in_unit(analysis.edge_budget_fraction)) bad("edge_budget_fraction must lie in (0, 1]");
  if (!in_unit(analysis.ewma_alpha)) bad("ewma_alpha must lie in (0, 1]");
  if (!in_unit(analysis.classification_threshold)) bad("classification_threshold must lie in (0, 1]");
  if (training.batch_size < 1) bad("training.batch_size must be >= 1");
  if (!(training.learning_rate > 0.0)) bad("training.learning_rate must be positive");
  if (training.warmup_steps < 0) bad("training.warmup_steps must be >= 0");
  if (examples_per_task < 1) bad("examples_per_task must be >= 1");
  try {
    schedule.validate();
  } catch (const Error& e) {
    bad(e.what());
  }
}

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) fail(Errc::schema_violation, where + " must be an object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) fail(Errc::schema_violation, "unknown key '" + k + "' in " + where);
  }
}

template <class T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text, nullptr, true, /*ignore_comments=*/false);
  } catch (const json::exception& e) {
    fail(Errc::schema_violation, std::string("config is not strict JSON: ") + e.what());
  }
  RunConfig c;
  try {
    reject_unknown(j, {"format_version", "model", "tasks", "schedule", "training", "examples_per_task", "analysis",
                       "output_dir", "seed"},
                   "config");
    if (j.contains("format_version") && j.at("format_version").get<int>() != kFormatVersion) {
      fail(Errc::version_mismatch, "config format_version not supported");
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      reject_unknown(m, {"n_layers", "n_heads", "d_model", "d_mlp", "vocab_size", "max_seq_len", "seed"}, "model");
      read_opt(m, "n_layers", c.model.n_layers);
      read_opt(m, "n_heads", c.model.n_heads);
      read_opt(m, "d_model", c.model.d_model);
      read_opt(m, "d_mlp", c.model.d_mlp);
      read_opt(m, "vocab_size", c.model.vocab_size);
      read_opt(m, "max_seq_len", c.model.max_seq_len);
      read_opt(m, "seed", c.model.seed);
    }
    read_opt(j, "tasks", c.tasks);
    if (j.contains("schedule")) c.schedule.steps = j.at("schedule").get<std::vector<std::int64_t>>();
    if (j.contains("training")) {
      const auto& t = j.at("training");
      reject_unknown(t, {"batch_size", "learning_rate", "warmup_steps", "beta2", "eps", "seed"}, "training");
      read_opt(t, "batch_size", c.training.batch_size);
      read_opt(t, "learning_rate", c.training.learning_rate);
      read_opt(t, "warmup_steps", c.training.warmup_steps);
      read_opt(t, "beta2", c.training.beta2);
      read_opt(t, "eps", c.training.eps);
      read_opt(t, "seed", c.training.seed);
    }
    read_opt(j, "examples_per_task", c.examples_per_task);
    if (j.contains("analysis")) {
      const auto& a = j.at("analysis");
      reject_unknown(a, {"m", "faithfulness_threshold", "edge_budget_fraction", "ewma_alpha",
                         "classification_threshold"},
                     "analysis");
      read_opt(a, "m", c.analysis.m);
      read_opt(a, "faithfulness_threshold", c.analysis.faithfulness_threshold);
      read_opt(a, "edge_budget_fraction", c.analysis.edge_budget_fraction);
      read_opt(a, "ewma_alpha", c.analysis.ewma_alpha);
      read_opt(a, "classification_threshold", c.analysis.classification_threshold);
    }
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    read_opt(j, "seed", c.seed);
  } catch (const json::exception& e) {
    fail(Errc::schema_violation, std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string dump_run_config(const RunConfig& c) {
  const json j{
      {"format_version", kFormatVersion},
      {"model",
       {{"n_layers", c.model.n_layers},
        {"n_heads", c.model.n_heads},
        {"d_model", c.model.d_model},
        {"d_mlp", c.model.d_mlp},
        {"vocab_size", c.model.vocab_size},
        {"max_seq_len", c.model.max_seq_len},
        {"seed", c.model.seed}}},
      {"tasks", c.tasks},
      {"schedule", c.schedule.steps},
      {"training",
       {{"batch_size", c.training.batch_size},
        {"learning_rate", c.training.learning_rate},
        {"warmup_steps", c.training.warmup_steps},
        {"beta2", c.training.beta2},
        {"eps", c.training.eps},
        {"seed", c.training.seed}}},
      {"examples_per_task", c.examples_per_task},
      {"analysis",
       {{"m", c.analysis.m},
        {"faithfulness_threshold", c.analysis.faithfulness_threshold},
        {"edge_budget_fraction", c.analysis.edge_budget_fraction},
        {"ewma_alpha", c.analysis.ewma_alpha},
        {"classification_threshold", c.analysis.classification_threshold}}},
      {"output_dir", c.output_dir.string()},
      {"seed", c.seed}};
  return j.dump(2) + "\n";
}

}  // namespace circuitscope
