#include "circuitscope/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "circuitscope/checkpoint.hpp"
#include "circuitscope/error.hpp"
#include "circuitscope/io.hpp"
#include "json.hpp"

namespace circuitscope {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

std::string suffix_of(const fs::path& p, const std::string& prefix) {
  return p.stem().string().substr(prefix.size());
}

// Cells may be empty where a value is absent; such rows are skipped.
PlotSeries column_series(const CsvTable& t, const std::string& name, const std::string& x, const std::string& y) {
  PlotSeries s{name, {}, {}};
  const std::size_t xi = t.column(x);
  const std::size_t yi = t.column(y);
  for (const auto& row : t.rows) {
    if (row[yi].empty()) continue;
    s.x.push_back(parse_double(row[xi]));
    s.y.push_back(parse_double(row[yi]));
  }
  return s;
}

void emergence_plot(const CsvTable& t, const std::string& metric, std::vector<Plot>& out) {
  const std::size_t step_i = t.column("tokens_seen");
  const std::size_t rank_i = t.column("rank");
  const std::size_t val_i = t.column("value");
  std::map<double, std::vector<double>> by_x;
  for (const auto& row : t.rows) {
    auto& v = by_x[parse_double(row[step_i])];
    const std::size_t rank = static_cast<std::size_t>(std::stoul(row[rank_i]));
    if (v.size() < rank) v.resize(rank, 0.0);
    v[rank - 1] = parse_double(row[val_i]);
  }
  PlotSeries top1{"top-1", {}, {}};
  PlotSeries top5{"top-5 mean", {}, {}};
  for (const auto& [x, v] : by_x) {
    if (v.empty()) continue;
    top1.x.push_back(x);
    top1.y.push_back(v.front());
    double sum = 0.0;
    for (double y : v) sum += y;
    top5.x.push_back(x);
    top5.y.push_back(sum / static_cast<double>(v.size()));
  }
  out.push_back({"emergence_" + metric, metric + " score of the strongest heads", "tokens seen", "score",
                 {top1, top5}});
}

}  // namespace

std::vector<Plot> collect_plots(const fs::path& run_dir) {
  if (!fs::is_directory(run_dir)) fail(Errc::missing_file, "run directory " + run_dir.string() + " not found");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  std::vector<Plot> out;
  for (const auto& f : files) {
    const std::string stem = f.stem().string();
    if (stem == "training_log") {
      const auto t = read_csv(f, columns::training_log());
      out.push_back({"training_loss", "training loss", "tokens seen", "loss",
                     {column_series(t, "loss", "tokens_seen", "loss")}});
    } else if (starts_with(stem, "behavior_")) {
      const auto task = suffix_of(f, "behavior_");
      const auto t = read_csv(f, columns::behavior());
      out.push_back({stem, task + " task behavior", "tokens seen", "metric",
                     {column_series(t, task, "tokens_seen", "metric")}});
    } else if (starts_with(stem, "emergence_")) {
      emergence_plot(read_csv(f, columns::emergence()), suffix_of(f, "emergence_"), out);
    } else if (stem == "ratios") {
      const auto t = read_csv(f, columns::ratios());
      out.push_back({"ioi_ratios", "IOI algorithmic consistency", "tokens seen", "ratio",
                     {column_series(t, "NMH+CSH direct share", "tokens_seen", "ratio1"),
                      column_series(t, "S2I share on NMH", "tokens_seen", "ratio2"),
                      column_series(t, "induction/duplicate share on S2I", "tokens_seen", "ratio3")}});
    } else if (starts_with(stem, "stability_")) {
      const auto task = suffix_of(f, "stability_");
      const auto t = read_csv(f, columns::stability());
      out.push_back({stem, task + " circuit node-set stability", "tokens seen", "Jaccard similarity",
                     {column_series(t, "jaccard", "tokens_seen", "jaccard"),
                      column_series(t, "ewma", "tokens_seen", "ewma")}});
    } else if (starts_with(stem, "node_counts_")) {
      const auto task = suffix_of(f, "node_counts_");
      const auto t = read_csv(f, columns::node_counts());
      out.push_back({stem, task + " circuit size", "tokens seen", "count",
                     {column_series(t, "nodes", "tokens_seen", "n_nodes"),
                      column_series(t, "edges", "tokens_seen", "n_edges")}});
    }
  }
  if (out.empty()) fail(Errc::no_artifacts, "no artifacts found in " + run_dir.string());
  return out;
}

std::string plots_to_json(const std::vector<Plot>& plots) {
  ordered_json arr = ordered_json::array();
  for (const auto& p : plots) {
    ordered_json series = ordered_json::array();
    for (const auto& s : p.series) series.push_back({{"name", s.name}, {"x", s.x}, {"y", s.y}});
    arr.push_back({{"id", p.id},
                   {"title", p.title},
                   {"x_label", p.x_label},
                   {"y_label", p.y_label},
                   {"series", series}});
  }
  const ordered_json j{{"format_version", kFormatVersion}, {"plots", arr}};
  return j.dump(2) + "\n";
}

namespace {

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace

std::string render_svg(const Plot& plot) {
  constexpr double W = 640, H = 400, L = 70, R = 180, T = 40, B = 50;
  constexpr const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : plot.series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double pw = W - L - R;
  const double ph = H - T - B;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return T + ph - (y - y0) / (y1 - y0) * ph; };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" font-family=\"sans-serif\" "
       "font-size=\"12\">\n";
  s += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(W / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + esc(plot.title) +
       "</text>\n";
  s += "<rect x=\"" + num(L) + "\" y=\"" + num(T) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
       "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = x0 + (x1 - x0) * i / 4.0;
    const double fy = y0 + (y1 - y0) * i / 4.0;
    s += "<text x=\"" + num(px(fx)) + "\" y=\"" + num(T + ph + 16) + "\" text-anchor=\"middle\">" + tick(fx) +
         "</text>\n";
    s += "<text x=\"" + num(L - 6) + "\" y=\"" + num(py(fy) + 4) + "\" text-anchor=\"end\">" + tick(fy) +
         "</text>\n";
  }
  s += "<text x=\"" + num(L + pw / 2) + "\" y=\"" + num(H - 10) + "\" text-anchor=\"middle\">" +
       esc(plot.x_label) + "</text>\n";
  s += "<text x=\"16\" y=\"" + num(T + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
       num(T + ph / 2) + ")\">" + esc(plot.y_label) + "</text>\n";
  for (std::size_t k = 0; k < plot.series.size(); ++k) {
    const auto& ser = plot.series[k];
    const char* color = palette[k % std::size(palette)];
    std::string pts;
    for (std::size_t i = 0; i < ser.x.size(); ++i) {
      if (!pts.empty()) pts += ' ';
      pts += num(px(ser.x[i])) + "," + num(py(ser.y[i]));
    }
    if (!pts.empty()) {
      s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"" + pts +
           "\"/>\n";
    }
    const double ly = T + 14 + 18.0 * static_cast<double>(k);
    s += "<line x1=\"" + num(W - R + 12) + "\" y1=\"" + num(ly - 4) + "\" x2=\"" + num(W - R + 32) + "\" y2=\"" +
         num(ly - 4) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + num(W - R + 38) + "\" y=\"" + num(ly) + "\">" + esc(ser.name) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

ReportFiles write_report(const fs::path& run_dir) {
  const auto plots = collect_plots(run_dir);
  const fs::path dir = run_dir / "report";
  fs::create_directories(dir);
  ReportFiles files;
  files.plot_data = dir / "plot_data.json";
  write_text_file(files.plot_data, plots_to_json(plots));
  for (const auto& p : plots) {
    files.charts.push_back(dir / (p.id + ".svg"));
    write_text_file(files.charts.back(), render_svg(p));
  }
  return files;
}

}  // namespace circuitscope
