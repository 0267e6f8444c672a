#include "discl/report.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "discl/io.hpp"

namespace discl {

namespace fs = std::filesystem;

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 400.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 20.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 90.0;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

// Fixed-precision formatting keeps the output byte-stable.
std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", std::abs(v) < 0.005 ? 0.0 : v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo = 0.0;
  double hi = 1.0;
};

Range padded(double lo, double hi) {
  if (!(lo < hi)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

std::string header(const std::string& title) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" + num(kHeight) +
         "\" viewBox=\"0 0 " + num(kWidth) + " " + num(kHeight) + "\" font-family=\"sans-serif\" font-size=\"12\">\n" +
         "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n" + "<text x=\"" + num(kWidth / 2) +
         "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + escape(title) + "</text>\n";
}

std::string axes(const Range& y, const std::string& y_label) {
  const double x0 = kLeft;
  const double x1 = kWidth - kRight;
  const double y0 = kHeight - kBottom;
  const double y1 = kTop;
  std::string out = "<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x1) + "\" y2=\"" + num(y0) +
                    "\" stroke=\"black\"/>\n" + "<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" +
                    num(x0) + "\" y2=\"" + num(y1) + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = y.lo + (y.hi - y.lo) * i / 4.0;
    const double py = y0 - (y0 - y1) * i / 4.0;
    out += "<line x1=\"" + num(x0 - 4) + "\" y1=\"" + num(py) + "\" x2=\"" + num(x0) + "\" y2=\"" + num(py) +
           "\" stroke=\"black\"/>\n<text x=\"" + num(x0 - 6) + "\" y=\"" + num(py + 4) + "\" text-anchor=\"end\">" +
           tick(v) + "</text>\n";
  }
  out += "<text x=\"16\" y=\"" + num((y0 + y1) / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         num((y0 + y1) / 2) + ")\">" + escape(y_label) + "</text>\n";
  return out;
}

}  // namespace

std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<PlotSeries>& series) {
  double xlo = std::numeric_limits<double>::infinity();
  double xhi = -xlo;
  double ylo = xlo;
  double yhi = -xlo;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("plot series " + s.name + ": x and y differ in length");
    for (double v : s.x) xlo = std::min(xlo, v), xhi = std::max(xhi, v);
    for (double v : s.y) ylo = std::min(ylo, v), yhi = std::max(yhi, v);
  }
  if (!std::isfinite(xlo)) xlo = 0.0, xhi = 1.0, ylo = 0.0, yhi = 1.0;
  const Range xr = padded(xlo, xhi);
  const Range yr = padded(ylo, yhi);
  const double x0 = kLeft;
  const double x1 = kWidth - kRight;
  const double y0 = kHeight - kBottom;
  const double y1 = kTop;
  auto px = [&](double v) { return x0 + (x1 - x0) * (v - xr.lo) / (xr.hi - xr.lo); };
  auto py = [&](double v) { return y0 - (y0 - y1) * (v - yr.lo) / (yr.hi - yr.lo); };

  std::string out = header(title) + axes(yr, y_label);
  for (int i = 0; i <= 4; ++i) {
    const double v = xr.lo + (xr.hi - xr.lo) * i / 4.0;
    out += "<text x=\"" + num(px(v)) + "\" y=\"" + num(y0 + 16) + "\" text-anchor=\"middle\">" + tick(v) +
           "</text>\n";
  }
  out += "<text x=\"" + num((x0 + x1) / 2) + "\" y=\"" + num(y0 + 36) + "\" text-anchor=\"middle\">" +
         escape(x_label) + "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const std::string color = kPalette[i % std::size(kPalette)];
    std::string points;
    for (std::size_t k = 0; k < s.x.size(); ++k) points += (k ? " " : "") + num(px(s.x[k])) + "," + num(py(s.y[k]));
    out += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"2\" points=\"" + points + "\"/>\n";
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      out += "<circle cx=\"" + num(px(s.x[k])) + "\" cy=\"" + num(py(s.y[k])) + "\" r=\"3\" fill=\"" + color +
             "\"/>\n";
    }
    const double ly = kHeight - 30.0;
    const double lx = x0 + 150.0 * static_cast<double>(i);
    out += "<rect x=\"" + num(lx) + "\" y=\"" + num(ly - 9) + "\" width=\"10\" height=\"10\" fill=\"" + color +
           "\"/>\n<text x=\"" + num(lx + 14) + "\" y=\"" + num(ly) + "\">" + escape(s.name) + "</text>\n";
  }
  return out + "</svg>\n";
}

std::string svg_bar_plot(const std::string& title, const std::string& y_label, const std::vector<Bar>& bars) {
  double lo = 0.0;
  double hi = 0.0;
  for (const auto& b : bars) {
    lo = std::min(lo, b.value - b.error);
    hi = std::max(hi, b.value + b.error);
  }
  if (!(hi > lo)) hi = lo + 1.0;
  const Range yr{lo, hi + 0.05 * (hi - lo)};
  const double x0 = kLeft;
  const double x1 = kWidth - kRight;
  const double y0 = kHeight - kBottom;
  const double y1 = kTop;
  auto py = [&](double v) { return y0 - (y0 - y1) * (v - yr.lo) / (yr.hi - yr.lo); };
  std::string out = header(title) + axes(yr, y_label);
  const double slot = bars.empty() ? 0.0 : (x1 - x0) / static_cast<double>(bars.size());
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const auto& b = bars[i];
    const double cx = x0 + slot * (static_cast<double>(i) + 0.5);
    const double w = slot * 0.6;
    const double top = py(std::max(b.value, 0.0));
    const double base = py(std::min(b.value, 0.0));
    out += "<rect x=\"" + num(cx - w / 2) + "\" y=\"" + num(top) + "\" width=\"" + num(w) + "\" height=\"" +
           num(base - top) + "\" fill=\"" + kPalette[0] + "\"/>\n";
    if (b.error > 0.0) {
      out += "<line x1=\"" + num(cx) + "\" y1=\"" + num(py(b.value - b.error)) + "\" x2=\"" + num(cx) + "\" y2=\"" +
             num(py(b.value + b.error)) + "\" stroke=\"black\"/>\n";
    }
    out += "<text x=\"" + num(cx) + "\" y=\"" + num(y0 + 12) + "\" text-anchor=\"end\" transform=\"rotate(-45 " +
           num(cx) + " " + num(y0 + 12) + ")\">" + escape(b.label) + "</text>\n";
  }
  return out + "</svg>\n";
}

namespace {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name, const fs::path& source) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::runtime_error(source.string() + ": missing column " + name);
    return static_cast<std::size_t>(it - header.begin());
  }
};

// The artifacts read here never quote fields except arm names; the quoted
// form is handled for those.
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

CsvTable read_csv(const fs::path& path) {
  std::istringstream in(io::read_file(path));
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty file");
  t.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto row = split_csv_line(line);
    if (row.size() != t.header.size()) throw std::runtime_error(path.string() + ": ragged row");
    t.rows.push_back(std::move(row));
  }
  return t;
}

double to_double(const std::string& text, const fs::path& source) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(source.string() + ": not a number: " + text);
  }
}

}  // namespace

std::vector<fs::path> emit_report(const fs::path& run_dir) {
  const fs::path metrics_path = run_dir / "eval/metrics.csv";
  const fs::path stages_path = run_dir / "curriculum/stages.jsonl";
  const fs::path fidelity_path = run_dir / "spectrum/fidelity.csv";
  const fs::path ablation_path = run_dir / "ablation/summary.csv";

  std::vector<std::string> missing;
  if (!fs::exists(fidelity_path)) missing.push_back("filter");
  if (!fs::exists(stages_path)) missing.push_back("curriculum-train");
  if (!fs::exists(metrics_path)) missing.push_back("evaluate");
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw ReportError(missing, "cannot build report: missing metrics from stage(s): " + list);
  }

  const auto metrics = read_csv(metrics_path);
  if (metrics.rows.empty()) throw ReportError({"evaluate"}, "cannot build report: eval/metrics.csv has no metrics");
  const auto fidelity = read_csv(fidelity_path);

  std::vector<std::array<std::string, 3>> rows;
  nlohmann::ordered_json json;

  {
    const auto mc = metrics.column("metric", metrics_path);
    const auto vc = metrics.column("value", metrics_path);
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& r : metrics.rows) {
      const double v = to_double(r[vc], metrics_path);
      rows.push_back({"metric", r[mc], io::format_double(v)});
      j[r[mc]] = v;
    }
    json["metrics"] = j;
  }

  PlotSeries fid{"mean fidelity", {}, {}};
  PlotSeries kept_frac{"kept fraction", {}, {}};
  {
    const auto lc = fidelity.column("lambda", fidelity_path);
    const auto fc = fidelity.column("mean_fidelity", fidelity_path);
    const auto kc = fidelity.column("kept", fidelity_path);
    const auto tc = fidelity.column("total", fidelity_path);
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& r : fidelity.rows) {
      const double lambda = to_double(r[lc], fidelity_path);
      const double f = to_double(r[fc], fidelity_path);
      const double total = to_double(r[tc], fidelity_path);
      const double frac = total > 0 ? to_double(r[kc], fidelity_path) / total : 0.0;
      fid.x.push_back(lambda);
      fid.y.push_back(f);
      kept_frac.x.push_back(lambda);
      kept_frac.y.push_back(frac);
      rows.push_back({"fidelity", io::format_double(lambda), io::format_double(f)});
      rows.push_back({"kept_fraction", io::format_double(lambda), io::format_double(frac)});
      j.push_back({{"lambda", lambda}, {"mean_fidelity", f}, {"kept_fraction", frac}});
    }
    json["fidelity"] = j;
  }

  PlotSeries acc{"train accuracy", {}, {}};
  PlotSeries loss{"train loss", {}, {}};
  {
    std::istringstream in(io::read_file(stages_path));
    std::string line;
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      nlohmann::json rec;
      try {
        rec = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(stages_path.string() + ": " + e.what());
      }
      const double epoch = rec.at("epoch").get<double>();
      acc.x.push_back(epoch);
      acc.y.push_back(rec.at("accuracy").get<double>());
      loss.x.push_back(epoch);
      loss.y.push_back(rec.at("loss").get<double>());
      rows.push_back({"stage_accuracy", std::to_string(rec.at("epoch").get<int>()), io::format_double(acc.y.back())});
      j.push_back({{"epoch", rec.at("epoch")}, {"phase", rec.at("phase")}, {"accuracy", rec.at("accuracy")},
                   {"loss", rec.at("loss")}});
    }
    if (acc.x.empty()) throw ReportError({"curriculum-train"}, "cannot build report: no stage records");
    json["stages"] = j;
  }

  std::vector<Bar> bars;
  std::string bar_metric;
  if (fs::exists(ablation_path)) {
    const auto ab = read_csv(ablation_path);
    const auto arm_c = ab.column("arm", ablation_path);
    const auto met_c = ab.column("metric", ablation_path);
    const auto mean_c = ab.column("mean", ablation_path);
    const auto sd_c = ab.column("stddev", ablation_path);
    bool has_few = false;
    for (const auto& r : ab.rows) has_few = has_few || r[met_c] == "accuracy_few";
    bar_metric = has_few ? "accuracy_few" : "macro_f1_ood";
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& r : ab.rows) {
      const double mean = to_double(r[mean_c], ablation_path);
      const double sd = to_double(r[sd_c], ablation_path);
      rows.push_back({"ablation:" + r[arm_c], r[met_c], io::format_double(mean)});
      j.push_back({{"arm", r[arm_c]}, {"metric", r[met_c]}, {"mean", mean}, {"stddev", sd}});
      if (r[met_c] == bar_metric) bars.push_back({r[arm_c], mean, sd});
    }
    json["ablation"] = j;
  }

  std::string csv = std::string(kSummaryCsvHeader) + "\n";
  for (const auto& r : rows) {
    std::string arm = r[0];
    if (arm.find_first_of(",\"") != std::string::npos) {
      std::string q = "\"";
      for (char c : arm) q += c == '"' ? std::string("\"\"") : std::string(1, c);
      arm = q + "\"";
    }
    csv += arm + "," + r[1] + "," + r[2] + "\n";
  }

  std::vector<std::pair<fs::path, std::string>> files;
  files.emplace_back(run_dir / "report/summary.csv", csv);
  files.emplace_back(run_dir / "report/summary.json", json.dump(2) + "\n");
  files.emplace_back(run_dir / "report/accuracy_vs_stage.svg",
                     svg_line_plot("Training accuracy per stage", "epoch", "accuracy", {acc}));
  files.emplace_back(run_dir / "report/fidelity_vs_lambda.svg",
                     svg_line_plot("Spectrum fidelity by guidance level", "lambda", "score", {fid, kept_frac}));
  if (!bars.empty()) {
    files.emplace_back(run_dir / "report/ablation_bars.svg",
                       svg_bar_plot("Ablation arms (mean +- stddev)", bar_metric, bars));
  }
  std::vector<fs::path> written;
  for (const auto& [path, content] : files) {
    io::write_file_atomic(path, content);
    written.push_back(path);
  }
  return written;
}

}  // namespace discl
