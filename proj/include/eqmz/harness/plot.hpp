#pragma once

// CSV reading and deterministic SVG rendering of metrics logs (line chart)
// and evaluation reports (bars grouped by variant, one bar per setting).
// Coordinates are printed with fixed precision so identical inputs give
// identical bytes.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace eqmz::harness {

class CsvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> line_numbers;  // source line of each row

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }

  double number(std::size_t row, int col, const std::string& origin) const {
    const std::string& s = rows[row][static_cast<std::size_t>(col)];
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
      throw CsvError(origin + ":" + std::to_string(line_numbers[row]) + ": column '" + header[static_cast<std::size_t>(col)] +
                     "' is not a number: '" + s + "'");
    return v;
  }
};

/// Plain comma-separated values without quoting. Every row must have as
/// many fields as the header.
inline CsvTable parse_csv(const std::string& text, const std::string& origin = "<csv>") {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
      const auto comma = s.find(',', start);
      out.push_back(s.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return out;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size())
      throw CsvError(origin + ":" + std::to_string(line_no) + ": expected " + std::to_string(t.header.size()) +
                     " fields, found " + std::to_string(fields.size()));
    t.rows.push_back(std::move(fields));
    t.line_numbers.push_back(line_no);
  }
  if (t.header.empty()) throw CsvError(origin + ":1: missing header");
  return t;
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CsvError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), path);
}

namespace svg {

inline constexpr int kWidth = 640;
inline constexpr int kHeight = 400;
inline constexpr int kLeft = 70;
inline constexpr int kRight = 150;
inline constexpr int kTop = 40;
inline constexpr int kBottom = 50;

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
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

inline const char* colour(std::size_t i) {
  static constexpr const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};
  return palette[i % 6];
}

struct Range {
  double lo = 0.0;
  double hi = 1.0;
};

/// Range widened to include zero and padded when degenerate.
inline Range range_of(const std::vector<double>& xs) {
  Range r{0.0, 0.0};
  for (double x : xs) {
    r.lo = std::min(r.lo, x);
    r.hi = std::max(r.hi, x);
  }
  if (r.hi - r.lo < 1e-12) r.hi = r.lo + 1.0;
  return r;
}

class Canvas {
 public:
  explicit Canvas(const std::string& title) {
    out_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
         << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
    out_ << "<rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n";
    text(kWidth / 2.0, 22, escape(title), "middle", 15);
  }

  void line(double x1, double y1, double x2, double y2, const std::string& stroke, double width = 1.0) {
    out_ << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2) << "\" y2=\"" << num(y2)
         << "\" stroke=\"" << stroke << "\" stroke-width=\"" << num(width) << "\"/>\n";
  }

  void rect(double x, double y, double w, double h, const std::string& fill) {
    out_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w) << "\" height=\"" << num(h)
         << "\" fill=\"" << fill << "\"/>\n";
  }

  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke) {
    out_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) out_ << (i ? " " : "") << num(pts[i].first) << ',' << num(pts[i].second);
    out_ << "\"/>\n";
  }

  void text(double x, double y, const std::string& s, const char* anchor = "start", int size = 11) {
    out_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-family=\"sans-serif\" font-size=\"" << size
         << "\" text-anchor=\"" << anchor << "\">" << s << "</text>\n";
  }

  /// Axes with five labelled ticks on y.
  void axes(Range y, const std::string& xlabel, const std::string& ylabel) {
    const double x0 = kLeft;
    const double x1 = kWidth - kRight;
    const double y0 = kHeight - kBottom;
    const double y1 = kTop;
    line(x0, y0, x1, y0, "black");
    line(x0, y0, x0, y1, "black");
    for (int i = 0; i <= 4; ++i) {
      const double v = y.lo + (y.hi - y.lo) * i / 4.0;
      const double py = y0 - (y0 - y1) * i / 4.0;
      line(x0 - 4, py, x0, py, "black");
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.3g", v);
      text(x0 - 6, py + 4, buf, "end", 10);
    }
    text((x0 + x1) / 2.0, kHeight - 12, escape(xlabel), "middle");
    text(16, (y0 + y1) / 2.0, escape(ylabel), "middle");
  }

  std::string finish() {
    out_ << "</svg>\n";
    return out_.str();
  }

 private:
  std::ostringstream out_;
};

}  // namespace svg

/// Loss terms and self-play return against step. An empty log gives bare axes.
inline std::string plot_metrics(const CsvTable& t, const std::string& origin = "<metrics>") {
  const char* series[] = {"loss_total", "loss_p", "loss_v", "loss_r", "selfplay_return"};
  const int step_col = t.column("step");
  if (step_col < 0) throw CsvError(origin + ":1: metrics log lacks a 'step' column");
  std::vector<double> steps;
  std::vector<std::vector<double>> ys;
  std::vector<std::string> names;
  for (std::size_t r = 0; r < t.rows.size(); ++r) steps.push_back(t.number(r, step_col, origin));
  std::vector<double> all;
  for (const char* s : series) {
    const int col = t.column(s);
    if (col < 0) throw CsvError(origin + ":1: metrics log lacks a '" + std::string(s) + "' column");
    std::vector<double> y;
    for (std::size_t r = 0; r < t.rows.size(); ++r) y.push_back(t.number(r, col, origin));
    all.insert(all.end(), y.begin(), y.end());
    ys.push_back(std::move(y));
    names.emplace_back(s);
  }
  const svg::Range yr = svg::range_of(all);
  svg::Range xr = svg::range_of(steps);
  svg::Canvas c("training metrics");
  c.axes(yr, "step", "value");
  const double x0 = svg::kLeft;
  const double x1 = svg::kWidth - svg::kRight;
  const double y0 = svg::kHeight - svg::kBottom;
  const double y1 = svg::kTop;
  for (std::size_t s = 0; s < ys.size(); ++s) {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < steps.size(); ++i)
      pts.emplace_back(x0 + (steps[i] - xr.lo) / (xr.hi - xr.lo) * (x1 - x0),
                       y0 - (ys[s][i] - yr.lo) / (yr.hi - yr.lo) * (y0 - y1));
    if (!pts.empty()) c.polyline(pts, svg::colour(s));
    c.rect(x1 + 12, y1 + 18.0 * s, 10, 10, svg::colour(s));
    c.text(x1 + 27, y1 + 18.0 * s + 9, names[s]);
  }
  return c.finish();
}

/// Mean return bars with one-standard-deviation whiskers, grouped by variant.
inline std::string plot_report(const CsvTable& t, const std::string& origin = "<report>") {
  const int vcol = t.column("variant");
  const int scol = t.column("setting");
  const int mcol = t.column("mean_return");
  const int dcol = t.column("std_return");
  if (vcol < 0 || scol < 0 || mcol < 0 || dcol < 0)
    throw CsvError(origin + ":1: report needs variant, setting, mean_return and std_return columns");
  std::vector<std::string> variants;
  const std::vector<std::string> settings{"same", "rotated", "different"};
  std::map<std::pair<std::string, std::string>, std::pair<double, double>> cells;
  std::vector<double> extent;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string& v = t.rows[r][static_cast<std::size_t>(vcol)];
    const std::string& s = t.rows[r][static_cast<std::size_t>(scol)];
    if (std::find(settings.begin(), settings.end(), s) == settings.end())
      throw CsvError(origin + ":" + std::to_string(t.line_numbers[r]) + ": unknown setting '" + s + "'");
    if (std::find(variants.begin(), variants.end(), v) == variants.end()) variants.push_back(v);
    const double mean = t.number(r, mcol, origin);
    const double sd = t.number(r, dcol, origin);
    cells[{v, s}] = {mean, sd};
    extent.push_back(mean + sd);
    extent.push_back(mean - sd);
  }
  const svg::Range yr = svg::range_of(extent);
  svg::Canvas c("evaluation return by setting");
  c.axes(yr, "variant", "mean return");
  const double x0 = svg::kLeft;
  const double x1 = svg::kWidth - svg::kRight;
  const double y0 = svg::kHeight - svg::kBottom;
  const double y1 = svg::kTop;
  auto py = [&](double v) { return y0 - (v - yr.lo) / (yr.hi - yr.lo) * (y0 - y1); };
  const double group = variants.empty() ? 0.0 : (x1 - x0) / static_cast<double>(variants.size());
  const double bar = group / 4.0;
  for (std::size_t vi = 0; vi < variants.size(); ++vi) {
    const double gx = x0 + group * static_cast<double>(vi) + bar / 2.0;
    for (std::size_t si = 0; si < settings.size(); ++si) {
      auto it = cells.find({variants[vi], settings[si]});
      if (it == cells.end()) continue;
      const auto [mean, sd] = it->second;
      const double bx = gx + bar * static_cast<double>(si);
      const double top = std::min(py(mean), py(0.0));
      c.rect(bx, top, bar * 0.9, std::abs(py(mean) - py(0.0)), svg::colour(si));
      const double cx = bx + bar * 0.45;
      c.line(cx, py(mean - sd), cx, py(mean + sd), "black");
    }
    c.text(gx + bar * 1.5, y0 + 16, svg::escape(variants[vi]), "middle", 10);
  }
  for (std::size_t si = 0; si < settings.size(); ++si) {
    c.rect(x1 + 12, y1 + 18.0 * si, 10, 10, svg::colour(si));
    c.text(x1 + 27, y1 + 18.0 * si + 9, settings[si]);
  }
  return c.finish();
}

/// Picks the chart from the header: metrics logs have a 'step' column,
/// evaluation reports a 'setting' column.
inline std::string plot_csv(const CsvTable& t, const std::string& origin) {
  if (t.column("step") >= 0) return plot_metrics(t, origin);
  if (t.column("setting") >= 0 && t.column("mean_return") >= 0) return plot_report(t, origin);
  throw CsvError(origin + ":1: not a metrics log or evaluation report");
}

}  // namespace eqmz::harness
