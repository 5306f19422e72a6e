#pragma once

// Plot-data emission: CSV for every report kind, plus hand-rolled SVG for the
// sweep (line) and margin (scatter with +/- margin guides) kinds. Output file
// names are fixed per kind and every number is printed with %.17g, so equal
// bundles give byte-identical files.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nusselt/dataset.hpp"
#include "nusselt/pinn.hpp"
#include "nusselt/validation.hpp"

namespace nusselt {

struct IncompleteBundle : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

enum class ReportKind { Benchmark, Sweep, Margin, PcHistogram };

inline std::string_view to_string(ReportKind k) {
  switch (k) {
    case ReportKind::Benchmark: return "benchmark";
    case ReportKind::Sweep: return "sweep";
    case ReportKind::Margin: return "margin";
    case ReportKind::PcHistogram: return "pc-histogram";
  }
  return "?";
}

inline ReportKind report_kind_from_string(std::string_view s) {
  for (auto k : {ReportKind::Benchmark, ReportKind::Sweep, ReportKind::Margin, ReportKind::PcHistogram})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown report kind '" + std::string(s) + "'");
}

struct BenchmarkRow {
  std::string family;
  std::string optimizer;  // how the configuration was chosen ("fixed", "bayes", ...)
  double cv_mape = 0.0;
  std::size_t failed_folds = 0;
};

struct SweepPoint {
  double x = 0.0;
  std::string label;
  double mape = 0.0;
};

struct ReportBundle {
  std::string title;
  std::vector<BenchmarkRow> benchmark;
  std::vector<SweepPoint> sweep;
  std::optional<MarginReport> margin;
  std::optional<PcDistribution> pc;
};

namespace detail {

inline std::string g17(double v) { return format_double(v); }

/// Compact numbers for SVG coordinates (byte-stable, not round-trippable).
inline std::string coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

inline std::string xml_escape(std::string_view s) {
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

struct Frame {
  double x0, x1, y0, y1;
  static constexpr double kW = 640, kH = 480, kPad = 60;
  double px(double x) const { return kPad + (x - x0) / (x1 - x0) * (kW - 2 * kPad); }
  double py(double y) const { return kH - kPad - (y - y0) / (y1 - y0) * (kH - 2 * kPad); }
};

inline Frame padded_frame(double x0, double x1, double y0, double y1) {
  if (!(x1 > x0)) { x0 -= 0.5; x1 += 0.5; }
  if (!(y1 > y0)) { y0 -= 0.5; y1 += 0.5; }
  const double dx = 0.05 * (x1 - x0), dy = 0.05 * (y1 - y0);
  return {x0 - dx, x1 + dx, y0 - dy, y1 + dy};
}

inline void svg_open(std::ostream& os, const Frame& f, std::string_view title, std::string_view xl,
                     std::string_view yl) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" viewBox=\"0 0 640 480\">\n"
     << "<rect width=\"640\" height=\"480\" fill=\"white\"/>\n"
     << "<text x=\"320\" y=\"30\" text-anchor=\"middle\" font-size=\"16\">" << xml_escape(title) << "</text>\n"
     << "<text x=\"320\" y=\"465\" text-anchor=\"middle\" font-size=\"12\">" << xml_escape(xl) << "</text>\n"
     << "<text x=\"15\" y=\"240\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 15 240)\">"
     << xml_escape(yl) << "</text>\n"
     << "<rect x=\"60\" y=\"60\" width=\"520\" height=\"360\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = f.x0 + (f.x1 - f.x0) * i / 4.0, yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
    os << "<text x=\"" << coord(f.px(xv)) << "\" y=\"437\" text-anchor=\"middle\" font-size=\"10\">"
       << coord(xv) << "</text>\n"
       << "<text x=\"55\" y=\"" << coord(f.py(yv) + 3) << "\" text-anchor=\"end\" font-size=\"10\">"
       << coord(yv) << "</text>\n";
  }
}

inline void svg_line(std::ostream& os, const Frame& f, double xa, double ya, double xb, double yb,
                     std::string_view style) {
  os << "<line x1=\"" << coord(f.px(xa)) << "\" y1=\"" << coord(f.py(ya)) << "\" x2=\"" << coord(f.px(xb))
     << "\" y2=\"" << coord(f.py(yb)) << "\" " << style << "/>\n";
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os << content;
}

}  // namespace detail

inline std::string benchmark_csv(const ReportBundle& b) {
  std::ostringstream os;
  os << "family,optimizer,cv_mape,failed_folds\n";
  for (const auto& r : b.benchmark)
    os << r.family << "," << r.optimizer << "," << detail::g17(r.cv_mape) << "," << r.failed_folds << "\n";
  return os.str();
}

inline std::string sweep_csv(const ReportBundle& b) {
  std::ostringstream os;
  os << "x,label,mape\n";
  for (const auto& p : b.sweep) os << detail::g17(p.x) << ",\"" << p.label << "\"," << detail::g17(p.mape) << "\n";
  return os.str();
}

inline std::string sweep_svg(const ReportBundle& b) {
  double y0 = b.sweep.front().mape, y1 = y0, x0 = b.sweep.front().x, x1 = x0;
  for (const auto& p : b.sweep) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.mape);
    y1 = std::max(y1, p.mape);
  }
  const auto f = detail::padded_frame(x0, x1, 0.0, y1);
  std::ostringstream os;
  detail::svg_open(os, f, b.title.empty() ? "MAPE sweep" : b.title, "transferred layers", "CV MAPE");
  os << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < b.sweep.size(); ++i)
    os << (i ? " " : "") << detail::coord(f.px(b.sweep[i].x)) << "," << detail::coord(f.py(b.sweep[i].mape));
  os << "\"/>\n";
  for (const auto& p : b.sweep)
    os << "<circle cx=\"" << detail::coord(f.px(p.x)) << "\" cy=\"" << detail::coord(f.py(p.mape))
       << "\" r=\"4\" fill=\"steelblue\"><title>" << detail::xml_escape(p.label) << "</title></circle>\n";
  os << "</svg>\n";
  return os.str();
}

inline std::string margin_csv(const MarginReport& m) {
  std::ostringstream os;
  os << "actual,predicted,relative_error,within\n";
  for (const auto& p : m.points)
    os << detail::g17(p.actual) << "," << detail::g17(p.predicted) << "," << detail::g17(p.relative_error) << ","
       << (p.within ? 1 : 0) << "\n";
  return os.str();
}

inline std::string margin_svg(const MarginReport& m, std::string_view title) {
  double lo = m.points.front().actual, hi = lo;
  for (const auto& p : m.points) {
    lo = std::min({lo, p.actual, p.predicted});
    hi = std::max({hi, p.actual, p.predicted});
  }
  const auto f = detail::padded_frame(lo, hi, lo, hi);
  std::ostringstream os;
  detail::svg_open(os, f, title.empty() ? "Holdout predictions" : title, "actual Nu", "predicted Nu");
  const double a = f.x0, b = f.x1;
  detail::svg_line(os, f, a, a, b, b, "stroke=\"black\"");
  detail::svg_line(os, f, a, a * (1 + m.margin), b, b * (1 + m.margin), "stroke=\"red\" stroke-dasharray=\"6 4\"");
  detail::svg_line(os, f, a, a * (1 - m.margin), b, b * (1 - m.margin), "stroke=\"red\" stroke-dasharray=\"6 4\"");
  for (const auto& p : m.points)
    os << "<circle cx=\"" << detail::coord(f.px(p.actual)) << "\" cy=\"" << detail::coord(f.py(p.predicted))
       << "\" r=\"3\" fill=\"" << (p.within ? "steelblue" : "darkorange") << "\"/>\n";
  os << "<text x=\"70\" y=\"80\" font-size=\"12\">within " << detail::coord(100.0 * m.margin) << "%: "
     << detail::coord(100.0 * m.fraction_within) << "%</text>\n</svg>\n";
  return os.str();
}

inline std::string pc_histogram_csv(const PcDistribution& d) {
  std::ostringstream os;
  os << "bin_lo,bin_hi,count\n";
  for (const auto& b : d.bins) os << detail::g17(b.lo) << "," << detail::g17(b.hi) << "," << b.count << "\n";
  return os.str();
}

/// Writes the files for `kind` into `dir` and returns their paths.
inline std::vector<std::filesystem::path> emit_report(const ReportBundle& b, ReportKind kind,
                                                      const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> out;
  auto put = [&](const char* name, const std::string& content) {
    out.push_back(dir / name);
    detail::write_file(out.back(), content);
  };
  switch (kind) {
    case ReportKind::Benchmark:
      if (b.benchmark.empty()) throw IncompleteBundle("benchmark report needs at least one family row");
      put("benchmark.csv", benchmark_csv(b));
      break;
    case ReportKind::Sweep:
      if (b.sweep.empty()) throw IncompleteBundle("sweep report needs at least one point");
      put("sweep.csv", sweep_csv(b));
      put("sweep.svg", sweep_svg(b));
      break;
    case ReportKind::Margin:
      if (!b.margin || b.margin->points.empty()) throw IncompleteBundle("margin report needs holdout points");
      put("margin.csv", margin_csv(*b.margin));
      put("margin.svg", margin_svg(*b.margin, b.title));
      break;
    case ReportKind::PcHistogram:
      if (!b.pc) throw IncompleteBundle("pc-histogram report needs a PC distribution");
      put("pc_histogram.csv", pc_histogram_csv(*b.pc));
      break;
  }
  return out;
}

}  // namespace nusselt
