#pragma once

// File exports: prediction tables, KM curves, attention maps, attribution
// reports and two small SVG renderers.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "survfuse/csv.hpp"
#include "survfuse/error.hpp"
#include "survfuse/interpret.hpp"
#include "survfuse/stats.hpp"

namespace survfuse::report {

using Json = nlohmann::ordered_json;

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path + ": cannot open for writing");
  out << text;
}

inline void write_json(const std::string& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

// patient_id,fold,risk,t_cont,censored
inline void write_predictions(const std::string& path, const stats::RiskTable& table, const std::vector<int>& folds) {
  if (folds.size() != table.size()) throw DimensionError("one fold index per prediction row required");
  csv::Writer w(path);
  w.row("patient_id", "fold", "risk", "t_cont", "censored");
  for (std::size_t i = 0; i < table.size(); ++i)
    w.row(table[i].patient_id, folds[i], table[i].risk, table[i].time, table[i].censored ? 1 : 0);
}

// Reads any CSV with patient_id,risk,t_cont,censored columns.
inline stats::RiskTable read_predictions(const std::string& path) {
  const csv::Table t = csv::read(path);
  const std::size_t id = t.column("patient_id"), risk = t.column("risk"), time = t.column("t_cont"),
                    cens = t.column("censored");
  stats::RiskTable out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto c = csv::parse_int(t.rows[r][cens], t.where(r));
    if (c != 0 && c != 1) throw DataError(t.where(r) + ": censored must be 0 or 1");
    out.push_back({t.rows[r][id], csv::parse_double(t.rows[r][risk], t.where(r)),
                   csv::parse_double(t.rows[r][time], t.where(r)), c == 1});
  }
  return out;
}

inline void write_loss_trace(const std::string& path, const std::vector<double>& losses) {
  csv::Writer w(path);
  w.row("epoch", "loss");
  for (std::size_t e = 0; e < losses.size(); ++e) w.row(e + 1, losses[e]);
}

struct NamedCurve {
  std::string label;
  stats::KmCurve curve;
};

// group,time,survival,at_risk,events
inline void write_km(const std::string& path, const std::vector<NamedCurve>& curves) {
  csv::Writer w(path);
  w.row("group", "time", "survival", "at_risk", "events");
  for (const auto& c : curves)
    for (std::size_t i = 0; i < c.curve.times.size(); ++i)
      w.row(c.label, c.curve.times[i], c.curve.survival[i], c.curve.at_risk[i], c.curve.events[i]);
}

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};

}  // namespace detail

// Step plot of one or more KM curves.
inline std::string km_svg(const std::vector<NamedCurve>& curves, const std::string& title) {
  const double W = 480, H = 320, L = 50, R = 20, T = 30, B = 40;
  double tmax = 0.0;
  for (const auto& c : curves)
    if (!c.curve.times.empty()) tmax = std::max(tmax, c.curve.times.back());
  if (tmax <= 0) tmax = 1.0;
  auto px = [&](double t) { return L + (W - L - R) * t / tmax; };
  auto py = [&](double s) { return T + (H - T - B) * (1.0 - s); };
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  o << "<text x=\"" << L << "\" y=\"18\" font-size=\"13\">" << title << "</text>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << py(0) << "\" x2=\"" << W - R << "\" y2=\"" << py(0) << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << py(0) << "\" x2=\"" << L << "\" y2=\"" << py(1) << "\" stroke=\"black\"/>\n";
  o << "<text x=\"" << (W / 2) << "\" y=\"" << H - 8 << "\" font-size=\"11\">time (months), max " << detail::fmt(tmax)
    << "</text>\n";
  for (std::size_t k = 0; k < curves.size(); ++k) {
    const auto& c = curves[k].curve;
    std::string pts = detail::fmt(px(0)) + "," + detail::fmt(py(1));
    double s = 1.0;
    for (std::size_t i = 0; i < c.times.size(); ++i) {
      pts += " " + detail::fmt(px(c.times[i])) + "," + detail::fmt(py(s));
      s = c.survival[i];
      pts += " " + detail::fmt(px(c.times[i])) + "," + detail::fmt(py(s));
    }
    const char* color = detail::kPalette[k % 4];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"" << pts << "\"/>\n";
    o << "<text x=\"" << W - R - 90 << "\" y=\"" << T + 14 * (k + 1) << "\" font-size=\"11\" fill=\"" << color << "\">"
      << curves[k].label << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

// patch_id,x,y,raw,percentile
inline void write_attention(const std::string& path, const interp::AttentionMap& map) {
  csv::Writer w(path);
  w.row("patch_id", "x", "y", "raw", "percentile");
  for (std::size_t i = 0; i < map.size(); ++i) w.row(map.patch_ids[i], map.x[i], map.y[i], map.raw[i], map.percentile[i]);
}

// Patches as squares shaded by percentile attention (white = low, red = high).
inline std::string attention_svg(const interp::AttentionMap& map, const std::vector<std::string>& slide_of) {
  std::vector<std::string> slides = slide_of;
  std::sort(slides.begin(), slides.end());
  slides.erase(std::unique(slides.begin(), slides.end()), slides.end());
  double xmax = 0, ymax = 0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    xmax = std::max(xmax, map.x[i]);
    ymax = std::max(ymax, map.y[i]);
  }
  const double cell = 24, gap = 30;
  const double pitch = 256;  // patch grid step in slide coordinates
  const double slide_w = (xmax / pitch + 1) * cell;
  const double W = slides.size() * (slide_w + gap) + gap, H = (ymax / pitch + 1) * cell + 2 * gap;
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  for (std::size_t i = 0; i < map.size(); ++i) {
    const auto s = static_cast<double>(std::lower_bound(slides.begin(), slides.end(), slide_of[i]) - slides.begin());
    const double x0 = gap + s * (slide_w + gap) + map.x[i] / pitch * cell;
    const double y0 = gap + map.y[i] / pitch * cell;
    const int shade = static_cast<int>(255.0 * (1.0 - map.percentile[i]));
    o << "<rect x=\"" << detail::fmt(x0) << "\" y=\"" << detail::fmt(y0) << "\" width=\"" << cell - 2 << "\" height=\""
      << cell - 2 << "\" fill=\"rgb(255," << shade << "," << shade << ")\" stroke=\"#888\"><title>patch "
      << map.patch_ids[i] << " raw " << map.raw[i] << "</title></rect>\n";
  }
  for (std::size_t s = 0; s < slides.size(); ++s) {
    o << "<text x=\"" << detail::fmt(gap + s * (slide_w + gap)) << "\" y=\"" << gap - 8 << "\" font-size=\"11\">"
      << slides[s] << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

// [{feature, value, ig, direction}] plus the completeness diagnostics.
inline Json attribution_json(const interp::AttributionReport& r) {
  Json features = Json::array();
  for (std::size_t i = 0; i < r.ig.size(); ++i) {
    features.push_back(Json{{"feature", r.features[i]},
                            {"value", r.values[i]},
                            {"ig", r.ig[i]},
                            {"direction", r.ig[i] > 0 ? "risk_up" : (r.ig[i] < 0 ? "risk_down" : "none")}});
  }
  return Json{{"output", r.output},
              {"baseline_output", r.baseline_output},
              {"completeness_gap", r.completeness_gap},
              {"relative_gap", r.relative_gap()},
              {"path_segments", r.segments},
              {"features", std::move(features)}};
}

}  // namespace survfuse::report
