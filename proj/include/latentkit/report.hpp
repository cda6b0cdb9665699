#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "latentkit/error.hpp"
#include "latentkit/linalg.hpp"

// SVG line charts for distance sequences.
namespace latentkit::report {

inline std::string fixed(double v, int digits = 2) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
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

// One polyline over the values, a dashed threshold line and a circle marker
// per flagged index.
inline std::string sequence_svg(std::span<const double> values, double threshold,
                                const std::vector<std::size_t>& flagged, const std::string& title) {
  constexpr double kW = 640, kH = 360, kLeft = 60, kRight = 20, kTop = 40, kBottom = 40;
  double ymax = threshold;
  for (double v : values) ymax = std::max(ymax, v);
  if (!(ymax > 0.0)) ymax = 1.0;
  ymax *= 1.1;
  const double xspan = values.size() > 1 ? static_cast<double>(values.size() - 1) : 1.0;
  auto px = [&](double i) { return kLeft + i / xspan * (kW - kLeft - kRight); };
  auto py = [&](double v) { return kH - kBottom - v / ymax * (kH - kTop - kBottom); };

  std::string s;
  s += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"360\" viewBox=\"0 0 640 360\">\n";
  s += "  <rect x=\"0\" y=\"0\" width=\"640\" height=\"360\" fill=\"white\"/>\n";
  s += "  <text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" +
       xml_escape(title) + "</text>\n";
  s += "  <line x1=\"" + fixed(kLeft) + "\" y1=\"" + fixed(kH - kBottom) + "\" x2=\"" + fixed(kW - kRight) +
       "\" y2=\"" + fixed(kH - kBottom) + "\" stroke=\"black\"/>\n";
  s += "  <line x1=\"" + fixed(kLeft) + "\" y1=\"" + fixed(kTop) + "\" x2=\"" + fixed(kLeft) + "\" y2=\"" +
       fixed(kH - kBottom) + "\" stroke=\"black\"/>\n";
  s += "  <text x=\"" + fixed(kLeft - 6) + "\" y=\"" + fixed(kTop + 4) +
       "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" + fixed(ymax, 4) + "</text>\n";
  s += "  <text x=\"" + fixed(kLeft - 6) + "\" y=\"" + fixed(kH - kBottom + 4) +
       "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">0</text>\n";
  for (std::size_t i = 0; i < values.size(); ++i)
    s += "  <text x=\"" + fixed(px(static_cast<double>(i))) + "\" y=\"" + fixed(kH - kBottom + 16) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" + std::to_string(i) +
         "</text>\n";
  s += "  <polyline class=\"distance\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) s += " ";
    s += fixed(px(static_cast<double>(i))) + "," + fixed(py(values[i]));
  }
  s += "\"/>\n";
  s += "  <line class=\"threshold\" x1=\"" + fixed(kLeft) + "\" y1=\"" + fixed(py(threshold)) + "\" x2=\"" +
       fixed(kW - kRight) + "\" y2=\"" + fixed(py(threshold)) +
       "\" stroke=\"red\" stroke-dasharray=\"6,4\"/>\n";
  for (std::size_t i : flagged)
    s += "  <circle class=\"flagged\" cx=\"" + fixed(px(static_cast<double>(i))) + "\" cy=\"" +
         fixed(py(values[i])) + "\" r=\"5\" fill=\"red\"/>\n";
  s += "</svg>\n";
  return s;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

}  // namespace latentkit::report
