#pragma once

// Contour overlay plots as standalone SVG: the reference contour as a line
// (broken at unvoiced frames), the estimate as one point per frame. The
// frequency axis is logarithmic; estimate frames judged unvoiced sit on a
// baseline strip under the axis so every frame stays visible.

#include "tonet/labels.hpp"

#include <fstream>
#include <string>

namespace tonet {

inline void write_contour_plot(const std::string& path, const PitchContour& est,
                               const PitchContour& ref) {
  const double width = 960.0, height = 540.0;
  const double left = 70.0, right = 20.0, top = 20.0, bottom = 60.0;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;
  const double baseline_h = 18.0;  // unvoiced strip below the axis

  double t_max = 0.0;
  double f_lo = 1e9, f_hi = 0.0;
  auto scan = [&](const PitchContour& c) {
    for (std::size_t i = 0; i < c.frames(); ++i) {
      t_max = std::max(t_max, c.times[i]);
      if (c.voiced(i) && c.freqs[i] > 0.0) {
        f_lo = std::min(f_lo, c.freqs[i]);
        f_hi = std::max(f_hi, c.freqs[i]);
      }
    }
  };
  scan(est);
  scan(ref);
  if (f_hi <= 0.0) {
    f_lo = 65.0;
    f_hi = 1000.0;
  }
  f_lo /= 1.12;
  f_hi *= 1.12;
  if (t_max <= 0.0) t_max = 1.0;

  const double log_lo = std::log2(f_lo), log_hi = std::log2(f_hi);
  auto x_of = [&](double t) { return left + plot_w * t / t_max; };
  auto y_of = [&](double f) {
    return top + plot_h * (1.0 - (std::log2(f) - log_lo) / (log_hi - log_lo));
  };
  const double y_unvoiced = top + plot_h + baseline_h;

  std::ofstream f(path);
  if (!f) throw std::runtime_error("plot: cannot open '" + path + "' for writing");
  char buf[256];
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 960 540\">\n";
  f << "<rect width=\"960\" height=\"540\" fill=\"white\"/>\n";

  // axes
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"black\"/>\n", left,
                top, left, top + plot_h);
  f << buf;
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"black\"/>\n", left,
                top + plot_h, left + plot_w, top + plot_h);
  f << buf;

  // frequency gridlines at octaves of 65 Hz
  for (double fr = 65.0; fr <= f_hi; fr *= 2.0) {
    if (fr < f_lo) continue;
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"#dddddd\"/>"
                  "<text x=\"%.2f\" y=\"%.2f\" font-size=\"12\" text-anchor=\"end\">%.0f Hz</text>\n",
                  left, y_of(fr), left + plot_w, y_of(fr), left - 6.0, y_of(fr) + 4.0, fr);
    f << buf;
  }
  // time ticks
  for (int i = 0; i <= 4; ++i) {
    const double t = t_max * i / 4.0;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.2f\" y=\"%.2f\" font-size=\"12\" text-anchor=\"middle\">%.2f s</text>\n",
                  x_of(t), top + plot_h + 16.0, t);
    f << buf;
  }
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.2f\" y=\"%.2f\" font-size=\"12\">estimate (points), reference (line); "
                "bottom strip = estimate unvoiced</text>\n",
                left, height - 12.0);
  f << buf;

  // reference polyline, split at unvoiced frames
  bool open = false;
  for (std::size_t i = 0; i < ref.frames(); ++i) {
    const bool v = ref.voiced(i) && ref.freqs[i] > 0.0;
    if (v && !open) {
      f << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
      open = true;
    }
    if (v) {
      std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", x_of(ref.times[i]), y_of(ref.freqs[i]));
      f << buf;
    } else if (open) {
      f << "\"/>\n";
      open = false;
    }
  }
  if (open) f << "\"/>\n";

  // one estimate point per frame
  for (std::size_t i = 0; i < est.frames(); ++i) {
    const bool v = est.voiced(i) && est.freqs[i] > 0.0;
    const double y = v ? y_of(est.freqs[i]) : y_unvoiced;
    std::snprintf(buf, sizeof(buf),
                  "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"1.6\" fill=\"#d62728\" fill-opacity=\"0.7\"/>\n",
                  x_of(est.times[i]), y);
    f << buf;
  }
  f << "</svg>\n";
  if (!f) throw std::runtime_error("plot: write failed for '" + path + "'");
}

}  // namespace tonet
