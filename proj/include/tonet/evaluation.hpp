#pragma once

// Frame-level melody metrics: voicing recall (VR), voicing false alarm (VFA),
// raw pitch accuracy (RPA), raw chroma accuracy (RCA), raw octave accuracy
// (ROA) and overall accuracy (OA).
//
// Both contours must live on a common time grid; resample_contour() puts an
// estimate onto a reference grid first. Estimated pitch stays defined on
// frames the estimator declared unvoiced (last voiced pitch is carried
// forward), so RPA/RCA/ROA can ignore voicing mistakes the way the
// conventional melody evaluators do.

#include "tonet/labels.hpp"

#include <cmath>

namespace tonet {

struct EvalResult {
  double vr = 0.0;
  double vfa = 0.0;
  double rpa = 0.0;
  double rca = 0.0;
  double roa = 0.0;
  double oa = 0.0;
  std::size_t ref_voiced = 0;
  std::size_t ref_unvoiced = 0;
  std::size_t total = 0;
  // set when a denominator was empty and the metric defaulted to 0
  bool vr_undefined = false;
  bool vfa_undefined = false;
};

inline double cents_between(double est_hz, double ref_hz) {
  return 1200.0 * std::log2(est_hz / ref_hz);
}

// Octave index by 12-TET semitone quantization: floor(midi / 12) - 1.
// Total over f > 0; evaluation does not restrict the octave range.
inline long octave_index_of(double f) {
  const double midi_exact = 69.0 + 12.0 * std::log2(f / 440.0);
  const long midi = std::lrint(std::floor(midi_exact + 0.5));
  return static_cast<long>(std::floor(static_cast<double>(midi) / 12.0)) - 1;
}

// Nearest-neighbor resample of `est` onto `ref_times`. Pitch is carried
// through unvoiced stretches: each frame keeps the last voiced pitch
// (leading frames take the first voiced pitch; an entirely unvoiced estimate
// yields 0 everywhere). Voicing decisions are carried alongside.
inline PitchContour resample_contour(const PitchContour& est, const std::vector<double>& ref_times) {
  if (est.frames() == 0)
    throw std::invalid_argument("resample_contour: estimate contour is empty");

  // frozen pitch track
  std::vector<double> pitch(est.frames(), 0.0);
  double first_voiced = 0.0;
  for (std::size_t i = 0; i < est.frames(); ++i)
    if (est.voiced(i)) {
      first_voiced = est.freqs[i];
      break;
    }
  double last = first_voiced;
  for (std::size_t i = 0; i < est.frames(); ++i) {
    if (est.voiced(i)) last = est.freqs[i];
    pitch[i] = last;
  }

  PitchContour out;
  out.times = ref_times;
  out.freqs.resize(ref_times.size());
  out.voicing.resize(ref_times.size());
  std::size_t j = 0;
  for (std::size_t i = 0; i < ref_times.size(); ++i) {
    const double t = ref_times[i];
    while (j + 1 < est.frames() &&
           std::abs(est.times[j + 1] - t) < std::abs(est.times[j] - t))
      ++j;
    // ties resolve to the earlier frame because advancement requires strictly closer
    out.freqs[i] = pitch[j];
    out.voicing[i] = est.voiced(j);
  }
  return out;
}

namespace eval_detail {

inline void require_common_grid(const PitchContour& est, const PitchContour& ref) {
  if (est.frames() != ref.frames())
    throw std::invalid_argument("evaluate: contours have " + std::to_string(est.frames()) +
                                " vs " + std::to_string(ref.frames()) + " frames");
  for (std::size_t i = 0; i < ref.frames(); ++i)
    if (std::abs(est.times[i] - ref.times[i]) > 1e-6)
      throw std::invalid_argument("evaluate: time grids differ at frame " + std::to_string(i) +
                                  "; resample the estimate onto the reference grid first");
}

}  // namespace eval_detail

// Raw octave accuracy over reference-voiced frames: the estimated pitch (used
// regardless of the estimate's voicing decision) must quantize to the
// reference octave index. Unvoiced reference frames are excluded.
inline double roa(const PitchContour& est, const PitchContour& ref) {
  eval_detail::require_common_grid(est, ref);
  std::size_t voiced = 0, correct = 0;
  for (std::size_t i = 0; i < ref.frames(); ++i) {
    if (!ref.voiced(i)) continue;
    ++voiced;
    if (est.freqs[i] > 0.0 && octave_index_of(est.freqs[i]) == octave_index_of(ref.freqs[i]))
      ++correct;
  }
  return voiced == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(voiced);
}

inline EvalResult evaluate_pair(const PitchContour& est, const PitchContour& ref,
                                double tolerance_cents = 50.0) {
  eval_detail::require_common_grid(est, ref);
  EvalResult r;
  r.total = ref.frames();
  std::size_t vr_hit = 0, vfa_hit = 0, rpa_hit = 0, rca_hit = 0, roa_hit = 0, oa_hit = 0;
  for (std::size_t i = 0; i < ref.frames(); ++i) {
    const bool rv = ref.voiced(i);
    const bool ev = est.voiced(i);
    if (rv) {
      ++r.ref_voiced;
      if (ev) ++vr_hit;
      bool pitch_ok = false, chroma_ok = false, octave_ok = false;
      if (est.freqs[i] > 0.0) {
        const double cents = cents_between(est.freqs[i], ref.freqs[i]);
        pitch_ok = std::abs(cents) <= tolerance_cents;
        double folded = std::fmod(cents, 1200.0);
        if (folded > 600.0) folded -= 1200.0;
        if (folded <= -600.0) folded += 1200.0;
        chroma_ok = std::abs(folded) <= tolerance_cents;
        octave_ok = octave_index_of(est.freqs[i]) == octave_index_of(ref.freqs[i]);
      }
      if (pitch_ok) ++rpa_hit;
      if (chroma_ok) ++rca_hit;
      if (octave_ok) ++roa_hit;
      if (pitch_ok && ev) ++oa_hit;
    } else {
      ++r.ref_unvoiced;
      if (ev) ++vfa_hit;
      if (!ev) ++oa_hit;
    }
  }
  if (r.ref_voiced > 0) {
    r.vr = static_cast<double>(vr_hit) / r.ref_voiced;
    r.rpa = static_cast<double>(rpa_hit) / r.ref_voiced;
    r.rca = static_cast<double>(rca_hit) / r.ref_voiced;
    r.roa = static_cast<double>(roa_hit) / r.ref_voiced;
  } else {
    r.vr_undefined = true;
  }
  if (r.ref_unvoiced > 0) {
    r.vfa = static_cast<double>(vfa_hit) / r.ref_unvoiced;
  } else {
    r.vfa_undefined = true;
  }
  if (r.total > 0) r.oa = static_cast<double>(oa_hit) / r.total;
  return r;
}

}  // namespace tonet
