#pragma once

// Mapping between Hz contours, frequency bins, pitch-class/octave labels and
// one-hot training targets.
//
// Conventions used throughout:
//   - 0 Hz marks an unvoiced frame.
//   - Y_final has F+1 rows; row 0 is the non-melody row, row b+1 is pitch
//     bin b with center 32.5 * 2^(b/60) Hz.
//   - Pitch classes follow 12-TET anchored at A4 = 440 Hz with C = 0; the
//     non-melody tone label is 12, the non-melody octave label is 6.
//   - Octave index = scientific octave number - 1, so octaves 1..6 map to
//     indices 0..5.

#include "tonet/tensor.hpp"

#include <fstream>
#include <optional>
#include <string>

namespace tonet {

inline constexpr std::size_t kNumBins = 360;
inline constexpr std::size_t kBinsPerOctave = 60;
inline constexpr double kBinFMin = 32.5;
inline constexpr std::size_t kToneClasses = 13;   // 12 pitch classes + non-melody
inline constexpr std::size_t kOctaveClasses = 7;  // octaves 1..6 + non-melody
inline constexpr int kNonMelodyTone = 12;
inline constexpr int kNonMelodyOctave = 6;
inline constexpr double kFrameSeconds = 0.01;

struct PitchContour {
  std::vector<double> times;  // seconds
  std::vector<double> freqs;  // Hz, 0 = unvoiced
  // Voicing decisions, carried separately so a resampled contour can keep a
  // defined pitch on frames its source declared unvoiced. Empty means
  // "voiced wherever freq > 0".
  std::vector<bool> voicing;

  std::size_t frames() const { return times.size(); }

  bool voiced(std::size_t i) const { return voicing.empty() ? freqs[i] > 0.0 : bool(voicing[i]); }
};

struct LabelMaps {
  Tensor y_final;   // (F+1, T)
  Tensor y_tone;    // (13, T)
  Tensor y_octave;  // (7, T)
};

struct ToneOctave {
  int tone;    // 0..11, or 12 for non-melody
  int octave;  // 0..5, or 6 for non-melody
};

inline double bin_center_hz(std::size_t bin) {
  return kBinFMin * std::pow(2.0, static_cast<double>(bin) / kBinsPerOctave);
}

// Voiced frequencies quantize to round(60 * log2(f / 32.5)), clamped to the
// 360-bin range. Returns nullopt for unvoiced (f == 0).
inline std::optional<std::size_t> hz_to_bin(double f) {
  if (f < 0.0) throw std::invalid_argument("hz_to_bin: negative frequency " + std::to_string(f));
  if (f == 0.0) return std::nullopt;
  const double b = kBinsPerOctave * std::log2(f / kBinFMin);
  const long rounded = std::lrint(std::floor(b + 0.5));  // round half up
  const long clamped = std::min<long>(static_cast<long>(kNumBins) - 1, std::max<long>(0, rounded));
  return static_cast<std::size_t>(clamped);
}

inline ToneOctave hz_to_tone_octave(double f) {
  if (f < 0.0)
    throw std::invalid_argument("hz_to_tone_octave: negative frequency " + std::to_string(f));
  if (f == 0.0) return {kNonMelodyTone, kNonMelodyOctave};
  const double midi_exact = 69.0 + 12.0 * std::log2(f / 440.0);
  const long midi = std::lrint(std::floor(midi_exact + 0.5));
  const long octave_number = midi / 12 - 1;  // midi >= 0 in the accepted range
  if (octave_number < 1 || octave_number > 6)
    throw std::invalid_argument("hz_to_tone_octave: " + std::to_string(f) +
                                " Hz falls in octave " + std::to_string(octave_number) +
                                ", outside the supported C1-B6 range");
  return {static_cast<int>(midi % 12), static_cast<int>(octave_number - 1)};
}

// One-hot targets for the first `frames` entries of a 10 ms contour.
inline LabelMaps contour_to_label_maps(const PitchContour& contour, std::size_t frames) {
  if (contour.frames() < frames)
    throw std::invalid_argument("contour_to_label_maps: contour has " +
                                std::to_string(contour.frames()) + " frames, need " +
                                std::to_string(frames));
  for (std::size_t i = 1; i < frames; ++i) {
    const double dt = contour.times[i] - contour.times[i - 1];
    if (std::abs(dt - kFrameSeconds) > 1e-4)
      throw std::invalid_argument("contour_to_label_maps: frame " + std::to_string(i) +
                                  " is off the 10 ms grid (dt = " + std::to_string(dt) + " s)");
  }
  LabelMaps maps;
  maps.y_final = Tensor(Shape{kNumBins + 1, frames});
  maps.y_tone = Tensor(Shape{kToneClasses, frames});
  maps.y_octave = Tensor(Shape{kOctaveClasses, frames});
  for (std::size_t t = 0; t < frames; ++t) {
    const double f = contour.voiced(t) ? contour.freqs[t] : 0.0;
    const auto bin = hz_to_bin(f);
    const auto to = hz_to_tone_octave(f);
    maps.y_final.at(bin ? *bin + 1 : 0, t) = 1.0;
    maps.y_tone.at(static_cast<std::size_t>(to.tone), t) = 1.0;
    maps.y_octave.at(static_cast<std::size_t>(to.octave), t) = 1.0;
  }
  return maps;
}

// Decodes a salience map (F+1, T) by per-frame argmax; ties break toward the
// lowest row, so the non-melody row wins a uniform map.
inline PitchContour salience_to_contour(const Tensor& final_map) {
  if (final_map.rank() != 2 || final_map.shape[0] != kNumBins + 1)
    throw std::invalid_argument("salience_to_contour: expected a (" +
                                std::to_string(kNumBins + 1) + ", T) map, got " +
                                shape_str(final_map.shape));
  const std::size_t t_frames = final_map.shape[1];
  PitchContour out;
  out.times.resize(t_frames);
  out.freqs.resize(t_frames);
  for (std::size_t t = 0; t < t_frames; ++t) {
    std::size_t best_row = 0;
    double best = final_map.at(0, t);
    for (std::size_t r = 1; r <= kNumBins; ++r) {
      if (final_map.at(r, t) > best) {
        best = final_map.at(r, t);
        best_row = r;
      }
    }
    out.times[t] = static_cast<double>(t) * kFrameSeconds;
    out.freqs[t] = best_row == 0 ? 0.0 : bin_center_hz(best_row - 1);
  }
  return out;
}

// ---------------------------------------------------------------------------
// label CSV: `time_seconds,frequency_hz` per line, no header, 0.0 = unvoiced
// ---------------------------------------------------------------------------

inline void write_contour_csv(const std::string& path, const PitchContour& contour) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("contour csv: cannot open '" + path + "' for writing");
  char line[64];
  for (std::size_t i = 0; i < contour.frames(); ++i) {
    const double freq = contour.voiced(i) ? contour.freqs[i] : 0.0;
    std::snprintf(line, sizeof(line), "%.6f,%.6f\n", contour.times[i], freq);
    f << line;
  }
  if (!f) throw std::runtime_error("contour csv: write failed for '" + path + "'");
}

inline PitchContour read_contour_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("contour csv: cannot open '" + path + "'");
  PitchContour c;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw std::runtime_error("contour csv: '" + path + "' line " + std::to_string(line_no) +
                               " has no comma");
    try {
      c.times.push_back(std::stod(line.substr(0, comma)));
      c.freqs.push_back(std::stod(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw std::runtime_error("contour csv: '" + path + "' line " + std::to_string(line_no) +
                               " is not numeric");
    }
  }
  if (c.times.empty())
    throw std::runtime_error("contour csv: '" + path + "' contains no frames");
  return c;
}

}  // namespace tonet
