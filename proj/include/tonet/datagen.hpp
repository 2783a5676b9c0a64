#pragma once

// Synthetic singing-like clips with exact F0 ground truth.
//
// A clip is a sequence of note events (semitone-quantized pitch, optional
// vibrato) rendered by additive synthesis with phase-continuous partials,
// mixed over a sustained triad pad and pink noise. The contour written next
// to the audio samples the instantaneous F0, vibrato included, on the 10 ms
// frame grid, so every training target is exact by construction.

#include "tonet/labels.hpp"
#include "tonet/training.hpp"
#include "tonet/wav.hpp"

#include <filesystem>
#include <random>

namespace tonet {

struct SynthSpec {
  std::uint64_t seed = 1;
  double duration = 3.0;           // seconds
  double sample_rate = 8000.0;
  double note_min = 0.2;           // note-event duration range (s)
  double note_max = 1.0;
  double rest_probability = 0.1;
  int midi_min = 36;               // C2
  int midi_max = 83;               // B5
  double vibrato_rate_min = 4.0;   // Hz
  double vibrato_rate_max = 7.0;
  double vibrato_depth_max = 30.0; // cents, drawn uniformly from [0, max]
  int harmonics = 8;               // amplitude rolloff 1/k
  bool accompaniment = true;
  double pad_db = -10.0;           // triad pad level relative to the voice
  double noise_db = -25.0;         // pink-noise level relative to the voice
};

namespace datagen_detail {

struct NoteEvent {
  double start = 0.0;
  double end = 0.0;
  double f0 = 0.0;  // 0 = rest
  double vib_rate = 0.0;
  double vib_depth_cents = 0.0;
  double vib_phase = 0.0;
};

inline double midi_to_hz(int midi) { return 440.0 * std::pow(2.0, (midi - 69) / 12.0); }

inline std::vector<NoteEvent> draw_events(const SynthSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dur_dist(spec.note_min, spec.note_max);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> midi_dist(spec.midi_min, spec.midi_max);
  std::uniform_real_distribution<double> rate_dist(spec.vibrato_rate_min, spec.vibrato_rate_max);
  std::uniform_real_distribution<double> depth_dist(0.0, spec.vibrato_depth_max);
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * 3.14159265358979323846);

  std::vector<NoteEvent> events;
  double t = 0.0;
  while (t < spec.duration) {
    NoteEvent e;
    e.start = t;
    e.end = std::min(spec.duration, t + dur_dist(rng));
    if (unit(rng) < spec.rest_probability) {
      e.f0 = 0.0;
    } else {
      e.f0 = midi_to_hz(midi_dist(rng));
      e.vib_rate = rate_dist(rng);
      e.vib_depth_cents = depth_dist(rng);
      e.vib_phase = phase_dist(rng);
    }
    t = e.end;
    events.push_back(e);
  }
  return events;
}

inline double instantaneous_f0(const std::vector<NoteEvent>& events, double t) {
  for (const NoteEvent& e : events) {
    if (t >= e.start && t < e.end) {
      if (e.f0 == 0.0) return 0.0;
      const double cents =
          e.vib_depth_cents * std::sin(2.0 * 3.14159265358979323846 * e.vib_rate * (t - e.start) +
                                       e.vib_phase);
      return e.f0 * std::pow(2.0, cents / 1200.0);
    }
  }
  return 0.0;
}

// Paul Kellet's pink-noise filter over seeded white noise.
class PinkNoise {
 public:
  explicit PinkNoise(std::uint64_t seed) : rng_(seed) {}
  double next() {
    std::uniform_real_distribution<double> white_dist(-1.0, 1.0);
    const double w = white_dist(rng_);
    b0_ = 0.99886 * b0_ + w * 0.0555179;
    b1_ = 0.99332 * b1_ + w * 0.0750759;
    b2_ = 0.96900 * b2_ + w * 0.1538520;
    b3_ = 0.86650 * b3_ + w * 0.3104856;
    b4_ = 0.55000 * b4_ + w * 0.5329522;
    b5_ = -0.7616 * b5_ - w * 0.0168980;
    const double pink = b0_ + b1_ + b2_ + b3_ + b4_ + b5_ + b6_ + w * 0.5362;
    b6_ = w * 0.115926;
    return pink * 0.11;
  }

 private:
  std::mt19937_64 rng_;
  double b0_ = 0, b1_ = 0, b2_ = 0, b3_ = 0, b4_ = 0, b5_ = 0, b6_ = 0;
};

}  // namespace datagen_detail

inline std::pair<Waveform, PitchContour> synth_clip(const SynthSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  const auto events = datagen_detail::draw_events(spec, rng);
  const double fs = spec.sample_rate;
  const std::size_t n = static_cast<std::size_t>(std::lrint(spec.duration * fs));
  const double nyquist_guard = 0.95 * fs / 2.0;

  // voice: phase-continuous partials, amplitude 1/k
  std::vector<double> voice(n, 0.0);
  std::vector<double> phase(static_cast<std::size_t>(spec.harmonics), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    const double f0 = datagen_detail::instantaneous_f0(events, t);
    if (f0 > 0.0) {
      double s = 0.0;
      for (int k = 1; k <= spec.harmonics; ++k) {
        const double fk = k * f0;
        phase[k - 1] += 2.0 * 3.14159265358979323846 * fk / fs;
        if (fk < nyquist_guard) s += std::sin(phase[k - 1]) / k;
      }
      voice[i] = s;
    }
  }

  std::vector<double> mix = voice;
  if (spec.accompaniment) {
    // sustained triad pad, root drawn from the low register
    std::uniform_int_distribution<int> root_dist(41, 55);  // F2..G3
    const int root = root_dist(rng);
    const double pad_gain = std::pow(10.0, spec.pad_db / 20.0);
    const int triad[3] = {root, root + 4, root + 7};
    std::uniform_real_distribution<double> pad_phase_dist(0.0, 2.0 * 3.14159265358979323846);
    double pad_phases[3];
    for (double& p : pad_phases) p = pad_phase_dist(rng);
    datagen_detail::PinkNoise pink(rng());
    const double noise_gain = std::pow(10.0, spec.noise_db / 20.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / fs;
      double pad = 0.0;
      for (int v = 0; v < 3; ++v) {
        const double f = datagen_detail::midi_to_hz(triad[v]);
        for (int k = 1; k <= 3; ++k)
          pad += std::sin(2.0 * 3.14159265358979323846 * k * f * t + pad_phases[v]) / (3.0 * k);
      }
      mix[i] += pad_gain * pad + noise_gain * pink.next();
    }
  }

  // peak-normalize the mix to 0.9
  double peak = 0.0;
  for (double v : mix) peak = std::max(peak, std::abs(v));
  if (peak > 0.0)
    for (double& v : mix) v *= 0.9 / peak;

  Waveform wave;
  wave.sample_rate = fs;
  wave.samples = std::move(mix);

  // ground truth on the 10 ms grid, one frame per feature frame
  const std::size_t frames = frame_count(n, 80);
  PitchContour contour;
  contour.times.resize(frames);
  contour.freqs.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    contour.times[i] = static_cast<double>(i) * kFrameSeconds;
    contour.freqs[i] = datagen_detail::instantaneous_f0(events, contour.times[i]);
  }
  return {std::move(wave), std::move(contour)};
}

// Writes clip_####.wav / clip_####.csv pairs plus a manifest listing them and
// the generating seed. Same seed, same bytes.
inline std::vector<Clip> make_corpus(const std::string& dir, std::uint64_t seed, std::size_t n_clips,
                                     const SynthSpec& base) {
  if (n_clips == 0) throw std::invalid_argument("make_corpus: n_clips must be >= 1");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("make_corpus: cannot create '" + dir + "': " + ec.message());

  std::ofstream manifest(dir + "/manifest.csv");
  if (!manifest) throw std::runtime_error("make_corpus: cannot write manifest in '" + dir + "'");
  manifest << "# seed=" << seed << "\n";

  std::vector<Clip> clips;
  for (std::size_t i = 0; i < n_clips; ++i) {
    SynthSpec spec = base;
    spec.seed = seed ^ (0x9E3779B97F4A7C15ULL * (i + 1));
    auto [wave, contour] = synth_clip(spec);
    char name[32];
    std::snprintf(name, sizeof(name), "clip_%04zu", i);
    const std::string wav_name = std::string(name) + ".wav";
    const std::string csv_name = std::string(name) + ".csv";
    save_wav(dir + "/" + wav_name, wave);
    write_contour_csv(dir + "/" + csv_name, contour);
    manifest << wav_name << "," << csv_name << "\n";
    Clip clip;
    clip.id = name;
    clip.wave = std::move(wave);
    clip.contour = std::move(contour);
    clips.push_back(std::move(clip));
  }
  if (!manifest) throw std::runtime_error("make_corpus: manifest write failed in '" + dir + "'");
  return clips;
}

}  // namespace tonet
