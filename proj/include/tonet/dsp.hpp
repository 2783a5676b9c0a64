#pragma once

// Combined frequency and periodicity (CFP) front end.
//
// A clip becomes a 3-channel log-frequency tensor (3, F, T):
//   channel 0: power-scaled spectrogram
//   channel 1: generalized cepstrum (GC), from the quefrency domain
//   channel 2: generalized cepstrum of spectrum (GCoS)
// The cascade per frame is
//   Z0 = rect(|X|^2)^g0
//   Z1 = rect(IDFT(Z0))^g1, quefrencies below quef_cutoff zeroed
//   Z2 = rect(DFT(Z1))^g2,  frequencies below freq_cutoff zeroed
// and each stage is mapped onto F log-spaced bins (f_b = f_min * 2^(b/L))
// by a triangular filterbank, then rescaled per channel to peak 1 per clip.
//
// The spectral transforms run on a zero-padded grid of freq_resolution Hz;
// the plain STFT below keeps the analysis-window length.

#include "tonet/tensor.hpp"
#include "tonet/wav.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <tuple>

namespace tonet {

struct CfpConfig {
  double sample_rate = 8000.0;
  std::size_t window = 768;
  std::size_t hop = 80;
  std::size_t bins_per_octave = 60;  // L
  std::size_t num_bins = 360;        // F
  double f_min = 32.5;
  double f_max = 2050.0;
  double gamma0 = 0.24;
  double gamma1 = 0.6;
  double gamma2 = 1.0;
  double freq_cutoff = 32.5;          // g_c (Hz), high-pass on the GCoS stage
  double quef_cutoff = 1.0 / 1000.0;  // q_c (s), high-pass on the cepstral stage
  double freq_resolution = 1.0;       // zero-padded transform grid (Hz)
  bool nearest_bin_mapping = false;   // oracle-test switch; default triangular

  std::size_t octaves() const { return num_bins / bins_per_octave; }

  double bin_center_hz(double b) const {
    return f_min * std::pow(2.0, b / static_cast<double>(bins_per_octave));
  }

  std::size_t transform_size() const {
    return static_cast<std::size_t>(std::lrint(sample_rate / freq_resolution));
  }

  void validate() const {
    if (sample_rate <= 0.0) throw std::invalid_argument("cfp config: sample_rate must be positive");
    if (window <= hop) throw std::invalid_argument("cfp config: window must exceed hop");
    if (bins_per_octave == 0 || num_bins % bins_per_octave != 0)
      throw std::invalid_argument("cfp config: num_bins must be a multiple of bins_per_octave");
    if (f_min * std::pow(2.0, static_cast<double>(num_bins) / bins_per_octave) < f_max)
      throw std::invalid_argument("cfp config: bin range does not reach f_max");
    if (transform_size() < window)
      throw std::invalid_argument("cfp config: freq_resolution grid is shorter than the window");
  }
};

namespace dsp_detail {

// FFTW plans are cached per transform size; plan creation is not thread-safe
// so it is serialized, while execution on caller-owned buffers is safe.
class FftPlans {
 public:
  static FftPlans& instance() {
    static FftPlans p;
    return p;
  }

  void forward(std::size_t n, const double* in, fftw_complex* out) {
    fftw_plan p = plan(n, true);
    fftw_execute_dft_r2c(p, const_cast<double*>(in), out);
  }

  void backward(std::size_t n, const fftw_complex* in, double* out) {
    fftw_plan p = plan(n, false);
    fftw_execute_dft_c2r(p, const_cast<fftw_complex*>(in), out);
  }

 private:
  std::mutex mu_;
  std::map<std::pair<std::size_t, bool>, fftw_plan> plans_;

  fftw_plan plan(std::size_t n, bool fwd) {
    std::lock_guard<std::mutex> lock(mu_);
    auto key = std::make_pair(n, fwd);
    auto it = plans_.find(key);
    if (it != plans_.end()) return it->second;
    std::vector<double> re(n);
    std::vector<fftw_complex> cx(n / 2 + 1);
    fftw_plan p = fwd ? fftw_plan_dft_r2c_1d(static_cast<int>(n), re.data(), cx.data(),
                                             FFTW_ESTIMATE | FFTW_UNALIGNED)
                      : fftw_plan_dft_c2r_1d(static_cast<int>(n), cx.data(), re.data(),
                                             FFTW_ESTIMATE | FFTW_UNALIGNED);
    plans_.emplace(key, p);
    return p;
  }
};

inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  const double pi = 3.14159265358979323846;
  for (std::size_t i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * pi * i / n);
  return w;
}

// Reflection-padded sample fetch so frames are centered on t*hop.
inline double sample_reflected(const std::vector<double>& x, std::ptrdiff_t idx) {
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.size());
  if (idx < 0) idx = -idx;
  if (idx >= n) idx = 2 * n - 2 - idx;
  if (idx < 0 || idx >= n) return 0.0;  // window longer than twice the clip
  return x[idx];
}

inline double rect_pow(double v, double gamma) {
  if (v <= 0.0) return 0.0;
  return gamma == 1.0 ? v : std::pow(v, gamma);
}

// Sparse triangular filterbank row: (source index, weight) pairs per log bin.
// Rows are normalized to unit weight sum so bins spanning many source bins
// average rather than accumulate.
using MapRow = std::vector<std::pair<std::size_t, double>>;

inline void normalize_rows(std::vector<MapRow>& rows) {
  for (MapRow& row : rows) {
    double sum = 0.0;
    for (const auto& [k, w] : row) sum += w;
    if (sum > 0.0)
      for (auto& [k, w] : row) w /= sum;
  }
}

// Linear frequency grid (spacing `step` Hz, n_src bins) onto F log bins.
inline std::vector<MapRow> build_freq_map(const CfpConfig& cfg, double step, std::size_t n_src) {
  std::vector<MapRow> rows(cfg.num_bins);
  if (cfg.nearest_bin_mapping) {
    const double lo = cfg.bin_center_hz(-0.5), hi = cfg.bin_center_hz(cfg.num_bins - 0.5);
    for (std::size_t k = 1; k < n_src; ++k) {
      const double f = k * step;
      if (f < lo || f >= hi) continue;
      const double b = cfg.bins_per_octave * std::log2(f / cfg.f_min);
      const std::ptrdiff_t bi = static_cast<std::ptrdiff_t>(std::lrint(b));
      if (bi >= 0 && bi < static_cast<std::ptrdiff_t>(cfg.num_bins)) rows[bi].push_back({k, 1.0});
    }
    return rows;
  }
  for (std::size_t b = 0; b < cfg.num_bins; ++b) {
    const double f_lo = cfg.bin_center_hz(static_cast<double>(b) - 1.0);
    const double f_c = cfg.bin_center_hz(static_cast<double>(b));
    const double f_hi = cfg.bin_center_hz(static_cast<double>(b) + 1.0);
    const std::size_t k_lo = static_cast<std::size_t>(std::max<double>(1.0, std::ceil(f_lo / step)));
    const std::size_t k_hi = std::min<std::size_t>(n_src - 1, static_cast<std::size_t>(std::floor(f_hi / step)));
    for (std::size_t k = k_lo; k <= k_hi; ++k) {
      const double f = k * step;
      double w = 0.0;
      if (f <= f_c)
        w = (f - f_lo) / (f_c - f_lo);
      else
        w = (f_hi - f) / (f_hi - f_c);
      if (w > 0.0) rows[b].push_back({k, w});
    }
  }
  normalize_rows(rows);
  return rows;
}

// Quefrency (lag) grid onto F log bins; lag n maps to period n/fs.
inline std::vector<MapRow> build_quef_map(const CfpConfig& cfg, std::size_t n_lags) {
  std::vector<MapRow> rows(cfg.num_bins);
  const double fs = cfg.sample_rate;
  if (cfg.nearest_bin_mapping) {
    const double lo = cfg.bin_center_hz(-0.5), hi = cfg.bin_center_hz(cfg.num_bins - 0.5);
    for (std::size_t n = 1; n < n_lags; ++n) {
      const double f = fs / static_cast<double>(n);
      if (f < lo || f >= hi) continue;
      const double b = cfg.bins_per_octave * std::log2(f / cfg.f_min);
      const std::ptrdiff_t bi = static_cast<std::ptrdiff_t>(std::lrint(b));
      if (bi >= 0 && bi < static_cast<std::ptrdiff_t>(cfg.num_bins)) rows[bi].push_back({n, 1.0});
    }
    return rows;
  }
  for (std::size_t b = 0; b < cfg.num_bins; ++b) {
    const double p_lo = 1.0 / cfg.bin_center_hz(static_cast<double>(b) + 1.0);
    const double p_c = 1.0 / cfg.bin_center_hz(static_cast<double>(b));
    const double p_hi = 1.0 / cfg.bin_center_hz(static_cast<double>(b) - 1.0);
    const std::size_t n_lo = static_cast<std::size_t>(std::max<double>(1.0, std::ceil(p_lo * fs)));
    const std::size_t n_hi = std::min<std::size_t>(n_lags - 1, static_cast<std::size_t>(std::floor(p_hi * fs)));
    for (std::size_t n = n_lo; n <= n_hi; ++n) {
      const double q = static_cast<double>(n) / fs;
      double w = 0.0;
      if (q <= p_c)
        w = (q - p_lo) / (p_c - p_lo);
      else
        w = (p_hi - q) / (p_hi - p_c);
      if (w > 0.0) rows[b].push_back({n, w});
    }
  }
  normalize_rows(rows);
  return rows;
}

inline void apply_map(const std::vector<MapRow>& rows, const double* src, double* dst) {
  for (std::size_t b = 0; b < rows.size(); ++b) {
    double acc = 0.0;
    for (const auto& [k, w] : rows[b]) acc += w * src[k];
    dst[b] = acc;
  }
}

}  // namespace dsp_detail

inline std::size_t frame_count(std::size_t n_samples, std::size_t hop) {
  return (n_samples + hop - 1) / hop;
}

// Linear-frequency STFT power, shape (window/2 + 1, T). Hann window, centered
// frames with reflection padding, T = ceil(len / hop).
inline Tensor compute_stft_power(const Waveform& wave, const CfpConfig& cfg) {
  cfg.validate();
  if (wave.sample_rate != cfg.sample_rate)
    throw std::invalid_argument("stft: waveform rate " + std::to_string(wave.sample_rate) +
                                " does not match config rate " + std::to_string(cfg.sample_rate));
  if (wave.samples.size() < cfg.window)
    throw std::invalid_argument("stft: clip of " + std::to_string(wave.samples.size()) +
                                " samples is shorter than one window (" + std::to_string(cfg.window) + ")");
  const std::size_t n = cfg.window;
  const std::size_t n_bins = n / 2 + 1;
  const std::size_t t_frames = frame_count(wave.samples.size(), cfg.hop);
  const auto win = dsp_detail::hann_window(n);
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(n / 2);

  Tensor out(Shape{n_bins, t_frames});
  std::vector<double> frame(n);
  std::vector<fftw_complex> spec(n_bins);
  for (std::size_t t = 0; t < t_frames; ++t) {
    const std::ptrdiff_t center = static_cast<std::ptrdiff_t>(t * cfg.hop);
    for (std::size_t i = 0; i < n; ++i)
      frame[i] = win[i] * dsp_detail::sample_reflected(wave.samples, center - half + static_cast<std::ptrdiff_t>(i));
    dsp_detail::FftPlans::instance().forward(n, frame.data(), spec.data());
    for (std::size_t k = 0; k < n_bins; ++k)
      out.at(k, t) = spec[k][0] * spec[k][0] + spec[k][1] * spec[k][1];
  }
  return out;
}

// Full CFP tensor (3, F, T).
inline Tensor compute_cfp(const Waveform& wave, const CfpConfig& cfg) {
  cfg.validate();
  if (wave.sample_rate != cfg.sample_rate)
    throw std::invalid_argument("cfp: waveform rate " + std::to_string(wave.sample_rate) +
                                " does not match config rate " + std::to_string(cfg.sample_rate));
  if (wave.samples.size() < cfg.window)
    throw std::invalid_argument("cfp: clip of " + std::to_string(wave.samples.size()) +
                                " samples is shorter than one window (" + std::to_string(cfg.window) + ")");

  const std::size_t n = cfg.transform_size();
  const std::size_t half_n = n / 2 + 1;
  const std::size_t t_frames = frame_count(wave.samples.size(), cfg.hop);
  const std::size_t f_bins = cfg.num_bins;
  const double step = cfg.sample_rate / static_cast<double>(n);

  // quefrency support: lags up to one period of the lowest mapped frequency
  const std::size_t max_lag = std::min<std::size_t>(
      n / 2, static_cast<std::size_t>(std::ceil(cfg.sample_rate / cfg.bin_center_hz(-1.0))) + 1);
  const auto freq_map = dsp_detail::build_freq_map(cfg, step, half_n);
  const auto quef_map = dsp_detail::build_quef_map(cfg, max_lag + 1);
  const std::size_t quef_zero = static_cast<std::size_t>(cfg.quef_cutoff * cfg.sample_rate);  // lags below q_c
  const std::size_t freq_zero = static_cast<std::size_t>(cfg.freq_cutoff / step);             // bins below g_c

  const auto win = dsp_detail::hann_window(cfg.window);
  const std::ptrdiff_t half_w = static_cast<std::ptrdiff_t>(cfg.window / 2);

  Tensor out(Shape{3, f_bins, t_frames});
  std::vector<double> frame(n, 0.0);
  std::vector<fftw_complex> spec(half_n);
  std::vector<double> z0(half_n);
  std::vector<double> z1_full(n);
  std::vector<double> mapped(f_bins);
  auto& plans = dsp_detail::FftPlans::instance();

  for (std::size_t t = 0; t < t_frames; ++t) {
    const std::ptrdiff_t center = static_cast<std::ptrdiff_t>(t * cfg.hop);
    std::fill(frame.begin(), frame.end(), 0.0);
    for (std::size_t i = 0; i < cfg.window; ++i)
      frame[i] = win[i] * dsp_detail::sample_reflected(wave.samples, center - half_w + static_cast<std::ptrdiff_t>(i));

    // Z0: power-scaled spectrum (half, even by construction)
    plans.forward(n, frame.data(), spec.data());
    for (std::size_t k = 0; k < half_n; ++k)
      z0[k] = dsp_detail::rect_pow(spec[k][0] * spec[k][0] + spec[k][1] * spec[k][1], cfg.gamma0);
    dsp_detail::apply_map(freq_map, z0.data(), mapped.data());
    for (std::size_t b = 0; b < f_bins; ++b) out.at(0, b, t) = mapped[b];

    // Z1: generalized cepstrum = IDFT of the even spectrum, rectified,
    // low quefrencies removed
    for (std::size_t k = 0; k < half_n; ++k) {
      spec[k][0] = z0[k];
      spec[k][1] = 0.0;
    }
    plans.backward(n, spec.data(), z1_full.data());
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      z1_full[i] = dsp_detail::rect_pow(z1_full[i] * inv_n, cfg.gamma1);
    for (std::size_t i = 0; i < quef_zero && i < n; ++i) {
      z1_full[i] = 0.0;
      if (i > 0) z1_full[n - i] = 0.0;
    }
    dsp_detail::apply_map(quef_map, z1_full.data(), mapped.data());
    for (std::size_t b = 0; b < f_bins; ++b) out.at(1, b, t) = mapped[b];

    // Z2: GCoS = DFT of the filtered cepstrum, rectified, low frequencies
    // removed
    plans.forward(n, z1_full.data(), spec.data());
    for (std::size_t k = 0; k < half_n; ++k)
      z0[k] = k < freq_zero ? 0.0 : dsp_detail::rect_pow(spec[k][0], cfg.gamma2);
    dsp_detail::apply_map(freq_map, z0.data(), mapped.data());
    for (std::size_t b = 0; b < f_bins; ++b) out.at(2, b, t) = mapped[b];
  }

  // per-clip peak normalization per channel; all-zero channels stay zero
  for (std::size_t c = 0; c < 3; ++c) {
    double peak = 0.0;
    for (std::size_t i = 0; i < f_bins * t_frames; ++i)
      peak = std::max(peak, out.values[c * f_bins * t_frames + i]);
    if (peak > 0.0)
      for (std::size_t i = 0; i < f_bins * t_frames; ++i)
        out.values[c * f_bins * t_frames + i] /= peak;
  }
  return out;
}

// ---------------------------------------------------------------------------
// CFP tensor file format: magic "TONETCFP1", dims (3, F, T) as u64 LE,
// then row-major f64 LE values.
// ---------------------------------------------------------------------------

inline void write_cfp_file(const std::string& path, const Tensor& cfp) {
  if (cfp.rank() != 3 || cfp.shape[0] != 3)
    throw std::invalid_argument("cfp file: tensor must have shape (3, F, T), got " + shape_str(cfp.shape));
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cfp file: cannot open '" + path + "' for writing");
  f.write("TONETCFP1", 9);
  for (std::size_t d = 0; d < 3; ++d) {
    const std::uint64_t v = cfp.shape[d];
    f.write(reinterpret_cast<const char*>(&v), 8);
  }
  f.write(reinterpret_cast<const char*>(cfp.values.data()),
          static_cast<std::streamsize>(cfp.values.size() * sizeof(double)));
  if (!f) throw std::runtime_error("cfp file: write failed for '" + path + "'");
}

inline Tensor read_cfp_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cfp file: cannot open '" + path + "'");
  char magic[9];
  f.read(magic, 9);
  if (!f || std::string(magic, 9) != "TONETCFP1")
    throw std::runtime_error("cfp file: '" + path + "' has no TONETCFP1 magic");
  Shape shape(3);
  for (std::size_t d = 0; d < 3; ++d) {
    std::uint64_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 8);
    shape[d] = v;
  }
  Tensor t(shape);
  f.read(reinterpret_cast<char*>(t.values.data()),
         static_cast<std::streamsize>(t.values.size() * sizeof(double)));
  if (!f) throw std::runtime_error("cfp file: '" + path + "' is truncated");
  return t;
}

}  // namespace tonet
