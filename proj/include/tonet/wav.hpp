#pragma once

// PCM WAV reading/writing and sample-rate conversion.
//
// Readers accept 8/16-bit PCM, mono or stereo; stereo is mixed to mono by
// averaging. Anything else is rejected with the encountered format tag.
// Resampling to the pipeline rate uses windowed-sinc interpolation.

#include "tonet/tensor.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace tonet {

struct Waveform {
  std::vector<double> samples;  // in [-1, 1]
  double sample_rate = 0.0;

  double duration() const { return samples.size() / sample_rate; }
};

namespace wav_detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u16(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

}  // namespace wav_detail

// Windowed-sinc resampler (Hann window, 32 zero crossings per side at the
// output Nyquist or below). Pass-through when the rates already match.
inline std::vector<double> resample_sinc(const std::vector<double>& in, double rate_in,
                                         double rate_out) {
  if (rate_in == rate_out) return in;
  const double ratio = rate_in / rate_out;
  // cutoff at the smaller Nyquist, slightly backed off for the window rolloff
  const double cutoff = 0.95 * std::min(rate_in, rate_out) / 2.0;
  const double fc = cutoff / rate_in;  // cycles per input sample
  const int half_taps = 32;
  const double span = half_taps / (2.0 * fc);  // input samples per side

  const std::size_t n_out = static_cast<std::size_t>(std::ceil(in.size() / ratio));
  std::vector<double> out(n_out, 0.0);
  const double pi = 3.14159265358979323846;
  for (std::size_t m = 0; m < n_out; ++m) {
    const double center = m * ratio;
    const std::ptrdiff_t lo = static_cast<std::ptrdiff_t>(std::ceil(center - span));
    const std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(std::floor(center + span));
    double acc = 0.0;
    for (std::ptrdiff_t n = lo; n <= hi; ++n) {
      if (n < 0 || n >= static_cast<std::ptrdiff_t>(in.size())) continue;
      const double t = center - static_cast<double>(n);
      double kernel;
      if (std::abs(t) < 1e-12) {
        kernel = 2.0 * fc;
      } else {
        kernel = std::sin(2.0 * pi * fc * t) / (pi * t);
      }
      const double w = 0.5 + 0.5 * std::cos(pi * t / span);  // Hann over the tap span
      acc += in[n] * kernel * w;
    }
    out[m] = acc;
  }
  return out;
}

// Reads a PCM WAV file, mixes to mono, resamples to target_rate, and
// normalizes samples into [-1, 1].
inline Waveform load_wav(const std::string& path, double target_rate = 8000.0) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_wav: cannot open '" + path + "'");
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (raw.size() < 44 || std::memcmp(raw.data(), "RIFF", 4) != 0 ||
      std::memcmp(raw.data() + 8, "WAVE", 4) != 0)
    throw std::runtime_error("load_wav: '" + path + "' is not a RIFF/WAVE file");

  std::size_t pos = 12;
  int channels = 0, bits = 0;
  double rate = 0.0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  bool got_fmt = false;
  while (pos + 8 <= raw.size()) {
    const char* tag = reinterpret_cast<const char*>(raw.data() + pos);
    const std::uint32_t len = wav_detail::read_u32(raw.data() + pos + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      if (body + 16 > raw.size()) throw std::runtime_error("load_wav: truncated fmt chunk");
      const std::uint16_t fmt_tag = wav_detail::read_u16(raw.data() + body);
      if (fmt_tag != 1)
        throw std::runtime_error("load_wav: unsupported WAV encoding, format tag " +
                                 std::to_string(fmt_tag) + " (only PCM = 1 is supported)");
      channels = wav_detail::read_u16(raw.data() + body + 2);
      rate = wav_detail::read_u32(raw.data() + body + 4);
      bits = wav_detail::read_u16(raw.data() + body + 14);
      got_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      data = raw.data() + body;
      data_len = std::min<std::size_t>(len, raw.size() - body);
    }
    pos = body + len + (len & 1);
  }
  if (!got_fmt || data == nullptr) throw std::runtime_error("load_wav: missing fmt or data chunk");
  if (bits != 8 && bits != 16)
    throw std::runtime_error("load_wav: unsupported bit depth " + std::to_string(bits) +
                             " (only 8/16-bit PCM)");
  if (channels != 1 && channels != 2)
    throw std::runtime_error("load_wav: unsupported channel count " + std::to_string(channels));

  const std::size_t bytes_per = bits / 8;
  const std::size_t frames = data_len / (bytes_per * channels);
  if (frames == 0) throw std::runtime_error("load_wav: '" + path + "' contains no audio");

  std::vector<double> mono(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      const unsigned char* p = data + (i * channels + c) * bytes_per;
      if (bits == 16) {
        const std::int16_t v = static_cast<std::int16_t>(p[0] | (p[1] << 8));
        acc += v / 32768.0;
      } else {
        acc += (static_cast<int>(p[0]) - 128) / 128.0;
      }
    }
    mono[i] = acc / channels;
  }

  Waveform w;
  w.samples = resample_sinc(mono, rate, target_rate);
  w.sample_rate = target_rate;
  for (double& v : w.samples) v = std::min(1.0, std::max(-1.0, v));
  return w;
}

// Writes 16-bit PCM mono.
inline void save_wav(const std::string& path, const Waveform& w) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_wav: cannot open '" + path + "' for writing");
  const std::uint32_t n = static_cast<std::uint32_t>(w.samples.size());
  const std::uint32_t rate = static_cast<std::uint32_t>(w.sample_rate);
  f.write("RIFF", 4);
  wav_detail::write_u32(f, 36 + n * 2);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  wav_detail::write_u32(f, 16);
  wav_detail::write_u16(f, 1);  // PCM
  wav_detail::write_u16(f, 1);  // mono
  wav_detail::write_u32(f, rate);
  wav_detail::write_u32(f, rate * 2);
  wav_detail::write_u16(f, 2);
  wav_detail::write_u16(f, 16);
  f.write("data", 4);
  wav_detail::write_u32(f, n * 2);
  for (double v : w.samples) {
    const double clamped = std::min(1.0, std::max(-1.0, v));
    const std::int16_t s = static_cast<std::int16_t>(std::lrint(clamped * 32767.0));
    wav_detail::write_u16(f, static_cast<std::uint16_t>(s));
  }
  if (!f) throw std::runtime_error("save_wav: write failed for '" + path + "'");
}

}  // namespace tonet
