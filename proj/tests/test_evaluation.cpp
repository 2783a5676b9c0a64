// Melody metrics against a brute-force per-frame oracle.
//
// The oracle below is a straight, self-contained transcription of the metric
// definitions, sharing no code with the library implementation; the suite
// requires exact agreement on random contour pairs and on the defining
// octave/tone error cases.

#include "tonet/evaluation.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <random>

using namespace tonet;

namespace {

PitchContour contour_of(const std::vector<double>& freqs, double dt = 0.01) {
  PitchContour c;
  c.freqs = freqs;
  c.times.resize(freqs.size());
  for (std::size_t i = 0; i < freqs.size(); ++i) c.times[i] = i * dt;
  return c;
}

// ---- independent oracle ----------------------------------------------------

struct OracleResult {
  double vr, vfa, rpa, rca, roa, oa;
};

long oracle_octave(double f) {
  const double midi = 69.0 + 12.0 * std::log2(f / 440.0);
  const long rounded = static_cast<long>(std::floor(midi + 0.5));
  return static_cast<long>(std::floor(rounded / 12.0)) - 1;
}

OracleResult oracle_metrics(const PitchContour& est, const PitchContour& ref, double tol) {
  long n_rv = 0, n_ru = 0, vr = 0, vfa = 0, rpa = 0, rca = 0, roa = 0, oa = 0;
  const long n = static_cast<long>(ref.frames());
  for (long i = 0; i < n; ++i) {
    const bool rv = ref.voiced(i);
    const bool ev = est.voiced(i);
    const double ep = est.freqs[i];
    const double rp = ref.freqs[i];
    if (rv) {
      ++n_rv;
      if (ev) ++vr;
      if (ep > 0) {
        const double cents = 1200.0 * std::log2(ep / rp);
        bool pitch = std::abs(cents) <= tol;
        double fold = cents;
        while (fold > 600.0) fold -= 1200.0;
        while (fold <= -600.0) fold += 1200.0;
        const bool chroma = std::abs(fold) <= tol;
        const bool oct = oracle_octave(ep) == oracle_octave(rp);
        if (pitch) ++rpa;
        if (chroma) ++rca;
        if (oct) ++roa;
        if (pitch && ev) ++oa;
      }
    } else {
      ++n_ru;
      if (ev) ++vfa;
      if (!ev) ++oa;
    }
  }
  OracleResult r{};
  r.vr = n_rv ? double(vr) / n_rv : 0.0;
  r.vfa = n_ru ? double(vfa) / n_ru : 0.0;
  r.rpa = n_rv ? double(rpa) / n_rv : 0.0;
  r.rca = n_rv ? double(rca) / n_rv : 0.0;
  r.roa = n_rv ? double(roa) / n_rv : 0.0;
  r.oa = n ? double(oa) / n : 0.0;
  return r;
}

}  // namespace

TEST_CASE("identical fully voiced contours score 1.0 everywhere, VFA 0/0 -> 0") {
  const PitchContour c = contour_of({440, 466.16, 523.25, 880});
  const EvalResult r = evaluate_pair(c, c);
  REQUIRE(r.vr == 1.0);
  REQUIRE(r.rpa == 1.0);
  REQUIRE(r.rca == 1.0);
  REQUIRE(r.roa == 1.0);
  REQUIRE(r.oa == 1.0);
  REQUIRE(r.vfa == 0.0);
  REQUIRE(r.vfa_undefined);
  REQUIRE(roa(c, c) == 1.0);
}

TEST_CASE("445 vs 440 Hz stays within the 50-cent tolerance") {
  const PitchContour ref = contour_of({440, 440, 440});
  const PitchContour est = contour_of({445, 445, 445});
  REQUIRE(1200.0 * std::log2(445.0 / 440.0) == Catch::Approx(19.56).margin(0.01));
  const EvalResult r = evaluate_pair(est, ref);
  REQUIRE(r.rpa == 1.0);
  REQUIRE(r.oa == 1.0);
}

TEST_CASE("pure octave error: RPA 0, RCA 1, ROA 0") {
  const PitchContour ref = contour_of({440, 440});
  const PitchContour est = contour_of({220, 220});
  const EvalResult r = evaluate_pair(est, ref);
  REQUIRE(r.rpa == 0.0);
  REQUIRE(r.rca == 1.0);
  REQUIRE(r.roa == 0.0);
}

TEST_CASE("pure tone error within the octave: RPA 0, RCA 0, ROA 1") {
  const PitchContour ref = contour_of({440, 440});
  const PitchContour est = contour_of({466.16, 466.16});  // A#4, +100 cents
  const EvalResult r = evaluate_pair(est, ref);
  REQUIRE(r.rpa == 0.0);
  REQUIRE(r.rca == 0.0);
  REQUIRE(r.roa == 1.0);
}

TEST_CASE("C4 against A4 keeps the octave: ROA 1 despite the tone error") {
  const PitchContour ref = contour_of({440.0});
  const PitchContour est = contour_of({261.63});
  REQUIRE(roa(est, ref) == 1.0);
  const EvalResult r = evaluate_pair(est, ref);
  REQUIRE(r.rpa == 0.0);
  REQUIRE(r.roa == 1.0);
}

TEST_CASE("resample: contour already on the reference grid is unchanged") {
  const PitchContour est = contour_of({440, 0, 220, 0});
  const PitchContour out = resample_contour(est, est.times);
  REQUIRE(out.freqs == std::vector<double>{440, 440, 220, 220});  // frozen pitch
  REQUIRE(out.voicing == std::vector<bool>{true, false, true, false});
}

TEST_CASE("resample: doubled-rate reference grid duplicates estimate frames") {
  const PitchContour est = contour_of({440, 880}, 0.01);
  const std::vector<double> ref_times = {0.0, 0.005, 0.01, 0.015};
  const PitchContour out = resample_contour(est, ref_times);
  REQUIRE(out.freqs == std::vector<double>{440, 440, 880, 880});
}

TEST_CASE("resample: frozen-pitch rule for est-unvoiced frames") {
  const PitchContour est = contour_of({440, 0, 0, 442});
  const PitchContour out = resample_contour(est, est.times);
  REQUIRE(out.freqs == std::vector<double>{440, 440, 440, 442});
  REQUIRE(out.voicing == std::vector<bool>{true, false, false, true});
}

TEST_CASE("resample: leading unvoiced frames take the first voiced pitch") {
  const PitchContour est = contour_of({0, 0, 300, 0});
  const PitchContour out = resample_contour(est, est.times);
  REQUIRE(out.freqs == std::vector<double>{300, 300, 300, 300});
}

TEST_CASE("resample: fully unvoiced estimate yields pitch 0 everywhere") {
  const PitchContour est = contour_of({0, 0, 0});
  const PitchContour out = resample_contour(est, est.times);
  REQUIRE(out.freqs == std::vector<double>{0, 0, 0});
  PitchContour empty;
  REQUIRE_THROWS_AS(resample_contour(empty, est.times), std::invalid_argument);
}

TEST_CASE("grid mismatch is rejected") {
  const PitchContour a = contour_of({440, 440});
  PitchContour b = contour_of({440, 440});
  b.times[1] += 0.004;
  REQUIRE_THROWS_AS(evaluate_pair(a, b), std::invalid_argument);
  REQUIRE_THROWS_AS(roa(a, contour_of({440, 440, 440})), std::invalid_argument);
}

TEST_CASE("RCA >= RPA on random pairs, and octave shifts keep RCA intact") {
  std::mt19937_64 rng(51);
  std::uniform_real_distribution<double> f_dist(80.0, 900.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> rf(40), ef(40);
    for (std::size_t i = 0; i < 40; ++i) {
      rf[i] = unit(rng) < 0.25 ? 0.0 : f_dist(rng);
      ef[i] = unit(rng) < 0.25 ? 0.0 : f_dist(rng) * std::pow(2.0, (unit(rng) - 0.5) * 0.2);
    }
    const PitchContour ref = contour_of(rf);
    const PitchContour est = resample_contour(contour_of(ef), ref.times);
    const EvalResult r = evaluate_pair(est, ref);
    REQUIRE(r.rca >= r.rpa);

    PitchContour shifted = est;
    for (double& f : shifted.freqs)
      if (f > 0) f *= 2.0;
    const EvalResult s = evaluate_pair(shifted, ref);
    REQUIRE(s.rca == Catch::Approx(r.rca).margin(1e-12));
  }
}

TEST_CASE("optimized metrics equal the brute-force oracle exactly on 100 random pairs") {
  std::mt19937_64 rng(57);
  std::uniform_real_distribution<double> f_dist(40.0, 2000.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 20 + static_cast<std::size_t>(unit(rng) * 60);
    std::vector<double> rf(n), ef(n);
    for (std::size_t i = 0; i < n; ++i) {
      rf[i] = unit(rng) < 0.3 ? 0.0 : f_dist(rng);
      // estimates mix exact hits, octave errors, semitone errors and noise
      const double kind = unit(rng);
      if (kind < 0.2)
        ef[i] = rf[i];
      else if (kind < 0.4)
        ef[i] = rf[i] > 0 ? rf[i] * 2.0 : 0.0;
      else if (kind < 0.6)
        ef[i] = rf[i] > 0 ? rf[i] * std::pow(2.0, 1.0 / 12.0) : f_dist(rng);
      else if (kind < 0.8)
        ef[i] = 0.0;
      else
        ef[i] = f_dist(rng);
    }
    const PitchContour ref = contour_of(rf);
    const PitchContour est = resample_contour(contour_of(ef), ref.times);
    const EvalResult got = evaluate_pair(est, ref);
    const OracleResult want = oracle_metrics(est, ref, 50.0);
    REQUIRE(got.vr == want.vr);
    REQUIRE(got.vfa == want.vfa);
    REQUIRE(got.rpa == want.rpa);
    REQUIRE(got.rca == want.rca);
    REQUIRE(got.roa == want.roa);
    REQUIRE(got.oa == want.oa);
    REQUIRE(roa(est, ref) == want.roa);
  }
}

TEST_CASE("metric counts are consistent integers") {
  std::mt19937_64 rng(61);
  std::uniform_real_distribution<double> f_dist(80.0, 900.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> rf(37), ef(37);
  for (std::size_t i = 0; i < rf.size(); ++i) {
    rf[i] = unit(rng) < 0.4 ? 0.0 : f_dist(rng);
    ef[i] = unit(rng) < 0.4 ? 0.0 : f_dist(rng);
  }
  const PitchContour ref = contour_of(rf);
  const PitchContour est = resample_contour(contour_of(ef), ref.times);
  const EvalResult r = evaluate_pair(est, ref);
  REQUIRE(r.ref_voiced + r.ref_unvoiced == r.total);
  const double vr_count = r.vr * r.ref_voiced;
  const double vfa_count = r.vfa * r.ref_unvoiced;
  REQUIRE(vr_count == Catch::Approx(std::round(vr_count)).margin(1e-9));
  REQUIRE(vfa_count == Catch::Approx(std::round(vfa_count)).margin(1e-9));
}
