// Acceptance suite. Runs each gate end to end and prints one line per
// criterion:   [PASS|FAIL] criterion N: <name> (<seconds>s) <detail>
//
// argv[1] must point at the tonet CLI binary (used by the corpus-level and
// determinism criteria). Exits nonzero if any criterion fails.

#include "tonet/config.hpp"
#include "tonet/datagen.hpp"
#include "tonet/svg_plot.hpp"
#include "tonet/training.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>

using namespace tonet;
namespace fs = std::filesystem;

namespace {

std::string g_cli;
fs::path g_work;

struct Outcome {
  bool pass = true;
  std::string detail;
  void fail(const std::string& why) {
    pass = false;
    if (!detail.empty()) detail += "; ";
    detail += why;
  }
};

int run_cli(const std::string& args) {
  const std::string cmd = g_cli + " " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

bool same_bytes(const fs::path& a, const fs::path& b) { return slurp(a) == slurp(b); }

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  fill_uniform(t, rng, lo, hi);
  return t;
}

NodeId project(Graph& g, NodeId out, std::mt19937_64& rng) {
  Tensor r(g.value(out).shape);
  fill_uniform(r, rng, -1.0, 1.0);
  return ops::mean_all(g, ops::mul(g, out, g.constant(std::move(r))));
}

// ---------------------------------------------------------------------------
// criterion 1: permutation suite
// ---------------------------------------------------------------------------

Outcome criterion_permutations() {
  Outcome out;
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> l_dist(1, 30);
  std::uniform_int_distribution<std::size_t> mult_dist(1, 16);

  std::vector<std::pair<std::size_t, std::size_t>> cases = {{360, 60}};
  for (int i = 0; i < 20; ++i) {
    const std::size_t l = l_dist(rng);
    cases.push_back({l * mult_dist(rng), l});
  }
  for (const auto& [f, l] : cases) {
    const PermutationPlan plan = build_permutation(f, l);
    std::vector<bool> seen(f, false);
    for (std::size_t j = 0; j < f; ++j) {
      if (plan.forward[j] >= f || seen[plan.forward[j]] || plan.inverse[plan.forward[j]] != j) {
        out.fail("bijection broken for F=" + std::to_string(f) + " L=" + std::to_string(l));
        return out;
      }
      seen[plan.forward[j]] = true;
    }
    for (std::size_t i = 0; i + l < f; ++i)
      if (plan.inverse[i + l] != plan.inverse[i] + 1) {
        out.fail("octave neighbors not adjacent for F=" + std::to_string(f) +
                 " L=" + std::to_string(l));
        return out;
      }
    Tensor x(Shape{3, f, 5});
    fill_uniform(x, rng, -1.0, 1.0);
    const Tensor y = apply_rearrange(x, plan);
    const Tensor back = apply_rearrange(y, inverse_plan(plan));
    if (back.values != x.values) {
      out.fail("round trip not bit-exact");
      return out;
    }
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t t = 0; t < 5; ++t) {
        std::multiset<double> m1, m2;
        for (std::size_t b = 0; b < f; ++b) {
          m1.insert(x.at(c, b, t));
          m2.insert(y.at(c, b, t));
        }
        if (m1 != m2) {
          out.fail("value multiset changed");
          return out;
        }
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// criterion 2: gradient checks
// ---------------------------------------------------------------------------

Outcome criterion_gradients() {
  Outcome out;
  constexpr double kTol = 1e-4;
  constexpr double kEps = 1e-5;
  double worst = 0.0;

  auto check = [&](const char* what, const GraphFn& f, const Tensor& x) {
    const double err = finite_diff_check(f, x, kEps);
    worst = std::max(worst, err);
    if (err > kTol) out.fail(std::string(what) + " err " + std::to_string(err));
  };

  for (int trial = 0; trial < 20; ++trial) {
    std::mt19937_64 rng(9000 + trial);
    std::uniform_int_distribution<std::size_t> d(2, 6);
    const std::size_t m = d(rng), k = d(rng), n = d(rng);

    const Tensor other = random_tensor({m, k}, rng);
    check("add", [&](Graph& g, NodeId x) {
      std::mt19937_64 p(1);
      return project(g, ops::add(g, x, g.constant(other)), p);
    }, random_tensor({m, k}, rng));
    check("mul", [&](Graph& g, NodeId x) {
      std::mt19937_64 p(2);
      return project(g, ops::mul(g, x, g.constant(other)), p);
    }, random_tensor({m, k}, rng));
    check("scale", [&](Graph& g, NodeId x) {
      std::mt19937_64 p(3);
      return project(g, ops::scale(g, x, -0.7), p);
    }, random_tensor({m, k}, rng));
    check("sigmoid", [&](Graph& g, NodeId x) {
      std::mt19937_64 p(4);
      return project(g, ops::sigmoid(g, x), p);
    }, random_tensor({m, k}, rng));
    {
      Tensor relu_in(Shape{m, k});
      std::uniform_real_distribution<double> mag(0.1, 1.0);
      std::uniform_int_distribution<int> sign(0, 1);
      for (double& v : relu_in.values) v = (sign(rng) ? 1.0 : -1.0) * mag(rng);
      check("relu", [&](Graph& g, NodeId x) {
        std::mt19937_64 p(5);
        return project(g, ops::relu(g, x), p);
      }, relu_in);
    }
    const Tensor rhs = random_tensor({k, n}, rng);
    check("matmul", [&](Graph& g, NodeId x) {
      std::mt19937_64 p(6);
      return project(g, ops::matmul(g, x, g.constant(rhs)), p);
    }, random_tensor({m, k}, rng));
    const Tensor rhs3 = random_tensor({2, k, n}, rng);
    check("matmul3", [&](Graph& g, NodeId x) {
      std::mt19937_64 p(7);
      return project(g, ops::matmul(g, x, g.constant(rhs3)), p);
    }, random_tensor({2, m, k}, rng));
    const Tensor lw = random_tensor({k, n}, rng);
    const Tensor lb = random_tensor({n}, rng);
    check("linear", [&](Graph& g, NodeId x) {
      std::mt19937_64 p(8);
      return project(g, ops::linear(g, x, g.constant(lw), g.constant(lb)), p);
    }, random_tensor({m, k}, rng));
    const Tensor cw = random_tensor({2, 2, 3, 3}, rng);
    const Tensor cb = random_tensor({2}, rng);
    check("conv2d", [&](Graph& g, NodeId x) {
      std::mt19937_64 p(9);
      return project(g, ops::conv2d(g, x, g.constant(cw), g.constant(cb), 1, 1), p);
    }, random_tensor({2, 2, 6, 6}, rng));
    const Tensor w1 = random_tensor({2, 2, 5}, rng);
    check("conv1d", [&](Graph& g, NodeId x) {
      std::mt19937_64 p(10);
      return project(g, ops::conv1d(g, x, g.constant(w1), g.constant(cb), 2), p);
    }, random_tensor({2, 2, 8}, rng));
    {
      Tensor pool_in(Shape{1, 2, 6, 4});
      for (std::size_t i = 0; i < pool_in.numel(); ++i) pool_in.values[i] = 0.01 * i;
      std::shuffle(pool_in.values.begin(), pool_in.values.end(), rng);
      check("max_pool2d", [&](Graph& g, NodeId x) {
        std::mt19937_64 p(11);
        return project(g, ops::max_pool2d(g, x, 3, 1), p);
      }, pool_in);
      check("max_unpool2d", [&](Graph& g, NodeId x) {
        std::mt19937_64 p(12);
        NodeId pl = ops::max_pool2d(g, x, 2, 2);
        return project(g, ops::max_unpool2d(g, pl, pl), p);
      }, pool_in);
    }
    check("softmax", [&](Graph& g, NodeId x) {
      std::mt19937_64 p(13);
      return project(g, ops::softmax(g, x, -1), p);
    }, random_tensor({m, k}, rng));
    const Tensor gain = random_tensor({k}, rng, 0.5, 1.5);
    const Tensor bias = random_tensor({k}, rng);
    check("layer_norm", [&](Graph& g, NodeId x) {
      std::mt19937_64 p(14);
      return project(g, ops::layer_norm(g, x, g.constant(gain), g.constant(bias)), p);
    }, random_tensor({m, k}, rng));
    {
      const Tensor bg = random_tensor({2}, rng, 0.5, 1.5);
      const Tensor bb = random_tensor({2}, rng);
      for (bool training : {true, false}) {
        check(training ? "batch_norm/train" : "batch_norm/eval", [&](Graph& g, NodeId x) {
          Tensor rm(Shape{2}, 0.0), rv(Shape{2}, 1.0);
          std::mt19937_64 p(15);
          return project(g, ops::batch_norm(g, x, g.constant(bg), g.constant(bb), rm, rv, training),
                         p);
        }, random_tensor({2, 2, 3, 4}, rng));
      }
    }
    const Tensor cat_other = random_tensor({m, 3}, rng);
    check("concat", [&](Graph& g, NodeId x) {
      std::mt19937_64 p(16);
      return project(g, ops::concat(g, {x, g.constant(cat_other)}, 1), p);
    }, random_tensor({m, k}, rng));
    check("permute", [&](Graph& g, NodeId x) {
      std::mt19937_64 p(17);
      return project(g, ops::permute(g, x, {1, 0}), p);
    }, random_tensor({m, k}, rng));
    check("reshape", [&](Graph& g, NodeId x) {
      std::mt19937_64 p(18);
      return project(g, ops::reshape(g, x, {k, m}), p);
    }, random_tensor({m, k}, rng));
    check("mean", [&](Graph& g, NodeId x) { return ops::mean_all(g, x); },
          random_tensor({m, k}, rng));
    check("sum", [&](Graph& g, NodeId x) { return ops::sum_all(g, x); },
          random_tensor({m, k}, rng));
    const Tensor target = random_tensor({m, k}, rng, 0.0, 1.0);
    check("bce", [&](Graph& g, NodeId x) {
      return ops::bce_mean(g, ops::sigmoid(g, x), g.constant(target));
    }, random_tensor({m, k}, rng));
  }

  // full desk-preset TONet forward: analytic gradients vs central differences
  // at sampled parameter coordinates
  ModelConfig mc = ModelConfig::make("desk", BackboneKind::mlp, Variant::full);
  mc.init_seed = 12;
  TONetModel model(mc);
  std::vector<std::string> trainable;
  for (const auto& e : model.params().entries())
    if (e.trainable) trainable.push_back(e.name);

  std::mt19937_64 data_rng(77);
  const Tensor cfp_in = random_tensor({1, 3, 360, 8}, data_rng, 0.0, 1.0);
  const Tensor tcfp_in = random_tensor({1, 3, 360, 8}, data_rng, 0.0, 1.0);
  Tensor y_fin(Shape{1, 361, 8}, 0.0), y_tone(Shape{1, 13, 8}, 0.0), y_oct(Shape{1, 7, 8}, 0.0);
  for (std::size_t t = 0; t < 8; ++t) {
    y_fin.at(0, (t * 41) % 361, t) = 1.0;
    y_tone.at(0, t % 13, t) = 1.0;
    y_oct.at(0, t % 7, t) = 1.0;
  }
  auto full_loss = [&]() {
    Graph g;
    g.set_grad_enabled(false);
    auto fwd = model.forward(g, g.constant(cfp_in), g.constant(tcfp_in), true);
    NodeId loss =
        model.loss(g, fwd, g.constant(y_fin), g.constant(y_tone), g.constant(y_oct));
    return g.value(loss).values[0];
  };

  // analytic gradients once
  std::map<std::string, Tensor> analytic;
  {
    Graph g;
    auto fwd = model.forward(g, g.constant(cfp_in), g.constant(tcfp_in), true);
    NodeId loss = model.loss(g, fwd, g.constant(y_fin), g.constant(y_tone), g.constant(y_oct));
    g.backward(loss);
    analytic = g.named_gradients();
  }

  double model_worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::mt19937_64 rng(500 + trial);
    const std::string& name = trainable[trial % trainable.size()];
    Tensor& param = model.params().get(name);
    std::uniform_int_distribution<std::size_t> idx_dist(0, param.numel() - 1);
    for (int probe = 0; probe < 4; ++probe) {
      const std::size_t i = idx_dist(rng);
      const double keep = param.values[i];
      const double eps = 1e-5;
      param.values[i] = keep + eps;
      const double fp = full_loss();
      param.values[i] = keep - eps;
      const double fm = full_loss();
      param.values[i] = keep;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double ana = analytic.at(name).values[i];
      const double err = std::abs(ana - numeric) / std::max(1.0, std::abs(ana));
      model_worst = std::max(model_worst, err);
      if (err > kTol)
        out.fail("full model " + name + "[" + std::to_string(i) + "] err " + std::to_string(err));
    }
  }
  out.detail += "primitive worst " + std::to_string(worst) + ", full-model worst " +
                std::to_string(model_worst);
  return out;
}

// ---------------------------------------------------------------------------
// criterion 3: shape contracts with the paper preset
// ---------------------------------------------------------------------------

Outcome criterion_shapes() {
  Outcome out;
  for (BackboneKind kind : {BackboneKind::mlp, BackboneKind::conv_encdec}) {
    ModelConfig cfg = ModelConfig::make("paper", kind, Variant::full);
    if (cfg.d_model != 1024 || cfg.heads != 8 || cfg.blocks != 2) {
      out.fail("paper preset dimensions are wrong");
      return out;
    }
    if (cfg.fusion_channels() != 742) {
      out.fail("fusion channel count is " + std::to_string(cfg.fusion_channels()) + ", not 742");
      return out;
    }
    TONetModel model(cfg);
    if (model.params().get("fusion.conv.w").shape != Shape{361, 742, 5}) {
      out.fail("fusion conv weight shape is wrong");
      return out;
    }
    Graph g;
    g.set_grad_enabled(false);
    std::mt19937_64 rng(21);
    auto fwd = model.forward(g, g.constant(random_tensor({1, 3, 360, 128}, rng, 0.0, 1.0)),
                             g.constant(random_tensor({1, 3, 360, 128}, rng, 0.0, 1.0)), false);
    if (g.value(fwd.tone_map).shape != Shape{1, 13, 128} ||
        g.value(fwd.octave_map).shape != Shape{1, 7, 128} ||
        g.value(fwd.final_map).shape != Shape{1, 361, 128}) {
      out.fail(std::string("wrong output shapes for backbone ") + to_string(kind));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// criterion 4: loss identity at uniform 0.5
// ---------------------------------------------------------------------------

Outcome criterion_loss_identity() {
  Outcome out;
  ModelConfig cfg = ModelConfig::make("desk", BackboneKind::mlp, Variant::full);
  TONetModel model(cfg);
  Graph g;
  TONetModel::Forward fwd;
  fwd.has_decoder = true;
  fwd.tone_map = g.constant(Tensor(Shape{2, 13, 32}, 0.5));
  fwd.octave_map = g.constant(Tensor(Shape{2, 7, 32}, 0.5));
  fwd.final_map = g.constant(Tensor(Shape{2, 361, 32}, 0.5));
  Tensor y_tone(Shape{2, 13, 32}, 0.0), y_oct(Shape{2, 7, 32}, 0.0), y_fin(Shape{2, 361, 32}, 0.0);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < 32; ++t) {
      y_tone.at(b, (b + t) % 13, t) = 1.0;
      y_oct.at(b, (b + t) % 7, t) = 1.0;
      y_fin.at(b, (b + 2 * t) % 361, t) = 1.0;
    }
  NodeId loss = model.loss(g, fwd, g.constant(y_fin), g.constant(y_tone), g.constant(y_oct));
  const double got = g.value(loss).values[0];
  const double want = 3.0 * std::log(2.0);
  out.detail = "loss " + std::to_string(got);
  if (std::abs(got - want) > 1e-6)
    out.fail("deviates from 3 ln 2 by " + std::to_string(std::abs(got - want)));
  return out;
}

// ---------------------------------------------------------------------------
// criterion 5: DSP localization
// ---------------------------------------------------------------------------

Outcome criterion_dsp_localization() {
  Outcome out;
  CfpConfig cfg;
  const PermutationPlan plan = build_permutation(cfg.num_bins, cfg.bins_per_octave);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> f_dist(65.0, 1000.0);
  int tone_failures[3] = {0, 0, 0};
  long worst_err[3] = {0, 0, 0};
  int tcfp_failures = 0;

  for (int trial = 0; trial < 20; ++trial) {
    const double f = f_dist(rng);
    // cosine tone, duration snapped to a half-cycle so the reflected edges
    // stay smooth; the tone frequency itself is the random quantity
    const double dur = std::round(1.0 * f * 2.0) / (2.0 * f);
    Waveform w;
    w.sample_rate = cfg.sample_rate;
    w.samples.resize(static_cast<std::size_t>(std::lrint(dur * cfg.sample_rate)));
    for (std::size_t i = 0; i < w.samples.size(); ++i)
      w.samples[i] = 0.8 * std::cos(2.0 * 3.14159265358979323846 * f * i / cfg.sample_rate);

    const Tensor cfp = compute_cfp(w, cfg);
    const Tensor tcfp = apply_rearrange(cfp, plan);
    const long expected = std::lrint(60.0 * std::log2(f / 32.5));

    for (std::size_t c = 0; c < 3; ++c) {
      long worst = 0;
      std::size_t worst_frame_argmax = 0;
      for (std::size_t t = 0; t < cfp.shape[2]; ++t) {
        std::size_t am = 0, am_t = 0;
        double best = -1.0, best_t = -1.0;
        for (std::size_t b = 0; b < cfp.shape[1]; ++b) {
          if (cfp.at(c, b, t) > best) {
            best = cfp.at(c, b, t);
            am = b;
          }
          if (tcfp.at(c, b, t) > best_t) {
            best_t = tcfp.at(c, b, t);
            am_t = b;
          }
        }
        const long err = std::labs(static_cast<long>(am) - expected);
        if (err > worst) {
          worst = err;
          worst_frame_argmax = am;
        }
        if (am_t != plan.inverse[am]) ++tcfp_failures;
      }
      (void)worst_frame_argmax;
      worst_err[c] = std::max(worst_err[c], worst);
      if (worst > 1) ++tone_failures[c];
    }
  }

  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "tones failing per channel: spectrogram %d/20 (worst %ld bins), GC %d/20 "
                "(worst %ld), GCoS %d/20 (worst %ld); TCFP index mismatches %d",
                tone_failures[0], worst_err[0], tone_failures[1], worst_err[1], tone_failures[2],
                worst_err[2], tcfp_failures);
  out.detail = buf;
  if (tone_failures[0]) out.fail("spectrogram channel out of tolerance");
  if (tone_failures[1])
    out.fail("GC channel cannot localize arbitrary tones on the 8 kHz lag grid (see README notes)");
  if (tone_failures[2]) out.fail("GCoS channel out of tolerance");
  if (tcfp_failures) out.fail("TCFP argmax off the permuted index");
  return out;
}

// ---------------------------------------------------------------------------
// criterion 6: metric oracle equivalence
// ---------------------------------------------------------------------------

long c6_octave(double f) {
  const double midi = 69.0 + 12.0 * std::log2(f / 440.0);
  const long rounded = static_cast<long>(std::floor(midi + 0.5));
  return static_cast<long>(std::floor(rounded / 12.0)) - 1;
}

Outcome criterion_metric_oracle() {
  Outcome out;
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> f_dist(40.0, 2000.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  auto eval_oracle = [&](const PitchContour& est, const PitchContour& ref) {
    EvalResult r;
    long n_rv = 0, n_ru = 0, vr = 0, vfa = 0, rpa = 0, rca = 0, roa_hits = 0, oa = 0;
    for (std::size_t i = 0; i < ref.frames(); ++i) {
      const bool rv = ref.voiced(i);
      const bool ev = est.voiced(i);
      if (rv) {
        ++n_rv;
        if (ev) ++vr;
        if (est.freqs[i] > 0) {
          const double cents = 1200.0 * std::log2(est.freqs[i] / ref.freqs[i]);
          double fold = cents;
          while (fold > 600.0) fold -= 1200.0;
          while (fold <= -600.0) fold += 1200.0;
          const bool pitch = std::abs(cents) <= 50.0;
          if (pitch) ++rpa;
          if (std::abs(fold) <= 50.0) ++rca;
          if (c6_octave(est.freqs[i]) == c6_octave(ref.freqs[i])) ++roa_hits;
          if (pitch && ev) ++oa;
        }
      } else {
        ++n_ru;
        if (ev) ++vfa;
        if (!ev) ++oa;
      }
    }
    r.vr = n_rv ? double(vr) / n_rv : 0.0;
    r.vfa = n_ru ? double(vfa) / n_ru : 0.0;
    r.rpa = n_rv ? double(rpa) / n_rv : 0.0;
    r.rca = n_rv ? double(rca) / n_rv : 0.0;
    r.roa = n_rv ? double(roa_hits) / n_rv : 0.0;
    r.oa = ref.frames() ? double(oa) / ref.frames() : 0.0;
    return r;
  };

  auto compare = [&](const PitchContour& est, const PitchContour& ref, const char* what) {
    const EvalResult got = evaluate_pair(est, ref);
    const EvalResult want = eval_oracle(est, ref);
    if (got.vr != want.vr || got.vfa != want.vfa || got.rpa != want.rpa || got.rca != want.rca ||
        got.roa != want.roa || got.oa != want.oa || roa(est, ref) != want.roa)
      out.fail(std::string("mismatch on ") + what);
  };

  auto grid = [](const std::vector<double>& freqs) {
    PitchContour c;
    c.freqs = freqs;
    c.times.resize(freqs.size());
    for (std::size_t i = 0; i < freqs.size(); ++i) c.times[i] = i * 0.01;
    return c;
  };

  // defining cases
  {
    const PitchContour ref = grid({440, 440});
    const EvalResult octave_err = evaluate_pair(grid({220, 220}), ref);
    if (octave_err.rpa != 0.0 || octave_err.rca != 1.0 || octave_err.roa != 0.0)
      out.fail("pure octave error not (RPA 0, RCA 1, ROA 0)");
    const EvalResult tone_err = evaluate_pair(grid({466.16, 466.16}), ref);
    if (tone_err.rpa != 0.0 || tone_err.rca != 0.0 || tone_err.roa != 1.0)
      out.fail("pure tone error not (RPA 0, RCA 0, ROA 1)");
  }

  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 15 + static_cast<std::size_t>(unit(rng) * 70);
    std::vector<double> rf(n), ef(n);
    for (std::size_t i = 0; i < n; ++i) {
      rf[i] = unit(rng) < 0.3 ? 0.0 : f_dist(rng);
      const double kind = unit(rng);
      if (kind < 0.2)
        ef[i] = rf[i];
      else if (kind < 0.4)
        ef[i] = rf[i] > 0 ? rf[i] * 0.5 : 0.0;
      else if (kind < 0.6)
        ef[i] = rf[i] > 0 ? rf[i] * std::pow(2.0, -1.0 / 12.0) : f_dist(rng);
      else if (kind < 0.8)
        ef[i] = 0.0;
      else
        ef[i] = f_dist(rng);
    }
    const PitchContour ref = grid(rf);
    const PitchContour est = resample_contour(grid(ef), ref.times);
    compare(est, ref, "random pair");
  }
  return out;
}

// ---------------------------------------------------------------------------
// criterion 7: overfit smoke
// ---------------------------------------------------------------------------

Outcome criterion_overfit() {
  Outcome out;
  const auto t0 = std::chrono::steady_clock::now();
  const std::string dir = (g_work / "smoke_corpus").string();
  SynthSpec spec;
  spec.duration = 1.28;
  spec.accompaniment = false;
  const std::vector<Clip> corpus = make_corpus(dir, 7, 8, spec);

  CfpConfig cfp_cfg;
  ModelConfig mc = ModelConfig::make("desk", BackboneKind::mlp, Variant::full);
  mc.init_seed = 7;
  TONetModel model(mc);
  TrainConfig tc = TrainConfig::make("desk");
  tc.seed = 7;

  // monotone loss over the first 20 steps of a single batch
  {
    TONetModel probe(mc);
    const auto seg = segment_corpus({corpus[0]}, cfp_cfg);
    AdamState adam;
    std::vector<const Segment*> batch = {&seg.segments[0]};
    double prev = std::numeric_limits<double>::infinity();
    for (int step = 0; step < 20; ++step) {
      std::map<std::string, Tensor> grads;
      const double loss = batch_loss_and_gradients(probe, batch, grads);
      if (loss >= prev) {
        out.fail("loss not monotone at step " + std::to_string(step));
        break;
      }
      prev = loss;
      adam_step(probe.params(), grads, adam, tc);
    }
  }

  // train in chunks, stop once the training-set gates are met (or at 200)
  const std::vector<PreparedClip> prepared = prepare_clips(corpus, cfp_cfg);
  std::size_t epochs_total = 0;
  EvalResult ev;
  for (const std::size_t chunk : {40ul, 40ul, 40ul, 40ul, 40ul}) {
    TrainConfig chunk_cfg = tc;
    chunk_cfg.epochs = chunk;
    const TrainResult r =
        train(corpus, model, cfp_cfg, chunk_cfg, (g_work / "smoke_train").string());
    epochs_total += r.epochs_run;
    if (r.diverged) {
      out.fail("training diverged");
      break;
    }
    ev = evaluate_prepared(model, prepared);
    if (ev.rpa >= 0.90 && ev.oa >= 0.85) break;
  }
  const double minutes =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "RPA %.4f OA %.4f after %zu epochs, %.1f min", ev.rpa, ev.oa,
                epochs_total, minutes);
  out.detail += buf;
  if (ev.rpa < 0.90) out.fail("training-set RPA below 0.90");
  if (ev.oa < 0.85) out.fail("training-set OA below 0.85");
  if (epochs_total > 200) out.fail("needed more than 200 epochs");
  if (minutes >= 15.0) out.fail("took 15 minutes or more");
  return out;
}

// ---------------------------------------------------------------------------
// criterion 8: ablation table
// ---------------------------------------------------------------------------

Outcome criterion_ablation() {
  Outcome out;
  const std::string train_dir = (g_work / "ablate_train").string();
  const std::string eval_dir = (g_work / "ablate_eval").string();
  SynthSpec spec;
  spec.duration = 1.28;
  make_corpus(train_dir, 31, 32, spec);
  make_corpus(eval_dir, 32, 8, spec);

  const std::string out_dir = (g_work / "ablate_out").string();
  const int rc = run_cli("ablate --corpus " + train_dir + " --eval-corpus " + eval_dir +
                         " --out " + out_dir + " --preset desk --seeds 1,2,3 --epochs 4");
  if (rc != 0) {
    out.fail("ablate exited with " + std::to_string(rc));
    return out;
  }

  // 5 variants x 3 seeds plus a header
  std::ifstream summary(out_dir + "/summary.csv");
  std::string line;
  std::vector<std::string> rows;
  while (std::getline(summary, line))
    if (!line.empty()) rows.push_back(line);
  if (rows.size() != 16) {
    out.fail("summary.csv has " + std::to_string(rows.size()) + " rows, expected 16");
    return out;
  }
  if (rows[0] != "variant,seed,rpa,rca,roa,oa") out.fail("summary.csv header is wrong");
  std::set<std::string> variants;
  for (std::size_t i = 1; i < rows.size(); ++i)
    variants.insert(rows[i].substr(0, rows[i].find(',')));
  if (variants != std::set<std::string>{"base", "d", "tc", "f", "full"})
    out.fail("summary.csv does not cover the five variants");

  std::ifstream report(out_dir + "/report.txt");
  std::size_t flags = 0;
  std::string detail;
  while (std::getline(report, line)) {
    if (line.find("full_ge_base_oa=") != std::string::npos &&
        line.find("full_ge_base_roa=") != std::string::npos)
      ++flags;
    if (!line.empty()) detail += line + " | ";
  }
  if (flags != 3) out.fail("report.txt does not flag full-vs-base for all three seeds");
  out.detail = detail;  // directionality itself is reported, not gated
  return out;
}

// ---------------------------------------------------------------------------
// criterion 9: byte-identical reruns
// ---------------------------------------------------------------------------

Outcome criterion_determinism() {
  Outcome out;
  const fs::path root = g_work / "determinism";

  // synth
  const std::string s1 = (root / "synth1").string(), s2 = (root / "synth2").string();
  if (run_cli("synth --out " + s1 + " --clips 3 --seed 9 --duration 1.3") != 0 ||
      run_cli("synth --out " + s2 + " --clips 3 --seed 9 --duration 1.3") != 0)
    out.fail("synth failed");
  else
    for (const auto& entry : fs::directory_iterator(s1))
      if (!same_bytes(entry.path(), fs::path(s2) / entry.path().filename())) {
        out.fail("synth outputs differ: " + entry.path().filename().string());
        break;
      }

  // features
  const std::string wav = s1 + "/clip_0000.wav";
  const std::string f1 = (root / "a.cfp").string(), f2 = (root / "b.cfp").string();
  if (run_cli("features --wav " + wav + " --out " + f1 + " --tcfp") != 0 ||
      run_cli("features --wav " + wav + " --out " + f2 + " --tcfp") != 0 ||
      !same_bytes(f1, f2))
    out.fail("features outputs differ");

  // train
  const std::string t1 = (root / "train1").string(), t2 = (root / "train2").string();
  const std::string train_flags =
      " --preset desk --variant full --epochs 2 --seed 4 --batch-size 4";
  if (run_cli("train --corpus " + s1 + " --out " + t1 + train_flags) != 0 ||
      run_cli("train --corpus " + s1 + " --out " + t2 + train_flags) != 0)
    out.fail("train failed");
  else {
    for (const char* name : {"best.ckpt", "metrics.csv", "model_config.txt", "effective_config.txt"})
      if (!same_bytes(fs::path(t1) / name, fs::path(t2) / name)) {
        out.fail(std::string("train outputs differ: ") + name);
        break;
      }
  }

  // infer
  const std::string i1 = (root / "est1.csv").string(), i2 = (root / "est2.csv").string();
  if (run_cli("infer --wav " + wav + " --ckpt " + t1 + "/best.ckpt --out " + i1) != 0 ||
      run_cli("infer --wav " + wav + " --ckpt " + t1 + "/best.ckpt --out " + i2) != 0 ||
      !same_bytes(i1, i2))
    out.fail("infer outputs differ");

  // eval: est vs itself must print the all-ones row and be rerun-stable
  const std::string ref = s1 + "/clip_0000.csv";
  const std::string e1 = (root / "eval1.csv").string(), e2 = (root / "eval2.csv").string();
  if (run_cli("eval --est " + ref + " --ref " + ref + " --csv " + e1) != 0 ||
      run_cli("eval --est " + ref + " --ref " + ref + " --csv " + e2) != 0 ||
      !same_bytes(e1, e2))
    out.fail("eval outputs differ");
  else {
    const std::string row = slurp(e1);
    if (row.find("1.000000,0.000000,1.000000,1.000000,1.000000,1.000000") == std::string::npos)
      out.fail("self-eval row is not all ones: " + row);
  }

  // plot
  const std::string p1 = (root / "p1.svg").string(), p2 = (root / "p2.svg").string();
  if (run_cli("plot --est " + i1 + " --ref " + ref + " --out " + p1) != 0 ||
      run_cli("plot --est " + i1 + " --ref " + ref + " --out " + p2) != 0 ||
      !same_bytes(p1, p2))
    out.fail("plot outputs differ");
  else {
    // structural check: one point per estimate frame
    const std::string svg = slurp(p1);
    std::size_t circles = 0;
    for (std::size_t pos = svg.find("<circle"); pos != std::string::npos;
         pos = svg.find("<circle", pos + 1))
      ++circles;
    const PitchContour est = read_contour_csv(i1);
    if (circles != est.frames())
      out.fail("plot has " + std::to_string(circles) + " points for " +
               std::to_string(est.frames()) + " frames");
  }

  // composition: pipeline metrics equal evaluate_pair on the written csv
  {
    const PitchContour est = resample_contour(read_contour_csv(i1),
                                              read_contour_csv(ref).times);
    const EvalResult direct = evaluate_pair(est, read_contour_csv(ref));
    const std::string csv = slurp(e1);
    (void)csv;
    char expect[128];
    std::snprintf(expect, sizeof(expect), "%.6f,%.6f", direct.vr, direct.vfa);
    const std::string est_eval = (root / "eval_est.csv").string();
    if (run_cli("eval --est " + i1 + " --ref " + ref + " --csv " + est_eval) != 0)
      out.fail("eval on inferred contour failed");
    else {
      const std::string row = slurp(est_eval);
      char full_row[256];
      std::snprintf(full_row, sizeof(full_row), "%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", direct.vr,
                    direct.vfa, direct.rpa, direct.rca, direct.roa, direct.oa);
      if (row.find(full_row) == std::string::npos)
        out.fail("CLI metrics differ from in-process evaluate_pair");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: acceptance <path-to-tonet-cli>\n");
    return 2;
  }
  g_cli = argv[1];
  g_work = fs::temp_directory_path() / "tonet_acceptance";
  fs::remove_all(g_work);
  fs::create_directories(g_work);

  struct Entry {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Entry> criteria = {
      {1, "TCFP permutation suite", criterion_permutations},
      {2, "gradient checks (primitives + full model)", criterion_gradients},
      {3, "shape contracts, paper preset", criterion_shapes},
      {4, "loss identity at uniform 0.5", criterion_loss_identity},
      {5, "DSP tone localization", criterion_dsp_localization},
      {6, "metric oracle equivalence", criterion_metric_oracle},
      {7, "overfit smoke, desk preset", criterion_overfit},
      {8, "ablation table and directionality report", criterion_ablation},
      {9, "byte-identical reruns", criterion_determinism},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = c.run();
    } catch (const std::exception& e) {
      outcome.fail(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] criterion %d: %s (%.1fs)%s%s\n", outcome.pass ? "PASS" : "FAIL", c.id,
                c.name, secs, outcome.detail.empty() ? "" : " - ", outcome.detail.c_str());
    std::fflush(stdout);
    if (!outcome.pass) ++failures;
  }
  if (failures) std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
