#pragma once

// Segmentation, batching, Adam optimization, per-epoch evaluation and
// checkpointing. The optimization loop is sequential and fully seeded:
// identical seeds give identical shuffles, initial parameters and loss
// trajectories.

#include "tonet/checkpoint.hpp"
#include "tonet/dsp.hpp"
#include "tonet/evaluation.hpp"
#include "tonet/labels.hpp"
#include "tonet/model.hpp"
#include "tonet/tcfp.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

namespace tonet {

inline constexpr std::size_t kSegmentFrames = 128;

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 16;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t epochs = 200;
  std::uint64_t seed = 1;
  std::string preset = "paper";

  static TrainConfig make(const std::string& preset) {
    TrainConfig c;
    c.preset = preset;
    if (preset == "desk") {
      // CPU-sized defaults; the paper preset keeps the published values
      c.batch_size = 4;
      c.learning_rate = 1e-3;
    } else if (preset != "paper") {
      throw std::invalid_argument("unknown preset '" + preset + "' (expected paper or desk)");
    }
    return c;
  }

  void validate() const {
    if (learning_rate <= 0.0) throw std::invalid_argument("train config: learning_rate must be > 0");
    if (batch_size == 0) throw std::invalid_argument("train config: batch_size must be >= 1");
  }
};

struct Clip {
  std::string id;
  Waveform wave;
  PitchContour contour;
};

struct Segment {
  Tensor cfp;       // (3, F, 128)
  Tensor tcfp;      // (3, F, 128)
  LabelMaps labels; // T = 128
  std::string clip_id;
  std::size_t frame_offset = 0;
};

struct SegmentationResult {
  std::vector<Segment> segments;
  std::vector<std::string> warnings;
};

namespace train_detail {

// columns [offset, offset+frames) of a (..., T) tensor, zero-padded past T
inline Tensor slice_frames(const Tensor& src, std::size_t offset, std::size_t frames) {
  Shape shape = src.shape;
  const std::size_t t = shape.back();
  shape.back() = frames;
  Tensor out(shape, 0.0);
  const std::size_t rows = src.numel() / t;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < frames; ++c)
      if (offset + c < t) out.values[r * frames + c] = src.values[r * t + offset + c];
  return out;
}

inline void mark_non_melody(LabelMaps& maps, std::size_t from_col) {
  for (std::size_t t = from_col; t < maps.y_final.shape[1]; ++t) {
    maps.y_final.at(0, t) = 1.0;
    maps.y_tone.at(kNonMelodyTone, t) = 1.0;
    maps.y_octave.at(kNonMelodyOctave, t) = 1.0;
  }
}

}  // namespace train_detail

// Non-overlapping 128-frame windows per clip. CFP is computed once per clip;
// TCFP comes from the stored permutation. A trailing remainder is zero-padded
// in features and labeled non-melody. Clips too short for one analysis
// window are skipped with a warning.
inline SegmentationResult segment_corpus(const std::vector<Clip>& clips, const CfpConfig& cfg) {
  SegmentationResult result;
  const PermutationPlan plan = build_permutation(cfg.num_bins, cfg.bins_per_octave);
  for (const Clip& clip : clips) {
    if (clip.wave.samples.size() < cfg.window) {
      result.warnings.push_back("clip '" + clip.id + "' is shorter than one analysis window; skipped");
      continue;
    }
    const Tensor cfp = compute_cfp(clip.wave, cfg);
    const Tensor tcfp = apply_rearrange(cfp, plan);
    const std::size_t t_clip = cfp.shape[2];
    if (clip.contour.frames() < t_clip)
      throw std::invalid_argument("segment_corpus: clip '" + clip.id + "' has " +
                                  std::to_string(clip.contour.frames()) + " contour frames for " +
                                  std::to_string(t_clip) + " feature frames");
    const LabelMaps clip_maps = contour_to_label_maps(clip.contour, t_clip);
    for (std::size_t offset = 0; offset < t_clip; offset += kSegmentFrames) {
      Segment seg;
      seg.clip_id = clip.id;
      seg.frame_offset = offset;
      seg.cfp = train_detail::slice_frames(cfp, offset, kSegmentFrames);
      seg.tcfp = train_detail::slice_frames(tcfp, offset, kSegmentFrames);
      seg.labels.y_final = train_detail::slice_frames(clip_maps.y_final, offset, kSegmentFrames);
      seg.labels.y_tone = train_detail::slice_frames(clip_maps.y_tone, offset, kSegmentFrames);
      seg.labels.y_octave = train_detail::slice_frames(clip_maps.y_octave, offset, kSegmentFrames);
      if (t_clip - offset < kSegmentFrames)
        train_detail::mark_non_melody(seg.labels, t_clip - offset);
      result.segments.push_back(std::move(seg));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::size_t t = 0;
};

inline void adam_step(ParamStore& params, const std::map<std::string, Tensor>& grads,
                      AdamState& state, const TrainConfig& cfg) {
  cfg.validate();
  for (const auto& [name, grad] : grads)
    if (!grad.all_finite())
      throw std::runtime_error("adam: non-finite gradient for parameter '" + name + "'");

  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (auto& entry : params.entries()) {
    if (!entry.trainable) continue;
    auto git = grads.find(entry.name);
    if (git == grads.end())
      throw std::invalid_argument("adam: missing gradient for parameter '" + entry.name + "'");
    const Tensor& g = git->second;
    Tensor& m = state.m.try_emplace(entry.name, Tensor(entry.tensor.shape, 0.0)).first->second;
    Tensor& v = state.v.try_emplace(entry.name, Tensor(entry.tensor.shape, 0.0)).first->second;
    for (std::size_t i = 0; i < g.numel(); ++i) {
      m.values[i] = cfg.beta1 * m.values[i] + (1.0 - cfg.beta1) * g.values[i];
      v.values[i] = cfg.beta2 * v.values[i] + (1.0 - cfg.beta2) * g.values[i] * g.values[i];
      const double mhat = m.values[i] / bc1;
      const double vhat = v.values[i] / bc2;
      entry.tensor.values[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// batched forward and inference
// ---------------------------------------------------------------------------

namespace train_detail {

inline Tensor stack(const std::vector<const Tensor*>& parts) {
  Shape shape = parts.front()->shape;
  shape.insert(shape.begin(), parts.size());
  Tensor out(shape);
  const std::size_t stride = parts.front()->numel();
  for (std::size_t i = 0; i < parts.size(); ++i)
    std::copy(parts[i]->values.begin(), parts[i]->values.end(), out.values.begin() + i * stride);
  return out;
}

}  // namespace train_detail

// One training step on a batch of segments; returns the loss value and the
// gradient table.
inline double batch_loss_and_gradients(TONetModel& model, const std::vector<const Segment*>& batch,
                                       std::map<std::string, Tensor>& grads_out) {
  std::vector<const Tensor*> cfps, tcfps, finals, tones, octaves;
  for (const Segment* s : batch) {
    cfps.push_back(&s->cfp);
    tcfps.push_back(&s->tcfp);
    finals.push_back(&s->labels.y_final);
    tones.push_back(&s->labels.y_tone);
    octaves.push_back(&s->labels.y_octave);
  }
  Graph g;
  NodeId cfp = g.constant(train_detail::stack(cfps));
  NodeId tcfp = g.constant(train_detail::stack(tcfps));
  auto fwd = model.forward(g, cfp, tcfp, /*training=*/true);
  NodeId y_final = g.constant(train_detail::stack(finals));
  NodeId y_tone = g.constant(train_detail::stack(tones));
  NodeId y_octave = g.constant(train_detail::stack(octaves));
  NodeId loss = model.loss(g, fwd, y_final, y_tone, y_octave);
  g.backward(loss);
  grads_out = g.named_gradients();
  return g.value(loss).values[0];
}

// Salience map (F+1, T_clip) for a full clip: non-overlapping 128-frame
// windows batched through the model in inference mode, then restitched.
inline Tensor infer_salience(TONetModel& model, const Tensor& cfp_clip, const Tensor& tcfp_clip) {
  const std::size_t f = cfp_clip.shape[1], t_clip = cfp_clip.shape[2];
  const std::size_t windows = (t_clip + kSegmentFrames - 1) / kSegmentFrames;
  std::vector<Tensor> cfp_parts, tcfp_parts;
  std::vector<const Tensor*> cfp_ptrs, tcfp_ptrs;
  for (std::size_t wnd = 0; wnd < windows; ++wnd) {
    cfp_parts.push_back(train_detail::slice_frames(cfp_clip, wnd * kSegmentFrames, kSegmentFrames));
    tcfp_parts.push_back(train_detail::slice_frames(tcfp_clip, wnd * kSegmentFrames, kSegmentFrames));
  }
  for (std::size_t wnd = 0; wnd < windows; ++wnd) {
    cfp_ptrs.push_back(&cfp_parts[wnd]);
    tcfp_ptrs.push_back(&tcfp_parts[wnd]);
  }
  Graph g;
  g.set_grad_enabled(false);
  NodeId cfp = g.constant(train_detail::stack(cfp_ptrs));
  NodeId tcfp = g.constant(train_detail::stack(tcfp_ptrs));
  auto fwd = model.forward(g, cfp, tcfp, /*training=*/false);
  const Tensor& maps = g.value(fwd.final_map);  // (windows, F+1, 128)

  Tensor out(Shape{f + 1, t_clip});
  for (std::size_t wnd = 0; wnd < windows; ++wnd)
    for (std::size_t r = 0; r <= f; ++r)
      for (std::size_t c = 0; c < kSegmentFrames; ++c) {
        const std::size_t col = wnd * kSegmentFrames + c;
        if (col < t_clip) out.at(r, col) = maps.at(wnd, r, c);
      }
  return out;
}

inline PitchContour infer_contour(TONetModel& model, const Waveform& wave, const CfpConfig& cfg,
                                  const PermutationPlan& plan) {
  const Tensor cfp = compute_cfp(wave, cfg);
  const Tensor tcfp = apply_rearrange(cfp, plan);
  return salience_to_contour(infer_salience(model, cfp, tcfp));
}

// features computed once so per-epoch evaluation skips the DSP front end
struct PreparedClip {
  Tensor cfp;
  Tensor tcfp;
  PitchContour contour;
};

inline std::vector<PreparedClip> prepare_clips(const std::vector<Clip>& clips,
                                               const CfpConfig& cfg) {
  const PermutationPlan plan = build_permutation(cfg.num_bins, cfg.bins_per_octave);
  std::vector<PreparedClip> out;
  out.reserve(clips.size());
  for (const Clip& clip : clips) {
    PreparedClip p;
    p.cfp = compute_cfp(clip.wave, cfg);
    p.tcfp = apply_rearrange(p.cfp, plan);
    p.contour = clip.contour;
    out.push_back(std::move(p));
  }
  return out;
}

// Per-clip metrics averaged with equal clip weight.
inline EvalResult evaluate_prepared(TONetModel& model, const std::vector<PreparedClip>& clips) {
  EvalResult avg;
  for (const PreparedClip& clip : clips) {
    PitchContour est = salience_to_contour(infer_salience(model, clip.cfp, clip.tcfp));
    PitchContour ref = clip.contour;
    const std::size_t frames = std::min(est.frames(), ref.frames());
    est.times.resize(frames);
    est.freqs.resize(frames);
    ref.times.resize(frames);
    ref.freqs.resize(frames);
    if (!ref.voicing.empty()) ref.voicing.resize(frames);
    if (!est.voicing.empty()) est.voicing.resize(frames);
    est = resample_contour(est, ref.times);
    const EvalResult r = evaluate_pair(est, ref);
    avg.vr += r.vr;
    avg.vfa += r.vfa;
    avg.rpa += r.rpa;
    avg.rca += r.rca;
    avg.roa += r.roa;
    avg.oa += r.oa;
    avg.ref_voiced += r.ref_voiced;
    avg.ref_unvoiced += r.ref_unvoiced;
    avg.total += r.total;
  }
  if (!clips.empty()) {
    const double n = static_cast<double>(clips.size());
    avg.vr /= n;
    avg.vfa /= n;
    avg.rpa /= n;
    avg.rca /= n;
    avg.roa /= n;
    avg.oa /= n;
  }
  return avg;
}

inline EvalResult evaluate_clips(TONetModel& model, const std::vector<Clip>& clips,
                                 const CfpConfig& cfg) {
  return evaluate_prepared(model, prepare_clips(clips, cfg));
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct TrainResult {
  std::size_t epochs_run = 0;
  double best_oa = 0.0;
  std::vector<double> epoch_losses;
  bool diverged = false;
  std::string checkpoint_path;
  std::string log_path;
};

// Epoch loop: seeded shuffle, batches, Eq.-loss backward, Adam. After each
// epoch the held-out split (last 10% of clips by sorted id, or the training
// clips when the corpus is too small to split) is scored and a CSV row
// `epoch,loss,vr,vfa,rpa,rca,roa,oa` appended; the best-OA checkpoint is
// retained. A non-finite loss aborts, keeping the last good checkpoint.
inline TrainResult train(const std::vector<Clip>& corpus, TONetModel& model, const CfpConfig& cfp_cfg,
                         const TrainConfig& train_cfg, const std::string& out_dir,
                         const std::vector<Clip>* eval_override = nullptr) {
  train_cfg.validate();
  if (corpus.empty()) throw std::invalid_argument("train: corpus is empty");
  std::filesystem::create_directories(out_dir);

  std::vector<Clip> ordered = corpus;
  std::sort(ordered.begin(), ordered.end(),
            [](const Clip& a, const Clip& b) { return a.id < b.id; });
  std::vector<Clip> train_clips, eval_clips;
  if (eval_override) {
    train_clips = ordered;
    eval_clips = *eval_override;
  } else {
    const std::size_t n_eval = ordered.size() / 10;
    train_clips.assign(ordered.begin(), ordered.end() - n_eval);
    if (n_eval > 0)
      eval_clips.assign(ordered.end() - n_eval, ordered.end());
    else
      eval_clips = train_clips;
  }

  SegmentationResult seg = segment_corpus(train_clips, cfp_cfg);
  if (seg.segments.empty()) throw std::invalid_argument("train: corpus yielded no segments");
  const std::vector<PreparedClip> prepared_eval = prepare_clips(eval_clips, cfp_cfg);

  TrainResult result;
  result.checkpoint_path = out_dir + "/best.ckpt";
  result.log_path = out_dir + "/metrics.csv";

  std::ofstream log(result.log_path);
  if (!log) throw std::runtime_error("train: cannot open '" + result.log_path + "' for writing");
  log << "epoch,loss,vr,vfa,rpa,rca,roa,oa\n";

  save_checkpoint(result.checkpoint_path, model.params());  // last-good fallback

  AdamState adam;
  std::mt19937_64 shuffle_rng(train_cfg.seed);
  std::vector<std::size_t> order(seg.segments.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  double best_oa = -1.0;
  for (std::size_t epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += train_cfg.batch_size) {
      std::vector<const Segment*> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + train_cfg.batch_size); ++i)
        batch.push_back(&seg.segments[order[i]]);
      std::map<std::string, Tensor> grads;
      const double loss = batch_loss_and_gradients(model, batch, grads);
      if (!std::isfinite(loss)) {
        result.diverged = true;
        result.epochs_run = epoch;
        result.best_oa = std::max(0.0, best_oa);
        return result;
      }
      adam_step(model.params(), grads, adam, train_cfg);
      epoch_loss += loss;
      ++batches;
    }
    epoch_loss /= static_cast<double>(batches);
    result.epoch_losses.push_back(epoch_loss);

    const EvalResult ev = evaluate_prepared(model, prepared_eval);
    char row[256];
    std::snprintf(row, sizeof(row), "%zu,%.10g,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", epoch + 1,
                  epoch_loss, ev.vr, ev.vfa, ev.rpa, ev.rca, ev.roa, ev.oa);
    log << row;
    log.flush();
    if (ev.oa > best_oa) {
      best_oa = ev.oa;
      save_checkpoint(result.checkpoint_path, model.params());
    }
    result.epochs_run = epoch + 1;
  }
  result.best_oa = std::max(0.0, best_oa);
  return result;
}

// ---------------------------------------------------------------------------
// corpus directory loading (manifest written by the generator)
// ---------------------------------------------------------------------------

inline std::vector<Clip> load_corpus(const std::string& dir) {
  const std::string manifest = dir + "/manifest.csv";
  std::ifstream f(manifest);
  if (!f) throw std::runtime_error("corpus: cannot open '" + manifest + "'");
  std::vector<Clip> clips;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw std::runtime_error("corpus: manifest line '" + line + "' is not wav,csv");
    Clip clip;
    const std::string wav = dir + "/" + line.substr(0, comma);
    const std::string csv = dir + "/" + line.substr(comma + 1);
    clip.id = std::filesystem::path(line.substr(0, comma)).stem().string();
    clip.wave = load_wav(wav);
    clip.contour = read_contour_csv(csv);
    clips.push_back(std::move(clip));
  }
  if (clips.empty()) throw std::runtime_error("corpus: '" + manifest + "' lists no clips");
  return clips;
}

}  // namespace tonet
