// tonet: synth | features | train | infer | eval | ablate | plot
//
// Exit codes: 0 success, 1 usage error, 2 runtime/data error.

#include "tonet/config.hpp"
#include "tonet/datagen.hpp"
#include "tonet/svg_plot.hpp"
#include "tonet/training.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

namespace {

using namespace tonet;

KeyValues train_config_to_kv(const TrainConfig& t) {
  KeyValues kv;
  kv["train.learning_rate"] = config_detail::fmt(t.learning_rate);
  kv["train.batch_size"] = std::to_string(t.batch_size);
  kv["train.beta1"] = config_detail::fmt(t.beta1);
  kv["train.beta2"] = config_detail::fmt(t.beta2);
  kv["train.epsilon"] = config_detail::fmt(t.epsilon);
  kv["train.epochs"] = std::to_string(t.epochs);
  kv["train.seed"] = std::to_string(t.seed);
  kv["train.preset"] = t.preset;
  return kv;
}

void overlay_train_config(TrainConfig& t, const KeyValues& kv) {
  auto get = [&](const char* key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  if (auto* v = get("train.learning_rate")) t.learning_rate = std::stod(*v);
  if (auto* v = get("train.batch_size")) t.batch_size = std::stoul(*v);
  if (auto* v = get("train.beta1")) t.beta1 = std::stod(*v);
  if (auto* v = get("train.beta2")) t.beta2 = std::stod(*v);
  if (auto* v = get("train.epsilon")) t.epsilon = std::stod(*v);
  if (auto* v = get("train.epochs")) t.epochs = std::stoul(*v);
  if (auto* v = get("train.seed")) t.seed = std::stoull(*v);
}

void print_metric_table(const EvalResult& r) {
  std::printf("VR      VFA     RPA     RCA     ROA     OA\n");
  std::printf("%.4f  %.4f  %.4f  %.4f  %.4f  %.4f\n", r.vr, r.vfa, r.rpa, r.rca, r.roa, r.oa);
}

void write_metric_csv(const std::string& path, const std::vector<std::string>& rows) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  for (const auto& r : rows) f << r << "\n";
  if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

struct TrainSettings {
  std::string preset = "desk";
  std::string backbone = "mlp";
  std::string variant = "full";
  std::string config_file;
  std::uint64_t seed = 1;
  // flag presence tracked by CLI11 ->count()
  std::size_t epochs = 0;
  std::size_t batch_size = 0;
  double lr = 0.0;
};

struct BuiltConfigs {
  ModelConfig model;
  CfpConfig cfp;
  TrainConfig train;
};

// precedence: flags > config file > preset defaults
BuiltConfigs build_configs(const TrainSettings& s, bool epochs_set, bool batch_set, bool lr_set) {
  BuiltConfigs b{ModelConfig::make(s.preset, backbone_from_string(s.backbone),
                                   variant_from_string(s.variant)),
                 CfpConfig{}, TrainConfig::make(s.preset)};
  if (!s.config_file.empty()) {
    const KeyValues kv = read_config_file(s.config_file);
    KeyValues merged = model_config_to_kv(b.model);
    for (const auto& [k, v] : kv) merged[k] = v;
    b.model = model_config_from_kv(merged);
    KeyValues cfp_merged = cfp_config_to_kv(b.cfp);
    for (const auto& [k, v] : kv) cfp_merged[k] = v;
    b.cfp = cfp_config_from_kv(cfp_merged);
    overlay_train_config(b.train, kv);
  }
  b.model.init_seed = s.seed;
  b.train.seed = s.seed;
  if (epochs_set) b.train.epochs = s.epochs;
  if (batch_set) b.train.batch_size = s.batch_size;
  if (lr_set) b.train.learning_rate = s.lr;
  b.model.validate();
  b.cfp.validate();
  b.train.validate();
  return b;
}

KeyValues merge_all(const BuiltConfigs& b) {
  KeyValues kv = model_config_to_kv(b.model);
  for (const auto& [k, v] : cfp_config_to_kv(b.cfp)) kv[k] = v;
  for (const auto& [k, v] : train_config_to_kv(b.train)) kv[k] = v;
  return kv;
}

int run_train_one(const std::vector<Clip>& corpus, const BuiltConfigs& cfgs,
                  const std::string& out_dir, const std::vector<Clip>* eval_clips,
                  EvalResult* final_eval) {
  std::filesystem::create_directories(out_dir);
  TONetModel model(cfgs.model);
  const TrainResult result = train(corpus, model, cfgs.cfp, cfgs.train, out_dir, eval_clips);
  write_config_file(out_dir + "/effective_config.txt", merge_all(cfgs));
  KeyValues model_kv = model_config_to_kv(cfgs.model);
  for (const auto& [k, v] : cfp_config_to_kv(cfgs.cfp)) model_kv[k] = v;
  write_config_file(out_dir + "/model_config.txt", model_kv);
  if (result.diverged) {
    std::fprintf(stderr, "training diverged after %zu epochs; best checkpoint kept at %s\n",
                 result.epochs_run, result.checkpoint_path.c_str());
    return 2;
  }
  if (final_eval) {
    // score the retained best checkpoint
    load_checkpoint(result.checkpoint_path, model.params());
    const std::vector<Clip>& score_clips = eval_clips ? *eval_clips : corpus;
    *final_eval = evaluate_clips(model, score_clips, cfgs.cfp);
  }
  std::printf("trained %zu epochs; best OA %.4f; checkpoint %s\n", result.epochs_run,
              result.best_oa, result.checkpoint_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TONet singing-melody extraction pipeline"};
  app.require_subcommand(1);

  // ---- synth ----
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus with exact F0 ground truth");
  std::string synth_out;
  std::size_t synth_clips = 8;
  std::uint64_t synth_seed = 1;
  SynthSpec synth_spec;
  bool no_accomp = false;
  synth->add_option("--out", synth_out, "output corpus directory")->required();
  synth->add_option("--clips", synth_clips, "number of clips");
  synth->add_option("--seed", synth_seed, "corpus seed");
  synth->add_option("--duration", synth_spec.duration, "seconds per clip");
  synth->add_option("--rest-prob", synth_spec.rest_probability, "probability a note event is a rest");
  synth->add_flag("--no-accompaniment", no_accomp, "voice only, no pad or noise");

  // ---- features ----
  auto* features = app.add_subcommand("features", "write the CFP tensor of a wav file");
  std::string feat_wav, feat_out, feat_config;
  bool feat_tcfp = false;
  features->add_option("--wav", feat_wav, "input wav")->required();
  features->add_option("--out", feat_out, "output TONETCFP1 file")->required();
  features->add_option("--config", feat_config, "config file with cfp.* overrides");
  features->add_flag("--tcfp", feat_tcfp, "apply the tone rearrangement before writing");

  // ---- train ----
  auto* train_cmd = app.add_subcommand("train", "train a model on a corpus directory");
  std::string train_corpus, train_out;
  TrainSettings ts;
  train_cmd->add_option("--corpus", train_corpus, "corpus directory (manifest.csv)")->required();
  train_cmd->add_option("--out", train_out, "output directory")->required();
  train_cmd->add_option("--preset", ts.preset, "paper or desk")->check(CLI::IsMember({"paper", "desk"}));
  train_cmd->add_option("--backbone", ts.backbone, "mlp or conv-encdec")
      ->check(CLI::IsMember({"mlp", "conv-encdec"}));
  train_cmd->add_option("--variant", ts.variant, "base, d, tc, f or full")
      ->check(CLI::IsMember({"base", "d", "tc", "f", "full"}));
  train_cmd->add_option("--config", ts.config_file, "config file overriding preset defaults");
  train_cmd->add_option("--seed", ts.seed, "model init and shuffle seed");
  auto* opt_epochs = train_cmd->add_option("--epochs", ts.epochs, "training epochs");
  auto* opt_batch = train_cmd->add_option("--batch-size", ts.batch_size, "segments per batch");
  auto* opt_lr = train_cmd->add_option("--lr", ts.lr, "Adam learning rate");

  // ---- infer ----
  auto* infer = app.add_subcommand("infer", "extract a melody contour from a wav file");
  std::string infer_wav, infer_ckpt, infer_model_cfg, infer_out;
  infer->add_option("--wav", infer_wav, "input wav")->required();
  infer->add_option("--ckpt", infer_ckpt, "checkpoint file")->required();
  infer->add_option("--model-config", infer_model_cfg,
                    "model config file (default: model_config.txt next to the checkpoint)");
  infer->add_option("--out", infer_out, "output label csv")->required();

  // ---- eval ----
  auto* eval_cmd = app.add_subcommand("eval", "score an estimate csv against a reference csv");
  std::string eval_est, eval_ref, eval_csv;
  double eval_tol = 50.0;
  eval_cmd->add_option("--est", eval_est, "estimate label csv")->required();
  eval_cmd->add_option("--ref", eval_ref, "reference label csv")->required();
  eval_cmd->add_option("--tolerance", eval_tol, "pitch tolerance in cents");
  eval_cmd->add_option("--csv", eval_csv, "also write the row to this csv");

  // ---- ablate ----
  auto* ablate = app.add_subcommand("ablate", "train and score the five model variants");
  std::string ab_corpus, ab_eval_corpus, ab_out, ab_seeds = "1";
  TrainSettings ab_ts;
  ablate->add_option("--corpus", ab_corpus, "training corpus directory")->required();
  ablate->add_option("--eval-corpus", ab_eval_corpus, "held-out corpus directory")->required();
  ablate->add_option("--out", ab_out, "output directory")->required();
  ablate->add_option("--preset", ab_ts.preset, "paper or desk")->check(CLI::IsMember({"paper", "desk"}));
  ablate->add_option("--backbone", ab_ts.backbone, "mlp or conv-encdec")
      ->check(CLI::IsMember({"mlp", "conv-encdec"}));
  ablate->add_option("--seeds", ab_seeds, "comma-separated seeds, one run set per seed");
  ablate->add_option("--config", ab_ts.config_file, "config file overriding preset defaults");
  auto* ab_epochs = ablate->add_option("--epochs", ab_ts.epochs, "training epochs per variant");
  auto* ab_batch = ablate->add_option("--batch-size", ab_ts.batch_size, "segments per batch");
  auto* ab_lr = ablate->add_option("--lr", ab_ts.lr, "Adam learning rate");

  // ---- plot ----
  auto* plot = app.add_subcommand("plot", "svg overlay of estimate and reference contours");
  std::string plot_est, plot_ref, plot_out;
  plot->add_option("--est", plot_est, "estimate label csv")->required();
  plot->add_option("--ref", plot_ref, "reference label csv")->required();
  plot->add_option("--out", plot_out, "output svg")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (synth->parsed()) {
      synth_spec.accompaniment = !no_accomp;
      make_corpus(synth_out, synth_seed, synth_clips, synth_spec);
      KeyValues kv;
      kv["synth.clips"] = std::to_string(synth_clips);
      kv["synth.seed"] = std::to_string(synth_seed);
      kv["synth.duration"] = config_detail::fmt(synth_spec.duration);
      kv["synth.rest_probability"] = config_detail::fmt(synth_spec.rest_probability);
      kv["synth.accompaniment"] = synth_spec.accompaniment ? "1" : "0";
      write_config_file(synth_out + "/effective_config.txt", kv);
      std::printf("wrote %zu clips to %s\n", synth_clips, synth_out.c_str());
      return 0;
    }

    if (features->parsed()) {
      CfpConfig cfg;
      if (!feat_config.empty()) {
        KeyValues merged = cfp_config_to_kv(cfg);
        for (const auto& [k, v] : read_config_file(feat_config)) merged[k] = v;
        cfg = cfp_config_from_kv(merged);
      }
      const Waveform wave = load_wav(feat_wav, cfg.sample_rate);
      Tensor cfp = compute_cfp(wave, cfg);
      if (feat_tcfp)
        cfp = apply_rearrange(cfp, build_permutation(cfg.num_bins, cfg.bins_per_octave));
      write_cfp_file(feat_out, cfp);
      std::printf("wrote %s tensor %s\n", feat_tcfp ? "TCFP" : "CFP",
                  shape_str(cfp.shape).c_str());
      return 0;
    }

    if (train_cmd->parsed()) {
      const BuiltConfigs cfgs =
          build_configs(ts, opt_epochs->count() > 0, opt_batch->count() > 0, opt_lr->count() > 0);
      const std::vector<Clip> corpus = load_corpus(train_corpus);
      return run_train_one(corpus, cfgs, train_out, nullptr, nullptr);
    }

    if (infer->parsed()) {
      std::string cfg_path = infer_model_cfg;
      if (cfg_path.empty())
        cfg_path = (std::filesystem::path(infer_ckpt).parent_path() / "model_config.txt").string();
      const KeyValues kv = read_config_file(cfg_path);
      const ModelConfig mc = model_config_from_kv(kv);
      KeyValues cfp_kv = cfp_config_to_kv(CfpConfig{});
      for (const auto& [k, v] : kv) cfp_kv[k] = v;
      const CfpConfig cc = cfp_config_from_kv(cfp_kv);
      TONetModel model(mc);
      load_checkpoint(infer_ckpt, model.params());
      const Waveform wave = load_wav(infer_wav, cc.sample_rate);
      const PitchContour contour =
          infer_contour(model, wave, cc, build_permutation(cc.num_bins, cc.bins_per_octave));
      write_contour_csv(infer_out, contour);
      std::printf("wrote %zu frames to %s\n", contour.frames(), infer_out.c_str());
      return 0;
    }

    if (eval_cmd->parsed()) {
      const PitchContour ref = read_contour_csv(eval_ref);
      PitchContour est = read_contour_csv(eval_est);
      est = resample_contour(est, ref.times);
      const EvalResult r = evaluate_pair(est, ref, eval_tol);
      print_metric_table(r);
      if (!eval_csv.empty()) {
        char row[256];
        std::snprintf(row, sizeof(row), "%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", r.vr, r.vfa, r.rpa,
                      r.rca, r.roa, r.oa);
        write_metric_csv(eval_csv, {"vr,vfa,rpa,rca,roa,oa", row});
      }
      return 0;
    }

    if (ablate->parsed()) {
      const BuiltConfigs base_cfgs =
          build_configs(ab_ts, ab_epochs->count() > 0, ab_batch->count() > 0, ab_lr->count() > 0);
      const std::vector<Clip> corpus = load_corpus(ab_corpus);
      const std::vector<Clip> eval_clips = load_corpus(ab_eval_corpus);
      std::filesystem::create_directories(ab_out);

      std::vector<std::uint64_t> seeds;
      {
        std::stringstream ss(ab_seeds);
        std::string item;
        while (std::getline(ss, item, ',')) seeds.push_back(std::stoull(item));
      }
      if (seeds.empty()) throw std::runtime_error("ablate: no seeds given");

      const char* variants[] = {"base", "d", "tc", "f", "full"};
      std::vector<std::string> summary_rows = {"variant,seed,rpa,rca,roa,oa"};
      std::vector<std::string> report_lines;
      for (const std::uint64_t seed : seeds) {
        std::map<std::string, EvalResult> by_variant;
        for (const char* variant : variants) {
          TrainSettings vts = ab_ts;
          vts.variant = variant;
          vts.seed = seed;
          BuiltConfigs cfgs = build_configs(vts, ab_epochs->count() > 0, ab_batch->count() > 0,
                                            ab_lr->count() > 0);
          const std::string run_dir =
              ab_out + "/" + variant + "_seed" + std::to_string(seed);
          EvalResult ev;
          std::printf("== variant %s seed %llu ==\n", variant,
                      static_cast<unsigned long long>(seed));
          const int rc = run_train_one(corpus, cfgs, run_dir, &eval_clips, &ev);
          if (rc != 0) return rc;
          by_variant[variant] = ev;
          char row[256];
          std::snprintf(row, sizeof(row), "%s,%llu,%.6f,%.6f,%.6f,%.6f", variant,
                        static_cast<unsigned long long>(seed), ev.rpa, ev.rca, ev.roa, ev.oa);
          summary_rows.push_back(row);
        }
        const EvalResult& base_ev = by_variant.at("base");
        const EvalResult& full_ev = by_variant.at("full");
        char line[256];
        std::snprintf(line, sizeof(line), "seed=%llu full_ge_base_oa=%s full_ge_base_roa=%s",
                      static_cast<unsigned long long>(seed),
                      full_ev.oa >= base_ev.oa ? "yes" : "no",
                      full_ev.roa >= base_ev.roa ? "yes" : "no");
        report_lines.push_back(line);
        std::printf("%s\n", line);
      }
      write_metric_csv(ab_out + "/summary.csv", summary_rows);
      write_metric_csv(ab_out + "/report.txt", report_lines);
      write_config_file(ab_out + "/effective_config.txt", merge_all(base_cfgs));
      std::printf("wrote %s/summary.csv\n", ab_out.c_str());
      return 0;
    }

    if (plot->parsed()) {
      const PitchContour est = read_contour_csv(plot_est);
      const PitchContour ref = read_contour_csv(plot_ref);
      write_contour_plot(plot_out, est, ref);
      std::printf("wrote %s\n", plot_out.c_str());
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
