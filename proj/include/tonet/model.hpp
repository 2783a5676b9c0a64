#pragma once

// The TONet forward graph.
//
// Two encoders with identical architecture but independent weights turn the
// CFP and TCFP blocks into salience maps (B, F+1, T). Their transposed
// concatenation (B, T, 2F+2) feeds two transformer branches that decode
// per-frame tone (13) and octave (7) presence maps, and a time-axis 1D
// convolution fuses [combined; tone; octave] back into the final salience
// map (B, F+1, T).
//
// Ablation variants reuse the same pieces:
//   base  single CFP encoder, its salience is the final map
//   d     two encoders, both fed CFP, mean salience, no decoder
//   tc    CFP + TCFP encoders, mean salience, no decoder
//   f     single CFP encoder + tone/octave decoders + fusion
//   full  the whole model

#include "tonet/autodiff.hpp"
#include "tonet/params.hpp"

#include <string>
#include <string_view>

namespace tonet {

enum class BackboneKind { mlp, conv_encdec };
enum class Variant { base, d, tc, f, full };
enum class HeadActivation { sigmoid, softmax };

inline std::string to_string(BackboneKind k) {
  return k == BackboneKind::mlp ? "mlp" : "conv-encdec";
}
inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::base: return "base";
    case Variant::d: return "d";
    case Variant::tc: return "tc";
    case Variant::f: return "f";
    default: return "full";
  }
}
inline std::string to_string(HeadActivation h) {
  return h == HeadActivation::sigmoid ? "sigmoid" : "softmax";
}

inline BackboneKind backbone_from_string(const std::string& s) {
  if (s == "mlp") return BackboneKind::mlp;
  if (s == "conv-encdec") return BackboneKind::conv_encdec;
  throw std::invalid_argument("unknown backbone kind '" + s + "'");
}
inline Variant variant_from_string(const std::string& s) {
  if (s == "base") return Variant::base;
  if (s == "d") return Variant::d;
  if (s == "tc") return Variant::tc;
  if (s == "f") return Variant::f;
  if (s == "full") return Variant::full;
  throw std::invalid_argument("unknown variant '" + s + "'");
}
inline HeadActivation head_from_string(const std::string& s) {
  if (s == "sigmoid") return HeadActivation::sigmoid;
  if (s == "softmax") return HeadActivation::softmax;
  throw std::invalid_argument("unknown head activation '" + s + "'");
}

struct ModelConfig {
  std::string preset = "desk";
  BackboneKind backbone = BackboneKind::mlp;
  Variant variant = Variant::full;
  std::size_t num_bins = 360;  // F
  std::size_t tone_classes = 13;
  std::size_t octave_classes = 7;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t blocks = 2;
  std::size_t ff_width = 256;
  std::vector<std::size_t> mlp_hidden = {128, 128};
  std::vector<std::size_t> conv_channels = {8, 16, 32};
  HeadActivation head = HeadActivation::sigmoid;
  bool positional_encoding = true;
  std::uint64_t init_seed = 1;

  static ModelConfig make(const std::string& preset, BackboneKind backbone, Variant variant) {
    ModelConfig c;
    c.preset = preset;
    c.backbone = backbone;
    c.variant = variant;
    if (preset == "paper") {
      c.d_model = 1024;
      c.heads = 8;
      c.ff_width = 4096;
      c.mlp_hidden = {512, 512};
      c.conv_channels = {32, 64, 128};
    } else if (preset == "desk") {
      // paper dimensions scaled down for CPU runs; F stays 360
    } else {
      throw std::invalid_argument("unknown preset '" + preset + "' (expected paper or desk)");
    }
    return c;
  }

  void validate() const {
    if (d_model % heads != 0)
      throw std::invalid_argument("model config: d_model " + std::to_string(d_model) +
                                  " is not divisible by heads " + std::to_string(heads));
    if (conv_channels.size() != 3)
      throw std::invalid_argument("model config: conv-encdec needs exactly 3 channel sizes");
    if (num_bins % (4 * 3 * 6) != 0)
      throw std::invalid_argument("model config: F must be divisible by the pool kernels 4*3*6");
  }

  bool uses_decoder() const { return variant == Variant::f || variant == Variant::full; }
  bool uses_second_encoder() const {
    return variant == Variant::d || variant == Variant::tc || variant == Variant::full;
  }
  // what the second encoder consumes: the TCFP block except for the d variant
  bool second_encoder_takes_tcfp() const { return variant != Variant::d; }

  std::size_t combined_width() const {
    return uses_second_encoder() ? 2 * (num_bins + 1) : num_bins + 1;
  }
  std::size_t fusion_channels() const {
    return combined_width() + tone_classes + octave_classes;
  }
};

// Collects attention maps for inspection; each entry is (B*heads, T, T).
struct TransformerDebug {
  std::vector<NodeId> attention;
};

class TONetModel {
 public:
  explicit TONetModel(ModelConfig config) : cfg_(std::move(config)) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.init_seed);
    build_params(rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  struct Forward {
    NodeId final_map = 0;   // (B, F+1, T)
    NodeId tone_map = 0;    // (B, P, T), decoder variants only
    NodeId octave_map = 0;  // (B, O, T), decoder variants only
    bool has_decoder = false;
  };

  // cfp and tcfp are (B, 3, F, T); tcfp may be any placeholder for variants
  // that never read it.
  Forward forward(Graph& g, NodeId cfp, NodeId tcfp, bool training,
                  TransformerDebug* debug = nullptr) {
    Bound bound{*this, g, {}};
    Forward out;
    if (!cfg_.uses_decoder()) {
      NodeId s1 = backbone_forward_bound(bound, "enc_cfp", cfp, training);
      if (cfg_.uses_second_encoder()) {
        NodeId s2 = backbone_forward_bound(
            bound, "enc_tcfp", cfg_.second_encoder_takes_tcfp() ? tcfp : cfp, training);
        out.final_map = ops::scale(g, ops::add(g, s1, s2), 0.5);
      } else {
        out.final_map = s1;
      }
      return out;
    }
    NodeId combined = encode_pair_bound(bound, cfp, tcfp, training);  // (B, T, C)
    NodeId tone = decode_branch(bound, "tone_dec", combined, cfg_.tone_classes, debug);
    NodeId octave = decode_branch(bound, "oct_dec", combined, cfg_.octave_classes, debug);
    out.tone_map = tone;
    out.octave_map = octave;
    out.has_decoder = true;
    out.final_map = fuse_bound(bound, combined, tone, octave);
    return out;
  }

  // Eq.-style loss: three mean-reduced BCE terms with the decoder, one
  // without it.
  NodeId loss(Graph& g, const Forward& f, NodeId y_final, NodeId y_tone, NodeId y_octave) const {
    NodeId total = ops::bce_mean(g, f.final_map, y_final);
    if (f.has_decoder) {
      total = ops::add(g, ops::bce_mean(g, f.tone_map, y_tone), total);
      total = ops::add(g, ops::bce_mean(g, f.octave_map, y_octave), total);
    }
    return total;
  }

  // Test surface: one encoder pass, (B, 3, F, T) -> (B, F+1, T).
  NodeId backbone_forward(Graph& g, std::string_view prefix, NodeId x, bool training) {
    Bound bound{*this, g, {}};
    return backbone_forward_bound(bound, prefix, x, training);
  }

  // Test surface: both encoders concatenated, (B, T, 2F+2).
  NodeId encode_pair(Graph& g, NodeId cfp, NodeId tcfp, bool training) {
    Bound bound{*this, g, {}};
    return encode_pair_bound(bound, cfp, tcfp, training);
  }

  // Test surface: one transformer block, (B, T, d_model) -> (B, T, d_model).
  NodeId transformer_block(Graph& g, std::string_view branch_prefix, std::size_t block,
                           NodeId x, TransformerDebug* debug = nullptr) {
    Bound bound{*this, g, {}};
    return transformer_block_bound(bound, std::string(branch_prefix) + ".blk" + std::to_string(block),
                                   x, debug);
  }

  NodeId fuse(Graph& g, NodeId combined, NodeId tone_map, NodeId octave_map) {
    Bound bound{*this, g, {}};
    return fuse_bound(bound, combined, tone_map, octave_map);
  }

 private:
  ModelConfig cfg_;
  ParamStore params_;

  // Per-graph binding of parameters to leaves, created on demand so each
  // forward pass records exactly the leaves it touches.
  struct Bound {
    TONetModel& model;
    Graph& g;
    std::map<std::string, NodeId> ids;

    NodeId operator()(const std::string& name) {
      auto it = ids.find(name);
      if (it != ids.end()) return it->second;
      const NodeId id = g.leaf(model.params_.get(name), model.params_.trainable(name), name);
      ids.emplace(name, id);
      return id;
    }
  };

  // ---- parameter construction -------------------------------------------

  void kaiming_uniform(Tensor& t, std::size_t fan_in, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    fill_uniform(t, rng, -limit, limit);
  }

  void add_linear(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
    Tensor w(Shape{in, out});
    kaiming_uniform(w, in, rng);
    params_.add(name + ".w", std::move(w));
    params_.add(name + ".b", Tensor(Shape{out}, 0.0));
  }

  void add_conv2d(const std::string& name, std::size_t co, std::size_t ci, std::size_t kh,
                  std::size_t kw, std::mt19937_64& rng) {
    Tensor w(Shape{co, ci, kh, kw});
    kaiming_uniform(w, ci * kh * kw, rng);
    params_.add(name + ".w", std::move(w));
    params_.add(name + ".b", Tensor(Shape{co}, 0.0));
  }

  void add_conv1d(const std::string& name, std::size_t co, std::size_t ci, std::size_t k,
                  std::mt19937_64& rng) {
    Tensor w(Shape{co, ci, k});
    kaiming_uniform(w, ci * k, rng);
    params_.add(name + ".w", std::move(w));
    params_.add(name + ".b", Tensor(Shape{co}, 0.0));
  }

  void add_batch_norm(const std::string& name, std::size_t c) {
    params_.add(name + ".gamma", Tensor(Shape{c}, 1.0));
    params_.add(name + ".beta", Tensor(Shape{c}, 0.0));
    params_.add(name + ".running_mean", Tensor(Shape{c}, 0.0), /*trainable=*/false);
    params_.add(name + ".running_var", Tensor(Shape{c}, 1.0), /*trainable=*/false);
  }

  void add_layer_norm(const std::string& name, std::size_t d) {
    params_.add(name + ".gain", Tensor(Shape{d}, 1.0));
    params_.add(name + ".bias", Tensor(Shape{d}, 0.0));
  }

  void build_encoder(const std::string& prefix, std::mt19937_64& rng) {
    const std::size_t f = cfg_.num_bins;
    if (cfg_.backbone == BackboneKind::mlp) {
      std::size_t in = 3 * f;
      for (std::size_t i = 0; i < cfg_.mlp_hidden.size(); ++i) {
        add_linear(prefix + ".fc" + std::to_string(i), in, cfg_.mlp_hidden[i], rng);
        in = cfg_.mlp_hidden[i];
      }
      add_linear(prefix + ".out", in, f + 1, rng);
    } else {
      const auto& ch = cfg_.conv_channels;
      add_conv2d(prefix + ".conv1", ch[0], 3, 5, 5, rng);
      add_batch_norm(prefix + ".bn1", ch[0]);
      add_conv2d(prefix + ".conv2", ch[1], ch[0], 5, 5, rng);
      add_batch_norm(prefix + ".bn2", ch[1]);
      add_conv2d(prefix + ".conv3", ch[2], ch[1], 5, 5, rng);
      add_batch_norm(prefix + ".bn3", ch[2]);
      add_conv2d(prefix + ".dconv3", ch[1], ch[2], 5, 5, rng);
      add_batch_norm(prefix + ".dbn3", ch[1]);
      add_conv2d(prefix + ".dconv2", ch[0], ch[1], 5, 5, rng);
      add_batch_norm(prefix + ".dbn2", ch[0]);
      add_conv2d(prefix + ".dconv1", 1, ch[0], 5, 5, rng);
      // non-melody row from the bottleneck, per frame
      add_conv1d(prefix + ".voice", 1, ch[2] * (f / (4 * 3 * 6)), 1, rng);
    }
  }

  void build_decoder(const std::string& prefix, std::size_t classes, std::mt19937_64& rng) {
    add_linear(prefix + ".proj", cfg_.combined_width(), cfg_.d_model, rng);
    for (std::size_t b = 0; b < cfg_.blocks; ++b) {
      const std::string blk = prefix + ".blk" + std::to_string(b);
      add_linear(blk + ".wq", cfg_.d_model, cfg_.d_model, rng);
      add_linear(blk + ".wk", cfg_.d_model, cfg_.d_model, rng);
      add_linear(blk + ".wv", cfg_.d_model, cfg_.d_model, rng);
      add_linear(blk + ".wo", cfg_.d_model, cfg_.d_model, rng);
      add_layer_norm(blk + ".ln1", cfg_.d_model);
      add_linear(blk + ".ff1", cfg_.d_model, cfg_.ff_width, rng);
      add_linear(blk + ".ff2", cfg_.ff_width, cfg_.d_model, rng);
      add_layer_norm(blk + ".ln2", cfg_.d_model);
    }
    add_linear(prefix + ".head", cfg_.d_model, classes, rng);
  }

  void build_params(std::mt19937_64& rng) {
    build_encoder("enc_cfp", rng);
    if (cfg_.uses_second_encoder()) build_encoder("enc_tcfp", rng);
    if (cfg_.uses_decoder()) {
      build_decoder("tone_dec", cfg_.tone_classes, rng);
      build_decoder("oct_dec", cfg_.octave_classes, rng);
      add_conv1d("fusion.conv", cfg_.num_bins + 1, cfg_.fusion_channels(), 5, rng);
    }
  }

  // ---- forward pieces -----------------------------------------------------

  NodeId class_activation(Graph& g, NodeId x, int class_axis) const {
    return cfg_.head == HeadActivation::sigmoid ? ops::sigmoid(g, x)
                                                : ops::softmax(g, x, class_axis);
  }

  NodeId backbone_forward_bound(Bound& bound, std::string_view prefix, NodeId x, bool training) {
    Graph& g = bound.g;
    const Tensor& tx = g.value(x);
    if (tx.rank() != 4 || tx.shape[1] != 3 || tx.shape[2] != cfg_.num_bins)
      throw std::invalid_argument("backbone: expected input (B, 3, " +
                                  std::to_string(cfg_.num_bins) + ", T), got " + shape_str(tx.shape));
    const std::size_t b = tx.shape[0], f = tx.shape[2], t = tx.shape[3];
    const std::string p(prefix);

    if (cfg_.backbone == BackboneKind::mlp) {
      NodeId h = ops::permute(g, x, {0, 3, 1, 2});           // (B, T, 3, F)
      h = ops::reshape(g, h, {b * t, 3 * f});                // per-frame features
      for (std::size_t i = 0; i < cfg_.mlp_hidden.size(); ++i) {
        const std::string fc = p + ".fc" + std::to_string(i);
        h = ops::relu(g, ops::linear(g, h, bound(fc + ".w"), bound(fc + ".b")));
      }
      h = ops::linear(g, h, bound(p + ".out.w"), bound(p + ".out.b"));  // (B*T, F+1)
      h = class_activation(g, h, -1);
      h = ops::reshape(g, h, {b, t, f + 1});
      return ops::permute(g, h, {0, 2, 1});  // (B, F+1, T)
    }

    auto conv_bn_relu = [&](NodeId in, const std::string& conv, const std::string& bn) {
      NodeId c = ops::conv2d(g, in, bound(conv + ".w"), bound(conv + ".b"), 2, 2);
      c = ops::batch_norm(g, c, bound(bn + ".gamma"), bound(bn + ".beta"),
                          params_.get(bn + ".running_mean"), params_.get(bn + ".running_var"),
                          training);
      return ops::relu(g, c);
    };

    NodeId e1 = conv_bn_relu(x, p + ".conv1", p + ".bn1");
    NodeId p1 = ops::max_pool2d(g, e1, 4, 1);  // F -> F/4
    NodeId e2 = conv_bn_relu(p1, p + ".conv2", p + ".bn2");
    NodeId p2 = ops::max_pool2d(g, e2, 3, 1);  // -> F/12
    NodeId e3 = conv_bn_relu(p2, p + ".conv3", p + ".bn3");
    NodeId p3 = ops::max_pool2d(g, e3, 6, 1);  // -> F/72 (bottleneck)

    NodeId d3 = conv_bn_relu(ops::max_unpool2d(g, p3, p3), p + ".dconv3", p + ".dbn3");
    NodeId d2 = conv_bn_relu(ops::max_unpool2d(g, d3, p2), p + ".dconv2", p + ".dbn2");
    NodeId d1 = ops::conv2d(g, ops::max_unpool2d(g, d2, p1), bound(p + ".dconv1.w"),
                            bound(p + ".dconv1.b"), 2, 2);  // (B, 1, F, T)
    NodeId pitch = ops::reshape(g, d1, {b, f, t});

    const std::size_t bottleneck = cfg_.num_bins / (4 * 3 * 6);
    const std::size_t c3 = cfg_.conv_channels[2];
    NodeId voice = ops::reshape(g, p3, {b, c3 * bottleneck, t});
    voice = ops::conv1d(g, voice, bound(p + ".voice.w"), bound(p + ".voice.b"), 0);  // (B, 1, T)

    NodeId logits = ops::concat(g, {voice, pitch}, 1);  // row 0 = non-melody
    return class_activation(g, logits, 1);
  }

  NodeId encode_pair_bound(Bound& bound, NodeId cfp, NodeId tcfp, bool training) {
    Graph& g = bound.g;
    NodeId s1 = backbone_forward_bound(bound, "enc_cfp", cfp, training);
    NodeId c1 = ops::permute(g, s1, {0, 2, 1});  // (B, T, F+1)
    if (!cfg_.uses_second_encoder()) return c1;
    NodeId s2 = backbone_forward_bound(bound, "enc_tcfp",
                                       cfg_.second_encoder_takes_tcfp() ? tcfp : cfp, training);
    NodeId c2 = ops::permute(g, s2, {0, 2, 1});
    return ops::concat(g, {c1, c2}, 2);  // CFP columns first
  }

  Tensor sinusoidal_encoding(std::size_t t_frames, std::size_t d) const {
    Tensor pe(Shape{t_frames, d});
    for (std::size_t pos = 0; pos < t_frames; ++pos)
      for (std::size_t i = 0; i < d; ++i) {
        const double angle =
            static_cast<double>(pos) /
            std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
        pe.at(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
      }
    return pe;
  }

  NodeId transformer_block_bound(Bound& bound, const std::string& blk, NodeId x,
                                 TransformerDebug* debug) {
    Graph& g = bound.g;
    const Tensor& tx = g.value(x);
    if (tx.rank() != 3 || tx.shape[2] != cfg_.d_model)
      throw std::invalid_argument("transformer block: expected (B, T, " +
                                  std::to_string(cfg_.d_model) + "), got " + shape_str(tx.shape));
    const std::size_t b = tx.shape[0], t = tx.shape[1], d = cfg_.d_model;
    const std::size_t h = cfg_.heads, dh = d / h;

    NodeId flat = ops::reshape(g, x, {b * t, d});
    auto project = [&](const std::string& name) {
      NodeId y = ops::linear(g, flat, bound(blk + "." + name + ".w"), bound(blk + "." + name + ".b"));
      y = ops::reshape(g, y, {b, t, h, dh});
      y = ops::permute(g, y, {0, 2, 1, 3});       // (B, h, T, dh)
      return ops::reshape(g, y, {b * h, t, dh});  // batched heads
    };
    NodeId q = project("wq");
    NodeId k = project("wk");
    NodeId v = project("wv");

    NodeId kt = ops::permute(g, ops::reshape(g, k, {b * h, t, dh}), {0, 2, 1});  // (B*h, dh, T)
    NodeId scores = ops::scale(g, ops::matmul(g, q, kt), 1.0 / std::sqrt(static_cast<double>(dh)));
    NodeId attn = ops::softmax(g, scores, -1);  // rows over the T axis
    if (debug) debug->attention.push_back(attn);

    NodeId ctx = ops::matmul(g, attn, v);                     // (B*h, T, dh)
    ctx = ops::reshape(g, ctx, {b, h, t, dh});
    ctx = ops::permute(g, ctx, {0, 2, 1, 3});                 // (B, T, h, dh)
    ctx = ops::reshape(g, ctx, {b * t, d});
    NodeId proj = ops::linear(g, ctx, bound(blk + ".wo.w"), bound(blk + ".wo.b"));
    proj = ops::reshape(g, proj, {b, t, d});

    NodeId res1 = ops::add(g, x, proj);
    NodeId ln1 = ops::layer_norm(g, res1, bound(blk + ".ln1.gain"), bound(blk + ".ln1.bias"));

    NodeId ff = ops::reshape(g, ln1, {b * t, d});
    ff = ops::relu(g, ops::linear(g, ff, bound(blk + ".ff1.w"), bound(blk + ".ff1.b")));
    ff = ops::linear(g, ff, bound(blk + ".ff2.w"), bound(blk + ".ff2.b"));
    ff = ops::reshape(g, ff, {b, t, d});

    NodeId res2 = ops::add(g, ln1, ff);
    return ops::layer_norm(g, res2, bound(blk + ".ln2.gain"), bound(blk + ".ln2.bias"));
  }

  // combined (B, T, C) -> class presence map (B, classes, T)
  NodeId decode_branch(Bound& bound, const std::string& prefix, NodeId combined,
                       std::size_t classes, TransformerDebug* debug) {
    Graph& g = bound.g;
    const Tensor& tc = g.value(combined);
    const std::size_t b = tc.shape[0], t = tc.shape[1], c = tc.shape[2];

    NodeId h = ops::reshape(g, combined, {b * t, c});
    h = ops::linear(g, h, bound(prefix + ".proj.w"), bound(prefix + ".proj.b"));
    h = ops::reshape(g, h, {b, t, cfg_.d_model});
    if (cfg_.positional_encoding) {
      Tensor pe = sinusoidal_encoding(t, cfg_.d_model);
      Tensor tiled(Shape{b, t, cfg_.d_model});
      for (std::size_t i = 0; i < b; ++i)
        std::copy(pe.values.begin(), pe.values.end(),
                  tiled.values.begin() + i * pe.numel());
      h = ops::add(g, h, g.constant(std::move(tiled)));
    }
    for (std::size_t blk = 0; blk < cfg_.blocks; ++blk)
      h = transformer_block_bound(bound, prefix + ".blk" + std::to_string(blk), h, debug);

    h = ops::reshape(g, h, {b * t, cfg_.d_model});
    h = ops::linear(g, h, bound(prefix + ".head.w"), bound(prefix + ".head.b"));
    h = class_activation(g, h, -1);
    h = ops::reshape(g, h, {b, t, classes});
    return ops::permute(g, h, {0, 2, 1});  // (B, classes, T)
  }

  NodeId fuse_bound(Bound& bound, NodeId combined, NodeId tone_map, NodeId octave_map) {
    Graph& g = bound.g;
    const Tensor& tc = g.value(combined);
    const Tensor& tt = g.value(tone_map);
    const Tensor& to = g.value(octave_map);
    if (tc.shape[1] != tt.shape[2] || tc.shape[1] != to.shape[2])
      throw std::invalid_argument("fuse: time lengths disagree: combined " + shape_str(tc.shape) +
                                  ", tone " + shape_str(tt.shape) + ", octave " + shape_str(to.shape));
    NodeId features = ops::permute(g, combined, {0, 2, 1});  // (B, C, T)
    NodeId gathered = ops::concat(g, {features, tone_map, octave_map}, 1);
    NodeId fused = ops::conv1d(g, gathered, bound("fusion.conv.w"), bound("fusion.conv.b"), 2);
    return class_activation(g, fused, 1);  // (B, F+1, T)
  }
};

}  // namespace tonet
