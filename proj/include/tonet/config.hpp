#pragma once

// key=value config files. One option per line, '#' starts a comment. Keys are
// written sorted so emitted files are byte-stable.

#include "tonet/dsp.hpp"
#include "tonet/model.hpp"

#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace tonet {

using KeyValues = std::map<std::string, std::string>;

inline KeyValues read_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open '" + path + "'");
  KeyValues kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    // trim
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: '" + path + "' line " + std::to_string(line_no) +
                               " is not key=value");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    const auto kl = key.find_last_not_of(" \t");
    key = key.substr(0, kl + 1);
    const auto vf = value.find_first_not_of(" \t");
    value = vf == std::string::npos ? "" : value.substr(vf);
    kv[key] = value;
  }
  return kv;
}

inline void write_config_file(const std::string& path, const KeyValues& kv) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("config: cannot open '" + path + "' for writing");
  for (const auto& [k, v] : kv) f << k << "=" << v << "\n";
  if (!f) throw std::runtime_error("config: write failed for '" + path + "'");
}

namespace config_detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline std::string fmt_list(const std::vector<std::size_t>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ",";
    os << v[i];
  }
  return os.str();
}

inline std::vector<std::size_t> parse_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoul(item));
  return out;
}

}  // namespace config_detail

inline KeyValues model_config_to_kv(const ModelConfig& m) {
  KeyValues kv;
  kv["model.preset"] = m.preset;
  kv["model.backbone"] = to_string(m.backbone);
  kv["model.variant"] = to_string(m.variant);
  kv["model.num_bins"] = std::to_string(m.num_bins);
  kv["model.d_model"] = std::to_string(m.d_model);
  kv["model.heads"] = std::to_string(m.heads);
  kv["model.blocks"] = std::to_string(m.blocks);
  kv["model.ff_width"] = std::to_string(m.ff_width);
  kv["model.mlp_hidden"] = config_detail::fmt_list(m.mlp_hidden);
  kv["model.conv_channels"] = config_detail::fmt_list(m.conv_channels);
  kv["model.head"] = to_string(m.head);
  kv["model.positional_encoding"] = m.positional_encoding ? "1" : "0";
  kv["model.init_seed"] = std::to_string(m.init_seed);
  return kv;
}

inline ModelConfig model_config_from_kv(const KeyValues& kv) {
  ModelConfig m = ModelConfig::make(kv.count("model.preset") ? kv.at("model.preset") : "desk",
                                    BackboneKind::mlp, Variant::full);
  auto get = [&](const char* key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  if (auto* v = get("model.backbone")) m.backbone = backbone_from_string(*v);
  if (auto* v = get("model.variant")) m.variant = variant_from_string(*v);
  if (auto* v = get("model.num_bins")) m.num_bins = std::stoul(*v);
  if (auto* v = get("model.d_model")) m.d_model = std::stoul(*v);
  if (auto* v = get("model.heads")) m.heads = std::stoul(*v);
  if (auto* v = get("model.blocks")) m.blocks = std::stoul(*v);
  if (auto* v = get("model.ff_width")) m.ff_width = std::stoul(*v);
  if (auto* v = get("model.mlp_hidden")) m.mlp_hidden = config_detail::parse_list(*v);
  if (auto* v = get("model.conv_channels")) m.conv_channels = config_detail::parse_list(*v);
  if (auto* v = get("model.head")) m.head = head_from_string(*v);
  if (auto* v = get("model.positional_encoding")) m.positional_encoding = *v != "0";
  if (auto* v = get("model.init_seed")) m.init_seed = std::stoull(*v);
  m.validate();
  return m;
}

inline KeyValues cfp_config_to_kv(const CfpConfig& c) {
  KeyValues kv;
  kv["cfp.sample_rate"] = config_detail::fmt(c.sample_rate);
  kv["cfp.window"] = std::to_string(c.window);
  kv["cfp.hop"] = std::to_string(c.hop);
  kv["cfp.bins_per_octave"] = std::to_string(c.bins_per_octave);
  kv["cfp.num_bins"] = std::to_string(c.num_bins);
  kv["cfp.f_min"] = config_detail::fmt(c.f_min);
  kv["cfp.f_max"] = config_detail::fmt(c.f_max);
  kv["cfp.gamma0"] = config_detail::fmt(c.gamma0);
  kv["cfp.gamma1"] = config_detail::fmt(c.gamma1);
  kv["cfp.gamma2"] = config_detail::fmt(c.gamma2);
  kv["cfp.freq_cutoff"] = config_detail::fmt(c.freq_cutoff);
  kv["cfp.quef_cutoff"] = config_detail::fmt(c.quef_cutoff);
  kv["cfp.freq_resolution"] = config_detail::fmt(c.freq_resolution);
  kv["cfp.nearest_bin_mapping"] = c.nearest_bin_mapping ? "1" : "0";
  return kv;
}

inline CfpConfig cfp_config_from_kv(const KeyValues& kv) {
  CfpConfig c;
  auto get = [&](const char* key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  if (auto* v = get("cfp.sample_rate")) c.sample_rate = std::stod(*v);
  if (auto* v = get("cfp.window")) c.window = std::stoul(*v);
  if (auto* v = get("cfp.hop")) c.hop = std::stoul(*v);
  if (auto* v = get("cfp.bins_per_octave")) c.bins_per_octave = std::stoul(*v);
  if (auto* v = get("cfp.num_bins")) c.num_bins = std::stoul(*v);
  if (auto* v = get("cfp.f_min")) c.f_min = std::stod(*v);
  if (auto* v = get("cfp.f_max")) c.f_max = std::stod(*v);
  if (auto* v = get("cfp.gamma0")) c.gamma0 = std::stod(*v);
  if (auto* v = get("cfp.gamma1")) c.gamma1 = std::stod(*v);
  if (auto* v = get("cfp.gamma2")) c.gamma2 = std::stod(*v);
  if (auto* v = get("cfp.freq_cutoff")) c.freq_cutoff = std::stod(*v);
  if (auto* v = get("cfp.quef_cutoff")) c.quef_cutoff = std::stod(*v);
  if (auto* v = get("cfp.freq_resolution")) c.freq_resolution = std::stod(*v);
  if (auto* v = get("cfp.nearest_bin_mapping")) c.nearest_bin_mapping = *v != "0";
  c.validate();
  return c;
}

}  // namespace tonet
