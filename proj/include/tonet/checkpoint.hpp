#pragma once

// Checkpoint file: the magic string "TONETCKPT1" followed by one record per
// parameter, in store order:
//   u64 LE  name length
//   bytes   UTF-8 name
//   u64 LE  rank
//   u64 LE  x rank dims
//   f64 LE  x numel values
// Loading requires an exact name/shape match against the existing store, so
// checkpoints only restore the model configuration they were trained with.

#include "tonet/params.hpp"

#include <cstdint>
#include <fstream>

namespace tonet {

namespace ckpt_detail {

inline constexpr char kMagic[] = "TONETCKPT1";
inline constexpr std::size_t kMagicLen = 10;

inline void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}

inline std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

}  // namespace ckpt_detail

inline void save_checkpoint(const std::string& path, const ParamStore& store) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  f.write(ckpt_detail::kMagic, ckpt_detail::kMagicLen);
  for (const auto& e : store.entries()) {
    ckpt_detail::write_u64(f, e.name.size());
    f.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    ckpt_detail::write_u64(f, e.tensor.rank());
    for (std::size_t d : e.tensor.shape) ckpt_detail::write_u64(f, d);
    f.write(reinterpret_cast<const char*>(e.tensor.values.data()),
            static_cast<std::streamsize>(e.tensor.values.size() * sizeof(double)));
  }
  if (!f) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

// Restores values into an existing store built from the same configuration.
inline void load_checkpoint(const std::string& path, ParamStore& store) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  char magic[ckpt_detail::kMagicLen];
  f.read(magic, ckpt_detail::kMagicLen);
  if (!f || std::string(magic, ckpt_detail::kMagicLen) != ckpt_detail::kMagic)
    throw std::runtime_error("checkpoint: '" + path + "' has no TONETCKPT1 magic");

  std::size_t restored = 0;
  while (true) {
    const std::uint64_t name_len = ckpt_detail::read_u64(f);
    if (f.eof()) break;
    if (!f || name_len == 0 || name_len > 4096)
      throw std::runtime_error("checkpoint: '" + path + "' is corrupt (bad name length)");
    std::string name(name_len, '\0');
    f.read(name.data(), static_cast<std::streamsize>(name_len));
    const std::uint64_t rank = ckpt_detail::read_u64(f);
    if (!f || rank > 8) throw std::runtime_error("checkpoint: '" + path + "' is corrupt (bad rank)");
    Shape shape(rank);
    for (std::uint64_t d = 0; d < rank; ++d) shape[d] = ckpt_detail::read_u64(f);
    if (!store.has(name))
      throw std::runtime_error("checkpoint: parameter '" + name + "' does not exist in this model");
    Tensor& dst = store.get(name);
    if (dst.shape != shape)
      throw std::runtime_error("checkpoint: parameter '" + name + "' has shape " + shape_str(shape) +
                               " on disk but " + shape_str(dst.shape) + " in the model");
    f.read(reinterpret_cast<char*>(dst.values.data()),
           static_cast<std::streamsize>(dst.values.size() * sizeof(double)));
    if (!f) throw std::runtime_error("checkpoint: '" + path + "' is truncated");
    ++restored;
  }
  if (restored != store.size())
    throw std::runtime_error("checkpoint: '" + path + "' restored " + std::to_string(restored) +
                             " of " + std::to_string(store.size()) + " parameters");
}

}  // namespace tonet
