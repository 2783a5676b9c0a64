#pragma once

// Tone-grouping rearrangement of the frequency axis. Bins congruent mod L
// share a pitch class; gathering each residue class k = 0..L-1 into one
// contiguous block puts a tone's octave-spaced partials next to each other,
// inside the receptive field of a small 2D kernel. Old bin i = m*L + k lands
// at new index k*(F/L) + m.

#include "tonet/tensor.hpp"

namespace tonet {

struct PermutationPlan {
  std::size_t num_bins = 0;         // F
  std::size_t bins_per_octave = 0;  // L
  std::vector<std::size_t> forward;  // new index -> old index
  std::vector<std::size_t> inverse;  // old index -> new index
};

inline PermutationPlan build_permutation(std::size_t num_bins, std::size_t bins_per_octave) {
  if (bins_per_octave == 0 || num_bins == 0 || num_bins % bins_per_octave != 0)
    throw std::invalid_argument("build_permutation: F = " + std::to_string(num_bins) +
                                " is not a multiple of L = " + std::to_string(bins_per_octave));
  PermutationPlan plan;
  plan.num_bins = num_bins;
  plan.bins_per_octave = bins_per_octave;
  plan.forward.resize(num_bins);
  plan.inverse.resize(num_bins);
  const std::size_t per_group = num_bins / bins_per_octave;
  for (std::size_t old = 0; old < num_bins; ++old) {
    const std::size_t k = old % bins_per_octave;
    const std::size_t m = old / bins_per_octave;
    const std::size_t renew = k * per_group + m;
    plan.forward[renew] = old;
    plan.inverse[old] = renew;
  }
  return plan;
}

inline PermutationPlan inverse_plan(const PermutationPlan& plan) {
  PermutationPlan inv = plan;
  std::swap(inv.forward, inv.inverse);
  return inv;
}

// out[c][j][t] = in[c][forward(j)][t]; shape (3, F, T) is preserved.
inline Tensor apply_rearrange(const Tensor& cfp, const PermutationPlan& plan) {
  if (cfp.rank() != 3)
    throw std::invalid_argument("apply_rearrange: expected a (C, F, T) tensor, got " +
                                shape_str(cfp.shape));
  if (cfp.shape[1] != plan.num_bins)
    throw std::invalid_argument("apply_rearrange: tensor has " + std::to_string(cfp.shape[1]) +
                                " frequency bins but the plan covers " + std::to_string(plan.num_bins));
  const std::size_t c = cfp.shape[0], f = cfp.shape[1], t = cfp.shape[2];
  Tensor out(cfp.shape);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t j = 0; j < f; ++j) {
      const double* src = cfp.values.data() + (ch * f + plan.forward[j]) * t;
      double* dst = out.values.data() + (ch * f + j) * t;
      std::copy(src, src + t, dst);
    }
  return out;
}

}  // namespace tonet
