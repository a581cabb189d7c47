// Counter-based random number generation (Philox4x32-10).
//
// Determinism contract: every stream is a pure function of (root seed,
// stream label path). split(label) derives an independent substream, so
// per-(member, rollout-step, scale) streams can be built as
// root.split(member).split(step).split(scale) and drawn from in any order
// or thread, with results independent of the degree of parallelism.

#pragma once

#include <array>
#include <cstdint>

namespace wfm {

class PhiloxRng {
 public:
  explicit PhiloxRng(std::uint64_t seed, std::uint64_t stream = 0);

  // Independent substream; pure function of (this stream, label).
  PhiloxRng split(std::uint64_t label) const;

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  double next_uniform();  // [0, 1), 53-bit resolution
  double next_normal();   // standard normal, Box-Muller

 private:
  std::array<std::uint32_t, 2> key_;
  std::uint64_t counter_ = 0;  // block index
  std::array<std::uint32_t, 4> block_{};
  int block_pos_ = 4;  // exhausted
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;

  void refill();
};

}  // namespace wfm
