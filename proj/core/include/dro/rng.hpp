#ifndef DRO_RNG_HPP
#define DRO_RNG_HPP

#include <array>
#include <cstdint>

namespace dro {

// Counter-based Philox4x32-10 generator. Each (seed, stream, block) triple
// maps to four 32-bit words through a fixed bijective mixing function, so
// independent streams derived from one seed never overlap and any position
// in a stream can be reproduced from a handful of integers — which is what
// makes checkpoint/resume bit-exact.
//
// Stream discipline: every consumer of randomness (block sampling, batch
// sampling, data synthesis, ...) owns its own stream id, fixed at
// construction. Sequences for distinct stream ids are disjoint by
// construction.
class PhiloxRng {
 public:
  PhiloxRng() : PhiloxRng(0, 0) {}
  PhiloxRng(std::uint64_t seed, std::uint64_t stream);

  std::uint32_t next_u32();
  std::uint64_t next_u64();

  // Uniform double in [0, 1) with 53-bit resolution.
  double uniform();

  // Standard normal via Box-Muller; the second deviate of each pair is
  // cached and returned on the next call.
  double normal();

  // Uniform integer in [0, bound); unbiased via rejection sampling.
  // bound == 0 is invalid.
  std::uint64_t below(std::uint64_t bound);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  // Serializable position: restore() reproduces the exact generator state,
  // including a half-consumed output block and a cached normal deviate.
  struct State {
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;
    std::uint64_t next_block = 0;
    std::uint32_t buffer_pos = 4;  // 4 = buffer empty
    bool has_spare = false;
    double spare = 0.0;
  };
  State state() const;
  void restore(const State& s);

 private:
  std::array<std::uint32_t, 4> generate_block(std::uint64_t block) const;
  void refill();

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t next_block_;
  std::array<std::uint32_t, 4> buffer_;
  std::uint32_t buffer_pos_;  // index of next unread word; 4 = empty
  bool has_spare_;
  double spare_;
};

}  // namespace dro

#endif  // DRO_RNG_HPP
