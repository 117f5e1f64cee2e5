#include "dro/rng.hpp"

#include <cmath>
#include <numbers>

#include "dro/errors.hpp"

namespace dro {
namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi,
                    std::uint32_t& lo) {
  const std::uint64_t prod = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(prod >> 32);
  lo = static_cast<std::uint32_t>(prod);
}

inline void philox_round(std::array<std::uint32_t, 4>& ctr,
                         const std::array<std::uint32_t, 2>& key) {
  std::uint32_t hi0, lo0, hi1, lo1;
  mulhilo(kMul0, ctr[0], hi0, lo0);
  mulhilo(kMul1, ctr[2], hi1, lo1);
  ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
}

}  // namespace

PhiloxRng::PhiloxRng(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed),
      stream_(stream),
      next_block_(0),
      buffer_{},
      buffer_pos_(4),
      has_spare_(false),
      spare_(0.0) {}

std::array<std::uint32_t, 4> PhiloxRng::generate_block(
    std::uint64_t block) const {
  // Counter words 0-1 hold the block index, words 2-3 the stream id; the key
  // holds the seed. 10 rounds with Weyl key bumps between rounds.
  std::array<std::uint32_t, 4> ctr = {
      static_cast<std::uint32_t>(block),
      static_cast<std::uint32_t>(block >> 32),
      static_cast<std::uint32_t>(stream_),
      static_cast<std::uint32_t>(stream_ >> 32)};
  std::array<std::uint32_t, 2> key = {static_cast<std::uint32_t>(seed_),
                                      static_cast<std::uint32_t>(seed_ >> 32)};
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    philox_round(ctr, key);
  }
  return ctr;
}

void PhiloxRng::refill() {
  buffer_ = generate_block(next_block_);
  ++next_block_;
  buffer_pos_ = 0;
}

std::uint32_t PhiloxRng::next_u32() {
  if (buffer_pos_ >= 4) refill();
  return buffer_[buffer_pos_++];
}

std::uint64_t PhiloxRng::next_u64() {
  const std::uint64_t lo = next_u32();
  const std::uint64_t hi = next_u32();
  return (hi << 32) | lo;
}

double PhiloxRng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double PhiloxRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // u1 in (0, 1] keeps the log finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::uint64_t PhiloxRng::below(std::uint64_t bound) {
  if (bound == 0) throw invalid_input("PhiloxRng::below: bound must be > 0");
  // Reject the low-order residue class so the remaining range is an exact
  // multiple of bound.
  const std::uint64_t rem = (0 - bound) % bound;  // 2^64 mod bound
  std::uint64_t x = next_u64();
  while (x < rem) x = next_u64();
  return (x - rem) % bound;
}

PhiloxRng::State PhiloxRng::state() const {
  State s;
  s.seed = seed_;
  s.stream = stream_;
  s.next_block = next_block_;
  s.buffer_pos = buffer_pos_;
  s.has_spare = has_spare_;
  s.spare = spare_;
  return s;
}

void PhiloxRng::restore(const State& s) {
  if (s.buffer_pos > 4 || (s.buffer_pos < 4 && s.next_block == 0))
    throw invalid_input("PhiloxRng::restore: inconsistent state");
  seed_ = s.seed;
  stream_ = s.stream;
  next_block_ = s.next_block;
  buffer_pos_ = s.buffer_pos;
  has_spare_ = s.has_spare;
  spare_ = s.spare;
  if (buffer_pos_ < 4) {
    buffer_ = generate_block(next_block_ - 1);
  } else {
    buffer_.fill(0);
  }
}

}  // namespace dro
