#pragma once
#include <array>
#include <cstdint>
#include <vector>

namespace tmae {

// xoshiro256++ with splitmix64 seeding. Hand-rolled because the standard
// library distributions are not bit-identical across implementations and the
// training state (including this stream) must serialize into checkpoints and
// resume bit-exactly. Value semantics: copying an Rng forks the stream.
class Rng {
 public:
  Rng() : Rng(0x9e3779b97f4a7c15ull) {}
  explicit Rng(uint64_t seed);

  uint64_t next_u64();

  // uniform double in [0, 1), 53-bit resolution
  double uniform();
  // uniform double in [lo, hi)
  double uniform(double lo, double hi);
  // uniform integer in [0, n); n > 0. Multiplicative bounding, one draw per
  // call; bias is below 2^-50 for any desk-scale n.
  int64_t uniform_int(int64_t n);
  // standard normal via Box-Muller; consumes exactly two draws per call so
  // the stream position stays a pure function of call count
  double normal();
  double normal(double mean, double sigma);
  bool bernoulli(double p);

  // deterministic Fisher-Yates
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(static_cast<int64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct values from {0..n-1}, order as produced by a partial shuffle
  std::vector<int64_t> sample_without_replacement(int64_t n, int64_t k);

  std::array<uint64_t, 4> state() const { return s_; }
  void set_state(const std::array<uint64_t, 4>& s) { s_ = s; }

 private:
  std::array<uint64_t, 4> s_;
};

// stateless hash used to derive per-frame / per-sequence seeds from a base
// seed without touching any live stream
uint64_t mix_seed(uint64_t base, uint64_t salt);

}  // namespace tmae
