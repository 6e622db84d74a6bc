#pragma once

#include <sys/random.h>

#include <cerrno>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <random>

#include "keyless/errors.hpp"

namespace keyless {

// Byte-oriented random source. Cryptographic operations (nonce sampling,
// prime generation, shuffle permutations) draw from this interface so tests
// and the --seed CLI mode can substitute a deterministic generator.
class RandomSource {
 public:
  virtual ~RandomSource() = default;

  // Fills `out[0..len)` with random bytes.
  virtual void fill(unsigned char* out, std::size_t len) = 0;

  // Uniform integer in [0, bound), bound > 0. Rejection-sampled so the
  // result is exactly uniform.
  std::uint64_t uniform_u64(std::uint64_t bound) {
    if (bound == 0) throw Error("uniform_u64: bound must be positive");
    // 2^64 mod bound; values >= 2^64 - rem would bias the result.
    const std::uint64_t rem = (~std::uint64_t{0} % bound + 1) % bound;
    const std::uint64_t cutoff = ~std::uint64_t{0} - rem;
    for (;;) {
      std::uint64_t v = 0;
      unsigned char buf[8];
      fill(buf, sizeof buf);
      std::memcpy(&v, buf, sizeof v);
      if (v <= cutoff) return v % bound;
    }
  }
};

// Operating-system entropy; used by default for all protocol randomness.
class SystemRandom final : public RandomSource {
 public:
  void fill(unsigned char* out, std::size_t len) override {
    while (len > 0) {
      // getrandom() accepts at most 256 bytes per call without blocking
      // guarantees; chunking keeps each request small.
      const std::size_t chunk = len < 256 ? len : 256;
      const ssize_t got = ::getrandom(out, chunk, 0);
      if (got < 0) {
        if (errno == EINTR) continue;
        throw Error("getrandom failed");
      }
      out += got;
      len -= static_cast<std::size_t>(got);
    }
  }
};

// Deterministic source for tests and reproducible CLI runs. Not
// cryptographically strong; production paths default to SystemRandom.
class SeededRandom final : public RandomSource {
 public:
  explicit SeededRandom(std::uint64_t seed) : engine_(seed) {}

  void fill(unsigned char* out, std::size_t len) override {
    while (len > 0) {
      if (avail_ == 0) {
        word_ = engine_();
        avail_ = 8;
      }
      *out++ = static_cast<unsigned char>(word_ & 0xff);
      word_ >>= 8;
      --avail_;
      --len;
    }
  }

 private:
  std::mt19937_64 engine_;
  std::uint64_t word_ = 0;
  int avail_ = 0;
};

}  // namespace keyless
