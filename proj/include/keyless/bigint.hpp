#pragma once

#include <gmpxx.h>

#include <cstddef>
#include <cstdint>
#include <vector>

#include "keyless/errors.hpp"
#include "keyless/rng.hpp"

namespace keyless {

// Arbitrary-precision integer. GMP supplies the arithmetic; everything
// protocol-specific (serialization, sampling, primality policy) lives here.
using Bigint = mpz_class;

// Number of significant bits; 0 for value 0.
inline std::size_t bit_length(const Bigint& v) {
  if (v == 0) return 0;
  return mpz_sizeinbase(v.get_mpz_t(), 2);
}

// Big-endian magnitude bytes, no leading zeros; empty for 0. Requires v >= 0.
inline std::vector<unsigned char> to_bytes(const Bigint& v) {
  if (v < 0) throw CryptoError("to_bytes: negative value");
  if (v == 0) return {};
  std::vector<unsigned char> out((bit_length(v) + 7) / 8);
  std::size_t count = 0;
  mpz_export(out.data(), &count, 1, 1, 1, 0, v.get_mpz_t());
  out.resize(count);
  return out;
}

inline Bigint from_bytes(const unsigned char* data, std::size_t len) {
  Bigint v;
  if (len > 0) mpz_import(v.get_mpz_t(), len, 1, 1, 1, 0, data);
  return v;
}

// base^exp mod mod with exp >= 0. GMP reduces after every step, so the
// working values never grow beyond mod-sized operands.
inline Bigint powm(const Bigint& base, const Bigint& exp, const Bigint& mod) {
  if (exp < 0) throw CryptoError("powm: negative exponent");
  if (mod <= 0) throw CryptoError("powm: modulus must be positive");
  Bigint r;
  mpz_powm(r.get_mpz_t(), base.get_mpz_t(), exp.get_mpz_t(), mod.get_mpz_t());
  return r;
}

// Modular inverse; throws CryptoError when gcd(v, mod) != 1.
inline Bigint invmod(const Bigint& v, const Bigint& mod) {
  Bigint r;
  if (mpz_invert(r.get_mpz_t(), v.get_mpz_t(), mod.get_mpz_t()) == 0) {
    throw CryptoError("no modular inverse exists");
  }
  return r;
}

inline Bigint gcd(const Bigint& a, const Bigint& b) {
  Bigint r;
  mpz_gcd(r.get_mpz_t(), a.get_mpz_t(), b.get_mpz_t());
  return r;
}

inline Bigint lcm(const Bigint& a, const Bigint& b) {
  Bigint r;
  mpz_lcm(r.get_mpz_t(), a.get_mpz_t(), b.get_mpz_t());
  return r;
}

// Non-negative remainder, also for negative v.
inline Bigint mod(const Bigint& v, const Bigint& m) {
  Bigint r;
  mpz_mod(r.get_mpz_t(), v.get_mpz_t(), m.get_mpz_t());
  return r;
}

// Centered representative: residues above (n-1)/2 stand for negative values.
inline Bigint to_signed(const Bigint& v, const Bigint& n) {
  if (v < 0 || v >= n) throw CryptoError("to_signed: value out of [0, n)");
  if (2 * v > n - 1) return v - n;
  return v;
}

// Embeds a signed value with |v| < n/2 as a residue in [0, n).
inline Bigint from_signed(const Bigint& v, const Bigint& n) {
  return mod(v, n);
}

// Probabilistic primality with error probability at most 2^-80
// (40 Miller-Rabin rounds; GMP adds a Baillie-PSW stage first).
inline bool is_probable_prime(const Bigint& v) {
  return mpz_probab_prime_p(v.get_mpz_t(), 40) != 0;
}

// Uniform value in [0, 2^bits).
inline Bigint random_bits(RandomSource& rng, std::size_t bits) {
  if (bits == 0) return 0;
  std::vector<unsigned char> buf((bits + 7) / 8);
  rng.fill(buf.data(), buf.size());
  if (bits % 8 != 0) {
    buf[0] &= static_cast<unsigned char>(0xff >> (8 - bits % 8));
  }
  return from_bytes(buf.data(), buf.size());
}

// Uniform value in [0, bound) by rejection sampling.
inline Bigint random_below(RandomSource& rng, const Bigint& bound) {
  if (bound <= 0) throw CryptoError("random_below: bound must be positive");
  const std::size_t bits = bit_length(bound);
  for (;;) {
    Bigint v = random_bits(rng, bits);
    if (v < bound) return v;
  }
}

// Random prime with exactly `bits` bits and the top two bits set, so the
// product of two such primes has exactly the sum of their bit lengths.
// Retries are capped to keep a broken random source from spinning forever.
inline Bigint random_prime(RandomSource& rng, std::size_t bits) {
  if (bits < 3) throw CryptoError("random_prime: need at least 3 bits");
  constexpr int kMaxAttempts = 10000;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Bigint v = random_bits(rng, bits);
    mpz_setbit(v.get_mpz_t(), bits - 1);
    mpz_setbit(v.get_mpz_t(), bits - 2);
    mpz_setbit(v.get_mpz_t(), 0);  // odd
    if (is_probable_prime(v)) return v;
  }
  throw CryptoError("random_prime: retry cap exhausted");
}

}  // namespace keyless
