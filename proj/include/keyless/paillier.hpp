#pragma once

#include <cstddef>

#include "keyless/bigint.hpp"
#include "keyless/errors.hpp"
#include "keyless/rng.hpp"

namespace keyless {

// Additively homomorphic public-key scheme over Z_{n^2}:
//
//   keygen   n = p*q, lambda = lcm(p-1, q-1),
//            mu = (L(g^lambda mod n^2))^-1 mod n,  L(x) = (x - 1) div n
//   encrypt  c = g^t * r^n mod n^2,   r uniform in (0, n), gcd(r, n) = 1
//   decrypt  t = L(c^lambda mod n^2) * mu mod n
//
// The homomorphic layer never needs the modulus n itself: every ciphertext
// operation works with n^2 and, for plaintext addition, a reference
// encryption of 1. That pair (n^2, [[1]]) is exactly what the evaluating
// party receives, and nothing else.

enum class GeneratorMode {
  n_plus_one,      // g = n + 1: (n+1)^t mod n^2 collapses to 1 + t*n
  uniform_random,  // g sampled from Z*_{n^2}, kept only if mu exists
};

struct PublicKey {
  Bigint n;
  Bigint n_sq;
  Bigint g;
};

struct Ciphertext {
  Bigint value;

  bool operator==(const Ciphertext&) const = default;
};

// Everything a key-free evaluator holds: the ciphertext modulus and one
// reference encryption of 1 supplied by the key owner.
struct EvaluationKey {
  Bigint n_sq;
  Ciphertext enc_one;
};

struct Keypair {
  Bigint p, q;
  Bigint n, n_sq;
  Bigint g;
  Bigint lambda;
  Bigint mu;

  PublicKey public_key() const { return PublicKey{n, n_sq, g}; }
};

namespace detail {

inline Bigint paillier_l(const Bigint& x, const Bigint& n) {
  return (x - 1) / n;
}

}  // namespace detail

// Builds a keypair from known primes. Rejects p == q and pairs where
// gcd(pq, (p-1)(q-1)) != 1, which would make decryption ill-defined.
inline Keypair keypair_from_primes(const Bigint& p, const Bigint& q,
                                   const Bigint& g) {
  if (p < 2 || q < 2 || !is_probable_prime(p) || !is_probable_prime(q)) {
    throw CryptoError("keypair_from_primes: p and q must be prime");
  }
  if (p == q) throw CryptoError("keypair_from_primes: p and q must differ");
  Keypair kp;
  kp.p = p;
  kp.q = q;
  kp.n = p * q;
  kp.n_sq = kp.n * kp.n;
  if (gcd(kp.n, (p - 1) * (q - 1)) != 1) {
    throw CryptoError("keypair_from_primes: gcd(pq, (p-1)(q-1)) != 1");
  }
  if (g <= 0 || g >= kp.n_sq || gcd(g, kp.n_sq) != 1) {
    throw CryptoError("keypair_from_primes: g not in Z*_{n^2}");
  }
  kp.g = g;
  kp.lambda = lcm(p - 1, q - 1);
  const Bigint l = detail::paillier_l(powm(kp.g, kp.lambda, kp.n_sq), kp.n);
  // invmod throws when L(g^lambda) is not invertible, i.e. g is unusable.
  kp.mu = invmod(mod(l, kp.n), kp.n);
  return kp;
}

// Fresh keypair whose modulus n has exactly `bitlength` bits. Primes carry
// their top two bits set so the product cannot fall short a bit.
inline Keypair keygen(std::size_t bitlength, RandomSource& rng,
                      GeneratorMode mode = GeneratorMode::n_plus_one) {
  if (bitlength < 16) throw CryptoError("keygen: bitlength must be >= 16");
  constexpr int kMaxAttempts = 64;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const Bigint p = random_prime(rng, bitlength - bitlength / 2);
    const Bigint q = random_prime(rng, bitlength / 2);
    if (p == q) continue;
    const Bigint n = p * q;
    if (gcd(n, (p - 1) * (q - 1)) != 1) continue;
    Bigint g;
    if (mode == GeneratorMode::n_plus_one) {
      g = n + 1;
    } else {
      const Bigint n_sq = n * n;
      for (;;) {
        g = random_below(rng, n_sq);
        if (g <= 1 || gcd(g, n_sq) != 1) continue;
        // mu must exist for g to generate usable ciphertexts.
        const Bigint lambda = lcm(p - 1, q - 1);
        const Bigint l = mod(detail::paillier_l(powm(g, lambda, n_sq), n), n);
        if (gcd(l, n) == 1) break;
      }
    }
    Keypair kp = keypair_from_primes(p, q, g);
    if (bit_length(kp.n) != bitlength) {
      throw CryptoError("keygen: modulus bit length drifted");
    }
    return kp;
  }
  throw CryptoError("keygen: retry cap exhausted");
}

inline EvaluationKey evaluation_key(const PublicKey& pk,
                                    const Ciphertext& enc_one) {
  return EvaluationKey{pk.n_sq, enc_one};
}

// Deterministic encryption with a caller-supplied nonce; the randomized
// encrypt() below delegates here after sampling r.
inline Ciphertext encrypt_with_nonce(const PublicKey& pk, const Bigint& t,
                                     const Bigint& r) {
  if (t < 0 || t >= pk.n) throw CryptoError("encrypt: plaintext outside [0, n)");
  if (r <= 0 || r >= pk.n || gcd(r, pk.n) != 1) {
    throw CryptoError("encrypt: nonce not a unit modulo n");
  }
  Bigint gt;
  if (pk.g == pk.n + 1) {
    gt = mod(1 + t * pk.n, pk.n_sq);  // (n+1)^t mod n^2 == 1 + t*n
  } else {
    gt = powm(pk.g, t, pk.n_sq);
  }
  return Ciphertext{mod(gt * powm(r, pk.n, pk.n_sq), pk.n_sq)};
}

inline Ciphertext encrypt(const PublicKey& pk, const Bigint& t,
                          RandomSource& rng) {
  for (;;) {
    const Bigint r = random_below(rng, pk.n);
    if (r == 0 || gcd(r, pk.n) != 1) continue;
    return encrypt_with_nonce(pk, t, r);
  }
}

// Decryption to the canonical residue in [0, n).
inline Bigint decrypt(const Keypair& kp, const Ciphertext& c) {
  if (c.value <= 0 || c.value >= kp.n_sq) {
    throw CryptoError("decrypt: ciphertext outside (0, n^2)");
  }
  if (gcd(c.value, kp.n) != 1) {
    throw CryptoError("decrypt: ciphertext shares a factor with n");
  }
  const Bigint x = powm(c.value, kp.lambda, kp.n_sq);
  return mod(detail::paillier_l(x, kp.n) * kp.mu, kp.n);
}

// Decryption with the signed interpretation: residues above (n-1)/2 are
// negative values embedded as n - |v|.
inline Bigint decrypt_signed(const Keypair& kp, const Ciphertext& c) {
  return to_signed(decrypt(kp, c), kp.n);
}

// Structural ciphertext check used on every inbound value: in range and
// coprime to the modulus (gcd with n^2 detects factors of n as well).
inline bool is_valid_ciphertext(const Bigint& n_sq, const Ciphertext& c) {
  return c.value > 0 && c.value < n_sq && gcd(c.value, n_sq) == 1;
}

namespace detail {

inline void check_range(const EvaluationKey& ek, const Ciphertext& c) {
  if (c.value <= 0 || c.value >= ek.n_sq) {
    throw CryptoError("ciphertext outside (0, n^2)");
  }
}

// Enforces |k| < n/2 without knowing n: compares 4k^2 against n^2.
inline void check_scalar(const EvaluationKey& ek, const Bigint& k) {
  if (4 * k * k >= ek.n_sq) {
    throw CryptoError("scalar magnitude must stay below n/2");
  }
}

}  // namespace detail

// [[t1]] (+) [[t2]] = c1 * c2 mod n^2 — adds plaintexts.
inline Ciphertext hom_add(const EvaluationKey& ek, const Ciphertext& c1,
                          const Ciphertext& c2) {
  detail::check_range(ek, c1);
  detail::check_range(ek, c2);
  return Ciphertext{mod(c1.value * c2.value, ek.n_sq)};
}

// [[t]] (*) k = c^k mod n^2 — multiplies the plaintext by a signed integer.
// Negative k goes through the modular inverse of c^|k|.
inline Ciphertext hom_scalar_mul(const EvaluationKey& ek, const Ciphertext& c,
                                 const Bigint& k) {
  detail::check_range(ek, c);
  detail::check_scalar(ek, k);
  if (k >= 0) return Ciphertext{powm(c.value, k, ek.n_sq)};
  return Ciphertext{invmod(powm(c.value, -k, ek.n_sq), ek.n_sq)};
}

// [[t1]] (+) t2 = c * [[1]]^t2 mod n^2 — adds a signed plaintext constant
// using only the reference encryption of 1.
inline Ciphertext hom_add_plain(const EvaluationKey& ek, const Ciphertext& c,
                                const Bigint& t2) {
  detail::check_range(ek, c);
  return hom_add(ek, c, hom_scalar_mul(ek, ek.enc_one, t2));
}

// Key-free encryption of a signed constant: [[1]]^t mod n^2. Deterministic
// given [[1]]; the randomness of the reference encryption is all it has.
inline Ciphertext encrypt_keyless(const EvaluationKey& ek, const Bigint& t) {
  return hom_scalar_mul(ek, ek.enc_one, t);
}

}  // namespace keyless
