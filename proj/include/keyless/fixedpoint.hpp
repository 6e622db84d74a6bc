#pragma once

#include <cmath>
#include <cstddef>

#include "keyless/activation.hpp"
#include "keyless/bigint.hpp"
#include "keyless/errors.hpp"

namespace keyless {

// Fixed-point codec parameters.
//
// Inputs and weights are encoded at scale 2^frac_bits; a weighted sum of two
// such values therefore lives at scale 2^(2*frac_bits), which is why biases
// are pre-scaled to 2*frac_bits and why activation outputs are re-encoded at
// frac_bits before the next layer.
struct CodecConfig {
  int frac_bits = 7;      // fractional bits (the precision knob)
  int int_bits = 8;       // integer-part budget: encodable |x| < 2^int_bits
  int modulus_bits = 1024;  // bit length of the plaintext modulus n
};

inline void validate(const CodecConfig& cfg) {
  if (cfg.frac_bits < 1 || cfg.frac_bits > 32) {
    throw CodecError("frac_bits must be in [1, 32]");
  }
  if (cfg.int_bits < 1 || cfg.int_bits > 30) {
    throw CodecError("int_bits must be in [1, 30]");
  }
  if (cfg.modulus_bits < 16) {
    throw CodecError("modulus_bits must be at least 16");
  }
}

inline int ceil_log2(std::size_t v) {
  if (v <= 1) return 0;
  int b = 0;
  std::size_t x = v - 1;
  while (x > 0) {
    x >>= 1;
    ++b;
  }
  return b;
}

// Bits needed by the worst-case accumulated pre-activation of a layer with
// the given fan-in (products at 2*(frac+int) bits, fan_in of them summed,
// plus one bit of headroom for the bias).
inline int layer_budget_bits(const CodecConfig& cfg, std::size_t fan_in) {
  return 2 * (cfg.frac_bits + cfg.int_bits) + ceil_log2(fan_in) + 1;
}

// A layer fits when its accumulation budget is strictly below the modulus
// bit length, so signed decoding after decryption is unambiguous.
inline bool layer_fits(const CodecConfig& cfg, std::size_t fan_in) {
  return layer_budget_bits(cfg, fan_in) < cfg.modulus_bits;
}

// round(x * 2^scale_bits), halfway cases away from zero, as an exact integer.
inline Bigint quantize_value(double x, int scale_bits) {
  if (!std::isfinite(x)) throw CodecError("cannot quantize non-finite value");
  const double scaled = std::round(std::ldexp(x, scale_bits));
  return Bigint(scaled);  // scaled is integral, conversion is exact
}

// Encodes a real input at frac_bits after checking the integer-part budget.
inline Bigint encode_value(double x, const CodecConfig& cfg) {
  if (!std::isfinite(x) || std::fabs(x) >= std::ldexp(1.0, cfg.int_bits)) {
    throw CodecError("value outside the int_bits budget");
  }
  return quantize_value(x, cfg.frac_bits);
}

inline double decode_signed_value(const Bigint& v, int scale_bits) {
  return std::ldexp(mpz_get_d(v.get_mpz_t()), -scale_bits);
}

// A residue in [0, n) together with the scale it was encoded at.
struct ScaledInt {
  Bigint raw;
  int scale_bits = 0;

  bool operator==(const ScaledInt&) const = default;
};

// Signed fixed-point value embedded into Z_n: negatives map to n - |v|.
inline ScaledInt encode(double x, const CodecConfig& cfg, const Bigint& n) {
  return ScaledInt{from_signed(encode_value(x, cfg), n), cfg.frac_bits};
}

inline double decode(const ScaledInt& s, const Bigint& n) {
  return decode_signed_value(to_signed(s.raw, n), s.scale_bits);
}

// The client-side activation step: a decrypted pre-activation arrives at
// scale 2*frac_bits, is activated in the reals, and is re-encoded at
// frac_bits for the next layer. Both the plaintext oracle and the protocol
// client call this one function so their integer traces agree bit-for-bit.
inline Bigint requantize_activation(Activation act, const Bigint& pre_q,
                                    const CodecConfig& cfg) {
  const double y = decode_signed_value(pre_q, 2 * cfg.frac_bits);
  const double z = apply_hidden(act, y);
  if (std::fabs(z) >= std::ldexp(1.0, cfg.int_bits)) {
    throw CodecError("activation output outside the int_bits budget");
  }
  return quantize_value(z, cfg.frac_bits);
}

}  // namespace keyless
