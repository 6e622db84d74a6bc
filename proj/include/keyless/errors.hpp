#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace keyless {

// Base class for everything thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Key generation, encryption, or homomorphic-operation failures.
class CryptoError : public Error {
 public:
  using Error::Error;
};

// Fixed-point codec violations: value outside the integer budget, or a
// layer whose accumulation budget does not fit the modulus.
class CodecError : public Error {
 public:
  using Error::Error;
};

// Structural model problems (dimension mismatches, bad activation layout,
// training divergence).
class ModelError : public Error {
 public:
  using Error::Error;
};

// File loading/saving problems, including format errors; parse failures
// carry "path:line:" prefixes in the message.
class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed frame or field while encoding/decoding the wire format.
// `offset` is the byte position within the buffer where decoding stopped.
class WireError : public Error {
 public:
  explicit WireError(const std::string& msg, std::size_t offset = 0)
      : Error(msg), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_ = 0;
};

// Connection-level failures (refused, reset, premature EOF). Kept distinct
// from ProtocolError so callers can tell a dead peer from a misbehaving one.
class TransportError : public Error {
 public:
  using Error::Error;
};

// The peer is reachable but sent something the protocol state machine does
// not allow (wrong message kind, bad counts, invalid ciphertexts, auth
// rejection).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

}  // namespace keyless
