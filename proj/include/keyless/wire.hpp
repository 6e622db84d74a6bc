#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "keyless/activation.hpp"
#include "keyless/bigint.hpp"
#include "keyless/errors.hpp"

namespace keyless {

// Frame layout: 4-byte big-endian payload length, then the payload. The
// first payload byte selects the message kind; integers are big-endian;
// big integers are a 4-byte length followed by the minimal big-endian
// magnitude; strings are a 2-byte length followed by raw bytes.

inline constexpr std::size_t kMaxFrameBytes = 64u * 1024u * 1024u;

inline constexpr std::uint8_t kKindHello = 0x01;
inline constexpr std::uint8_t kKindHelloOk = 0x02;
inline constexpr std::uint8_t kKindHelloFail = 0x03;
inline constexpr std::uint8_t kKindSessionData = 0x10;
inline constexpr std::uint8_t kKindActQuery = 0x20;
inline constexpr std::uint8_t kKindActReply = 0x21;
inline constexpr std::uint8_t kKindResult = 0x30;
inline constexpr std::uint8_t kKindClose = 0x3F;

inline constexpr std::uint8_t kReasonBadCredentials = 1;
inline constexpr std::uint8_t kReasonKeyTooSmall = 2;

struct Hello {
  std::string uid;
  std::string pwd;
  bool operator==(const Hello&) const = default;
};

struct HelloOk {
  bool operator==(const HelloOk&) const = default;
};

struct HelloFail {
  std::uint8_t reason = 0;
  bool operator==(const HelloFail&) const = default;
};

// Per-image public material plus the encrypted pixels.
struct SessionData {
  Bigint n_sq;
  Bigint enc_one;
  std::vector<Bigint> ciphertexts;
  bool operator==(const SessionData&) const = default;
};

// Shuffled encrypted pre-activations needing a named activation applied.
struct ActQuery {
  Activation act = Activation::sigmoid;
  std::vector<Bigint> ciphertexts;
  bool operator==(const ActQuery&) const = default;
};

struct ActReply {
  std::vector<Bigint> ciphertexts;
  bool operator==(const ActReply&) const = default;
};

// Final-layer encrypted logits, in network order (not shuffled).
struct Result {
  std::vector<Bigint> ciphertexts;
  bool operator==(const Result&) const = default;
};

struct Close {
  bool operator==(const Close&) const = default;
};

using ProtocolMessage = std::variant<Hello, HelloOk, HelloFail, SessionData,
                                     ActQuery, ActReply, Result, Close>;

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
  if (s.size() > 0xFFFF) throw WireError("string field too long");
  put_u16(out, static_cast<std::uint16_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

inline void put_bigint(std::vector<std::uint8_t>& out, const Bigint& v) {
  const std::vector<std::uint8_t> bytes = to_bytes(v);
  if (bytes.size() > 0xFFFFFFFFu) throw WireError("big integer too long");
  put_u32(out, static_cast<std::uint32_t>(bytes.size()));
  out.insert(out.end(), bytes.begin(), bytes.end());
}

inline void put_bigint_list(std::vector<std::uint8_t>& out,
                            const std::vector<Bigint>& vs) {
  if (vs.size() > 0xFFFFFFFFu) throw WireError("ciphertext list too long");
  put_u32(out, static_cast<std::uint32_t>(vs.size()));
  for (const Bigint& v : vs) put_bigint(out, v);
}

// Bounds-checked reader over the payload; offsets in errors are relative to
// the start of the payload.
class Cursor {
 public:
  Cursor(const std::uint8_t* data, std::size_t size)
      : data_(data), size_(size) {}

  std::uint8_t u8(const char* what) {
    need(1, what);
    return data_[pos_++];
  }

  std::uint16_t u16(const char* what) {
    need(2, what);
    const std::uint16_t v = static_cast<std::uint16_t>(
        (std::uint16_t(data_[pos_]) << 8) | data_[pos_ + 1]);
    pos_ += 2;
    return v;
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    const std::uint32_t v = (std::uint32_t(data_[pos_]) << 24) |
                            (std::uint32_t(data_[pos_ + 1]) << 16) |
                            (std::uint32_t(data_[pos_ + 2]) << 8) |
                            std::uint32_t(data_[pos_ + 3]);
    pos_ += 4;
    return v;
  }

  std::string string_field(const char* what) {
    const std::uint16_t len = u16(what);
    need(len, what);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), len);
    pos_ += len;
    return s;
  }

  Bigint bigint(const char* what) {
    const std::uint32_t len = u32(what);
    need(len, what);
    Bigint v = from_bytes(data_ + pos_, len);
    pos_ += len;
    return v;
  }

  std::vector<Bigint> bigint_list(const char* what) {
    const std::uint32_t count = u32(what);
    // Each entry carries at least its own 4-byte length header, so the
    // count can never exceed the remaining bytes / 4. Checking before the
    // reserve keeps a hostile count from forcing a huge allocation.
    if (std::size_t(count) * 4 > size_ - pos_) {
      throw WireError(std::string("ciphertext count exceeds payload in ") + what,
                      pos_);
    }
    std::vector<Bigint> vs;
    vs.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) vs.push_back(bigint(what));
    return vs;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (size_ - pos_ < n) {
      throw WireError(std::string("truncated payload while reading ") + what,
                      pos_);
    }
  }

  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_frame(const ProtocolMessage& msg) {
  std::vector<std::uint8_t> payload;
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Hello>) {
          payload.push_back(kKindHello);
          detail::put_string(payload, m.uid);
          detail::put_string(payload, m.pwd);
        } else if constexpr (std::is_same_v<T, HelloOk>) {
          payload.push_back(kKindHelloOk);
        } else if constexpr (std::is_same_v<T, HelloFail>) {
          payload.push_back(kKindHelloFail);
          payload.push_back(m.reason);
        } else if constexpr (std::is_same_v<T, SessionData>) {
          payload.push_back(kKindSessionData);
          detail::put_bigint(payload, m.n_sq);
          detail::put_bigint(payload, m.enc_one);
          detail::put_bigint_list(payload, m.ciphertexts);
        } else if constexpr (std::is_same_v<T, ActQuery>) {
          payload.push_back(kKindActQuery);
          payload.push_back(static_cast<std::uint8_t>(m.act));
          detail::put_bigint_list(payload, m.ciphertexts);
        } else if constexpr (std::is_same_v<T, ActReply>) {
          payload.push_back(kKindActReply);
          detail::put_bigint_list(payload, m.ciphertexts);
        } else if constexpr (std::is_same_v<T, Result>) {
          payload.push_back(kKindResult);
          detail::put_bigint_list(payload, m.ciphertexts);
        } else {
          static_assert(std::is_same_v<T, Close>);
          payload.push_back(kKindClose);
        }
      },
      msg);
  if (payload.size() > kMaxFrameBytes) {
    throw WireError("frame payload exceeds the 64 MiB cap");
  }
  std::vector<std::uint8_t> frame;
  frame.reserve(4 + payload.size());
  detail::put_u32(frame, static_cast<std::uint32_t>(payload.size()));
  frame.insert(frame.end(), payload.begin(), payload.end());
  return frame;
}

// Decodes one payload (the frame body, after the length prefix has been
// stripped). Throws WireError with a payload offset on malformed input.
inline ProtocolMessage decode_payload(const std::uint8_t* data,
                                      std::size_t size) {
  if (size == 0) throw WireError("empty payload");
  if (size > kMaxFrameBytes) {
    throw WireError("frame payload exceeds the 64 MiB cap");
  }
  detail::Cursor cur(data, size);
  const std::uint8_t kind = cur.u8("message kind");
  ProtocolMessage msg;
  switch (kind) {
    case kKindHello: {
      Hello m;
      m.uid = cur.string_field("hello uid");
      m.pwd = cur.string_field("hello pwd");
      msg = std::move(m);
      break;
    }
    case kKindHelloOk:
      msg = HelloOk{};
      break;
    case kKindHelloFail: {
      HelloFail m;
      m.reason = cur.u8("hello_fail reason");
      msg = m;
      break;
    }
    case kKindSessionData: {
      SessionData m;
      m.n_sq = cur.bigint("session modulus");
      m.enc_one = cur.bigint("session unit ciphertext");
      m.ciphertexts = cur.bigint_list("session ciphertexts");
      msg = std::move(m);
      break;
    }
    case kKindActQuery: {
      ActQuery m;
      const std::uint8_t tag = cur.u8("activation tag");
      if (tag != static_cast<std::uint8_t>(Activation::sigmoid) &&
          tag != static_cast<std::uint8_t>(Activation::relu)) {
        throw WireError("unknown activation tag " + std::to_string(tag),
                        cur.pos() - 1);
      }
      m.act = static_cast<Activation>(tag);
      m.ciphertexts = cur.bigint_list("activation ciphertexts");
      msg = std::move(m);
      break;
    }
    case kKindActReply: {
      ActReply m;
      m.ciphertexts = cur.bigint_list("activation replies");
      msg = std::move(m);
      break;
    }
    case kKindResult: {
      Result m;
      m.ciphertexts = cur.bigint_list("result ciphertexts");
      msg = std::move(m);
      break;
    }
    case kKindClose:
      msg = Close{};
      break;
    default:
      throw WireError("unknown message kind " + std::to_string(kind), 0);
  }
  if (cur.remaining() != 0) {
    throw WireError("trailing bytes after message", cur.pos());
  }
  return msg;
}

struct DecodeResult {
  ProtocolMessage msg;
  std::size_t consumed = 0;  // frame bytes, header included
};

// Decodes one complete frame from the front of a buffer. The buffer must
// hold the whole frame; partial reassembly belongs to the transport layer.
inline DecodeResult decode_frame(const std::uint8_t* data, std::size_t size) {
  if (size < 4) throw WireError("truncated frame header", 0);
  const std::size_t len = (std::size_t(data[0]) << 24) |
                          (std::size_t(data[1]) << 16) |
                          (std::size_t(data[2]) << 8) | std::size_t(data[3]);
  if (len > kMaxFrameBytes) {
    throw WireError("frame payload exceeds the 64 MiB cap", 0);
  }
  if (size < 4 + len) {
    throw WireError("truncated frame payload", size);
  }
  return DecodeResult{decode_payload(data + 4, len), 4 + len};
}

}  // namespace keyless
