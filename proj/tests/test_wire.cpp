#include <gtest/gtest.h>

#include <vector>

#include "keyless/wire.hpp"

using namespace keyless;

namespace {

ProtocolMessage roundtrip(const ProtocolMessage& msg) {
  const std::vector<std::uint8_t> frame = encode_frame(msg);
  const DecodeResult out = decode_frame(frame.data(), frame.size());
  EXPECT_EQ(out.consumed, frame.size());
  return out.msg;
}

}  // namespace

TEST(Wire, RoundTripsEveryMessageKind) {
  const Bigint n_sq = Bigint("123456789123456789123456789");
  const std::vector<Bigint> cts = {1, 2, Bigint(1) << 64,
                                   n_sq - 1};

  const Hello hello{"clinic-7", "s3cret"};
  EXPECT_EQ(std::get<Hello>(roundtrip(hello)), hello);

  EXPECT_EQ(std::get<HelloOk>(roundtrip(HelloOk{})), HelloOk{});

  const HelloFail fail{kReasonKeyTooSmall};
  EXPECT_EQ(std::get<HelloFail>(roundtrip(fail)), fail);

  const SessionData session{n_sq, n_sq - 2, cts};
  EXPECT_EQ(std::get<SessionData>(roundtrip(session)), session);

  const ActQuery query{Activation::relu, cts};
  EXPECT_EQ(std::get<ActQuery>(roundtrip(query)), query);
  const ActQuery query2{Activation::sigmoid, {}};
  EXPECT_EQ(std::get<ActQuery>(roundtrip(query2)), query2);

  const ActReply reply{cts};
  EXPECT_EQ(std::get<ActReply>(roundtrip(reply)), reply);

  const Result result{{Bigint(7), Bigint(9)}};
  EXPECT_EQ(std::get<Result>(roundtrip(result)), result);

  EXPECT_EQ(std::get<Close>(roundtrip(Close{})), Close{});
}

TEST(Wire, GoldenFrames) {
  // Close: length 1, kind byte only.
  EXPECT_EQ(encode_frame(Close{}),
            (std::vector<std::uint8_t>{0x00, 0x00, 0x00, 0x01, 0x3F}));
  // Hello with one-byte fields: kind + 2-byte len + byte, twice.
  EXPECT_EQ(encode_frame(Hello{"a", "b"}),
            (std::vector<std::uint8_t>{0x00, 0x00, 0x00, 0x07, 0x01, 0x00,
                                       0x01, 'a', 0x00, 0x01, 'b'}));
  // HelloFail carries its one reason byte.
  EXPECT_EQ(encode_frame(HelloFail{2}),
            (std::vector<std::uint8_t>{0x00, 0x00, 0x00, 0x02, 0x03, 0x02}));
  // ActQuery: kind, activation tag, 4-byte count, then each ciphertext as
  // 4-byte length + minimal big-endian magnitude.
  EXPECT_EQ(encode_frame(ActQuery{Activation::sigmoid, {Bigint(0x0102)}}),
            (std::vector<std::uint8_t>{0x00, 0x00, 0x00, 0x0C, 0x20, 0x01,
                                       0x00, 0x00, 0x00, 0x01, 0x00, 0x00,
                                       0x00, 0x02, 0x01, 0x02}));
}

TEST(Wire, BigintEdgeValues) {
  // Zero encodes as an empty magnitude.
  const SessionData zero{0, 1, {}};
  const std::vector<std::uint8_t> frame = encode_frame(zero);
  const SessionData back = std::get<SessionData>(
      decode_frame(frame.data(), frame.size()).msg);
  EXPECT_EQ(back.n_sq, 0);
  EXPECT_EQ(back.enc_one, 1);
  // 2^64 and neighbors survive.
  const std::vector<Bigint> edges = {(Bigint(1) << 64) - 1, Bigint(1) << 64,
                                     (Bigint(1) << 64) + 1};
  const ActReply reply{edges};
  EXPECT_EQ(std::get<ActReply>(roundtrip(reply)).ciphertexts, edges);
}

TEST(Wire, RejectsTrailingBytes) {
  std::vector<std::uint8_t> frame = encode_frame(HelloOk{});
  frame.push_back(0x00);
  frame[3] += 1;  // lengthen the payload to cover the junk byte
  try {
    decode_frame(frame.data(), frame.size());
    FAIL() << "expected WireError";
  } catch (const WireError& e) {
    EXPECT_NE(std::string(e.what()).find("trailing"), std::string::npos);
    EXPECT_EQ(e.offset(), 1u);
  }
}

TEST(Wire, RejectsUnknownKind) {
  const std::vector<std::uint8_t> frame = {0x00, 0x00, 0x00, 0x01, 0x7E};
  EXPECT_THROW(decode_frame(frame.data(), frame.size()), WireError);
}

TEST(Wire, RejectsUnknownActivationTag) {
  std::vector<std::uint8_t> frame =
      encode_frame(ActQuery{Activation::relu, {Bigint(5)}});
  frame[5] = 0x03;  // softmax is never a query activation
  try {
    decode_frame(frame.data(), frame.size());
    FAIL() << "expected WireError";
  } catch (const WireError& e) {
    EXPECT_NE(std::string(e.what()).find("activation tag"), std::string::npos);
  }
  frame[5] = 0x00;
  EXPECT_THROW(decode_frame(frame.data(), frame.size()), WireError);
}

TEST(Wire, TruncationIsDetectedAtEveryPrefix) {
  const std::vector<std::uint8_t> frame = encode_frame(
      SessionData{Bigint(1) << 40, Bigint(77), {Bigint(5), Bigint(6)}});
  for (std::size_t keep = 0; keep < frame.size(); ++keep) {
    EXPECT_THROW(decode_frame(frame.data(), keep), WireError)
        << "prefix " << keep;
  }
  EXPECT_NO_THROW(decode_frame(frame.data(), frame.size()));
}

TEST(Wire, TruncatedPayloadReportsOffset) {
  // A hello whose declared string length extends past the payload.
  const std::vector<std::uint8_t> frame = {0x00, 0x00, 0x00, 0x04,
                                           0x01, 0x00, 0x09, 'a'};
  try {
    decode_frame(frame.data(), frame.size());
    FAIL() << "expected WireError";
  } catch (const WireError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
    EXPECT_EQ(e.offset(), 3u);  // after kind + declared length
  }
}

TEST(Wire, FrameCapIsEnforcedBeforeAllocation) {
  // Header alone claims 1 GiB; decode must refuse without needing the body.
  const std::vector<std::uint8_t> header = {0x40, 0x00, 0x00, 0x00, 0x00};
  try {
    decode_frame(header.data(), header.size());
    FAIL() << "expected WireError";
  } catch (const WireError& e) {
    EXPECT_NE(std::string(e.what()).find("64 MiB"), std::string::npos);
  }
}

TEST(Wire, CiphertextCountCannotExceedPayload) {
  // ActReply claiming 2^31 ciphertexts in a tiny payload.
  const std::vector<std::uint8_t> frame = {0x00, 0x00, 0x00, 0x05, 0x21,
                                           0x80, 0x00, 0x00, 0x00};
  try {
    decode_frame(frame.data(), frame.size());
    FAIL() << "expected WireError";
  } catch (const WireError& e) {
    EXPECT_NE(std::string(e.what()).find("count"), std::string::npos);
  }
}

TEST(Wire, NegativeValuesCannotBeFramed) {
  EXPECT_THROW(encode_frame(Result{{Bigint(-1)}}), CryptoError);
}

TEST(Wire, DecodeFrameReportsConsumedBytes) {
  const std::vector<std::uint8_t> a = encode_frame(HelloOk{});
  const std::vector<std::uint8_t> b = encode_frame(Close{});
  std::vector<std::uint8_t> joined = a;
  joined.insert(joined.end(), b.begin(), b.end());
  const DecodeResult first = decode_frame(joined.data(), joined.size());
  EXPECT_TRUE(std::holds_alternative<HelloOk>(first.msg));
  EXPECT_EQ(first.consumed, a.size());
  const DecodeResult second = decode_frame(joined.data() + first.consumed,
                                           joined.size() - first.consumed);
  EXPECT_TRUE(std::holds_alternative<Close>(second.msg));
}
