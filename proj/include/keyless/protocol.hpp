#pragma once

#include <atomic>
#include <chrono>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "keyless/errors.hpp"
#include "keyless/fixedpoint.hpp"
#include "keyless/metrics.hpp"
#include "keyless/mlp.hpp"
#include "keyless/paillier.hpp"
#include "keyless/rng.hpp"
#include "keyless/transport.hpp"
#include "keyless/wire.hpp"

namespace keyless {

// ---------------------------------------------------------------------------
// Credentials
// ---------------------------------------------------------------------------

// Demo-grade user table: "uid pwd" per line, '#' starts a comment. The
// passwords travel and sit in the clear; this authenticates test traffic,
// nothing more.
class Credentials {
 public:
  void add(const std::string& uid, const std::string& pwd) {
    entries_[uid] = pwd;
  }

  bool check(const std::string& uid, const std::string& pwd) const {
    const auto it = entries_.find(uid);
    return it != entries_.end() && it->second == pwd;
  }

  bool empty() const { return entries_.empty(); }

  static Credentials load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open credentials file: " + path);
    Credentials c;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      std::istringstream ss(line);
      std::string uid, pwd, extra;
      if (!(ss >> uid)) continue;  // blank line
      if (!(ss >> pwd) || (ss >> extra)) {
        throw IoError(path + ":" + std::to_string(lineno) +
                      ": expected 'uid pwd'");
      }
      c.add(uid, pwd);
    }
    return c;
  }

 private:
  std::map<std::string, std::string> entries_;
};

// ---------------------------------------------------------------------------
// Shuffling
// ---------------------------------------------------------------------------

inline std::vector<std::size_t> random_permutation(std::size_t n,
                                                   RandomSource& rng) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  for (std::size_t i = n; i-- > 1;) {
    const std::size_t j = rng.uniform_u64(i + 1);
    std::swap(perm[i], perm[j]);
  }
  return perm;
}

// shuffled[j] = items[perm[j]]
template <typename T>
std::vector<T> apply_permutation(const std::vector<std::size_t>& perm,
                                 const std::vector<T>& items) {
  std::vector<T> out(items.size());
  for (std::size_t j = 0; j < perm.size(); ++j) out[j] = items[perm[j]];
  return out;
}

// Inverse of apply_permutation: restored[perm[j]] = items[j].
template <typename T>
std::vector<T> invert_permutation(const std::vector<std::size_t>& perm,
                                  const std::vector<T>& items) {
  std::vector<T> out(items.size());
  for (std::size_t j = 0; j < perm.size(); ++j) out[perm[j]] = items[j];
  return out;
}

// ---------------------------------------------------------------------------
// Server
// ---------------------------------------------------------------------------

struct ServerConfig {
  CodecConfig codec;
  int min_key_bits = 256;
  // Seeded shuffling for reproducible runs; fresh system randomness when
  // unset.
  std::optional<std::uint64_t> shuffle_seed;
  // Collect every big integer the server holds during a session, for
  // transcript audits. Off by default.
  bool collect_audit = false;
};

// One encrypted affine layer: out_j = [[ sum_i w_ji * x_i + b_j ]], computed
// with ciphertext powers and products only. Every neuron costs exactly
// fan_in + 1 modexps and fan_in + 1 modmuls (the bias term contributes one
// of each); negative coefficients additionally cost one modular inversion,
// tallied apart.
inline std::vector<Ciphertext> encrypted_layer_forward(
    const EvaluationKey& ek, const QuantizedLayer& layer,
    const std::vector<Ciphertext>& inputs, CostCounters* counters,
    std::size_t layer_idx) {
  if (inputs.size() != layer.fan_in) {
    throw ProtocolError("encrypted layer input count mismatch");
  }
  if (counters) counters->ensure_layers(layer_idx + 1);
  std::vector<Ciphertext> out;
  out.reserve(layer.fan_out);
  for (std::size_t j = 0; j < layer.fan_out; ++j) {
    const Bigint* row = layer.weights_q.data() + j * layer.fan_in;
    Ciphertext acc{1};  // encryption of zero under any key
    for (std::size_t i = 0; i < layer.fan_in; ++i) {
      acc = hom_add(ek, acc, hom_scalar_mul(ek, inputs[i], row[i]));
      if (counters) {
        ++counters->server_modexp_by_layer[layer_idx];
        ++counters->server_modmul_by_layer[layer_idx];
        ++counters->server_modexp;
        ++counters->server_modmul;
        if (row[i] < 0) ++counters->server_modinv;
      }
    }
    acc = hom_add(ek, acc, encrypt_keyless(ek, layer.bias_q[j]));
    if (counters) {
      ++counters->server_modexp_by_layer[layer_idx];
      ++counters->server_modmul_by_layer[layer_idx];
      ++counters->server_modexp;
      ++counters->server_modmul;
      if (layer.bias_q[j] < 0) ++counters->server_modinv;
    }
    out.push_back(std::move(acc));
  }
  return out;
}

struct SessionReport {
  bool authed = false;
  std::string uid;
  std::size_t images = 0;
  std::vector<CostCounters> image_counters;
  std::vector<std::size_t> image_key_bits;
  std::vector<std::uint64_t> image_compute_ns;  // server-side compute only
  bool clean_close = false;
  std::string error;  // empty when the session ended cleanly
};

// Serves one connection: authenticates, then evaluates any number of
// encrypted images. Holds no decryption material at any point; the session
// state is the public modulus, the reference unit ciphertext, and
// ciphertexts.
class ServerSession {
 public:
  ServerSession(const QuantizedMlp& model, const Credentials& creds,
                ServerConfig cfg)
      : model_(model), creds_(creds), cfg_(std::move(cfg)) {
    if (cfg_.shuffle_seed) {
      rng_ = std::make_unique<SeededRandom>(*cfg_.shuffle_seed);
    } else {
      rng_ = std::make_unique<SystemRandom>();
    }
  }

  SessionReport run(ByteChannel& ch) {
    report_ = SessionReport{};
    try {
      serve(ch);
    } catch (const Error& e) {
      report_.error = e.what();
      try {
        write_frame(ch, Close{});
      } catch (...) {
      }
    }
    ch.close();
    return report_;
  }

  // Every big integer the session held, serialized back to back; filled
  // only when the config asks for it.
  const std::vector<std::uint8_t>& audit_bytes() const { return audit_; }

 private:
  void record(const Bigint& v) {
    if (!cfg_.collect_audit) return;
    const std::vector<std::uint8_t> bytes = to_bytes(v);
    audit_.insert(audit_.end(), bytes.begin(), bytes.end());
  }

  void serve(ByteChannel& ch) {
    std::uint64_t hello_bytes_in = 0, hello_bytes_out = 0;
    const std::optional<ProtocolMessage> first =
        read_frame(ch, &hello_bytes_in);
    if (!first) throw ProtocolError("connection closed before hello");
    const Hello* hello = std::get_if<Hello>(&*first);
    if (!hello) throw ProtocolError("expected hello first");
    if (!creds_.check(hello->uid, hello->pwd)) {
      write_frame(ch, HelloFail{kReasonBadCredentials}, &hello_bytes_out);
      write_frame(ch, Close{}, &hello_bytes_out);
      report_.error = "authentication failed";
      return;
    }
    report_.authed = true;
    report_.uid = hello->uid;
    write_frame(ch, HelloOk{}, &hello_bytes_out);

    for (;;) {
      CostCounters counters;
      const std::optional<ProtocolMessage> msg =
          read_frame(ch, &counters.bytes_c2s);
      if (!msg) throw ProtocolError("connection closed without a close frame");
      if (std::get_if<Close>(&*msg)) {
        report_.clean_close = true;
        return;
      }
      const SessionData* session = std::get_if<SessionData>(&*msg);
      if (!session) throw ProtocolError("expected session data or close");
      evaluate_image(ch, *session, counters);
    }
  }

  void evaluate_image(ByteChannel& ch, const SessionData& session,
                      CostCounters& counters) {
    // The modulus arrives squared; the key size follows from its width.
    const std::size_t key_bits = (bit_length(session.n_sq) + 1) / 2;
    CodecConfig session_codec = cfg_.codec;
    session_codec.modulus_bits = static_cast<int>(key_bits);
    bool fits = key_bits >= std::size_t(cfg_.min_key_bits);
    for (const QuantizedLayer& layer : model_.layers) {
      fits = fits && layer_fits(session_codec, layer.fan_in);
    }
    if (!fits) {
      std::uint64_t out_bytes = 0;
      write_frame(ch, HelloFail{kReasonKeyTooSmall}, &out_bytes);
      throw ProtocolError("session key too small for the model");
    }
    if (session.n_sq <= 1) throw ProtocolError("bad session modulus");
    const EvaluationKey ek{session.n_sq, Ciphertext{session.enc_one}};
    if (!is_valid_ciphertext(ek.n_sq, ek.enc_one)) {
      throw ProtocolError("invalid unit ciphertext");
    }
    if (session.ciphertexts.size() != model_.input_dim) {
      throw ProtocolError("pixel count does not match the model input");
    }
    const std::size_t depth = model_.layers.size();
    counters.ensure_layers(depth);
    record(session.n_sq);
    record(session.enc_one);
    std::vector<Ciphertext> acts;
    acts.reserve(session.ciphertexts.size());
    for (const Bigint& v : session.ciphertexts) {
      Ciphertext c{v};
      if (!is_valid_ciphertext(ek.n_sq, c)) {
        throw ProtocolError("invalid pixel ciphertext");
      }
      record(v);
      acts.push_back(std::move(c));
    }
    counters.bigints_c2s += acts.size();
    counters.bigints_c2s_by_layer[0] += acts.size();

    std::uint64_t compute_ns = 0;
    const auto timed = [&compute_ns](auto&& fn) {
      const auto t0 = std::chrono::steady_clock::now();
      fn();
      const auto t1 = std::chrono::steady_clock::now();
      compute_ns += std::chrono::duration_cast<std::chrono::nanoseconds>(
                        t1 - t0)
                        .count();
    };

    for (std::size_t l = 0; l < depth; ++l) {
      const QuantizedLayer& layer = model_.layers[l];
      std::vector<Ciphertext> pre;
      timed([&] {
        pre = encrypted_layer_forward(ek, layer, acts, &counters, l);
      });
      for (const Ciphertext& c : pre) record(c.value);
      std::vector<Bigint> values(pre.size());
      if (l + 1 == depth) {
        // Final layer: logits go back in network order, undisturbed.
        for (std::size_t j = 0; j < pre.size(); ++j) values[j] = pre[j].value;
        write_frame(ch, Result{std::move(values)}, &counters.bytes_s2c);
        counters.bigints_s2c += pre.size();
        counters.bigints_s2c_by_layer[l] += pre.size();
        break;
      }
      // Hidden layer: shuffle, ask the key holder to apply the activation,
      // then restore network order on the reply.
      std::vector<std::size_t> perm;
      timed([&] {
        perm = random_permutation(pre.size(), *rng_);
        const std::vector<Ciphertext> shuffled = apply_permutation(perm, pre);
        for (std::size_t j = 0; j < shuffled.size(); ++j) {
          values[j] = shuffled[j].value;
        }
      });
      write_frame(ch, ActQuery{layer.act, std::move(values)},
                  &counters.bytes_s2c);
      counters.bigints_s2c += pre.size();
      counters.bigints_s2c_by_layer[l] += pre.size();

      const std::optional<ProtocolMessage> msg =
          read_frame(ch, &counters.bytes_c2s);
      if (!msg) throw ProtocolError("connection closed mid-image");
      const ActReply* reply = std::get_if<ActReply>(&*msg);
      if (!reply) throw ProtocolError("expected an activation reply");
      if (reply->ciphertexts.size() != pre.size()) {
        throw ProtocolError("activation reply count mismatch");
      }
      std::vector<Ciphertext> replies;
      replies.reserve(reply->ciphertexts.size());
      for (const Bigint& v : reply->ciphertexts) {
        Ciphertext c{v};
        if (!is_valid_ciphertext(ek.n_sq, c)) {
          throw ProtocolError("invalid activation ciphertext");
        }
        record(v);
        replies.push_back(std::move(c));
      }
      counters.bigints_c2s += replies.size();
      counters.bigints_c2s_by_layer[l + 1] += replies.size();
      timed([&] { acts = invert_permutation(perm, replies); });
    }

    ++report_.images;
    report_.image_counters.push_back(std::move(counters));
    report_.image_key_bits.push_back(key_bits);
    report_.image_compute_ns.push_back(compute_ns);
  }

  const QuantizedMlp& model_;
  const Credentials& creds_;
  ServerConfig cfg_;
  std::unique_ptr<RandomSource> rng_;
  SessionReport report_;
  std::vector<std::uint8_t> audit_;
};

// Accepts TCP connections and serves them sequentially on one worker
// thread. Each connection gets a fresh ServerSession.
class TcpServer {
 public:
  TcpServer(QuantizedMlp model, Credentials creds, ServerConfig cfg)
      : model_(std::move(model)),
        creds_(std::move(creds)),
        cfg_(std::move(cfg)) {}

  ~TcpServer() { stop(); }

  void start(const std::string& host, std::uint16_t port) {
    listener_ = std::make_unique<TcpListener>(host, port);
    stop_.store(false);
    worker_ = std::thread([this] { accept_loop(); });
  }

  std::uint16_t port() const { return listener_ ? listener_->port() : 0; }

  void stop() {
    stop_.store(true);
    if (listener_) listener_->close();
    if (worker_.joinable()) worker_.join();
    listener_.reset();
  }

  std::vector<SessionReport> reports() const {
    std::lock_guard<std::mutex> lock(mu_);
    return reports_;
  }

  // Called after each session completes, off the caller's thread.
  std::function<void(const SessionReport&)> on_report;

 private:
  void accept_loop() {
    while (!stop_.load()) {
      std::unique_ptr<TcpChannel> ch;
      try {
        ch = listener_->accept(stop_);
      } catch (const TransportError&) {
        break;
      }
      if (!ch) break;
      ServerSession session(model_, creds_, cfg_);
      const SessionReport report = session.run(*ch);
      {
        std::lock_guard<std::mutex> lock(mu_);
        reports_.push_back(report);
      }
      if (on_report) on_report(report);
    }
  }

  QuantizedMlp model_;
  Credentials creds_;
  ServerConfig cfg_;
  std::unique_ptr<TcpListener> listener_;
  std::thread worker_;
  std::atomic<bool> stop_{false};
  mutable std::mutex mu_;
  std::vector<SessionReport> reports_;
};

// ---------------------------------------------------------------------------
// Client
// ---------------------------------------------------------------------------

struct ClientConfig {
  std::string uid;
  std::string pwd;
  CodecConfig codec;
  std::size_t key_bits = 1024;
  GeneratorMode gen_mode = GeneratorMode::n_plus_one;
  // Seeded randomness for reproducible runs; system randomness when unset.
  std::optional<std::uint64_t> seed;
};

struct ImageRunResult {
  std::vector<Bigint> logits_q;  // signed pre-softmax values, scale 2*frac
  std::vector<double> probabilities;
  CostCounters counters;
  Keypair keypair;   // surfaced for tests; a real client never shares it
  Bigint enc_one;    // the unit ciphertext this image's session used
  std::size_t act_queries = 0;
  std::uint64_t compute_ns = 0;  // client-side compute only
};

// Runs one image through an authenticated connection: fresh keypair,
// encrypted pixels out, activation round-trips, decrypted logits back.
inline ImageRunResult client_run_image(ByteChannel& ch,
                                       const std::vector<double>& image,
                                       const ClientConfig& cfg,
                                       RandomSource& rng) {
  ImageRunResult res;
  CostCounters& counters = res.counters;

  std::uint64_t compute_ns = 0;
  const auto timed = [&compute_ns](auto&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    compute_ns +=
        std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();
  };

  // Fresh keypair per image: ciphertexts from different images are never
  // comparable. Key generation and the unit ciphertext are session setup
  // and stay outside the op counters.
  SessionData session;
  Keypair kp;
  PublicKey pk;
  timed([&] {
    kp = keygen(cfg.key_bits, rng, cfg.gen_mode);
    pk = kp.public_key();
    session.n_sq = pk.n_sq;
    session.enc_one = encrypt(pk, 1, rng).value;
    session.ciphertexts.reserve(image.size());
    for (double x : image) {
      const ScaledInt enc = encode(x, cfg.codec, pk.n);
      session.ciphertexts.push_back(encrypt(pk, enc.raw, rng).value);
      counters.client_modexp += 2;
      counters.client_modmul += 1;
    }
  });
  res.keypair = kp;
  res.enc_one = session.enc_one;
  counters.ensure_layers(1);
  counters.bigints_c2s += session.ciphertexts.size();
  counters.bigints_c2s_by_layer[0] += session.ciphertexts.size();
  write_frame(ch, session, &counters.bytes_c2s);

  for (;;) {
    const std::optional<ProtocolMessage> msg =
        read_frame(ch, &counters.bytes_s2c);
    if (!msg) throw ProtocolError("connection closed mid-image");
    if (const HelloFail* fail = std::get_if<HelloFail>(&*msg)) {
      if (fail->reason == kReasonKeyTooSmall) {
        throw ProtocolError("server rejected the session: key too small");
      }
      throw ProtocolError("server rejected the session (reason " +
                          std::to_string(fail->reason) + ")");
    }
    if (const ActQuery* query = std::get_if<ActQuery>(&*msg)) {
      const std::size_t layer = res.act_queries;  // 0-based network layer
      counters.ensure_layers(layer + 2);
      counters.bigints_s2c += query->ciphertexts.size();
      counters.bigints_s2c_by_layer[layer] += query->ciphertexts.size();
      ActReply reply;
      reply.ciphertexts.reserve(query->ciphertexts.size());
      timed([&] {
        for (const Bigint& v : query->ciphertexts) {
          const Ciphertext c{v};
          if (!is_valid_ciphertext(pk.n_sq, c)) {
            throw ProtocolError("server sent an invalid ciphertext");
          }
          // Decrypt the shuffled pre-activation, apply the activation in
          // fixed point, re-encrypt at the input scale.
          const Bigint pre = decrypt_signed(kp, c);
          counters.client_modexp += 1;
          counters.client_modmul += 2;
          const Bigint act = requantize_activation(query->act, pre, cfg.codec);
          reply.ciphertexts.push_back(
              encrypt(pk, from_signed(act, pk.n), rng).value);
          counters.client_modexp += 2;
          counters.client_modmul += 1;
        }
      });
      counters.bigints_c2s += reply.ciphertexts.size();
      counters.bigints_c2s_by_layer[layer + 1] += reply.ciphertexts.size();
      write_frame(ch, reply, &counters.bytes_c2s);
      ++res.act_queries;
      continue;
    }
    if (const Result* result = std::get_if<Result>(&*msg)) {
      const std::size_t layer = res.act_queries;
      counters.ensure_layers(layer + 1);
      counters.bigints_s2c += result->ciphertexts.size();
      counters.bigints_s2c_by_layer[layer] += result->ciphertexts.size();
      timed([&] {
        std::vector<double> logits;
        logits.reserve(result->ciphertexts.size());
        for (const Bigint& v : result->ciphertexts) {
          const Ciphertext c{v};
          if (!is_valid_ciphertext(pk.n_sq, c)) {
            throw ProtocolError("server sent an invalid ciphertext");
          }
          const Bigint logit = decrypt_signed(kp, c);
          counters.client_modexp += 1;
          counters.client_modmul += 2;
          logits.push_back(
              decode_signed_value(logit, 2 * cfg.codec.frac_bits));
          res.logits_q.push_back(logit);
        }
        res.probabilities = softmax(logits);
      });
      res.compute_ns = compute_ns;
      return res;
    }
    throw ProtocolError("unexpected message while evaluating an image");
  }
}

enum class Decision { d1_before, d2_before, indeterminate };

inline std::string to_string(Decision d) {
  switch (d) {
    case Decision::d1_before:
      return "d1_before";
    case Decision::d2_before:
      return "d2_before";
    default:
      return "indeterminate";
  }
}

struct DiagnosisResult {
  ImageRunResult image1;
  ImageRunResult image2;
  double r1 = 0;  // probability that image 1 is the pre-treatment view
  double r2 = 0;
  Decision decision = Decision::indeterminate;
  std::uint64_t session_bytes_out = 0;  // hello/close framing, both images
  std::uint64_t session_bytes_in = 0;
};

// Orders two images of one subject: authenticates, evaluates both under
// independent keys, and compares the class-0 probabilities locally.
inline DiagnosisResult client_run_diagnosis(ByteChannel& ch,
                                            const std::vector<double>& image1,
                                            const std::vector<double>& image2,
                                            const ClientConfig& cfg) {
  std::unique_ptr<RandomSource> rng;
  if (cfg.seed) {
    rng = std::make_unique<SeededRandom>(*cfg.seed);
  } else {
    rng = std::make_unique<SystemRandom>();
  }
  DiagnosisResult out;
  write_frame(ch, Hello{cfg.uid, cfg.pwd}, &out.session_bytes_out);
  const std::optional<ProtocolMessage> resp =
      read_frame(ch, &out.session_bytes_in);
  if (!resp) throw ProtocolError("connection closed during hello");
  if (const HelloFail* fail = std::get_if<HelloFail>(&*resp)) {
    if (fail->reason == kReasonBadCredentials) {
      throw ProtocolError("authentication failed");
    }
    throw ProtocolError("server rejected the session (reason " +
                        std::to_string(fail->reason) + ")");
  }
  if (!std::get_if<HelloOk>(&*resp)) {
    throw ProtocolError("expected a hello acknowledgement");
  }
  out.image1 = client_run_image(ch, image1, cfg, *rng);
  out.image2 = client_run_image(ch, image2, cfg, *rng);
  write_frame(ch, Close{}, &out.session_bytes_out);
  ch.close();
  out.r1 = out.image1.probabilities.at(0);
  out.r2 = out.image2.probabilities.at(0);
  if (out.r1 > out.r2) {
    out.decision = Decision::d1_before;
  } else if (out.r2 > out.r1) {
    out.decision = Decision::d2_before;
  } else {
    out.decision = Decision::indeterminate;
  }
  return out;
}

}  // namespace keyless
