#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "keyless/errors.hpp"

namespace keyless {

// Operation counters kept by both protocol endpoints. Convention for the
// client side: one encryption = 2 modexp + 1 modmul; one decryption =
// 1 modexp + 2 modmul (the quotient step is counted in the mul class).
// Key generation and the one-time unit ciphertext are session setup and
// stay outside these counters. Server-side modular inversions (negative
// weights) are tallied separately in server_modinv.
struct CostCounters {
  std::uint64_t server_modexp = 0;
  std::uint64_t server_modmul = 0;
  std::uint64_t server_modinv = 0;
  std::uint64_t client_modexp = 0;
  std::uint64_t client_modmul = 0;
  std::uint64_t bigints_s2c = 0;  // ciphertext payloads server -> client
  std::uint64_t bigints_c2s = 0;  // ciphertext payloads client -> server
  std::uint64_t bytes_s2c = 0;    // framed bytes, everything included
  std::uint64_t bytes_c2s = 0;

  // Index l = network layer l+1.
  std::vector<std::uint64_t> server_modexp_by_layer;
  std::vector<std::uint64_t> server_modmul_by_layer;
  std::vector<std::uint64_t> bigints_s2c_by_layer;
  std::vector<std::uint64_t> bigints_c2s_by_layer;

  void ensure_layers(std::size_t count) {
    if (server_modexp_by_layer.size() < count) {
      server_modexp_by_layer.resize(count, 0);
      server_modmul_by_layer.resize(count, 0);
      bigints_s2c_by_layer.resize(count, 0);
      bigints_c2s_by_layer.resize(count, 0);
    }
  }

  void merge(const CostCounters& other) {
    server_modexp += other.server_modexp;
    server_modmul += other.server_modmul;
    server_modinv += other.server_modinv;
    client_modexp += other.client_modexp;
    client_modmul += other.client_modmul;
    bigints_s2c += other.bigints_s2c;
    bigints_c2s += other.bigints_c2s;
    bytes_s2c += other.bytes_s2c;
    bytes_c2s += other.bytes_c2s;
    ensure_layers(other.server_modexp_by_layer.size());
    for (std::size_t i = 0; i < other.server_modexp_by_layer.size(); ++i) {
      server_modexp_by_layer[i] += other.server_modexp_by_layer[i];
      server_modmul_by_layer[i] += other.server_modmul_by_layer[i];
      bigints_s2c_by_layer[i] += other.bigints_s2c_by_layer[i];
      bigints_c2s_by_layer[i] += other.bigints_c2s_by_layer[i];
    }
  }
};

// ---------------------------------------------------------------------------
// Closed-form predictions from the layer sizes alone
// ---------------------------------------------------------------------------

struct LayerComputePrediction {
  std::size_t layer = 0;  // 1-based network layer
  std::uint64_t server_modexp = 0;  // m_k * (m_{k-1} + 1), bias included
  std::uint64_t server_modmul = 0;  // same count: one multiply per exp
};

struct ComputePrediction {
  // Coarse published totals: the server as the weighted sum of synapse
  // counts, the client charging 2 exps + 1 mul per input and 3 exps +
  // 3 muls per post-input neuron.
  std::uint64_t table_server_weighted = 0;
  std::uint64_t table_client_modexp = 0;
  std::uint64_t table_client_modmul = 0;
  // Exact totals under this implementation's op convention.
  std::vector<LayerComputePrediction> per_layer;
  std::uint64_t exact_server_modexp = 0;
  std::uint64_t exact_server_modmul = 0;
  std::uint64_t exact_client_modexp = 0;
  std::uint64_t exact_client_modmul = 0;
};

struct LayerCommPrediction {
  std::size_t layer = 0;
  std::uint64_t s2c = 0;  // ciphertexts the server emits for this layer
  std::uint64_t c2s = 0;  // ciphertexts this layer consumes from the client
};

struct CommPrediction {
  std::vector<LayerCommPrediction> per_layer;
  std::uint64_t bigints_s2c = 0;
  std::uint64_t bigints_c2s = 0;
  std::uint64_t key_bits = 0;
  // Predicted traffic charging each ciphertext at key_bits bits.
  std::uint64_t predicted_bits = 0;
};

struct CostPrediction {
  ComputePrediction compute;
  CommPrediction comm;
};

// sizes = {m_0 (input), m_1, ..., m_L}; layer k maps m_{k-1} -> m_k.
inline ComputePrediction predict_compute(const std::vector<std::size_t>& sizes) {
  if (sizes.size() < 2) throw Error("need at least input and output sizes");
  ComputePrediction p;
  const std::size_t depth = sizes.size() - 1;
  std::uint64_t post_input = 0;
  for (std::size_t k = 1; k <= depth; ++k) {
    p.table_server_weighted +=
        std::uint64_t(sizes[k]) * std::uint64_t(sizes[k - 1]);
    post_input += sizes[k];
    LayerComputePrediction lp;
    lp.layer = k;
    lp.server_modexp = std::uint64_t(sizes[k]) * (std::uint64_t(sizes[k - 1]) + 1);
    lp.server_modmul = lp.server_modexp;
    p.exact_server_modexp += lp.server_modexp;
    p.exact_server_modmul += lp.server_modmul;
    p.per_layer.push_back(lp);
  }
  const std::uint64_t m0 = sizes[0];
  const std::uint64_t mL = sizes[depth];
  p.table_client_modexp = 2 * m0 + 3 * post_input;
  p.table_client_modmul = m0 + 3 * post_input;
  // Exact: encrypt every input pixel (2e+1m); per hidden neuron decrypt +
  // re-encrypt (3e+3m); per output neuron decrypt only (1e+2m).
  const std::uint64_t hidden = post_input - mL;
  p.exact_client_modexp = 2 * m0 + 3 * hidden + mL;
  p.exact_client_modmul = m0 + 3 * hidden + 2 * mL;
  return p;
}

inline CommPrediction predict_comm(const std::vector<std::size_t>& sizes,
                                   std::uint64_t key_bits) {
  if (sizes.size() < 2) throw Error("need at least input and output sizes");
  CommPrediction p;
  p.key_bits = key_bits;
  const std::size_t depth = sizes.size() - 1;
  for (std::size_t k = 1; k <= depth; ++k) {
    LayerCommPrediction lp;
    lp.layer = k;
    lp.s2c = sizes[k];      // query for hidden layers, result for the last
    lp.c2s = sizes[k - 1];  // pixels for layer 1, activation replies after
    p.per_layer.push_back(lp);
    p.bigints_s2c += lp.s2c;
    p.bigints_c2s += lp.c2s;
  }
  p.predicted_bits = (p.bigints_s2c + p.bigints_c2s) * key_bits;
  return p;
}

inline CostPrediction predict_cost(const std::vector<std::size_t>& sizes,
                                   std::uint64_t key_bits) {
  return CostPrediction{predict_compute(sizes), predict_comm(sizes, key_bits)};
}

// ---------------------------------------------------------------------------
// Reconciliation of measured counters against the closed forms
// ---------------------------------------------------------------------------

struct ReconcileRow {
  std::string layer;   // "1", "2", ... or "total"
  std::string metric;  // server_modexp, bigints_s2c, ...
  std::uint64_t predicted = 0;
  std::uint64_t measured = 0;
  long long delta = 0;  // measured - predicted
};

struct ReconcileReport {
  bool ok = true;  // every checked row matched exactly
  std::vector<ReconcileRow> rows;
  // Share of exponentiations done by the server. Measured client counters
  // are used when present (end-to-end runs); otherwise the exact prediction
  // stands in, since a server-side report cannot see the client's work.
  double server_exp_share = 0;
  bool share_flag = false;  // set when the share drops below 0.95

  std::string csv() const {
    std::ostringstream out;
    out << "layer,metric,predicted,measured,delta\n";
    for (const ReconcileRow& r : rows) {
      out << r.layer << ',' << r.metric << ',' << r.predicted << ','
          << r.measured << ',' << r.delta << '\n';
    }
    return out.str();
  }
};

inline ReconcileReport reconcile(const CostCounters& counters,
                                 const CostPrediction& prediction) {
  ReconcileReport rep;
  auto add = [&](const std::string& layer, const std::string& metric,
                 std::uint64_t predicted, std::uint64_t measured) {
    ReconcileRow row{layer, metric, predicted, measured,
                     static_cast<long long>(measured) -
                         static_cast<long long>(predicted)};
    if (row.delta != 0) rep.ok = false;
    rep.rows.push_back(std::move(row));
  };
  auto layer_value = [](const std::vector<std::uint64_t>& v, std::size_t idx) {
    return idx < v.size() ? v[idx] : 0;
  };
  // Each endpoint can only see its own operation counters: a client-side
  // report has no server ops and vice versa. Check whichever side is
  // present; the ciphertext traffic counts are kept by both sides.
  const bool has_server = counters.server_modexp || counters.server_modmul;
  const bool has_client = counters.client_modexp || counters.client_modmul;
  const std::size_t depth = prediction.compute.per_layer.size();
  for (std::size_t i = 0; i < depth; ++i) {
    const std::string layer = std::to_string(i + 1);
    if (has_server) {
      add(layer, "server_modexp",
          prediction.compute.per_layer[i].server_modexp,
          layer_value(counters.server_modexp_by_layer, i));
      add(layer, "server_modmul",
          prediction.compute.per_layer[i].server_modmul,
          layer_value(counters.server_modmul_by_layer, i));
    }
    add(layer, "bigints_s2c", prediction.comm.per_layer[i].s2c,
        layer_value(counters.bigints_s2c_by_layer, i));
    add(layer, "bigints_c2s", prediction.comm.per_layer[i].c2s,
        layer_value(counters.bigints_c2s_by_layer, i));
  }
  if (has_server) {
    add("total", "server_modexp", prediction.compute.exact_server_modexp,
        counters.server_modexp);
    add("total", "server_modmul", prediction.compute.exact_server_modmul,
        counters.server_modmul);
  }
  add("total", "bigints_s2c", prediction.comm.bigints_s2c,
      counters.bigints_s2c);
  add("total", "bigints_c2s", prediction.comm.bigints_c2s,
      counters.bigints_c2s);
  if (has_client) {
    add("total", "client_modexp", prediction.compute.exact_client_modexp,
        counters.client_modexp);
    add("total", "client_modmul", prediction.compute.exact_client_modmul,
        counters.client_modmul);
  }
  const double server_exp =
      has_server ? double(counters.server_modexp)
                 : double(prediction.compute.exact_server_modexp);
  const double client_exp =
      has_client ? double(counters.client_modexp)
                 : double(prediction.compute.exact_client_modexp);
  if (server_exp + client_exp > 0) {
    rep.server_exp_share = server_exp / (server_exp + client_exp);
  }
  rep.share_flag = rep.server_exp_share < 0.95;
  return rep;
}

}  // namespace keyless
