#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "keyless/activation.hpp"
#include "keyless/errors.hpp"
#include "keyless/fixedpoint.hpp"

namespace keyless {

// ---------------------------------------------------------------------------
// Model structure
// ---------------------------------------------------------------------------

struct Layer {
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
  std::vector<double> weights;  // row-major, fan_out x fan_in
  std::vector<double> bias;     // fan_out
  Activation act = Activation::sigmoid;
};

struct MlpModel {
  std::size_t input_dim = 0;
  std::vector<Layer> layers;
};

// Structural checks: dimensions chain, exactly the final layer is softmax,
// hidden layers are sigmoid or relu.
inline void validate(const MlpModel& m) {
  if (m.input_dim == 0) throw ModelError("model input dimension is zero");
  if (m.layers.empty()) throw ModelError("model has no layers");
  std::size_t prev = m.input_dim;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const Layer& layer = m.layers[l];
    if (layer.fan_in != prev) {
      throw ModelError("layer " + std::to_string(l + 1) + " fan-in mismatch");
    }
    if (layer.fan_out == 0) {
      throw ModelError("layer " + std::to_string(l + 1) + " has no neurons");
    }
    if (layer.weights.size() != layer.fan_in * layer.fan_out ||
        layer.bias.size() != layer.fan_out) {
      throw ModelError("layer " + std::to_string(l + 1) + " parameter count");
    }
    const bool last = l + 1 == m.layers.size();
    if (last && layer.act != Activation::softmax) {
      throw ModelError("final layer must be softmax");
    }
    if (!last && layer.act == Activation::softmax) {
      throw ModelError("softmax is only allowed on the final layer");
    }
    prev = layer.fan_out;
  }
}

inline std::vector<std::size_t> layer_sizes(const MlpModel& m) {
  std::vector<std::size_t> sizes{m.input_dim};
  for (const Layer& l : m.layers) sizes.push_back(l.fan_out);
  return sizes;
}

// Seeded Glorot-uniform initialization; biases start at zero.
inline MlpModel init_model(std::size_t input_dim,
                           const std::vector<std::pair<std::size_t, Activation>>& hidden,
                           std::size_t classes, std::uint64_t seed) {
  MlpModel m;
  m.input_dim = input_dim;
  std::mt19937_64 engine(seed);
  std::size_t prev = input_dim;
  auto add_layer = [&](std::size_t fan_out, Activation act) {
    Layer layer;
    layer.fan_in = prev;
    layer.fan_out = fan_out;
    layer.act = act;
    const double bound = std::sqrt(6.0 / double(prev + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    layer.weights.resize(prev * fan_out);
    for (double& w : layer.weights) w = dist(engine);
    layer.bias.assign(fan_out, 0.0);
    prev = fan_out;
    m.layers.push_back(std::move(layer));
  };
  for (const auto& [size, act] : hidden) add_layer(size, act);
  add_layer(classes, Activation::softmax);
  validate(m);
  return m;
}

// ---------------------------------------------------------------------------
// Full-precision forward pass
// ---------------------------------------------------------------------------

inline std::vector<double> forward_plain(const MlpModel& m,
                                         const std::vector<double>& x) {
  if (x.size() != m.input_dim) throw ModelError("input dimension mismatch");
  std::vector<double> a = x;
  for (const Layer& layer : m.layers) {
    std::vector<double> y(layer.fan_out, 0.0);
    for (std::size_t j = 0; j < layer.fan_out; ++j) {
      const double* row = layer.weights.data() + j * layer.fan_in;
      double acc = layer.bias[j];
      for (std::size_t i = 0; i < layer.fan_in; ++i) acc += row[i] * a[i];
      y[j] = acc;
    }
    if (layer.act == Activation::softmax) return softmax(y);
    for (double& v : y) v = apply_hidden(layer.act, v);
    a = std::move(y);
  }
  throw ModelError("model ended without a softmax layer");
}

// ---------------------------------------------------------------------------
// Quantized model and the integer-exact forward pass
// ---------------------------------------------------------------------------

struct QuantizedLayer {
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
  std::vector<Bigint> weights_q;  // scale frac_bits
  std::vector<Bigint> bias_q;     // scale 2*frac_bits
  Activation act = Activation::sigmoid;
};

struct QuantizedMlp {
  std::size_t input_dim = 0;
  std::vector<QuantizedLayer> layers;
  CodecConfig cfg;
};

inline std::vector<std::size_t> layer_sizes(const QuantizedMlp& m) {
  std::vector<std::size_t> sizes{m.input_dim};
  for (const QuantizedLayer& l : m.layers) sizes.push_back(l.fan_out);
  return sizes;
}

// Fixed-point quantization: weights at frac_bits, biases at 2*frac_bits so
// they add directly onto the product scale. Errors name the offending layer.
inline QuantizedMlp quantize_model(const MlpModel& m, const CodecConfig& cfg) {
  validate(m);
  validate(cfg);
  QuantizedMlp q;
  q.input_dim = m.input_dim;
  q.cfg = cfg;
  const double budget = std::ldexp(1.0, cfg.int_bits);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const Layer& layer = m.layers[l];
    if (!layer_fits(cfg, layer.fan_in)) {
      throw CodecError("layer " + std::to_string(l + 1) +
                       ": accumulation budget exceeds the modulus (" +
                       std::to_string(layer_budget_bits(cfg, layer.fan_in)) +
                       " bits needed)");
    }
    QuantizedLayer ql;
    ql.fan_in = layer.fan_in;
    ql.fan_out = layer.fan_out;
    ql.act = layer.act;
    ql.weights_q.reserve(layer.weights.size());
    for (double w : layer.weights) {
      if (std::fabs(w) >= budget) {
        throw CodecError("layer " + std::to_string(l + 1) +
                         ": weight outside the int_bits budget");
      }
      ql.weights_q.push_back(quantize_value(w, cfg.frac_bits));
    }
    ql.bias_q.reserve(layer.bias.size());
    for (double b : layer.bias) {
      if (std::fabs(b) >= budget) {
        throw CodecError("layer " + std::to_string(l + 1) +
                         ": bias outside the int_bits budget");
      }
      ql.bias_q.push_back(quantize_value(b, 2 * cfg.frac_bits));
    }
    q.layers.push_back(std::move(ql));
  }
  return q;
}

struct QuantizedForward {
  // Per-layer pre-activations as signed integers at scale 2*frac_bits.
  // These are exactly the values the protocol client decrypts.
  std::vector<std::vector<Bigint>> pre_activations;
  std::vector<double> probabilities;
};

// Simulates the encrypted pipeline integer-for-integer: encode inputs at
// frac_bits, accumulate weighted sums at 2*frac_bits, re-encode activations
// at frac_bits, and finish with a client-side softmax over the decoded
// logits.
inline QuantizedForward forward_quantized(const QuantizedMlp& m,
                                          const std::vector<double>& x) {
  if (x.size() != m.input_dim) throw ModelError("input dimension mismatch");
  QuantizedForward out;
  std::vector<Bigint> a;
  a.reserve(x.size());
  for (double v : x) a.push_back(encode_value(v, m.cfg));
  for (const QuantizedLayer& layer : m.layers) {
    std::vector<Bigint> y(layer.fan_out);
    for (std::size_t j = 0; j < layer.fan_out; ++j) {
      const Bigint* row = layer.weights_q.data() + j * layer.fan_in;
      Bigint acc = layer.bias_q[j];
      for (std::size_t i = 0; i < layer.fan_in; ++i) acc += row[i] * a[i];
      y[j] = acc;
    }
    out.pre_activations.push_back(y);
    if (layer.act == Activation::softmax) {
      std::vector<double> logits(layer.fan_out);
      for (std::size_t j = 0; j < layer.fan_out; ++j) {
        logits[j] = decode_signed_value(y[j], 2 * m.cfg.frac_bits);
      }
      out.probabilities = softmax(logits);
      return out;
    }
    std::vector<Bigint> next(layer.fan_out);
    for (std::size_t j = 0; j < layer.fan_out; ++j) {
      next[j] = requantize_activation(layer.act, y[j], m.cfg);
    }
    a = std::move(next);
  }
  throw ModelError("model ended without a softmax layer");
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

struct Dataset {
  std::size_t side = 0;  // images are side x side, intensities in [0, 1]
  std::vector<std::vector<double>> images;
  std::vector<int> labels;       // 0 = before treatment, 1 = after
  std::vector<int> subject_ids;  // images of one subject share an id

  std::size_t size() const { return images.size(); }
};

inline void validate(const Dataset& d) {
  if (d.side == 0) throw ModelError("dataset side is zero");
  if (d.images.size() != d.labels.size() ||
      d.images.size() != d.subject_ids.size()) {
    throw ModelError("dataset column sizes disagree");
  }
  for (const auto& img : d.images) {
    if (img.size() != d.side * d.side) {
      throw ModelError("image pixel count does not match side^2");
    }
  }
}

// Synthetic stand-in for the clinical corpus: each subject contributes
// images of both classes. Class 0 carries horizontal stripes at one spatial
// frequency, class 1 vertical stripes at another; a per-subject phase and
// brightness offset plus pixel noise keep subjects distinct so a
// cross-subject split actually tests generalization.
inline Dataset synth_dataset(std::uint64_t seed, std::size_t subjects,
                             std::size_t images_per_subject,
                             std::size_t side) {
  if (subjects < 2 || images_per_subject < 2 || side < 2) {
    throw ModelError("synth_dataset: need >= 2 subjects, images, and pixels");
  }
  Dataset d;
  d.side = side;
  std::mt19937_64 engine(seed);
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> bright_dist(-0.08, 0.08);
  std::normal_distribution<double> noise(0.0, 0.04);
  constexpr double kFreqBefore = 3.0;
  constexpr double kFreqAfter = 5.0;
  for (std::size_t s = 0; s < subjects; ++s) {
    const double phase = phase_dist(engine);
    const double bright = bright_dist(engine);
    for (std::size_t i = 0; i < images_per_subject; ++i) {
      const int cls = static_cast<int>(i % 2);
      std::vector<double> img(side * side);
      for (std::size_t y = 0; y < side; ++y) {
        for (std::size_t x = 0; x < side; ++x) {
          const double u = cls == 0 ? double(y) : double(x);
          const double freq = cls == 0 ? kFreqBefore : kFreqAfter;
          double v = 0.5 + 0.25 * std::sin(2.0 * M_PI * freq * u / double(side) + phase) +
                     bright + noise(engine);
          img[y * side + x] = std::clamp(v, 0.0, 1.0);
        }
      }
      d.images.push_back(std::move(img));
      d.labels.push_back(cls);
      d.subject_ids.push_back(static_cast<int>(s));
    }
  }
  return d;
}

// Disjoint split by subject id: the first round(fraction * subjects) of the
// sorted subject ids train, the rest test. Subjects never straddle the
// boundary.
inline std::pair<Dataset, Dataset> split_by_subject(const Dataset& d,
                                                    double train_fraction) {
  validate(d);
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ModelError("train fraction must be in (0, 1)");
  }
  std::vector<int> subjects = d.subject_ids;
  std::sort(subjects.begin(), subjects.end());
  subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
  if (subjects.size() < 2) {
    throw ModelError("need at least two subjects for a cross-subject split");
  }
  std::size_t n_train = static_cast<std::size_t>(
      std::lround(train_fraction * double(subjects.size())));
  n_train = std::clamp<std::size_t>(n_train, 1, subjects.size() - 1);
  const int boundary = subjects[n_train - 1];
  Dataset train, test;
  train.side = test.side = d.side;
  for (std::size_t i = 0; i < d.size(); ++i) {
    Dataset& dst = d.subject_ids[i] <= boundary ? train : test;
    dst.images.push_back(d.images[i]);
    dst.labels.push_back(d.labels[i]);
    dst.subject_ids.push_back(d.subject_ids[i]);
  }
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

enum class Optimizer { adam, rmsprop };

struct TrainConfig {
  Optimizer opt = Optimizer::adam;
  double lr = 1e-3;
  double beta1 = 0.9;    // adam first-moment decay
  double beta2 = 0.999;  // adam second-moment decay
  double rho = 0.9;      // rmsprop decay
  double eps = 1e-8;
  std::size_t epochs = 40;
  std::size_t batch = 16;
  std::uint64_t seed = 1;
};

struct TrainResult {
  MlpModel model;
  std::vector<double> epoch_loss;  // mean cross-entropy per epoch
};

namespace detail {

struct LayerGrads {
  std::vector<double> w;
  std::vector<double> b;
};

// Forward pass keeping post-activation values per layer (index 0 = input),
// returning the cross-entropy loss of one sample via the log-sum-exp form,
// which stays finite until the logits themselves diverge.
inline double forward_backward(const MlpModel& m, const std::vector<double>& x,
                               int label, std::vector<LayerGrads>& grads) {
  const std::size_t depth = m.layers.size();
  std::vector<std::vector<double>> acts(depth + 1);
  acts[0] = x;
  std::vector<std::vector<double>> pre(depth);
  for (std::size_t l = 0; l < depth; ++l) {
    const Layer& layer = m.layers[l];
    pre[l].assign(layer.fan_out, 0.0);
    for (std::size_t j = 0; j < layer.fan_out; ++j) {
      const double* row = layer.weights.data() + j * layer.fan_in;
      double acc = layer.bias[j];
      for (std::size_t i = 0; i < layer.fan_in; ++i) {
        acc += row[i] * acts[l][i];
      }
      pre[l][j] = acc;
    }
    if (layer.act == Activation::softmax) {
      acts[l + 1] = softmax(pre[l]);
    } else {
      acts[l + 1].resize(layer.fan_out);
      for (std::size_t j = 0; j < layer.fan_out; ++j) {
        acts[l + 1][j] = apply_hidden(layer.act, pre[l][j]);
      }
    }
  }
  // loss = logsumexp(logits) - logits[label]
  const std::vector<double>& logits = pre[depth - 1];
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0;
  for (double v : logits) sum += std::exp(v - mx);
  const double loss = mx + std::log(sum) - logits[static_cast<std::size_t>(label)];

  // Backward: softmax + cross-entropy gives delta = p - onehot.
  std::vector<double> delta = acts[depth];
  delta[static_cast<std::size_t>(label)] -= 1.0;
  for (std::size_t l = depth; l-- > 0;) {
    const Layer& layer = m.layers[l];
    for (std::size_t j = 0; j < layer.fan_out; ++j) {
      const double dj = delta[j];
      double* gw = grads[l].w.data() + j * layer.fan_in;
      for (std::size_t i = 0; i < layer.fan_in; ++i) {
        gw[i] += dj * acts[l][i];
      }
      grads[l].b[j] += dj;
    }
    if (l == 0) break;
    const Layer& below = m.layers[l - 1];
    std::vector<double> prev_delta(layer.fan_in, 0.0);
    for (std::size_t j = 0; j < layer.fan_out; ++j) {
      const double dj = delta[j];
      const double* row = layer.weights.data() + j * layer.fan_in;
      for (std::size_t i = 0; i < layer.fan_in; ++i) {
        prev_delta[i] += dj * row[i];
      }
    }
    for (std::size_t i = 0; i < below.fan_out; ++i) {
      const double h = acts[l][i];
      if (below.act == Activation::sigmoid) {
        prev_delta[i] *= h * (1.0 - h);
      } else {  // relu
        prev_delta[i] *= pre[l - 1][i] > 0 ? 1.0 : 0.0;
      }
    }
    delta = std::move(prev_delta);
  }
  return loss;
}

}  // namespace detail

// Mean cross-entropy of the model on a batch; exposed for gradient checks.
inline double batch_loss(const MlpModel& m,
                         const std::vector<std::vector<double>>& xs,
                         const std::vector<int>& ys) {
  double total = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const std::vector<double> p = forward_plain(m, xs[i]);
    // recompute via logits-free path: use -log p with the stable softmax
    total += -std::log(std::max(p[static_cast<std::size_t>(ys[i])], 1e-300));
  }
  return total / double(xs.size());
}

// Batch-averaged gradients; exposed for the finite-difference check.
inline std::vector<detail::LayerGrads> batch_gradients(
    const MlpModel& m, const std::vector<std::vector<double>>& xs,
    const std::vector<int>& ys) {
  std::vector<detail::LayerGrads> grads(m.layers.size());
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    grads[l].w.assign(m.layers[l].weights.size(), 0.0);
    grads[l].b.assign(m.layers[l].bias.size(), 0.0);
  }
  for (std::size_t i = 0; i < xs.size(); ++i) {
    detail::forward_backward(m, xs[i], ys[i], grads);
  }
  const double inv = 1.0 / double(xs.size());
  for (auto& g : grads) {
    for (double& v : g.w) v *= inv;
    for (double& v : g.b) v *= inv;
  }
  return grads;
}

// Mini-batch training with Adam or RMSProp. Deterministic for a fixed seed:
// iteration order, shuffling, and updates are all derived from it. Throws
// ModelError naming the epoch if the loss stops being finite.
inline TrainResult train(const MlpModel& initial, const Dataset& data,
                         const TrainConfig& cfg) {
  validate(initial);
  validate(data);
  if (data.size() == 0) throw ModelError("training dataset is empty");
  if (data.images[0].size() != initial.input_dim) {
    throw ModelError("dataset dimension does not match the model");
  }
  if (cfg.batch == 0) throw ModelError("batch size must be positive");
  TrainResult result{initial, {}};
  MlpModel& m = result.model;

  // Flat optimizer state per layer: first/second moments (adam) or the
  // running square average (rmsprop reuses the second-moment slot).
  std::vector<detail::LayerGrads> m1(m.layers.size()), m2(m.layers.size());
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    m1[l].w.assign(m.layers[l].weights.size(), 0.0);
    m1[l].b.assign(m.layers[l].bias.size(), 0.0);
    m2[l].w.assign(m.layers[l].weights.size(), 0.0);
    m2[l].b.assign(m.layers[l].bias.size(), 0.0);
  }
  std::mt19937_64 engine(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::uint64_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), engine);
    double epoch_total = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      std::vector<detail::LayerGrads> grads(m.layers.size());
      for (std::size_t l = 0; l < m.layers.size(); ++l) {
        grads[l].w.assign(m.layers[l].weights.size(), 0.0);
        grads[l].b.assign(m.layers[l].bias.size(), 0.0);
      }
      double batch_total = 0;
      for (std::size_t i = start; i < end; ++i) {
        batch_total += detail::forward_backward(m, data.images[order[i]],
                                                data.labels[order[i]], grads);
      }
      const double inv = 1.0 / double(end - start);
      batch_total *= inv;
      epoch_total += batch_total;
      ++batches;
      ++step;
      for (std::size_t l = 0; l < m.layers.size(); ++l) {
        auto update = [&](std::vector<double>& param,
                          const std::vector<double>& grad,
                          std::vector<double>& s1, std::vector<double>& s2) {
          for (std::size_t i = 0; i < param.size(); ++i) {
            const double g = grad[i] * inv;
            if (cfg.opt == Optimizer::adam) {
              s1[i] = cfg.beta1 * s1[i] + (1.0 - cfg.beta1) * g;
              s2[i] = cfg.beta2 * s2[i] + (1.0 - cfg.beta2) * g * g;
              const double mh = s1[i] / (1.0 - std::pow(cfg.beta1, double(step)));
              const double vh = s2[i] / (1.0 - std::pow(cfg.beta2, double(step)));
              param[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
            } else {
              s2[i] = cfg.rho * s2[i] + (1.0 - cfg.rho) * g * g;
              param[i] -= cfg.lr * g / (std::sqrt(s2[i]) + cfg.eps);
            }
          }
        };
        update(m.layers[l].weights, grads[l].w, m1[l].w, m2[l].w);
        update(m.layers[l].bias, grads[l].b, m1[l].b, m2[l].b);
      }
    }
    const double mean_loss = epoch_total / double(batches);
    if (!std::isfinite(mean_loss)) {
      throw ModelError("training diverged at epoch " + std::to_string(epoch + 1));
    }
    result.epoch_loss.push_back(mean_loss);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalMetrics {
  double accuracy = 0;
  double precision = 0;  // positive class: label 1 (after treatment)
  double recall = 0;
  double f1 = 0;
};

inline int predict_label(const MlpModel& m, const std::vector<double>& x) {
  const std::vector<double> p = forward_plain(m, x);
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

inline EvalMetrics evaluate(const MlpModel& m, const Dataset& d) {
  validate(d);
  if (d.size() == 0) throw ModelError("evaluation dataset is empty");
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const int pred = predict_label(m, d.images[i]);
    const int truth = d.labels[i];
    if (pred == 1 && truth == 1) ++tp;
    else if (pred == 1 && truth == 0) ++fp;
    else if (pred == 0 && truth == 0) ++tn;
    else ++fn;
  }
  EvalMetrics e;
  e.accuracy = double(tp + tn) / double(d.size());
  e.precision = tp + fp ? double(tp) / double(tp + fp) : 0.0;
  e.recall = tp + fn ? double(tp) / double(tp + fn) : 0.0;
  e.f1 = e.precision + e.recall > 0
             ? 2.0 * e.precision * e.recall / (e.precision + e.recall)
             : 0.0;
  return e;
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

namespace detail {

// Whitespace tokenizer that remembers line numbers so format errors can
// point at the offending line.
class TokenReader {
 public:
  TokenReader(std::istream& in, std::string origin)
      : in_(in), origin_(std::move(origin)) {}

  std::string next(const char* what) {
    std::string tok;
    for (;;) {
      const int c = in_.get();
      if (c == EOF) {
        if (tok.empty()) {
          throw IoError(origin_ + ":" + std::to_string(line_) +
                        ": unexpected end of file, expected " + what);
        }
        return tok;
      }
      if (c == '\n') {
        if (!tok.empty()) {
          in_.unget();
          return tok;
        }
        ++line_;
        continue;
      }
      if (std::isspace(c)) {
        if (!tok.empty()) return tok;
        continue;
      }
      tok.push_back(static_cast<char>(c));
    }
  }

  long next_int(const char* what) {
    const std::string tok = next(what);
    try {
      std::size_t used = 0;
      const long v = std::stol(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      return v;
    } catch (const std::exception&) {
      throw IoError(origin_ + ":" + std::to_string(line_) + ": expected " +
                    what + ", got '" + tok + "'");
    }
  }

  double next_double(const char* what) {
    const std::string tok = next(what);
    try {
      std::size_t used = 0;
      const double v = std::stod(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      return v;
    } catch (const std::exception&) {
      throw IoError(origin_ + ":" + std::to_string(line_) + ": expected " +
                    what + ", got '" + tok + "'");
    }
  }

  void expect(const char* literal) {
    const std::string tok = next(literal);
    if (tok != literal) {
      throw IoError(origin_ + ":" + std::to_string(line_) + ": expected '" +
                    std::string(literal) + "', got '" + tok + "'");
    }
  }

  bool at_eof() {
    for (;;) {
      const int c = in_.get();
      if (c == EOF) return true;
      if (c == '\n') {
        ++line_;
        continue;
      }
      if (!std::isspace(c)) {
        in_.unget();
        return false;
      }
    }
  }

  std::size_t line() const { return line_; }
  const std::string& origin() const { return origin_; }

 private:
  std::istream& in_;
  std::string origin_;
  std::size_t line_ = 1;
};

inline void write_double(std::ostream& out, double v) {
  // 17 significant digits round-trip any double exactly.
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out << buf;
}

// Writes through a temporary and renames, so failures never leave a partial
// file at the destination.
template <typename Fn>
void atomic_write(const std::string& path, Fn&& fill) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp);
    fill(out);
    out.flush();
    if (!out) throw IoError("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw IoError("cannot rename " + tmp + " to " + path);
  }
}

}  // namespace detail

// Text model format:
//   mlp <input_dim> <layer_count>
//   layer <fan_out> <activation>
//   <fan_in + 1 numbers per neuron: weights then bias>  (one line per neuron)
inline void save_model(const MlpModel& m, const std::string& path) {
  validate(m);
  detail::atomic_write(path, [&](std::ostream& out) {
    out << "mlp " << m.input_dim << ' ' << m.layers.size() << '\n';
    for (const Layer& layer : m.layers) {
      out << "layer " << layer.fan_out << ' ' << to_string(layer.act) << '\n';
      for (std::size_t j = 0; j < layer.fan_out; ++j) {
        for (std::size_t i = 0; i < layer.fan_in; ++i) {
          detail::write_double(out, layer.weights[j * layer.fan_in + i]);
          out << ' ';
        }
        detail::write_double(out, layer.bias[j]);
        out << '\n';
      }
    }
  });
}

inline MlpModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open model file: " + path);
  detail::TokenReader r(in, path);
  r.expect("mlp");
  const long input_dim = r.next_int("input dimension");
  const long layer_count = r.next_int("layer count");
  if (input_dim <= 0 || layer_count <= 0) {
    throw IoError(path + ":" + std::to_string(r.line()) +
                  ": dimensions must be positive");
  }
  MlpModel m;
  m.input_dim = static_cast<std::size_t>(input_dim);
  std::size_t prev = m.input_dim;
  for (long l = 0; l < layer_count; ++l) {
    r.expect("layer");
    const long fan_out = r.next_int("layer fan-out");
    if (fan_out <= 0) {
      throw IoError(path + ":" + std::to_string(r.line()) +
                    ": fan-out must be positive");
    }
    Layer layer;
    layer.fan_in = prev;
    layer.fan_out = static_cast<std::size_t>(fan_out);
    try {
      layer.act = activation_from_string(r.next("activation name"));
    } catch (const ModelError& e) {
      throw IoError(path + ":" + std::to_string(r.line()) + ": " + e.what());
    }
    layer.weights.resize(layer.fan_in * layer.fan_out);
    layer.bias.resize(layer.fan_out);
    for (std::size_t j = 0; j < layer.fan_out; ++j) {
      for (std::size_t i = 0; i < layer.fan_in; ++i) {
        layer.weights[j * layer.fan_in + i] = r.next_double("weight");
      }
      layer.bias[j] = r.next_double("bias");
    }
    prev = layer.fan_out;
    m.layers.push_back(std::move(layer));
  }
  if (!r.at_eof()) {
    throw IoError(path + ":" + std::to_string(r.line()) +
                  ": trailing content after model");
  }
  try {
    validate(m);
  } catch (const ModelError& e) {
    throw IoError(path + ": " + e.what());
  }
  return m;
}

// Text dataset format:
//   imgset <side> <count>
//   <subject_id> <label> <side*side intensities in [0, 1]>   (per image)
inline void save_dataset(const Dataset& d, const std::string& path) {
  validate(d);
  detail::atomic_write(path, [&](std::ostream& out) {
    out << "imgset " << d.side << ' ' << d.size() << '\n';
    for (std::size_t i = 0; i < d.size(); ++i) {
      out << d.subject_ids[i] << ' ' << d.labels[i];
      for (double v : d.images[i]) {
        out << ' ';
        detail::write_double(out, v);
      }
      out << '\n';
    }
  });
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path);
  detail::TokenReader r(in, path);
  r.expect("imgset");
  const long side = r.next_int("image side");
  const long count = r.next_int("image count");
  if (side <= 0 || count < 0) {
    throw IoError(path + ":" + std::to_string(r.line()) +
                  ": bad header values");
  }
  Dataset d;
  d.side = static_cast<std::size_t>(side);
  for (long k = 0; k < count; ++k) {
    const long subject = r.next_int("subject id");
    const long label = r.next_int("label");
    if (subject < 0) {
      throw IoError(path + ":" + std::to_string(r.line()) +
                    ": subject id must be non-negative");
    }
    if (label != 0 && label != 1) {
      throw IoError(path + ":" + std::to_string(r.line()) +
                    ": label must be 0 or 1");
    }
    std::vector<double> img(d.side * d.side);
    for (double& v : img) {
      v = r.next_double("pixel intensity");
      if (!(v >= 0.0 && v <= 1.0)) {
        throw IoError(path + ":" + std::to_string(r.line()) +
                      ": intensity outside [0, 1]");
      }
    }
    d.images.push_back(std::move(img));
    d.labels.push_back(static_cast<int>(label));
    d.subject_ids.push_back(static_cast<int>(subject));
  }
  if (!r.at_eof()) {
    throw IoError(path + ":" + std::to_string(r.line()) +
                  ": trailing content after images");
  }
  return d;
}

}  // namespace keyless
