#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "keyless/errors.hpp"

namespace keyless {

// Numeric values double as wire tags for activation queries; only sigmoid
// and relu ever travel on the wire (softmax is evaluated client-side).
enum class Activation : std::uint8_t {
  sigmoid = 1,
  relu = 2,
  softmax = 3,
};

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::sigmoid: return "sigmoid";
    case Activation::relu: return "relu";
    case Activation::softmax: return "softmax";
  }
  throw ModelError("unknown activation");
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "relu") return Activation::relu;
  if (s == "softmax") return Activation::softmax;
  throw ModelError("unknown activation name: " + s);
}

// Overflow-safe logistic function.
inline double sigmoid(double y) {
  if (y >= 0) {
    const double e = std::exp(-y);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(y);
  return e / (1.0 + e);
}

inline double relu(double y) { return y > 0 ? y : 0.0; }

// Max-subtracted softmax; outputs sum to 1 for finite inputs.
inline std::vector<double> softmax(const std::vector<double>& y) {
  if (y.empty()) throw ModelError("softmax: empty input");
  double m = y[0];
  for (double v : y) m = std::max(m, v);
  std::vector<double> out(y.size());
  double sum = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    out[i] = std::exp(y[i] - m);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

// Element activation for hidden layers; softmax is not element-wise and is
// rejected here.
inline double apply_hidden(Activation a, double y) {
  switch (a) {
    case Activation::sigmoid: return sigmoid(y);
    case Activation::relu: return relu(y);
    case Activation::softmax: break;
  }
  throw ModelError("softmax cannot be applied element-wise");
}

}  // namespace keyless
