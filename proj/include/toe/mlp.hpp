#pragma once

// Multilayer perceptron with exact manual gradients. Inputs are batched as
// rows of a matrix; a single sample is a one-row matrix.

#include <cmath>
#include <initializer_list>
#include <string>
#include <vector>

#include "toe/errors.hpp"
#include "toe/numerics.hpp"

namespace toe {

enum class Activation { relu, identity };

inline const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "identity"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "identity") return Activation::identity;
  throw ValidationError("unknown activation '" + s + "'");
}

template <typename Scalar>
struct DenseLayer {
  MatrixT<Scalar> weight;  // out x in
  VectorT<Scalar> bias;    // out
  Activation activation = Activation::identity;
};

template <typename Scalar>
struct BasicMlp {
  std::vector<DenseLayer<Scalar>> layers;

  Eigen::Index in_dim() const { return layers.empty() ? 0 : layers.front().weight.cols(); }
  Eigen::Index out_dim() const { return layers.empty() ? 0 : layers.back().weight.rows(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  /// Same shapes, all values zero; used as a gradient accumulator.
  BasicMlp zeros_like() const {
    BasicMlp z = *this;
    for (auto& l : z.layers) {
      l.weight.setZero();
      l.bias.setZero();
    }
    return z;
  }

  bool operator==(const BasicMlp& o) const {
    if (layers.size() != o.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& a = layers[i];
      const auto& b = o.layers[i];
      if (a.activation != b.activation || a.weight.rows() != b.weight.rows() ||
          a.weight.cols() != b.weight.cols() || a.weight != b.weight || a.bias != b.bias) {
        return false;
      }
    }
    return true;
  }
};

using Mlp = BasicMlp<Real>;

/// Per-layer inputs and pre-activations recorded by a forward pass.
template <typename Scalar>
struct BasicMlpCache {
  std::vector<MatrixT<Scalar>> inputs;
  std::vector<MatrixT<Scalar>> pre;
};
using MlpCache = BasicMlpCache<Real>;

template <typename Scalar>
struct BasicMlpBackward {
  BasicMlp<Scalar> grads;
  MatrixT<Scalar> input_grad;
};
using MlpBackward = BasicMlpBackward<Real>;

/// Builds an MLP with the given layer widths (widths[0] is the input size).
/// Weights and biases are uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
inline Mlp make_mlp(const std::vector<int>& widths, const std::vector<Activation>& activations,
                    Rng& rng) {
  if (widths.size() < 2 || activations.size() != widths.size() - 1) {
    throw ValidationError("make_mlp: need one activation per layer");
  }
  Mlp mlp;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    DenseLayer<Real> layer;
    const Real bound = 1.0 / std::sqrt(static_cast<Real>(widths[i]));
    layer.weight.resize(widths[i + 1], widths[i]);
    layer.bias.resize(widths[i + 1]);
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = rng.uniform(-bound, bound);
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = rng.uniform(-bound, bound);
    layer.activation = activations[i];
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

template <typename Scalar>
MatrixT<Scalar> mlp_forward(const BasicMlp<Scalar>& params, const MatrixT<Scalar>& input,
                            BasicMlpCache<Scalar>* cache = nullptr) {
  if (params.layers.empty()) throw ValidationError("mlp_forward: empty network");
  if (input.cols() != params.in_dim()) {
    throw ValidationError("mlp_forward: input width " + std::to_string(input.cols()) +
                          " does not match layer width " + std::to_string(params.in_dim()));
  }
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  MatrixT<Scalar> x = input;
  for (const auto& layer : params.layers) {
    MatrixT<Scalar> z = x * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    if (cache) {
      cache->inputs.push_back(x);
      cache->pre.push_back(z);
    }
    if (layer.activation == Activation::relu) z = z.cwiseMax(Scalar(0));
    x = std::move(z);
  }
  return x;
}

template <typename Scalar>
VectorT<Scalar> mlp_forward(const BasicMlp<Scalar>& params, const VectorT<Scalar>& input) {
  MatrixT<Scalar> row = input.transpose();
  return mlp_forward(params, row).row(0).transpose();
}

/// Accumulates d(sum(output .* upstream)) / d(params) into `grads` and returns
/// the gradient with respect to the forward input.
template <typename Scalar>
MatrixT<Scalar> mlp_backward_accumulate(const BasicMlp<Scalar>& params, const BasicMlpCache<Scalar>& cache,
                                        const MatrixT<Scalar>& upstream, BasicMlp<Scalar>& grads) {
  const std::size_t n = params.layers.size();
  if (cache.inputs.size() != n || cache.pre.size() != n || grads.layers.size() != n) {
    throw ValidationError("mlp_backward: cache does not match network");
  }
  if (upstream.rows() != cache.pre.back().rows() || upstream.cols() != params.out_dim()) {
    throw ValidationError("mlp_backward: upstream shape mismatch");
  }
  MatrixT<Scalar> delta = upstream;
  for (std::size_t li = n; li-- > 0;) {
    const auto& layer = params.layers[li];
    if (layer.activation == Activation::relu) {
      delta = (cache.pre[li].array() > Scalar(0)).select(delta, Scalar(0));
    }
    grads.layers[li].weight.noalias() += delta.transpose() * cache.inputs[li];
    grads.layers[li].bias.noalias() += delta.colwise().sum().transpose();
    delta = delta * layer.weight;
  }
  return delta;
}

template <typename Scalar>
BasicMlpBackward<Scalar> mlp_backward(const BasicMlp<Scalar>& params, const BasicMlpCache<Scalar>& cache,
                                      const MatrixT<Scalar>& upstream) {
  BasicMlpBackward<Scalar> out{params.zeros_like(), {}};
  out.input_grad = mlp_backward_accumulate(params, cache, upstream, out.grads);
  return out;
}

/// p <- p - lr * g, elementwise over every weight and bias.
template <typename Scalar>
void sgd_step(BasicMlp<Scalar>& params, const BasicMlp<Scalar>& grads, Scalar lr) {
  if (grads.layers.size() != params.layers.size()) throw ValidationError("sgd_step: shape mismatch");
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    params.layers[i].weight -= lr * grads.layers[i].weight;
    params.layers[i].bias -= lr * grads.layers[i].bias;
  }
}

}  // namespace toe
