#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mist/tensor.hpp"

namespace mist {

enum class Activation { relu, leaky_relu, sigmoid, tanh };

inline constexpr double kNormEps = 1e-5;
inline constexpr double kLeakySlope = 0.2;

// Every op below is differentiable w.r.t. all tensor arguments and throws
// NumericError if it produces a non-finite value.

/// Cross-correlation. x [N,Cin,H,W], w [Cout,Cin,k,k], b [Cout], odd k.
/// Output side is floor((H + 2*pad - k) / stride) + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad);

/// Per-(n,c) plane standardization with population variance.
/// A plane with var + eps == 0 maps to zeros.
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, double eps = kNormEps);

/// y[n,c,:,:] = gamma[n,c] * x[n,c,:,:] + beta[n,c]
template <typename T>
Tensor<T> channel_affine(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta);

/// Adaptive instance normalization: channel_affine(instance_norm(x), gamma, beta).
template <typename T>
Tensor<T> adain(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps = kNormEps);

template <typename T>
Tensor<T> pointwise(Activation kind, const Tensor<T>& x);

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return pointwise(Activation::relu, x);
}
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x) {
  return pointwise(Activation::leaky_relu, x);
}
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return pointwise(Activation::sigmoid, x);
}
template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return pointwise(Activation::tanh, x);
}

/// Elementwise natural log; inputs must be positive.
template <typename T>
Tensor<T> natural_log(const Tensor<T>& x);

/// Affine map x [N,Din] -> x w^T + b, w [Dout,Din], b [Dout].
template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

/// Nearest-neighbour 2x upsampling of [N,C,H,W].
template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x);

/// Fixed Laplacian [[0,-1,0],[-1,4,-1],[0,-1,0]] per channel, replicate padding.
template <typename T>
Tensor<T> highpass3x3(const Tensor<T>& x);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
/// Elementwise product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, double factor);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, double value);

/// Scalar [1] results.
template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);
/// mean(|a - b|); subgradient 0 where a == b.
template <typename T>
Tensor<T> l1_mean(const Tensor<T>& a, const Tensor<T>& b);

/// Elementwise mean of same-shape tensors.
template <typename T>
Tensor<T> average(std::span<const Tensor<T>> xs);

/// Concatenate [N,Ci,H,W] tensors along the channel axis.
template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> xs);

/// [N,C,H,W] -> [N,C]
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

/// [N,E] -> [N,E,H,W], constant over space.
template <typename T>
Tensor<T> broadcast_spatial(const Tensor<T>& v, std::size_t height, std::size_t width);

/// Rows of table [R,E] picked by index -> [len(rows),E].
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<std::size_t>& rows);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

}  // namespace mist
