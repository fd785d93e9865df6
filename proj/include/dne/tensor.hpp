#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace dne {

/// Dense channel-major (C, H, W) tensor.
template <typename T>
struct Tensor3 {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Tensor3() = default;
  Tensor3(int c, int h, int w, T fill = T{0})
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t size() const noexcept { return data.size(); }
  std::size_t plane() const noexcept { return static_cast<std::size_t>(height) * width; }

  T& at(int c, int y, int x) noexcept { return data[(c * plane()) + y * width + x]; }
  const T& at(int c, int y, int x) const noexcept { return data[(c * plane()) + y * width + x]; }
};

/// Convolution kernel bank laid out as [out][in][kh][kw].
template <typename T>
struct Tensor4 {
  int out_channels = 0;
  int in_channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Tensor4() = default;
  Tensor4(int o, int i, int h, int w, T fill = T{0})
      : out_channels(o), in_channels(i), height(h), width(w),
        data(static_cast<std::size_t>(o) * i * h * w, fill) {}

  T& at(int o, int i, int y, int x) noexcept {
    return data[((static_cast<std::size_t>(o) * in_channels + i) * height + y) * width + x];
  }
};

/// How 2x2 pooling treats an odd trailing row/column.
enum class PoolEdge {
  Strict,    ///< odd spatial dims are a ShapeError
  Truncate,  ///< the trailing row/column is ignored (floor mode)
};

template <typename T>
struct PoolResult {
  Tensor3<T> output;
  /// For each output cell, the flat index of the winning input cell.
  std::vector<std::int32_t> argmax;
};

/// 3x3 "valid" cross-correlation, stride 1. Output is (out, H-2, W-2).
template <typename T>
Tensor3<T> conv2d_forward(const Tensor3<T>& input, const Tensor4<T>& kernels, std::span<const T> bias);

/// 2x2 max pooling, stride 2. The first maximum in row-major window order wins.
template <typename T>
PoolResult<T> maxpool2_forward(const Tensor3<T>& input, PoolEdge edge = PoolEdge::Strict);

namespace kernels {

// Low-level routines used by the network engine. Kernel banks and matrices are
// spans into a flat parameter vector; gradients are accumulated (+=).

template <typename T>
void conv3x3(const Tensor3<T>& in, std::span<const T> kernel, std::span<const T> bias,
             int out_channels, Tensor3<T>& out);

template <typename T>
void conv3x3_backward(const Tensor3<T>& in, std::span<const T> kernel, int out_channels,
                      const Tensor3<T>& grad_out, std::span<T> grad_kernel,
                      std::span<T> grad_bias, Tensor3<T>* grad_in);

template <typename T>
void maxpool2(const Tensor3<T>& in, PoolEdge edge, PoolResult<T>& out);

template <typename T>
void maxpool2_backward(const PoolResult<T>& pooled, const Tensor3<T>& grad_out,
                       Tensor3<T>& grad_in);

/// y = W x + b with W stored row-major (rows = y.size()).
template <typename T>
void linear(std::span<const T> weight, std::span<const T> bias, std::span<const T> x,
            std::span<T> y);

/// dW += dy x^T, db += dy, and (optionally) dx = W^T dy.
template <typename T>
void linear_backward(std::span<const T> weight, std::span<const T> x, std::span<const T> grad_y,
                     std::span<T> grad_weight, std::span<T> grad_bias, std::span<T> grad_x);

}  // namespace kernels

}  // namespace dne
