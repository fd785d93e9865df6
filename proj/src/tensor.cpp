#include "dne/tensor.hpp"

#include <Eigen/Core>
#include <string>

#include "dne/error.hpp"

namespace dne {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Unrolls every 3x3 input patch into one column: rows (c, ky, kx), cols (y, x).
template <typename T>
void im2col(const Tensor3<T>& in, std::vector<T>& col) {
  const int oh = in.height - 2;
  const int ow = in.width - 2;
  const std::size_t cols = static_cast<std::size_t>(oh) * ow;
  col.resize(static_cast<std::size_t>(in.channels) * 9 * cols);
  T* dst = col.data();
  for (int c = 0; c < in.channels; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        for (int y = 0; y < oh; ++y) {
          const T* src = &in.at(c, y + ky, kx);
          for (int x = 0; x < ow; ++x) *dst++ = src[x];
        }
      }
    }
  }
}

template <typename T>
std::vector<T>& scratch() {
  thread_local std::vector<T> buffer;
  return buffer;
}

void check_conv_input(int channels, int height, int width, std::size_t kernel_size,
                      std::size_t bias_size, int out_channels) {
  if (height < 3 || width < 3) {
    throw ShapeError("conv2d: input " + std::to_string(height) + "x" + std::to_string(width) +
                     " is smaller than the 3x3 kernel");
  }
  const std::size_t expected = static_cast<std::size_t>(out_channels) * channels * 9;
  if (kernel_size != expected) {
    throw ShapeError("conv2d: kernel bank has " + std::to_string(kernel_size) +
                     " values, expected " + std::to_string(expected));
  }
  if (bias_size != static_cast<std::size_t>(out_channels)) {
    throw ShapeError("conv2d: bias has " + std::to_string(bias_size) + " values, expected " +
                     std::to_string(out_channels));
  }
}

}  // namespace

namespace kernels {

template <typename T>
void conv3x3(const Tensor3<T>& in, std::span<const T> kernel, std::span<const T> bias,
             int out_channels, Tensor3<T>& out) {
  check_conv_input(in.channels, in.height, in.width, kernel.size(), bias.size(), out_channels);
  const int oh = in.height - 2;
  const int ow = in.width - 2;
  const Eigen::Index cols = static_cast<Eigen::Index>(oh) * ow;
  const Eigen::Index depth = static_cast<Eigen::Index>(in.channels) * 9;

  if (out.channels != out_channels || out.height != oh || out.width != ow) {
    out = Tensor3<T>(out_channels, oh, ow);
  }
  if (in.channels == 1) {
    // Direct form over the input's row stride: position i = y * W + x, so each
    // tap is one long contiguous axpy. Columns x >= W - 2 are scratch.
    const int w_in = in.width;
    const std::size_t span_len = static_cast<std::size_t>(oh - 1) * w_in + ow;
    auto& acc = scratch<T>();
    acc.resize(span_len);
    const T* __restrict src = in.data.data();
    for (int o = 0; o < out_channels; ++o) {
      const T* k = kernel.data() + static_cast<std::size_t>(o) * 9;
      T* __restrict a = acc.data();
      std::fill(a, a + span_len, bias[o]);
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const T kv = k[ky * 3 + kx];
          const T* __restrict tap = src + ky * w_in + kx;
          for (std::size_t i = 0; i < span_len; ++i) a[i] += kv * tap[i];
        }
      }
      for (int y = 0; y < oh; ++y) {
        std::copy_n(a + static_cast<std::size_t>(y) * w_in, ow, &out.at(o, y, 0));
      }
    }
    return;
  }
  auto& col = scratch<T>();
  im2col(in, col);
  Eigen::Map<const RowMat<T>> k(kernel.data(), out_channels, depth);
  Eigen::Map<const RowMat<T>> patches(col.data(), depth, cols);
  Eigen::Map<RowMat<T>> result(out.data.data(), out_channels, cols);
  result.noalias() = k * patches;
  for (int o = 0; o < out_channels; ++o) result.row(o).array() += bias[o];
}

template <typename T>
void conv3x3_backward(const Tensor3<T>& in, std::span<const T> kernel, int out_channels,
                      const Tensor3<T>& grad_out, std::span<T> grad_kernel,
                      std::span<T> grad_bias, Tensor3<T>* grad_in) {
  const int oh = in.height - 2;
  const int ow = in.width - 2;
  const Eigen::Index cols = static_cast<Eigen::Index>(oh) * ow;
  const Eigen::Index depth = static_cast<Eigen::Index>(in.channels) * 9;

  auto& col = scratch<T>();
  im2col(in, col);
  Eigen::Map<const RowMat<T>> patches(col.data(), depth, cols);
  Eigen::Map<const RowMat<T>> dout(grad_out.data.data(), out_channels, cols);
  Eigen::Map<RowMat<T>> dk(grad_kernel.data(), out_channels, depth);
  dk.noalias() += dout * patches.transpose();
  // Plain loop: Eigen's vectorized sum peels by pointer alignment, which would
  // make the result depend on where the buffer happened to be allocated.
  for (int o = 0; o < out_channels; ++o) {
    const T* g = grad_out.data.data() + static_cast<std::size_t>(o) * cols;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < cols; ++i) acc += static_cast<double>(g[i]);
    grad_bias[o] += static_cast<T>(acc);
  }

  if (grad_in == nullptr) return;
  Eigen::Map<const RowMat<T>> k(kernel.data(), out_channels, depth);
  RowMat<T> dcol = k.transpose() * dout;
  *grad_in = Tensor3<T>(in.channels, in.height, in.width);
  Eigen::Index row = 0;
  for (int c = 0; c < in.channels; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx, ++row) {
        const T* src = dcol.row(row).data();
        for (int y = 0; y < oh; ++y) {
          T* dst = &grad_in->at(c, y + ky, kx);
          for (int x = 0; x < ow; ++x) dst[x] += *src++;
        }
      }
    }
  }
}

template <typename T>
void maxpool2(const Tensor3<T>& in, PoolEdge edge, PoolResult<T>& out) {
  if (edge == PoolEdge::Strict && (in.height % 2 != 0 || in.width % 2 != 0)) {
    throw ShapeError("maxpool2: spatial dims " + std::to_string(in.height) + "x" +
                     std::to_string(in.width) + " are not even");
  }
  const int oh = in.height / 2;
  const int ow = in.width / 2;
  if (oh == 0 || ow == 0) throw ShapeError("maxpool2: input smaller than the 2x2 window");
  if (out.output.channels != in.channels || out.output.height != oh || out.output.width != ow) {
    out.output = Tensor3<T>(in.channels, oh, ow);
  }
  out.argmax.resize(out.output.size());
  T* dst = out.output.data.data();
  std::int32_t* arg = out.argmax.data();
  for (int c = 0; c < in.channels; ++c) {
    for (int y = 0; y < oh; ++y) {
      const auto base0 = static_cast<std::int32_t>(c * in.plane() + (2 * y) * in.width);
      const auto base1 = base0 + in.width;
      const T* r0 = in.data.data() + base0;
      const T* r1 = in.data.data() + base1;
      for (int x = 0; x < ow; ++x, ++dst, ++arg) {
        // Scan order (0,0) (0,1) (1,0) (1,1); strict > keeps the first maximum.
        T best = r0[2 * x];
        std::int32_t idx = base0 + 2 * x;
        if (r0[2 * x + 1] > best) { best = r0[2 * x + 1]; idx = base0 + 2 * x + 1; }
        if (r1[2 * x] > best) { best = r1[2 * x]; idx = base1 + 2 * x; }
        if (r1[2 * x + 1] > best) { best = r1[2 * x + 1]; idx = base1 + 2 * x + 1; }
        *dst = best;
        *arg = idx;
      }
    }
  }
}

template <typename T>
void maxpool2_backward(const PoolResult<T>& pooled, const Tensor3<T>& grad_out,
                       Tensor3<T>& grad_in) {
  std::fill(grad_in.data.begin(), grad_in.data.end(), T{0});
  for (std::size_t o = 0; o < pooled.argmax.size(); ++o) {
    grad_in.data[pooled.argmax[o]] += grad_out.data[o];
  }
}

template <typename T>
void linear(std::span<const T> weight, std::span<const T> bias, std::span<const T> x,
            std::span<T> y) {
  if (weight.size() != y.size() * x.size() || bias.size() != y.size()) {
    throw ShapeError("linear: weight " + std::to_string(weight.size()) + " does not match " +
                     std::to_string(y.size()) + "x" + std::to_string(x.size()));
  }
  const auto rows = static_cast<Eigen::Index>(y.size());
  const auto cols = static_cast<Eigen::Index>(x.size());
  Eigen::Map<const RowMat<T>> w(weight.data(), rows, cols);
  Eigen::Map<const Vec<T>> xv(x.data(), cols);
  Eigen::Map<const Vec<T>> b(bias.data(), rows);
  Eigen::Map<Vec<T>> yv(y.data(), rows);
  yv.noalias() = w * xv;
  yv += b;
}

template <typename T>
void linear_backward(std::span<const T> weight, std::span<const T> x, std::span<const T> grad_y,
                     std::span<T> grad_weight, std::span<T> grad_bias, std::span<T> grad_x) {
  const auto rows = static_cast<Eigen::Index>(grad_y.size());
  const auto cols = static_cast<Eigen::Index>(x.size());
  Eigen::Map<const RowMat<T>> w(weight.data(), rows, cols);
  Eigen::Map<const Vec<T>> xv(x.data(), cols);
  Eigen::Map<const Vec<T>> dy(grad_y.data(), rows);
  Eigen::Map<RowMat<T>> dw(grad_weight.data(), rows, cols);
  Eigen::Map<Vec<T>> db(grad_bias.data(), rows);
  dw.noalias() += dy * xv.transpose();
  db += dy;
  if (!grad_x.empty()) {
    Eigen::Map<Vec<T>> dx(grad_x.data(), cols);
    dx.noalias() = w.transpose() * dy;
  }
}

}  // namespace kernels

template <typename T>
Tensor3<T> conv2d_forward(const Tensor3<T>& input, const Tensor4<T>& kernels, std::span<const T> bias) {
  if (kernels.height != 3 || kernels.width != 3) {
    throw ShapeError("conv2d: only 3x3 kernels are supported, got " +
                     std::to_string(kernels.height) + "x" + std::to_string(kernels.width));
  }
  if (kernels.in_channels != input.channels) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(kernels.in_channels) +
                     " input channels, input has " + std::to_string(input.channels));
  }
  Tensor3<T> out;
  kernels::conv3x3<T>(input, kernels.data, bias, kernels.out_channels, out);
  return out;
}

template <typename T>
PoolResult<T> maxpool2_forward(const Tensor3<T>& input, PoolEdge edge) {
  PoolResult<T> out;
  kernels::maxpool2(input, edge, out);
  return out;
}

#define DNE_INSTANTIATE_TENSOR(T)                                                              \
  template Tensor3<T> conv2d_forward<T>(const Tensor3<T>&, const Tensor4<T>&, std::span<const T>); \
  template PoolResult<T> maxpool2_forward<T>(const Tensor3<T>&, PoolEdge);                     \
  template void kernels::conv3x3<T>(const Tensor3<T>&, std::span<const T>, std::span<const T>, \
                                    int, Tensor3<T>&);                                         \
  template void kernels::conv3x3_backward<T>(const Tensor3<T>&, std::span<const T>, int,       \
                                             const Tensor3<T>&, std::span<T>, std::span<T>,    \
                                             Tensor3<T>*);                                     \
  template void kernels::maxpool2<T>(const Tensor3<T>&, PoolEdge, PoolResult<T>&);             \
  template void kernels::maxpool2_backward<T>(const PoolResult<T>&, const Tensor3<T>&,         \
                                              Tensor3<T>&);                                    \
  template void kernels::linear<T>(std::span<const T>, std::span<const T>, std::span<const T>, \
                                   std::span<T>);                                              \
  template void kernels::linear_backward<T>(std::span<const T>, std::span<const T>,            \
                                            std::span<const T>, std::span<T>, std::span<T>,    \
                                            std::span<T>);

DNE_INSTANTIATE_TENSOR(float)
DNE_INSTANTIATE_TENSOR(double)

#undef DNE_INSTANTIATE_TENSOR

}  // namespace dne
