#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "crowdflow/error.hpp"
#include "crowdflow/rng.hpp"

namespace crowdflow {

using Shape = std::vector<int>;

inline std::int64_t shape_size(const Shape& s) {
  std::int64_t n = 1;
  for (int e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

// Dense N-dimensional array, row-major with channel-first index order, so a
// 3D tensor is [C,H,W] and a kernel bank is [Cout,Cin,Kh,Kw]. Storage is a
// flat Eigen array; elementwise math goes through Eigen expressions.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    validate_shape();
    data_ = Array::Zero(shape_size(shape_));
  }

  Tensor(Shape shape, Array data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (data_.size() != shape_size(shape_))
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, Scalar v) {
    Tensor t(std::move(shape));
    t.data_.setConstant(v);
    return t;
  }

  static Tensor ones(Shape shape) { return full(std::move(shape), Scalar(1)); }

  static Tensor from(Shape shape, std::initializer_list<Scalar> values) {
    Tensor t(std::move(shape));
    if (static_cast<std::int64_t>(values.size()) != t.size())
      throw DimensionError("initializer length does not match shape");
    std::copy(values.begin(), values.end(), t.data());
    return t;
  }

  static Tensor scalar(Scalar v) { return full({1}, v); }

  static Tensor random_uniform(Shape shape, Scalar lo, Scalar hi, Rng& rng) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i)
      t.data_[i] = static_cast<Scalar>(rng.uniform(lo, hi));
    return t;
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int extent(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
  std::int64_t size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Array& array() { return data_; }
  const Array& array() const { return data_; }

  template <typename... Ix>
  Scalar& operator()(Ix... ix) {
    return data_[offset(ix...)];
  }
  template <typename... Ix>
  Scalar operator()(Ix... ix) const {
    return data_[offset(ix...)];
  }

  Scalar value() const {
    if (size() != 1) throw ContractError("value() requires a one-element tensor");
    return data_[0];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  // Accumulates in double regardless of Scalar; used by counting code where
  // float round-off would eat the mass-conservation tolerance.
  double sum_double() const { return data_.template cast<double>().sum(); }

 private:
  template <typename... Ix>
  std::int64_t offset(Ix... ix) const {
    constexpr int n = sizeof...(Ix);
    const std::array<std::int64_t, n> idx{static_cast<std::int64_t>(ix)...};
    std::int64_t off = 0;
    for (int a = 0; a < n; ++a) off = off * shape_[static_cast<std::size_t>(a)] + idx[static_cast<std::size_t>(a)];
    return off;
  }

  void validate_shape() const {
    if (shape_.empty()) throw DimensionError("tensor rank must be >= 1");
    for (int e : shape_)
      if (e < 1) throw DimensionError("tensor extents must be >= 1, got " + shape_str(shape_));
  }

  Shape shape_;
  Array data_;
};

namespace detail {

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace detail

// ---- elementwise free functions ----

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "add");
  return Tensor<S>(a.shape(), a.array() + b.array());
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "sub");
  return Tensor<S>(a.shape(), a.array() - b.array());
}

template <typename S>
Tensor<S> hadamard(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "hadamard");
  return Tensor<S>(a.shape(), a.array() * b.array());
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S factor) {
  return Tensor<S>(a.shape(), a.array() * factor);
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  return Tensor<S>(a.shape(), S(1) / (S(1) + (-a.array()).exp()));
}

template <typename S>
Tensor<S> tanh(const Tensor<S>& a) {
  return Tensor<S>(a.shape(), a.array().tanh());
}

template <typename S>
S sum(const Tensor<S>& a) {
  return a.array().sum();
}

// Stacks parts along the channel (first) dimension; spatial extents must agree.
template <typename S>
Tensor<S> concat_channels(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no parts");
  Shape out_shape = parts.front().shape();
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const Shape& s = parts[i].shape();
    if (s.size() != out_shape.size())
      throw DimensionError("concat_channels: rank mismatch");
    for (std::size_t a = 1; a < s.size(); ++a)
      if (s[a] != out_shape[a])
        throw DimensionError("concat_channels: trailing extents differ: " + shape_str(out_shape) +
                             " vs " + shape_str(s));
    out_shape[0] += s[0];
  }
  Tensor<S> out(out_shape);
  std::int64_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data(), p.data() + p.size(), out.data() + off);
    off += p.size();
  }
  return out;
}

// Channel range [c0, c1) of a [C,...] tensor.
template <typename S>
Tensor<S> slice_channels(const Tensor<S>& t, int c0, int c1) {
  if (c0 < 0 || c1 <= c0 || c1 > t.extent(0)) throw DimensionError("slice_channels: bad range");
  const std::int64_t per = t.size() / t.extent(0);
  Shape s = t.shape();
  s[0] = c1 - c0;
  Tensor<S> out(s);
  std::copy(t.data() + c0 * per, t.data() + c1 * per, out.data());
  return out;
}

// ---- 2D convolution, stride 1, zero same-padding ----
//
// out[o,y,x] = bias[o] + sum_{c,dy,dx} in[c, y+dy-Kh/2, x+dx-Kw/2] * k[o,c,dy,dx]
//
// Implemented as im2col + GEMM; the naive-loop reference lives in the test
// suite and the two are held to 1e-12 agreement at 64-bit.

namespace detail {

template <typename S>
using MatrixRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
void check_conv_shapes(const Tensor<S>& input, const Tensor<S>& kernels, const Tensor<S>* bias) {
  if (input.rank() != 3) throw DimensionError("conv2d: input must be [Cin,H,W]");
  if (kernels.rank() != 4) throw DimensionError("conv2d: kernels must be [Cout,Cin,Kh,Kw]");
  if (kernels.extent(1) != input.extent(0))
    throw DimensionError("conv2d: Cin mismatch, input " + shape_str(input.shape()) +
                         " vs kernels " + shape_str(kernels.shape()));
  if (kernels.extent(2) % 2 == 0 || kernels.extent(3) % 2 == 0)
    throw DimensionError("conv2d: kernel extents must be odd for same-padding");
  if (bias && (bias->rank() != 1 || bias->extent(0) != kernels.extent(0)))
    throw DimensionError("conv2d: bias must be [Cout]");
}

// Columns matrix: row (c,ky,kx), column (y,x); zero outside the input.
template <typename S>
MatrixRM<S> im2col(const Tensor<S>& input, int kh, int kw) {
  const int c_in = input.extent(0), h = input.extent(1), w = input.extent(2);
  const int ph = kh / 2, pw = kw / 2;
  MatrixRM<S> cols(c_in * kh * kw, h * w);
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        S* row = cols.data() + static_cast<std::int64_t>((c * kh + ky) * kw + kx) * (h * w);
        const int dx = kx - pw;
        const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);  // valid x span
        for (int y = 0; y < h; ++y) {
          S* dst = row + y * w;
          const int iy = y + ky - ph;
          if (iy < 0 || iy >= h || x0 >= x1) {
            std::fill(dst, dst + w, S(0));
            continue;
          }
          const S* src = input.data() + (static_cast<std::int64_t>(c) * h + iy) * w + dx;
          std::fill(dst, dst + x0, S(0));
          std::copy(src + x0, src + x1, dst + x0);
          std::fill(dst + x1, dst + w, S(0));
        }
      }
    }
  }
  return cols;
}

// Scatter-accumulate of a columns matrix back onto the input grid.
template <typename S>
void col2im_accumulate(const MatrixRM<S>& cols, int c_in, int h, int w, int kh, int kw,
                       Tensor<S>& into) {
  const int ph = kh / 2, pw = kw / 2;
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const S* row = cols.data() + static_cast<std::int64_t>((c * kh + ky) * kw + kx) * (h * w);
        const int dx = kx - pw;
        const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          const int iy = y + ky - ph;
          if (iy < 0 || iy >= h || x0 >= x1) continue;
          S* dst = into.data() + (static_cast<std::int64_t>(c) * h + iy) * w + dx;
          const S* src = row + y * w;
          for (int x = x0; x < x1; ++x) dst[x] += src[x];
        }
      }
    }
  }
}

}  // namespace detail

template <typename S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& kernels, const Tensor<S>* bias = nullptr) {
  detail::check_conv_shapes(input, kernels, bias);
  const int c_out = kernels.extent(0), kh = kernels.extent(2), kw = kernels.extent(3);
  const int h = input.extent(1), w = input.extent(2);
  const auto cols = detail::im2col(input, kh, kw);

  Tensor<S> out({c_out, h, w});
  Eigen::Map<detail::MatrixRM<S>> out_m(out.data(), c_out, h * w);
  Eigen::Map<const detail::MatrixRM<S>> k_m(kernels.data(), c_out, kernels.size() / c_out);
  out_m.noalias() = k_m * cols;
  if (bias)
    for (int o = 0; o < c_out; ++o) out_m.row(o).array() += (*bias)(o);
  return out;
}

template <typename S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& kernels, const Tensor<S>& bias) {
  return conv2d(input, kernels, &bias);
}

template <typename S>
struct Conv2dGrads {
  Tensor<S> input;
  Tensor<S> kernels;
  Tensor<S> bias;  // empty when the forward had no bias
};

template <typename S>
Conv2dGrads<S> conv2d_backward(const Tensor<S>& input, const Tensor<S>& kernels,
                               const Tensor<S>& grad_out, bool with_bias) {
  const int c_out = kernels.extent(0), kh = kernels.extent(2), kw = kernels.extent(3);
  const int c_in = input.extent(0), h = input.extent(1), w = input.extent(2);
  const auto cols = detail::im2col(input, kh, kw);

  Eigen::Map<const detail::MatrixRM<S>> g_m(grad_out.data(), c_out, h * w);
  Eigen::Map<const detail::MatrixRM<S>> k_m(kernels.data(), c_out, kernels.size() / c_out);

  Conv2dGrads<S> grads;
  grads.kernels = Tensor<S>(kernels.shape());
  Eigen::Map<detail::MatrixRM<S>> gk_m(grads.kernels.data(), c_out, kernels.size() / c_out);
  gk_m.noalias() = g_m * cols.transpose();

  detail::MatrixRM<S> gcols = k_m.transpose() * g_m;
  grads.input = Tensor<S>(input.shape());
  detail::col2im_accumulate(gcols, c_in, h, w, kh, kw, grads.input);

  if (with_bias) {
    grads.bias = Tensor<S>({c_out});
    for (int o = 0; o < c_out; ++o) grads.bias(o) = g_m.row(o).sum();
  }
  return grads;
}

}  // namespace crowdflow
