// Independent reference implementations used as oracles. Everything here is
// plain scalar loops over std::exp/std::tanh; none of it shares code with the
// library's im2col/GEMM or Eigen expression paths it is checking.
#pragma once

#include <cmath>
#include <vector>

#include "crowdflow/convlstm.hpp"
#include "crowdflow/tensor.hpp"

namespace oracle {

using crowdflow::CellParams;
using crowdflow::CellState;
using crowdflow::Tensor;

template <typename S>
Tensor<S> conv2d(const Tensor<S>& in, const Tensor<S>& k, const Tensor<S>* bias) {
  const int c_out = k.extent(0), c_in = k.extent(1), kh = k.extent(2), kw = k.extent(3);
  const int h = in.extent(1), w = in.extent(2);
  Tensor<S> out({c_out, h, w});
  for (int o = 0; o < c_out; ++o)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        S acc = bias ? (*bias)(o) : S(0);
        for (int c = 0; c < c_in; ++c)
          for (int dy = 0; dy < kh; ++dy)
            for (int dx = 0; dx < kw; ++dx) {
              const int iy = y + dy - kh / 2;
              const int ix = x + dx - kw / 2;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += in(c, iy, ix) * k(o, c, dy, dx);
            }
        out(o, y, x) = acc;
      }
  return out;
}

template <typename S>
Tensor<S> hadamard(const Tensor<S>& a, const Tensor<S>& b) {
  Tensor<S> out(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  return out;
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  Tensor<S> out(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  Tensor<S> out(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S f) {
  Tensor<S> out(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * f;
  return out;
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  Tensor<S> out(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out.data()[i] = S(1) / (S(1) + std::exp(-a.data()[i]));
  return out;
}

template <typename S>
Tensor<S> tanh(const Tensor<S>& a) {
  Tensor<S> out(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out.data()[i] = std::tanh(a.data()[i]);
  return out;
}

template <typename S>
S sum(const Tensor<S>& a) {
  S acc = 0;
  for (std::int64_t i = 0; i < a.size(); ++i) acc += a.data()[i];
  return acc;
}

// Direct transcription of the gate equations, one scalar at a time. Calls are
// qualified so argument-dependent lookup cannot pull in the library versions.
template <typename S>
CellState<S> cell_step(const Tensor<S>& x, const CellState<S>& prev, const CellParams<S>& p) {
  const Tensor<S> i = oracle::sigmoid(
      oracle::add(oracle::add(oracle::conv2d(x, p.w_xi, &p.b_i),
                              oracle::conv2d<S>(prev.h, p.w_hi, nullptr)),
                  oracle::hadamard(p.w_ci, prev.c)));
  const Tensor<S> f = oracle::sigmoid(
      oracle::add(oracle::add(oracle::conv2d(x, p.w_xf, &p.b_f),
                              oracle::conv2d<S>(prev.h, p.w_hf, nullptr)),
                  oracle::hadamard(p.w_cf, prev.c)));
  const Tensor<S> g = oracle::tanh(
      oracle::add(oracle::conv2d(x, p.w_xc, &p.b_c), oracle::conv2d<S>(prev.h, p.w_hc, nullptr)));
  const Tensor<S> c = oracle::add(oracle::hadamard(f, prev.c), oracle::hadamard(i, g));
  const Tensor<S> o = oracle::sigmoid(
      oracle::add(oracle::add(oracle::conv2d(x, p.w_xo, &p.b_o),
                              oracle::conv2d<S>(prev.h, p.w_ho, nullptr)),
                  oracle::hadamard(p.w_co, c)));
  return {oracle::hadamard(o, oracle::tanh(c)), c};
}

}  // namespace oracle
