#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "crowdflow/error.hpp"
#include "crowdflow/tape.hpp"
#include "crowdflow/tensor.hpp"

namespace crowdflow {

// Clip loss: (1/2T) * sum_t ||pred_t - target_t||^2, with the ROI mask (when
// given) zeroing out-of-interest pixels of the difference before the norm.
template <typename S>
ValueId loss_on_tape(Tape<S>& tape, const std::vector<ValueId>& preds,
                     const std::vector<ValueId>& targets, ValueId roi = kNoValue) {
  if (preds.empty() || preds.size() != targets.size())
    throw DimensionError("loss: prediction/target length mismatch");
  ValueId total = kNoValue;
  for (std::size_t t = 0; t < preds.size(); ++t) {
    ValueId diff = tape.sub(preds[t], targets[t]);
    if (roi != kNoValue) diff = tape.hadamard(diff, roi);
    const ValueId sq = tape.sum(tape.hadamard(diff, diff));
    total = total == kNoValue ? sq : tape.add(total, sq);
  }
  return tape.scale(total, S(1) / static_cast<S>(2 * preds.size()));
}

// Value-level counterpart for reporting.
template <typename S>
double clip_loss(const std::vector<Tensor<S>>& preds, const std::vector<Tensor<S>>& targets,
                 const Tensor<S>* roi = nullptr) {
  if (preds.empty() || preds.size() != targets.size())
    throw DimensionError("loss: prediction/target length mismatch");
  double total = 0.0;
  for (std::size_t t = 0; t < preds.size(); ++t) {
    Tensor<S> diff = sub(preds[t], targets[t]);
    if (roi) diff = hadamard(diff, *roi);
    total += (diff.array().template cast<double>() * diff.array().template cast<double>()).sum();
  }
  return total / (2.0 * static_cast<double>(preds.size()));
}

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First/second moment estimates per parameter, in the canonical parameter
// order. step counts completed updates; bias correction uses step after the
// increment.
template <typename S>
struct AdamState {
  AdamOptions options;
  std::int64_t step = 0;
  std::vector<Tensor<S>> m;
  std::vector<Tensor<S>> v;

  static AdamState init(const std::vector<Shape>& shapes, AdamOptions options = {}) {
    AdamState st;
    st.options = options;
    for (const Shape& s : shapes) {
      st.m.push_back(Tensor<S>::zeros(s));
      st.v.push_back(Tensor<S>::zeros(s));
    }
    return st;
  }
};

// One ADAM update over a parameter list and same-order gradients:
//   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
//   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
template <typename S>
void adam_step(const std::vector<Tensor<S>*>& params, const std::vector<const Tensor<S>*>& grads,
               AdamState<S>& state) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw ContractError("adam_step: parameter/gradient/moment count mismatch");
  state.step += 1;
  const double c1 = 1.0 - std::pow(state.options.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.options.beta2, static_cast<double>(state.step));
  const S b1 = static_cast<S>(state.options.beta1), b2 = static_cast<S>(state.options.beta2);
  const S inv_c1 = static_cast<S>(1.0 / c1), inv_c2 = static_cast<S>(1.0 / c2);
  const S lr = static_cast<S>(state.options.lr), eps = static_cast<S>(state.options.epsilon);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<S>& p = *params[i];
    const Tensor<S>& g = *grads[i];
    if (!p.same_shape(g))
      throw ContractError("adam_step: gradient shape mismatch at parameter " + std::to_string(i));
    auto& m = state.m[i].array();
    auto& v = state.v[i].array();
    m = b1 * m + (S(1) - b1) * g.array();
    v = b2 * v + (S(1) - b2) * g.array().square();
    p.array() -= lr * (m * inv_c1) / ((v * inv_c2).sqrt() + eps);
  }
}

}  // namespace crowdflow
