#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "crowdflow/rng.hpp"
#include "crowdflow/tape.hpp"
#include "crowdflow/tensor.hpp"

namespace crowdflow {

struct GradCheckOptions {
  double eps = 1e-5;
  int coords_per_param = 64;  // sampled coordinates for large parameters
  std::uint64_t seed = 0x5eedc0de;
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  int worst_param = -1;
  std::int64_t worst_coord = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Central-difference verification of backward(). `build` assembles the scalar
// loss on a fresh tape from parameter leaf ids; it is invoked once for the
// analytic pass and twice per sampled coordinate. Meant to run at 64-bit.
//
// Relative error uses denominator max(|analytic|, |numeric|, 1e-8).
template <typename S, typename Builder>
GradCheckResult finite_diff_check(Builder&& build, std::vector<Tensor<S>> params,
                                  GradCheckOptions opts = {}) {
  auto eval = [&](const std::vector<Tensor<S>>& p) -> double {
    Tape<S> tape;
    std::vector<ValueId> ids;
    ids.reserve(p.size());
    for (const auto& t : p) ids.push_back(tape.parameter(t));
    const ValueId loss = build(tape, ids);
    return static_cast<double>(tape.value(loss).value());
  };

  // analytic gradients
  Tape<S> tape;
  std::vector<ValueId> ids;
  ids.reserve(params.size());
  for (const auto& t : params) ids.push_back(tape.parameter(t));
  const ValueId loss = build(tape, ids);
  const GradientSet<S> grads = tape.backward(loss);

  Rng rng(opts.seed);
  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const Tensor<S>& analytic = grads.at(ids[pi]);
    const std::int64_t n = params[pi].size();
    std::vector<std::int64_t> coords;
    if (n <= opts.coords_per_param) {
      coords.resize(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
    } else {
      for (int i = 0; i < opts.coords_per_param; ++i)
        coords.push_back(static_cast<std::int64_t>(rng.uniform() * n));
    }
    for (std::int64_t c : coords) {
      const S saved = params[pi].data()[c];
      params[pi].data()[c] = saved + static_cast<S>(opts.eps);
      const double f_plus = eval(params);
      params[pi].data()[c] = saved - static_cast<S>(opts.eps);
      const double f_minus = eval(params);
      params[pi].data()[c] = saved;

      const double numeric = (f_plus - f_minus) / (2.0 * opts.eps);
      const double an = static_cast<double>(analytic.data()[c]);
      const double denom = std::max({std::abs(an), std::abs(numeric), 1e-8});
      const double rel = std::abs(an - numeric) / denom;
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst_param = static_cast<int>(pi);
        result.worst_coord = c;
        result.worst_analytic = an;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace crowdflow
