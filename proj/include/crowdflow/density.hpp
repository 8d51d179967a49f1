#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "crowdflow/error.hpp"
#include "crowdflow/tensor.hpp"

namespace crowdflow {

struct Point2 {
  double x = 0.0;  // pixel column
  double y = 0.0;  // pixel row
};

// Head annotations for one frame. Points outside [0,W)x[0,H) are rejected at
// ingestion; the annotated count is simply points.size().
struct AnnotationSet {
  int frame_index = 0;
  std::vector<Point2> points;

  int count() const { return static_cast<int>(points.size()); }
};

// Pixels-per-metre at each image location; strictly positive everywhere.
template <typename S>
struct PerspectiveMap {
  Tensor<S> grid;  // [1,H,W]

  PerspectiveMap() = default;
  explicit PerspectiveMap(Tensor<S> g) : grid(std::move(g)) {
    if (grid.rank() != 3 || grid.extent(0) != 1)
      throw DimensionError("perspective map must be [1,H,W]");
    for (std::int64_t i = 0; i < grid.size(); ++i)
      if (!(grid.data()[i] > S(0))) throw DataError("perspective map entries must be > 0");
  }

  double at(double x, double y) const {
    const int h = grid.extent(1), w = grid.extent(2);
    const int iy = std::clamp(static_cast<int>(std::lround(y)), 0, h - 1);
    const int ix = std::clamp(static_cast<int>(std::lround(x)), 0, w - 1);
    return static_cast<double>(grid(0, iy, ix));
  }
};

// Binary {0,1} region-of-interest mask.
template <typename S>
struct RoiMask {
  Tensor<S> grid;  // [1,H,W]

  RoiMask() = default;
  explicit RoiMask(Tensor<S> g) : grid(std::move(g)) {
    if (grid.rank() != 3 || grid.extent(0) != 1) throw DimensionError("ROI mask must be [1,H,W]");
    for (std::int64_t i = 0; i < grid.size(); ++i) {
      const S v = grid.data()[i];
      if (v != S(0) && v != S(1)) throw DataError("ROI mask must be binary {0,1}");
    }
  }

  bool inside(int y, int x) const { return grid(0, y, x) != S(0); }
};

// How the per-person Gaussian width is chosen: a fixed sigma in pixels, or
// sigma = coeff * M(P) from the perspective map at the head position.
struct KernelRule {
  enum class Mode { Fixed, Perspective };
  Mode mode = Mode::Fixed;
  double value = 2.0;  // sigma_px (Fixed) or coeff (Perspective)

  static KernelRule fixed(double sigma_px) {
    if (!(sigma_px > 0)) throw DataError("kernel rule: sigma must be > 0");
    return {Mode::Fixed, sigma_px};
  }
  static KernelRule perspective(double coeff) {
    if (!(coeff > 0)) throw DataError("kernel rule: coefficient must be > 0");
    return {Mode::Perspective, coeff};
  }
};

inline constexpr double kMinKernelSigma = 0.5;      // px; avoids degenerate sub-pixel kernels
inline constexpr double kKernelTruncationRadius = 4.0;  // in sigmas, >= 99.99% mass

// Ground-truth density map: one discretized isotropic Gaussian per annotated
// head, each renormalized so its in-image, in-ROI mass is exactly 1. The map
// therefore integrates to the annotated count. Kernels are evaluated on the
// pixel grid and truncated at 4 sigma; accumulation happens in double even
// for float maps.
template <typename S>
Tensor<S> generate_density(const AnnotationSet& ann, const KernelRule& rule,
                           const PerspectiveMap<S>* persp, const RoiMask<S>* roi, int height,
                           int width) {
  if (rule.mode == KernelRule::Mode::Perspective && persp == nullptr)
    throw ContractError("perspective kernel rule requires a perspective map");
  if (persp && (persp->grid.extent(1) != height || persp->grid.extent(2) != width))
    throw DimensionError("perspective map extents do not match frame");
  if (roi && (roi->grid.extent(1) != height || roi->grid.extent(2) != width))
    throw DimensionError("ROI mask extents do not match frame");

  Tensor<double> acc({1, height, width});
  std::vector<double> weights;
  for (const Point2& p : ann.points) {
    if (!(p.x >= 0 && p.x < width && p.y >= 0 && p.y < height))
      throw DataError("annotation (" + std::to_string(p.x) + "," + std::to_string(p.y) +
                      ") outside frame " + std::to_string(width) + "x" + std::to_string(height));
    double sigma = rule.mode == KernelRule::Mode::Fixed ? rule.value : rule.value * persp->at(p.x, p.y);
    if (!(sigma > 0)) throw DataError("kernel sigma <= 0 at annotation");
    sigma = std::max(sigma, kMinKernelSigma);

    const double radius = kKernelTruncationRadius * sigma;
    const int y0 = std::max(0, static_cast<int>(std::ceil(p.y - radius)));
    const int y1 = std::min(height - 1, static_cast<int>(std::floor(p.y + radius)));
    const int x0 = std::max(0, static_cast<int>(std::ceil(p.x - radius)));
    const int x1 = std::min(width - 1, static_cast<int>(std::floor(p.x + radius)));
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);

    weights.assign(static_cast<std::size_t>((y1 - y0 + 1)) * (x1 - x0 + 1), 0.0);
    double mass = 0.0;
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        if (roi && !roi->inside(y, x)) continue;
        const double dy = y - p.y, dx = x - p.x;
        const double r2 = dx * dx + dy * dy;
        if (r2 > radius * radius) continue;
        const double v = std::exp(-r2 * inv2s2);
        weights[static_cast<std::size_t>((y - y0) * (x1 - x0 + 1) + (x - x0))] = v;
        mass += v;
      }
    }
    if (mass <= 0.0) continue;  // whole support outside the ROI, contributes nothing
    const double inv_mass = 1.0 / mass;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        acc(0, y, x) += weights[static_cast<std::size_t>((y - y0) * (x1 - x0 + 1) + (x - x0))] * inv_mass;
  }
  return acc.template cast<S>();
}

// Integral of the map over the ROI (over everything if no ROI); this is the
// crowd count. Summation in double.
template <typename S>
double count(const Tensor<S>& map, const RoiMask<S>* roi = nullptr) {
  if (map.rank() != 3 || map.extent(0) != 1) throw DimensionError("count: expected [1,H,W]");
  if (!roi) return map.sum_double();
  detail::require_same_shape(map, roi->grid, "count");
  return (map.array().template cast<double>() * roi->grid.array().template cast<double>()).sum();
}

// Zeroes pixels outside the ROI.
template <typename S>
Tensor<S> apply_roi(const Tensor<S>& t, const RoiMask<S>& roi) {
  return hadamard(t, roi.grid);
}

}  // namespace crowdflow
