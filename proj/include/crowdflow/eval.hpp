#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "crowdflow/convlstm.hpp"
#include "crowdflow/data.hpp"
#include "crowdflow/density.hpp"
#include "crowdflow/error.hpp"

namespace crowdflow {

// Count metrics over N test frames:
//   MAE = (1/N) sum |p_i - p_hat_i|
//   MSE = sqrt((1/N) sum (p_i - p_hat_i)^2)
//
// Note the square root: this "MSE" is a root-mean-square error. It is kept
// under that name because the crowd-counting literature reports it that way;
// treat it as RMSE when comparing against other codebases.
inline std::pair<double, double> metrics(const std::vector<double>& true_counts,
                                         const std::vector<double>& pred_counts) {
  if (true_counts.empty()) throw ContractError("metrics: empty input");
  if (true_counts.size() != pred_counts.size()) throw ContractError("metrics: length mismatch");
  double abs_sum = 0.0, sq_sum = 0.0;
  for (std::size_t i = 0; i < true_counts.size(); ++i) {
    const double e = true_counts[i] - pred_counts[i];
    abs_sum += std::abs(e);
    sq_sum += e * e;
  }
  const double n = static_cast<double>(true_counts.size());
  return {abs_sum / n, std::sqrt(sq_sum / n)};
}

struct FrameResult {
  int frame = 0;
  double true_count = 0.0;
  double pred_count = 0.0;
};

struct EvalReport {
  std::string scene_id;
  std::string model_tag;
  std::vector<FrameResult> frames;
  double mae = 0.0;
  double mse = 0.0;  // root of the mean squared error, see metrics()
};

template <typename S>
using ClipPredictor = std::function<std::vector<Tensor<S>>(const VideoClip<S>&)>;

// Whole-frame prediction through fixed-size patches: each grid patch follows
// its own clip through the network and per-pixel overlap averaging stitches
// the frame back together.
template <typename S>
std::vector<Tensor<S>> predict_clip_patched(const NetworkParams<S>& net, const VideoClip<S>& clip,
                                            int patch_size, int stride) {
  const int h = clip.frames.front().extent(1), w = clip.frames.front().extent(2);
  const auto origins = grid_patch_origins(h, w, patch_size, stride);
  const int t_len = clip.length();
  std::vector<std::vector<Tensor<S>>> per_frame(static_cast<std::size_t>(t_len));
  for (const PatchOrigin& o : origins) {
    std::vector<Tensor<S>> patch_frames;
    patch_frames.reserve(static_cast<std::size_t>(t_len));
    for (const auto& f : clip.frames) patch_frames.push_back(crop_frame(f, o, patch_size));
    auto out = predict_clip(net, patch_frames);
    for (int t = 0; t < t_len; ++t)
      per_frame[static_cast<std::size_t>(t)].push_back(std::move(out.densities[static_cast<std::size_t>(t)]));
  }
  std::vector<Tensor<S>> result;
  result.reserve(static_cast<std::size_t>(t_len));
  for (int t = 0; t < t_len; ++t)
    result.push_back(assemble_overlapping(per_frame[static_cast<std::size_t>(t)], origins, h, w));
  return result;
}

// Predictor over full frames; runs patched when the network's spatial size
// differs from the frames'. Owns a copy of the parameters, so it outlives
// the caller's network object.
template <typename S>
ClipPredictor<S> make_predictor(const NetworkParams<S>& net, int patch_stride = 0) {
  return [net, patch_stride](const VideoClip<S>& clip) {
    const int h = clip.frames.front().extent(1), w = clip.frames.front().extent(2);
    if (h == net.config.height && w == net.config.width) return predict_clip(net, clip.frames).densities;
    const int size = net.config.height;
    if (net.config.height != net.config.width)
      throw ContractError("patched inference requires square network patches");
    const int stride = patch_stride > 0 ? patch_stride : std::max(1, size / 2);
    return predict_clip_patched(net, clip, size, stride);
  };
}

// Per-frame true vs predicted counts over a clip stream. The predicted count
// integrates the predicted map over the ROI; the true count is the number of
// annotated heads.
template <typename S>
EvalReport evaluate(const ClipPredictor<S>& predictor, const std::vector<VideoClip<S>>& clips,
                    std::type_identity_t<const RoiMask<S>*> roi, const std::string& scene_id = "",
                    const std::string& model_tag = "") {
  if (clips.empty()) throw ContractError("evaluate: no clips");
  EvalReport report;
  report.scene_id = scene_id;
  report.model_tag = model_tag;
  std::vector<double> t_counts, p_counts;
  for (const VideoClip<S>& clip : clips) {
    const auto preds = predictor(clip);
    if (static_cast<int>(preds.size()) != clip.length())
      throw ContractError("evaluate: predictor returned wrong frame count");
    for (int t = 0; t < clip.length(); ++t) {
      FrameResult fr;
      fr.frame = clip.frame_indices[static_cast<std::size_t>(t)];
      fr.true_count = static_cast<double>(clip.annotations[static_cast<std::size_t>(t)].count());
      fr.pred_count = count(preds[static_cast<std::size_t>(t)], roi);
      t_counts.push_back(fr.true_count);
      p_counts.push_back(fr.pred_count);
      report.frames.push_back(fr);
    }
  }
  const auto [mae, mse] = metrics(t_counts, p_counts);
  report.mae = mae;
  report.mse = mse;
  return report;
}

// ---- report files ----

// JSON lines: one record per frame, then a summary record.
inline void write_report_jsonl(const EvalReport& report, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for write: " + path);
  for (const FrameResult& fr : report.frames) {
    nlohmann::json j{{"frame", fr.frame}, {"true", fr.true_count}, {"pred", fr.pred_count}};
    os << j.dump() << "\n";
  }
  nlohmann::json summary{{"scene", report.scene_id}, {"model", report.model_tag},
                         {"frames", report.frames.size()}, {"mae", report.mae},
                         {"mse", report.mse}};
  os << summary.dump() << "\n";
  if (!os) throw IoError("report write failed: " + path);
}

// Count curve: frame index on the x axis, true and predicted counts on the y.
inline void write_count_curve_csv(const EvalReport& report, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for write: " + path);
  os << "frame,true,pred\n";
  char buf[96];
  for (const FrameResult& fr : report.frames) {
    std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f\n", fr.frame, fr.true_count, fr.pred_count);
    os << buf;
  }
  if (!os) throw IoError("count curve write failed: " + path);
}

inline std::vector<FrameResult> read_count_curve_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path);
  std::string line;
  if (!std::getline(is, line) || line != "frame,true,pred")
    throw DataError(path + ": bad count-curve header");
  std::vector<FrameResult> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    FrameResult fr;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf", &fr.frame, &fr.true_count, &fr.pred_count) != 3)
      throw DataError(path + ": bad count-curve row '" + line + "'");
    out.push_back(fr);
  }
  return out;
}

}  // namespace crowdflow
