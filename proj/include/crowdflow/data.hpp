#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "crowdflow/density.hpp"
#include "crowdflow/error.hpp"
#include "crowdflow/png_io.hpp"
#include "crowdflow/rng.hpp"
#include "crowdflow/tensor.hpp"
#include "crowdflow/tensor_io.hpp"

namespace crowdflow {

// T consecutive frames with aligned annotations.
template <typename S>
struct VideoClip {
  std::vector<Tensor<S>> frames;           // [C,H,W] each, uniform shape
  std::vector<AnnotationSet> annotations;  // aligned with frames
  std::vector<int> frame_indices;          // source frame ids, strictly increasing
  std::string source_id;

  int length() const { return static_cast<int>(frames.size()); }
};

struct SplitRange {
  int begin = 0;  // inclusive
  int end = 0;    // exclusive
};

// On-disk dataset description: a key=value text file. Paths are relative to
// the file's directory. Recognized keys:
//   frames       glob for frame images (*.pgm / *.png), zero-padded numbering
//   annotations  CSV with header frame,x,y and zero-based frame indices
//   perspective  optional map file (.cftn tensor or .pgm carrying raw px/m)
//   roi          optional mask file (.cftn or .pgm, threshold at maxval/2)
//   kernel       fixed:<sigma_px> or perspective:<coeff>
//   channels     1 (grayscale, default) or 3
//   train_range / test_range   comma-separated begin:end frame intervals
struct DatasetSpec {
  std::string root;
  std::string frame_glob;
  std::string annotation_csv;
  std::string perspective_path;
  std::string roi_path;
  KernelRule rule = KernelRule::fixed(2.0);
  int channels = 1;
  std::vector<SplitRange> train_ranges;
  std::vector<SplitRange> test_ranges;

  static std::vector<SplitRange> parse_ranges(const std::string& text) {
    std::vector<SplitRange> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto colon = item.find(':');
      if (colon == std::string::npos) throw DataError("bad range '" + item + "', expected begin:end");
      SplitRange r{std::stoi(item.substr(0, colon)), std::stoi(item.substr(colon + 1))};
      if (r.begin < 0 || r.end <= r.begin) throw DataError("bad range '" + item + "'");
      out.push_back(r);
    }
    return out;
  }

  static KernelRule parse_kernel(const std::string& text) {
    const auto colon = text.find(':');
    if (colon == std::string::npos) throw DataError("bad kernel '" + text + "', expected mode:value");
    const std::string mode = text.substr(0, colon);
    const double value = std::stod(text.substr(colon + 1));
    if (mode == "fixed") return KernelRule::fixed(value);
    if (mode == "perspective") return KernelRule::perspective(value);
    throw DataError("unknown kernel mode '" + mode + "'");
  }

  std::string kernel_str() const {
    std::ostringstream os;
    os << (rule.mode == KernelRule::Mode::Fixed ? "fixed:" : "perspective:") << rule.value;
    return os.str();
  }

  static DatasetSpec load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open dataset spec: " + path);
    DatasetSpec spec;
    spec.root = std::filesystem::path(path).parent_path().string();
    if (spec.root.empty()) spec.root = ".";
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto eq = line.find('=');
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      if (eq == std::string::npos)
        throw DataError(path + ":" + std::to_string(line_no) + ": expected key = value");
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      try {
        if (key == "frames") spec.frame_glob = value;
        else if (key == "annotations") spec.annotation_csv = value;
        else if (key == "perspective") spec.perspective_path = value;
        else if (key == "roi") spec.roi_path = value;
        else if (key == "kernel") spec.rule = parse_kernel(value);
        else if (key == "channels") spec.channels = std::stoi(value);
        else if (key == "train_range") spec.train_ranges = parse_ranges(value);
        else if (key == "test_range") spec.test_ranges = parse_ranges(value);
        else throw DataError("unknown key '" + key + "'");
      } catch (const DataError& e) {
        throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
      }
      if (spec.channels != 1 && spec.channels != 3)
        throw DataError(path + ": channels must be 1 or 3");
    }
    if (spec.frame_glob.empty()) throw DataError(path + ": missing 'frames' key");
    spec.validate_splits();
    return spec;
  }

  void validate_splits() const {
    for (const auto& a : train_ranges)
      for (const auto& b : test_ranges)
        if (a.begin < b.end && b.begin < a.end)
          throw DataError("train/test ranges overlap: " + std::to_string(a.begin) + ":" +
                          std::to_string(a.end) + " vs " + std::to_string(b.begin) + ":" +
                          std::to_string(b.end));
  }

  std::string resolve(const std::string& rel) const {
    return (std::filesystem::path(root) / rel).string();
  }
};

// '*' wildcard in the final path component only; results sorted, so frame
// order relies on zero-padded numbering.
inline std::vector<std::string> glob_files(const std::string& pattern) {
  namespace fs = std::filesystem;
  const fs::path p(pattern);
  const fs::path dir = p.parent_path().empty() ? fs::path(".") : p.parent_path();
  const std::string name = p.filename().string();
  const auto star = name.find('*');
  if (star == std::string::npos) {
    if (fs::exists(p)) return {pattern};
    throw IoError("no file matches: " + pattern);
  }
  const std::string prefix = name.substr(0, star);
  const std::string suffix = name.substr(star + 1);
  std::vector<std::string> out;
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string f = entry.path().filename().string();
    if (f.size() >= prefix.size() + suffix.size() && f.compare(0, prefix.size(), prefix) == 0 &&
        f.compare(f.size() - suffix.size(), suffix.size(), suffix) == 0)
      out.push_back(entry.path().string());
  }
  if (out.empty()) throw IoError("no file matches: " + pattern);
  std::sort(out.begin(), out.end());
  return out;
}

// Annotation CSV: header "frame,x,y", one row per head. Rows for frames the
// glob does not cover, or points outside the frame, are reported with their
// line number.
inline std::vector<AnnotationSet> load_annotations(const std::string& path, int num_frames,
                                                   int height, int width) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open annotations: " + path);
  std::vector<AnnotationSet> out(static_cast<std::size_t>(num_frames));
  for (int i = 0; i < num_frames; ++i) out[static_cast<std::size_t>(i)].frame_index = i;

  std::string line;
  if (!std::getline(is, line)) throw DataError(path + ": empty annotation file (header required)");
  auto strip = [](std::string s) {
    s.erase(std::remove_if(s.begin(), s.end(), [](char c) { return c == ' ' || c == '\r'; }), s.end());
    return s;
  };
  if (strip(line) != "frame,x,y")
    throw DataError(path + ":1: expected header 'frame,x,y', got '" + line + "'");

  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (strip(line).empty()) continue;
    std::stringstream ss(line);
    std::string f_s, x_s, y_s, rest;
    if (!std::getline(ss, f_s, ',') || !std::getline(ss, x_s, ',') || !std::getline(ss, y_s, ','))
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed row '" + line + "'");
    if (std::getline(ss, rest, ',') && !strip(rest).empty())
      throw DataError(path + ":" + std::to_string(line_no) + ": too many columns");
    int frame;
    double x, y;
    try {
      frame = std::stoi(f_s);
      x = std::stod(x_s);
      y = std::stod(y_s);
    } catch (const std::exception&) {
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed row '" + line + "'");
    }
    if (frame < 0 || frame >= num_frames)
      throw DataError(path + ":" + std::to_string(line_no) + ": frame index " +
                      std::to_string(frame) + " out of range [0," + std::to_string(num_frames) + ")");
    if (!(x >= 0 && x < width && y >= 0 && y < height))
      throw DataError(path + ":" + std::to_string(line_no) + ": annotation (" + x_s + "," + y_s +
                      ") outside frame " + std::to_string(width) + "x" + std::to_string(height));
    out[static_cast<std::size_t>(frame)].points.push_back({x, y});
  }
  return out;
}

template <typename S>
PerspectiveMap<S> load_perspective(const std::string& path) {
  if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".pgm") == 0) {
    const PgmImage img = read_pgm(path);
    Tensor<S> g({1, img.height, img.width});
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
      g.data()[i] = static_cast<S>(img.pixels[i]);  // raw value = pixels per metre
    return PerspectiveMap<S>(std::move(g));
  }
  return PerspectiveMap<S>(load_tensor<S>(path));
}

template <typename S>
RoiMask<S> load_roi(const std::string& path) {
  if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".pgm") == 0) {
    const PgmImage img = read_pgm(path);
    Tensor<S> g({1, img.height, img.width});
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
      g.data()[i] = img.pixels[i] > img.maxval / 2 ? S(1) : S(0);
    return RoiMask<S>(std::move(g));
  }
  return RoiMask<S>(load_tensor<S>(path));
}

// A loaded dataset: frame paths plus annotations, with clips cut on demand.
template <typename S>
struct Dataset {
  DatasetSpec spec;
  std::vector<std::string> frame_paths;
  std::vector<AnnotationSet> annotations;
  std::optional<PerspectiveMap<S>> perspective;
  std::optional<RoiMask<S>> roi;
  int height = 0;
  int width = 0;

  int num_frames() const { return static_cast<int>(frame_paths.size()); }

  Tensor<S> load_frame(int index) const {
    const std::string& path = frame_paths[static_cast<std::size_t>(index)];
    Tensor<S> t;
    if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".png") == 0) {
      const PngImage img = read_png(path);
      if (spec.channels == 3 && img.channels >= 3) {
        t = Tensor<S>({3, img.height, img.width});
        for (int c = 0; c < 3; ++c)
          for (std::int64_t i = 0; i < static_cast<std::int64_t>(img.height) * img.width; ++i)
            t.data()[c * static_cast<std::int64_t>(img.height) * img.width + i] =
                static_cast<S>(img.pixels[static_cast<std::size_t>(i) * img.channels + c] / 255.0);
      } else {
        t = png_to_frame<S>(img);
      }
    } else {
      t = pgm_to_frame<S>(read_pgm(path));
    }
    if (spec.channels == 3 && t.extent(0) == 1) {
      // grey source replicated across the requested three channels
      t = concat_channels<S>({t, t, t});
    }
    if (t.extent(1) != height || t.extent(2) != width)
      throw DataError(path + ": frame size " + std::to_string(t.extent(2)) + "x" +
                      std::to_string(t.extent(1)) + " differs from dataset " + std::to_string(width) +
                      "x" + std::to_string(height));
    return t;
  }

  // Clips of at most clip_len frames cut from each range, trailing shorter
  // clip kept. Frames load eagerly.
  std::vector<VideoClip<S>> clips(const std::vector<SplitRange>& ranges, int clip_len) const {
    if (clip_len < 1) throw ContractError("clip_len must be >= 1");
    std::vector<VideoClip<S>> out;
    for (const SplitRange& r : ranges) {
      if (r.end > num_frames())
        throw DataError("range " + std::to_string(r.begin) + ":" + std::to_string(r.end) +
                        " exceeds frame count " + std::to_string(num_frames()));
      for (int start = r.begin; start < r.end; start += clip_len) {
        const int stop = std::min(start + clip_len, r.end);
        VideoClip<S> clip;
        clip.source_id = spec.frame_glob;
        for (int i = start; i < stop; ++i) {
          clip.frames.push_back(load_frame(i));
          clip.annotations.push_back(annotations[static_cast<std::size_t>(i)]);
          clip.frame_indices.push_back(i);
        }
        out.push_back(std::move(clip));
      }
    }
    return out;
  }

  std::vector<VideoClip<S>> train_clips(int clip_len) const { return clips(spec.train_ranges, clip_len); }
  std::vector<VideoClip<S>> test_clips(int clip_len) const { return clips(spec.test_ranges, clip_len); }
};

template <typename S>
Dataset<S> load_dataset(const DatasetSpec& spec) {
  Dataset<S> ds;
  ds.spec = spec;
  ds.frame_paths = glob_files(spec.resolve(spec.frame_glob));
  {
    // first frame fixes the spatial extents
    const std::string& p0 = ds.frame_paths.front();
    if (p0.size() >= 4 && p0.compare(p0.size() - 4, 4, ".png") == 0) {
      const PngImage img = read_png(p0);
      ds.height = img.height;
      ds.width = img.width;
    } else {
      const PgmImage img = read_pgm(p0);
      ds.height = img.height;
      ds.width = img.width;
    }
  }
  if (spec.annotation_csv.empty()) throw DataError("dataset spec is missing 'annotations'");
  ds.annotations =
      load_annotations(spec.resolve(spec.annotation_csv), ds.num_frames(), ds.height, ds.width);
  if (!spec.perspective_path.empty())
    ds.perspective = load_perspective<S>(spec.resolve(spec.perspective_path));
  if (!spec.roi_path.empty()) ds.roi = load_roi<S>(spec.resolve(spec.roi_path));
  for (const auto& ranges : {spec.train_ranges, spec.test_ranges})
    for (const SplitRange& r : ranges)
      if (r.end > ds.num_frames())
        throw DataError("split range " + std::to_string(r.begin) + ":" + std::to_string(r.end) +
                        " exceeds frame count " + std::to_string(ds.num_frames()));
  return ds;
}

// Ground-truth density targets for a clip. Patch clips pass their own
// (patch-local) annotations so per-kernel normalization stays exact.
template <typename S>
std::vector<Tensor<S>> clip_targets(const VideoClip<S>& clip, const KernelRule& rule,
                                    std::type_identity_t<const PerspectiveMap<S>*> persp,
                                    std::type_identity_t<const RoiMask<S>*> roi) {
  std::vector<Tensor<S>> out;
  out.reserve(clip.frames.size());
  const int h = clip.frames.front().extent(1), w = clip.frames.front().extent(2);
  for (const AnnotationSet& ann : clip.annotations)
    out.push_back(generate_density<S>(ann, rule, persp, roi, h, w));
  return out;
}

// ---- patch cropping and overlap-averaged reassembly ----

struct PatchOrigin {
  int y = 0;
  int x = 0;
};

// Origins stepping by stride, with the far edge forced in so every pixel is
// covered.
inline std::vector<PatchOrigin> grid_patch_origins(int height, int width, int size, int stride) {
  if (size > height || size > width) throw DimensionError("patch size exceeds frame extents");
  if (stride < 1) throw ContractError("patch stride must be >= 1");
  auto axis = [&](int extent) {
    std::vector<int> v;
    for (int o = 0; o + size <= extent; o += stride) v.push_back(o);
    if (v.back() != extent - size) v.push_back(extent - size);
    return v;
  };
  std::vector<PatchOrigin> out;
  for (int y : axis(height))
    for (int x : axis(width)) out.push_back({y, x});
  return out;
}

inline std::vector<PatchOrigin> random_patch_origins(int height, int width, int size, int n, Rng& rng) {
  if (size > height || size > width) throw DimensionError("patch size exceeds frame extents");
  std::vector<PatchOrigin> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    out.push_back({rng.uniform_int(height - size + 1), rng.uniform_int(width - size + 1)});
  return out;
}

template <typename S>
Tensor<S> crop_frame(const Tensor<S>& frame, PatchOrigin origin, int size) {
  const int c = frame.extent(0), h = frame.extent(1), w = frame.extent(2);
  if (origin.y < 0 || origin.x < 0 || origin.y + size > h || origin.x + size > w)
    throw DimensionError("patch exceeds frame bounds");
  Tensor<S> out({c, size, size});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < size; ++y)
      std::copy(frame.data() + (static_cast<std::int64_t>(ch) * h + origin.y + y) * w + origin.x,
                frame.data() + (static_cast<std::int64_t>(ch) * h + origin.y + y) * w + origin.x + size,
                out.data() + (static_cast<std::int64_t>(ch) * size + y) * size);
  return out;
}

// Translates annotations into patch coordinates; points outside are dropped.
inline AnnotationSet crop_annotations(const AnnotationSet& ann, PatchOrigin origin, int size) {
  AnnotationSet out;
  out.frame_index = ann.frame_index;
  for (const Point2& p : ann.points) {
    const double x = p.x - origin.x, y = p.y - origin.y;
    if (x >= 0 && x < size && y >= 0 && y < size) out.points.push_back({x, y});
  }
  return out;
}

template <typename S>
struct FramePatch {
  PatchOrigin origin;
  Tensor<S> image;
  AnnotationSet annotations;
};

template <typename S>
std::vector<FramePatch<S>> crop_patches(const Tensor<S>& frame, const AnnotationSet& ann,
                                        int size, const std::vector<PatchOrigin>& origins) {
  std::vector<FramePatch<S>> out;
  out.reserve(origins.size());
  for (const PatchOrigin& o : origins)
    out.push_back({o, crop_frame(frame, o, size), crop_annotations(ann, o, size)});
  return out;
}

// Same origin across all frames of a clip, preserving temporal alignment.
template <typename S>
VideoClip<S> crop_clip(const VideoClip<S>& clip, PatchOrigin origin, int size) {
  VideoClip<S> out;
  out.source_id = clip.source_id;
  out.frame_indices = clip.frame_indices;
  for (std::size_t t = 0; t < clip.frames.size(); ++t) {
    out.frames.push_back(crop_frame(clip.frames[t], origin, size));
    out.annotations.push_back(crop_annotations(clip.annotations[t], origin, size));
  }
  return out;
}

// Per-pixel mean over all patches covering the pixel. Every pixel must be
// covered by at least one patch. Accumulation runs in extended precision so
// the mean of identical values reproduces the value exactly.
template <typename S>
Tensor<S> assemble_overlapping(const std::vector<Tensor<S>>& patches,
                               const std::vector<PatchOrigin>& origins, int height, int width) {
  if (patches.size() != origins.size()) throw ContractError("assemble: patch/origin count mismatch");
  if (patches.empty()) throw ContractError("assemble: no patches");
  std::vector<long double> acc(static_cast<std::size_t>(height) * width, 0.0L);
  std::vector<int> cover(static_cast<std::size_t>(height) * width, 0);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const Tensor<S>& p = patches[i];
    if (p.rank() != 3 || p.extent(0) != 1) throw DimensionError("assemble: patches must be [1,s,s]");
    const int ph = p.extent(1), pw = p.extent(2);
    const PatchOrigin o = origins[i];
    if (o.y < 0 || o.x < 0 || o.y + ph > height || o.x + pw > width)
      throw DimensionError("assemble: patch exceeds frame bounds");
    for (int y = 0; y < ph; ++y)
      for (int x = 0; x < pw; ++x) {
        const std::size_t at = static_cast<std::size_t>((o.y + y)) * width + (o.x + x);
        acc[at] += static_cast<long double>(p(0, y, x));
        cover[at] += 1;
      }
  }
  Tensor<S> out({1, height, width});
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const std::size_t at = static_cast<std::size_t>(y) * width + x;
      if (cover[at] == 0)
        throw DataError("assemble: pixel (" + std::to_string(x) + "," + std::to_string(y) +
                        ") covered by no patch");
      out(0, y, x) = static_cast<S>(acc[at] / cover[at]);
    }
  return out;
}

// ---- synthetic pedestrian scenes (the desk-scale oracle) ----

struct OccluderBand {
  int y0 = 0, y1 = 0;  // half-open pixel rect
  int x0 = 0, x1 = 0;
  double shade = 0.5;  // rendered brightness of the band
};

struct SyntheticSceneConfig {
  int height = 32;
  int width = 32;
  int agents = 5;  // population cap; exits make the live count fluctuate below it
  double speed_min = 0.3;
  double speed_max = 1.2;
  double turn_sigma = 0.05;       // heading jitter, radians per frame
  double horizontal_bias = 0.0;   // fraction of agents spawned on horizontal headings
  double exit_rest_mean = 0.0;    // mean dormant frames after an exit (0 = respawn at once)
  enum class Boundary { Bounce, ExitRespawn };
  Boundary boundary = Boundary::ExitRespawn;
  std::uint64_t seed = 1;
  KernelRule rule = KernelRule::fixed(1.5);
  double blob_sigma = 1.2;      // rendered agent footprint
  double blob_amplitude = 0.9;
  std::optional<OccluderBand> occluder;  // agents inside are annotated but not rendered
};

template <typename S>
struct SyntheticScene {
  VideoClip<S> clip;
  std::vector<Tensor<S>> densities;  // ground truth per frame
};

namespace detail {

struct Agent {
  double x = 0, y = 0, vx = 0, vy = 0;
  int dormant = 0;  // frames until respawn; 0 means live
};

inline void spawn_heading(const SyntheticSceneConfig& cfg, Rng& rng, double base_angle, Agent& a) {
  const double speed = rng.uniform(cfg.speed_min, cfg.speed_max);
  a.vx = speed * std::cos(base_angle);
  a.vy = speed * std::sin(base_angle);
}

inline detail::Agent spawn_interior(const SyntheticSceneConfig& cfg, Rng& rng) {
  Agent a;
  a.x = rng.uniform(0.0, cfg.width - 1e-9);
  a.y = rng.uniform(0.0, cfg.height - 1e-9);
  double angle;
  if (rng.uniform() < cfg.horizontal_bias)
    angle = (rng.uniform() < 0.5 ? 0.0 : 3.14159265358979323846) + 0.25 * rng.normal();
  else
    angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  spawn_heading(cfg, rng, angle, a);
  return a;
}

inline detail::Agent spawn_at_edge(const SyntheticSceneConfig& cfg, Rng& rng) {
  Agent a;
  const double pi = 3.14159265358979323846;
  int edge;
  if (cfg.horizontal_bias > 0 && rng.uniform() < cfg.horizontal_bias)
    edge = rng.uniform() < 0.5 ? 2 : 3;  // left/right edge, horizontal travel
  else
    edge = rng.uniform_int(4);
  double angle;
  switch (edge) {
    case 0:  // top, heading down
      a.x = rng.uniform(0.0, cfg.width - 1e-9); a.y = 0.0; angle = pi / 2; break;
    case 1:  // bottom, heading up
      a.x = rng.uniform(0.0, cfg.width - 1e-9); a.y = cfg.height - 1e-9; angle = -pi / 2; break;
    case 2:  // left, heading right
      a.x = 0.0; a.y = rng.uniform(0.0, cfg.height - 1e-9); angle = 0.0; break;
    default:  // right, heading left
      a.x = cfg.width - 1e-9; a.y = rng.uniform(0.0, cfg.height - 1e-9); angle = pi; break;
  }
  angle += 0.5 * rng.normal();
  spawn_heading(cfg, rng, angle, a);
  return a;
}

}  // namespace detail

// Agents on straight or gently turning trajectories; per-frame head
// annotations come with exact counts by construction, densities via the
// density module. Deterministic for a given seed.
template <typename S>
SyntheticScene<S> synth_generate(const SyntheticSceneConfig& cfg, int t_len) {
  if (t_len < 1) throw ContractError("synth_generate: need at least one frame");
  Rng rng(cfg.seed);
  std::vector<detail::Agent> agents;
  for (int i = 0; i < cfg.agents; ++i) agents.push_back(detail::spawn_interior(cfg, rng));

  SyntheticScene<S> scene;
  scene.clip.source_id = "synthetic(seed=" + std::to_string(cfg.seed) + ")";
  const int h = cfg.height, w = cfg.width;

  for (int t = 0; t < t_len; ++t) {
    AnnotationSet ann;
    ann.frame_index = t;
    Tensor<S> frame({1, h, w});
    if (cfg.occluder) {
      const OccluderBand& b = *cfg.occluder;
      for (int y = std::max(0, b.y0); y < std::min(h, b.y1); ++y)
        for (int x = std::max(0, b.x0); x < std::min(w, b.x1); ++x)
          frame(0, y, x) = static_cast<S>(b.shade);
    }

    for (detail::Agent& a : agents) {
      if (a.dormant > 0) continue;
      ann.points.push_back({a.x, a.y});
      const bool hidden = cfg.occluder && a.y >= cfg.occluder->y0 && a.y < cfg.occluder->y1 &&
                          a.x >= cfg.occluder->x0 && a.x < cfg.occluder->x1;
      if (!hidden) {
        const double r = 3.0 * cfg.blob_sigma;
        const int y0 = std::max(0, static_cast<int>(std::floor(a.y - r)));
        const int y1 = std::min(h - 1, static_cast<int>(std::ceil(a.y + r)));
        const int x0 = std::max(0, static_cast<int>(std::floor(a.x - r)));
        const int x1 = std::min(w - 1, static_cast<int>(std::ceil(a.x + r)));
        for (int y = y0; y <= y1; ++y)
          for (int x = x0; x <= x1; ++x) {
            const double dx = x - a.x, dy = y - a.y;
            frame(0, y, x) += static_cast<S>(
                cfg.blob_amplitude * std::exp(-(dx * dx + dy * dy) / (2 * cfg.blob_sigma * cfg.blob_sigma)));
          }
      }
    }
    for (std::int64_t i = 0; i < frame.size(); ++i)
      frame.data()[i] = std::min(frame.data()[i], S(1));

    scene.densities.push_back(generate_density<S>(ann, cfg.rule, nullptr, nullptr, h, w));
    scene.clip.frames.push_back(std::move(frame));
    scene.clip.annotations.push_back(std::move(ann));
    scene.clip.frame_indices.push_back(t);

    // advance trajectories
    for (detail::Agent& a : agents) {
      if (a.dormant > 0) {
        if (--a.dormant == 0) a = detail::spawn_at_edge(cfg, rng);
        continue;
      }
      const double turn = cfg.turn_sigma * rng.normal();
      const double c = std::cos(turn), s = std::sin(turn);
      const double vx = a.vx * c - a.vy * s, vy = a.vx * s + a.vy * c;
      a.vx = vx;
      a.vy = vy;
      a.x += a.vx;
      a.y += a.vy;
      const bool out = a.x < 0 || a.x >= w || a.y < 0 || a.y >= h;
      if (!out) continue;
      if (cfg.boundary == SyntheticSceneConfig::Boundary::Bounce) {
        if (a.x < 0) { a.x = -a.x; a.vx = -a.vx; }
        if (a.x >= w) { a.x = 2 * (w - 1e-9) - a.x; a.vx = -a.vx; }
        if (a.y < 0) { a.y = -a.y; a.vy = -a.vy; }
        if (a.y >= h) { a.y = 2 * (h - 1e-9) - a.y; a.vy = -a.vy; }
        a.x = std::clamp(a.x, 0.0, w - 1e-9);
        a.y = std::clamp(a.y, 0.0, h - 1e-9);
      } else {
        if (cfg.exit_rest_mean > 0)
          a.dormant = 1 + static_cast<int>(rng.uniform() * 2.0 * cfg.exit_rest_mean);
        else
          a = detail::spawn_at_edge(cfg, rng);
      }
    }
  }
  return scene;
}

// Writes frames/, annotations.csv and dataset.spec so the scene round-trips
// through the regular loading path. Frames quantize to 8-bit PGM.
template <typename S>
void write_synthetic_dataset(const SyntheticScene<S>& scene, const std::string& dir,
                             const KernelRule& rule, int train_end) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "frames");
  const int t_len = scene.clip.length();

  for (int t = 0; t < t_len; ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%06d.pgm", t);
    write_pgm((fs::path(dir) / "frames" / name).string(), scene.clip.frames[static_cast<std::size_t>(t)]);
  }

  std::ofstream csv((fs::path(dir) / "annotations.csv").string());
  if (!csv) throw IoError("cannot write annotations.csv under " + dir);
  csv << "frame,x,y\n";
  csv.precision(6);
  csv << std::fixed;
  const int h = scene.clip.frames.front().extent(1), w = scene.clip.frames.front().extent(2);
  // six-decimal output must not round an in-bounds point onto the frame edge
  auto clamp_coord = [](double v, int extent) { return std::min(v, extent - 1e-3); };
  for (int t = 0; t < t_len; ++t)
    for (const Point2& p : scene.clip.annotations[static_cast<std::size_t>(t)].points)
      csv << t << "," << clamp_coord(p.x, w) << "," << clamp_coord(p.y, h) << "\n";
  csv.close();

  std::ofstream spec((fs::path(dir) / "dataset.spec").string());
  if (!spec) throw IoError("cannot write dataset.spec under " + dir);
  spec << "frames = frames/*.pgm\n";
  spec << "annotations = annotations.csv\n";
  std::ostringstream kernel;
  kernel << (rule.mode == KernelRule::Mode::Fixed ? "fixed:" : "perspective:") << rule.value;
  spec << "kernel = " << kernel.str() << "\n";
  if (train_end > 0) spec << "train_range = 0:" << std::min(train_end, t_len) << "\n";
  if (train_end < t_len) spec << "test_range = " << std::min(train_end, t_len) << ":" << t_len << "\n";
}

}  // namespace crowdflow
