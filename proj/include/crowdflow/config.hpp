#pragma once

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "crowdflow/convlstm.hpp"
#include "crowdflow/data.hpp"
#include "crowdflow/error.hpp"
#include "crowdflow/train.hpp"
#include "crowdflow/version.hpp"

namespace crowdflow {

// Flat key=value run configuration. Every key is validated before any work
// starts; unknown keys are rejected. Command-line overrides win over file
// values.
class RunConfig {
 public:
  // run
  std::uint64_t seed = 1;
  std::string output_dir = "run_out";
  std::string precision = "f32";  // f32 | f64
  int threads = 0;                // 0 -> $CROWDFLOW_THREADS or 1

  // data
  std::string dataset;
  std::string dataset_b;  // transfer target
  int clip_len = 10;

  // network
  std::vector<int> layers{128, 64, 64, 64};
  int kernel = 5;
  std::string direction = "unidirectional";
  int input_channels = 1;

  // optimizer / training
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_clips = 1;
  int max_epochs = 100;
  int patience = 10;
  int eval_every = 1;
  double val_fraction = 0.15;
  double time_limit_sec = 0.0;

  // patches
  int patch_size = 0;
  int patch_stride = 0;        // 0 -> patch_size/2 at inference
  int patches_per_image = 16;  // random patch clips per training clip

  // synthetic scenes
  int synth_frames = 300;
  int synth_height = 32;
  int synth_width = 32;
  int synth_agents = 5;
  double synth_speed_min = 0.3;
  double synth_speed_max = 1.2;
  double synth_turn_sigma = 0.05;
  double synth_horizontal_bias = 0.0;
  double synth_exit_rest_mean = 0.0;
  std::string synth_boundary = "exit";  // exit | bounce
  double synth_blob_sigma = 1.2;
  double synth_blob_amplitude = 0.9;
  std::string synth_occluder;  // empty or y0:y1:x0:x1:shade
  std::string synth_kernel = "fixed:1.5";
  int synth_train_end = 240;

  // transfer
  int adapt_frames = 50;
  int adapt_epochs = 20;
  double adapt_lr_mult = 0.1;
  bool adapt_contiguous = true;

  static RunConfig load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config: " + path);
    RunConfig cfg;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
      try {
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
      } catch (const ConfigError& e) {
        throw ConfigError(path + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
    return cfg;
  }

  // Applies "key=value" overrides (from command-line flags).
  void apply_overrides(const std::vector<std::string>& overrides) {
    for (const std::string& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw ConfigError("override must be key=value, got '" + o + "'");
      set(trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
    }
  }

  void set(const std::string& key, const std::string& value) {
    raw_[key] = value;
    if (key == "seed") seed = parse_u64(key, value);
    else if (key == "output_dir") output_dir = value;
    else if (key == "precision") {
      if (value != "f32" && value != "f64") throw ConfigError("precision must be f32 or f64");
      precision = value;
    } else if (key == "threads") threads = parse_int(key, value, 0, 1024);
    else if (key == "dataset") dataset = value;
    else if (key == "dataset_b") dataset_b = value;
    else if (key == "clip_len") clip_len = parse_int(key, value, 1, 100000);
    else if (key == "layers") layers = parse_int_list(key, value);
    else if (key == "kernel") kernel = parse_int(key, value, 1, 99);
    else if (key == "direction") { direction_from_name(value); direction = value; }
    else if (key == "input_channels") input_channels = parse_int(key, value, 1, 16);
    else if (key == "lr") lr = parse_double(key, value);
    else if (key == "beta1") beta1 = parse_double(key, value);
    else if (key == "beta2") beta2 = parse_double(key, value);
    else if (key == "epsilon") epsilon = parse_double(key, value);
    else if (key == "batch_clips") batch_clips = parse_int(key, value, 1, 4096);
    else if (key == "max_epochs") max_epochs = parse_int(key, value, 1, 1000000);
    else if (key == "patience") patience = parse_int(key, value, 1, 1000000);
    else if (key == "eval_every") eval_every = parse_int(key, value, 1, 1000000);
    else if (key == "val_fraction") val_fraction = parse_double(key, value);
    else if (key == "time_limit_sec") time_limit_sec = parse_double(key, value);
    else if (key == "patch_size") patch_size = parse_int(key, value, 0, 100000);
    else if (key == "patch_stride") patch_stride = parse_int(key, value, 0, 100000);
    else if (key == "patches_per_image") patches_per_image = parse_int(key, value, 1, 100000);
    else if (key == "synth_frames") synth_frames = parse_int(key, value, 1, 10000000);
    else if (key == "synth_height") synth_height = parse_int(key, value, 4, 100000);
    else if (key == "synth_width") synth_width = parse_int(key, value, 4, 100000);
    else if (key == "synth_agents") synth_agents = parse_int(key, value, 0, 1000000);
    else if (key == "synth_speed_min") synth_speed_min = parse_double(key, value);
    else if (key == "synth_speed_max") synth_speed_max = parse_double(key, value);
    else if (key == "synth_turn_sigma") synth_turn_sigma = parse_double(key, value);
    else if (key == "synth_horizontal_bias") synth_horizontal_bias = parse_double(key, value);
    else if (key == "synth_exit_rest_mean") synth_exit_rest_mean = parse_double(key, value);
    else if (key == "synth_boundary") {
      if (value != "exit" && value != "bounce") throw ConfigError("synth_boundary must be exit or bounce");
      synth_boundary = value;
    } else if (key == "synth_blob_sigma") synth_blob_sigma = parse_double(key, value);
    else if (key == "synth_blob_amplitude") synth_blob_amplitude = parse_double(key, value);
    else if (key == "synth_occluder") synth_occluder = value;
    else if (key == "synth_kernel") { DatasetSpec::parse_kernel(value); synth_kernel = value; }
    else if (key == "synth_train_end") synth_train_end = parse_int(key, value, 0, 10000000);
    else if (key == "adapt_frames") adapt_frames = parse_int(key, value, 1, 10000000);
    else if (key == "adapt_epochs") adapt_epochs = parse_int(key, value, 0, 1000000);
    else if (key == "adapt_lr_mult") adapt_lr_mult = parse_double(key, value);
    else if (key == "adapt_contiguous") adapt_contiguous = parse_int(key, value, 0, 1) != 0;
    else throw ConfigError("unknown config key '" + key + "'");
  }

  int effective_threads() const {
    if (threads > 0) return threads;
    if (const char* env = std::getenv("CROWDFLOW_THREADS")) {
      const int n = std::atoi(env);
      if (n > 0) return n;
    }
    return 1;
  }

  NetworkConfig network_config(int height, int width) const {
    NetworkConfig cfg;
    cfg.layer_channels = layers;
    cfg.kernel_size = kernel;
    cfg.direction = direction_from_name(direction);
    cfg.input_channels = input_channels;
    cfg.height = height;
    cfg.width = width;
    cfg.validate();
    return cfg;
  }

  TrainOptions train_options() const {
    TrainOptions t;
    t.adam = AdamOptions{lr, beta1, beta2, epsilon};
    t.clip_len = clip_len;
    t.max_epochs = max_epochs;
    t.patience = patience;
    t.eval_every = eval_every;
    t.batch_clips = batch_clips;
    t.threads = effective_threads();
    t.val_fraction = val_fraction;
    t.seed = seed;
    t.time_limit_sec = time_limit_sec;
    t.patch_size = patch_size;
    t.patches_per_clip = patches_per_image;
    return t;
  }

  SyntheticSceneConfig synth_config() const {
    SyntheticSceneConfig s;
    s.height = synth_height;
    s.width = synth_width;
    s.agents = synth_agents;
    s.speed_min = synth_speed_min;
    s.speed_max = synth_speed_max;
    s.turn_sigma = synth_turn_sigma;
    s.horizontal_bias = synth_horizontal_bias;
    s.exit_rest_mean = synth_exit_rest_mean;
    s.boundary = synth_boundary == "bounce" ? SyntheticSceneConfig::Boundary::Bounce
                                            : SyntheticSceneConfig::Boundary::ExitRespawn;
    s.seed = seed;
    s.rule = DatasetSpec::parse_kernel(synth_kernel);
    s.blob_sigma = synth_blob_sigma;
    s.blob_amplitude = synth_blob_amplitude;
    if (!synth_occluder.empty()) {
      OccluderBand b;
      char colon;
      std::istringstream ss(synth_occluder);
      if (!(ss >> b.y0 >> colon >> b.y1 >> colon >> b.x0 >> colon >> b.x1))
        throw ConfigError("synth_occluder must be y0:y1:x0:x1[:shade]");
      if (ss >> colon >> b.shade) {}
      s.occluder = b;
    }
    return s;
  }

  const std::map<std::string, std::string>& raw() const { return raw_; }

  nlohmann::json to_json() const {
    nlohmann::json j;
    for (const auto& [k, v] : raw_) j[k] = v;
    return j;
  }

 private:
  static std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }
  static int parse_int(const std::string& key, const std::string& v, int lo, int hi) {
    int out;
    try {
      std::size_t used;
      out = std::stoi(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
    } catch (const std::exception&) {
      throw ConfigError(key + ": not an integer: '" + v + "'");
    }
    if (out < lo || out > hi)
      throw ConfigError(key + ": value " + v + " out of range [" + std::to_string(lo) + "," +
                        std::to_string(hi) + "]");
    return out;
  }
  static std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
      std::size_t used;
      const std::uint64_t out = std::stoull(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return out;
    } catch (const std::exception&) {
      throw ConfigError(key + ": not an unsigned integer: '" + v + "'");
    }
  }
  static double parse_double(const std::string& key, const std::string& v) {
    try {
      std::size_t used;
      const double out = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return out;
    } catch (const std::exception&) {
      throw ConfigError(key + ": not a number: '" + v + "'");
    }
  }
  static std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_int(key, item, 1, 1 << 20));
    if (out.empty()) throw ConfigError(key + ": empty list");
    return out;
  }

  std::map<std::string, std::string> raw_;
};

// Every run writes a manifest (command, config snapshot, seed, version) and
// a separate metrics.json whose bytes depend only on config+seed.
inline void write_manifest(const std::string& output_dir, const std::string& command,
                           const RunConfig& cfg, const nlohmann::json& metrics) {
  namespace fs = std::filesystem;
  fs::create_directories(output_dir);
  nlohmann::json manifest{{"command", command},
                          {"version", kVersion},
                          {"seed", cfg.seed},
                          {"config", cfg.to_json()},
                          {"metrics", metrics}};
  std::ofstream m((fs::path(output_dir) / "manifest.json").string());
  if (!m) throw IoError("cannot write manifest under " + output_dir);
  m << manifest.dump(2) << "\n";
  std::ofstream s((fs::path(output_dir) / "metrics.json").string());
  if (!s) throw IoError("cannot write metrics.json under " + output_dir);
  s << metrics.dump(2) << "\n";
}

}  // namespace crowdflow
