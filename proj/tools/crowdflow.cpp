// crowdflow command-line interface.
//
// Subcommands: density | synth | train | eval | predict | transfer | gradcheck
// Exit codes: 0 success, 1 invalid configuration, 2 data error, 3 numerical
// failure. Every run writes a manifest and a metrics.json whose bytes depend
// only on config + seed.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "crowdflow/checkpoint.hpp"
#include "crowdflow/config.hpp"
#include "crowdflow/convlstm.hpp"
#include "crowdflow/data.hpp"
#include "crowdflow/density.hpp"
#include "crowdflow/eval.hpp"
#include "crowdflow/gradcheck.hpp"
#include "crowdflow/optim.hpp"
#include "crowdflow/tensor_io.hpp"
#include "crowdflow/train.hpp"
#include "crowdflow/version.hpp"

namespace fs = std::filesystem;
using namespace crowdflow;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string output_dir;
  int threads = -1;
};

RunConfig load_config(const CommonArgs& args) {
  RunConfig cfg = args.config_path.empty() ? RunConfig{} : RunConfig::load(args.config_path);
  cfg.apply_overrides(args.overrides);
  if (!args.output_dir.empty()) cfg.set("output_dir", args.output_dir);
  if (args.threads >= 0) cfg.set("threads", std::to_string(args.threads));
  return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "run configuration file (key = value lines)");
  cmd->add_option("--set", args.overrides, "override a config key, e.g. --set seed=7")->take_all();
  cmd->add_option("--out", args.output_dir, "output directory (overrides output_dir)");
  cmd->add_option("--threads", args.threads, "cap worker threads (default $CROWDFLOW_THREADS or 1)");
}

std::string frame_file_name(const char* prefix, int index, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%06d.%s", prefix, index, ext);
  return buf;
}

void write_loss_log(const std::string& path, const std::vector<EpochLog>& log) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write loss log: " + path);
  os << "epoch,train_loss,val_mae\n";
  char buf[96];
  for (const EpochLog& e : log) {
    if (e.val_mae >= 0)
      std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g\n", e.epoch, e.train_loss, e.val_mae);
    else
      std::snprintf(buf, sizeof(buf), "%d,%.9g,\n", e.epoch, e.train_loss);
    os << buf;
  }
}

// ---- density ----

int cmd_density(const CommonArgs& args) {
  const RunConfig cfg = load_config(args);
  if (cfg.dataset.empty()) throw ConfigError("density: config needs 'dataset'");
  const DatasetSpec spec = DatasetSpec::load(cfg.dataset);
  const Dataset<double> ds = load_dataset<double>(spec);
  const fs::path out_dir = fs::path(cfg.output_dir) / "densities";
  fs::create_directories(out_dir);

  const PerspectiveMap<double>* persp = ds.perspective ? &*ds.perspective : nullptr;
  const RoiMask<double>* roi = ds.roi ? &*ds.roi : nullptr;
  double total = 0.0;
  for (int i = 0; i < ds.num_frames(); ++i) {
    const Tensor<double> map = generate_density<double>(ds.annotations[static_cast<std::size_t>(i)],
                                                        spec.rule, persp, roi, ds.height, ds.width);
    total += count(map, roi);
    save_tensor((out_dir / frame_file_name("density", i, "cftn")).string(), map);
  }
  nlohmann::json metrics{{"frames", ds.num_frames()},
                         {"total_count", total},
                         {"mean_count", ds.num_frames() ? total / ds.num_frames() : 0.0}};
  write_manifest(cfg.output_dir, "density", cfg, metrics);
  std::printf("density: wrote %d maps, mean count %.3f\n", ds.num_frames(),
              ds.num_frames() ? total / ds.num_frames() : 0.0);
  return 0;
}

// ---- synth ----

int cmd_synth(const CommonArgs& args) {
  const RunConfig cfg = load_config(args);
  const SyntheticSceneConfig scfg = cfg.synth_config();
  const auto scene = synth_generate<float>(scfg, cfg.synth_frames);
  const std::string dir = (fs::path(cfg.output_dir) / "dataset").string();
  write_synthetic_dataset(scene, dir, scfg.rule, cfg.synth_train_end);

  double total = 0.0;
  for (const auto& a : scene.clip.annotations) total += a.count();
  nlohmann::json metrics{{"frames", cfg.synth_frames},
                         {"mean_count", total / cfg.synth_frames},
                         {"dataset_spec", (fs::path(dir) / "dataset.spec").string()}};
  write_manifest(cfg.output_dir, "synth", cfg, metrics);
  std::printf("synth: %d frames under %s, mean count %.3f\n", cfg.synth_frames, dir.c_str(),
              total / cfg.synth_frames);
  return 0;
}

// ---- train ----

template <typename S>
int run_train(const RunConfig& cfg) {
  if (cfg.dataset.empty()) throw ConfigError("train: config needs 'dataset'");
  const DatasetSpec spec = DatasetSpec::load(cfg.dataset);
  const Dataset<S> ds = load_dataset<S>(spec);
  if (spec.train_ranges.empty()) throw DataError("train: dataset has no train_range");

  const auto clips = ds.train_clips(cfg.clip_len);
  const TrainOptions opts = cfg.train_options();
  const int net_h = opts.patch_size > 0 ? opts.patch_size : ds.height;
  const int net_w = opts.patch_size > 0 ? opts.patch_size : ds.width;
  NetworkParams<S> net = init_params<S>(cfg.network_config(net_h, net_w), cfg.seed);

  const PerspectiveMap<S>* persp = ds.perspective ? &*ds.perspective : nullptr;
  const RoiMask<S>* roi = ds.roi ? &*ds.roi : nullptr;

  auto result = train(std::move(net), clips, spec.rule, persp, roi, opts, [](const EpochLog& e) {
    if (e.val_mae >= 0)
      std::printf("epoch %d  loss %.6g  val_mae %.4f\n", e.epoch, e.train_loss, e.val_mae);
    else
      std::printf("epoch %d  loss %.6g\n", e.epoch, e.train_loss);
    std::fflush(stdout);
  });

  fs::create_directories(cfg.output_dir);
  save_checkpoint((fs::path(cfg.output_dir) / "checkpoint.cfck").string(), result.params, &result.adam);
  write_loss_log((fs::path(cfg.output_dir) / "loss_log.csv").string(), result.log);
  nlohmann::json metrics{{"epochs", result.epochs_run},
                         {"best_val_mae", result.best_val_mae},
                         {"final_train_loss", result.log.empty() ? 0.0 : result.log.back().train_loss},
                         {"hit_time_limit", result.hit_time_limit}};
  write_manifest(cfg.output_dir, "train", cfg, metrics);
  std::printf("train: %d epochs, best val MAE %.4f, checkpoint at %s\n", result.epochs_run,
              result.best_val_mae, (fs::path(cfg.output_dir) / "checkpoint.cfck").c_str());
  return 0;
}

// ---- eval ----

template <typename S>
int run_eval(const RunConfig& cfg, const std::string& checkpoint_path, bool echo_gt,
             bool dump_predictions) {
  if (cfg.dataset.empty()) throw ConfigError("eval: config needs 'dataset'");
  const DatasetSpec spec = DatasetSpec::load(cfg.dataset);
  const Dataset<S> ds = load_dataset<S>(spec);
  if (spec.test_ranges.empty()) throw DataError("eval: dataset has no test_range");
  const auto clips = ds.test_clips(cfg.clip_len);
  const RoiMask<S>* roi = ds.roi ? &*ds.roi : nullptr;
  const PerspectiveMap<S>* persp = ds.perspective ? &*ds.perspective : nullptr;

  ClipPredictor<S> predictor;
  NetworkParams<S> net;
  std::string tag;
  if (echo_gt) {
    predictor = [&](const VideoClip<S>& clip) { return clip_targets(clip, spec.rule, persp, roi); };
    tag = "echo-gt";
  } else {
    if (checkpoint_path.empty()) throw ConfigError("eval: --checkpoint required (or --echo-gt)");
    net = load_checkpoint<S>(checkpoint_path).net;
    predictor = make_predictor(net, cfg.patch_stride);
    tag = direction_name(net.config.direction);
  }

  fs::create_directories(cfg.output_dir);
  ClipPredictor<S> recording = predictor;
  if (dump_predictions) {
    const fs::path pred_dir = fs::path(cfg.output_dir) / "predictions";
    fs::create_directories(pred_dir);
    recording = [predictor, pred_dir](const VideoClip<S>& clip) {
      auto preds = predictor(clip);
      for (int t = 0; t < clip.length(); ++t)
        save_tensor((pred_dir / frame_file_name("pred", clip.frame_indices[static_cast<std::size_t>(t)],
                                                "cftn")).string(),
                    preds[static_cast<std::size_t>(t)]);
      return preds;
    };
  }

  const EvalReport report = evaluate(recording, clips, roi, spec.frame_glob, tag);
  write_report_jsonl(report, (fs::path(cfg.output_dir) / "report.jsonl").string());
  write_count_curve_csv(report, (fs::path(cfg.output_dir) / "count_curve.csv").string());
  nlohmann::json metrics{{"mae", report.mae}, {"mse", report.mse}, {"frames", report.frames.size()}};
  write_manifest(cfg.output_dir, "eval", cfg, metrics);
  std::printf("eval: %zu frames, MAE %.4f, MSE %.4f\n", report.frames.size(), report.mae, report.mse);
  return 0;
}

// ---- predict ----

template <typename S>
int run_predict(const RunConfig& cfg, const std::string& checkpoint_path, const std::string& frames_glob) {
  if (checkpoint_path.empty()) throw ConfigError("predict: --checkpoint required");
  if (frames_glob.empty()) throw ConfigError("predict: --frames required");
  NetworkParams<S> net = load_checkpoint<S>(checkpoint_path).net;

  const auto paths = glob_files(frames_glob);
  std::vector<Tensor<S>> frames;
  for (const auto& p : paths) {
    if (p.size() >= 4 && p.compare(p.size() - 4, 4, ".png") == 0)
      frames.push_back(png_to_frame<S>(read_png(p)));
    else
      frames.push_back(pgm_to_frame<S>(read_pgm(p)));
  }

  const fs::path out_dir = fs::path(cfg.output_dir) / "predictions";
  fs::create_directories(out_dir);
  const ClipPredictor<S> predictor = make_predictor(net, cfg.patch_stride);
  double total = 0.0;
  int written = 0;
  for (std::size_t start = 0; start < frames.size(); start += static_cast<std::size_t>(cfg.clip_len)) {
    VideoClip<S> clip;
    const std::size_t stop = std::min(frames.size(), start + static_cast<std::size_t>(cfg.clip_len));
    for (std::size_t i = start; i < stop; ++i) {
      clip.frames.push_back(frames[i]);
      clip.annotations.push_back(AnnotationSet{static_cast<int>(i), {}});
      clip.frame_indices.push_back(static_cast<int>(i));
    }
    const auto preds = predictor(clip);
    for (std::size_t t = 0; t < preds.size(); ++t) {
      total += preds[t].sum_double();
      save_tensor((out_dir / frame_file_name("pred", static_cast<int>(start + t), "cftn")).string(), preds[t]);
      ++written;
    }
  }
  nlohmann::json metrics{{"frames", written}, {"total_pred_count", total}};
  write_manifest(cfg.output_dir, "predict", cfg, metrics);
  std::printf("predict: wrote %d density tensors under %s\n", written, out_dir.c_str());
  return 0;
}

// ---- transfer ----

template <typename S>
int run_transfer(const RunConfig& cfg, const std::string& checkpoint_path) {
  if (cfg.dataset.empty() || cfg.dataset_b.empty())
    throw ConfigError("transfer: config needs 'dataset' (source) and 'dataset_b' (target)");
  const Dataset<S> target = load_dataset<S>(DatasetSpec::load(cfg.dataset_b));

  NetworkParams<S> source_net;
  if (!checkpoint_path.empty()) {
    source_net = load_checkpoint<S>(checkpoint_path).net;
  } else {
    // train on the source dataset first
    const DatasetSpec src_spec = DatasetSpec::load(cfg.dataset);
    const Dataset<S> src = load_dataset<S>(src_spec);
    const TrainOptions opts = cfg.train_options();
    NetworkParams<S> net = init_params<S>(cfg.network_config(src.height, src.width), cfg.seed);
    const PerspectiveMap<S>* persp = src.perspective ? &*src.perspective : nullptr;
    const RoiMask<S>* roi = src.roi ? &*src.roi : nullptr;
    auto trained = train(std::move(net), src.train_clips(cfg.clip_len), src_spec.rule, persp, roi, opts);
    source_net = std::move(trained.params);
  }

  TransferOptions topts;
  topts.adaptation_frames = cfg.adapt_frames;
  topts.adaptation_epochs = cfg.adapt_epochs;
  topts.lr_multiplier = cfg.adapt_lr_mult;
  topts.contiguous = cfg.adapt_contiguous;
  topts.seed = cfg.seed;

  auto result = transfer_run(source_net, target, cfg.train_options(), topts);
  fs::create_directories(cfg.output_dir);
  write_report_jsonl(result.pre, (fs::path(cfg.output_dir) / "report_pre.jsonl").string());
  write_report_jsonl(result.post, (fs::path(cfg.output_dir) / "report_post.jsonl").string());
  save_checkpoint((fs::path(cfg.output_dir) / "adapted.cfck").string(), result.adapted);
  nlohmann::json metrics{{"pre_mae", result.pre.mae},
                         {"post_mae", result.post.mae},
                         {"pre_mse", result.pre.mse},
                         {"post_mse", result.post.mse}};
  write_manifest(cfg.output_dir, "transfer", cfg, metrics);
  std::printf("transfer: MAE %.4f -> %.4f\n", result.pre.mae, result.post.mae);
  return 0;
}

// ---- gradcheck ----

int cmd_gradcheck(const CommonArgs& args) {
  RunConfig cfg = args.config_path.empty() ? RunConfig{} : RunConfig::load(args.config_path);
  // default tiny net unless the config explicitly says otherwise
  if (!cfg.raw().count("layers")) cfg.set("layers", "4,3");
  cfg.apply_overrides(args.overrides);
  if (!args.output_dir.empty()) cfg.set("output_dir", args.output_dir);

  NetworkConfig ncfg;
  ncfg.layer_channels = cfg.layers;
  ncfg.kernel_size = cfg.kernel;
  ncfg.direction = direction_from_name(cfg.direction);
  ncfg.input_channels = cfg.input_channels;
  ncfg.height = 8;
  ncfg.width = 8;
  ncfg.validate();
  const int t_len = 2;

  NetworkParams<double> net = init_params<double>(ncfg, cfg.seed);
  Rng rng(cfg.seed + 17);
  std::vector<Tensor<double>> frames, targets;
  for (int t = 0; t < t_len; ++t) {
    frames.push_back(Tensor<double>::random_uniform({ncfg.input_channels, 8, 8}, 0.0, 1.0, rng));
    targets.push_back(Tensor<double>::random_uniform({1, 8, 8}, 0.0, 0.2, rng));
  }

  auto named = named_parameters(net);
  std::vector<Tensor<double>> param_values;
  for (const auto& p : named) param_values.push_back(*p.tensor);

  auto build = [&](Tape<double>& tape, const std::vector<ValueId>& ids) {
    const NetworkParamIds wired = wire_parameter_ids(ncfg, ids);
    std::vector<ValueId> frame_ids, target_ids;
    for (const auto& f : frames) frame_ids.push_back(tape.constant(f));
    for (const auto& t : targets) target_ids.push_back(tape.constant(t));
    const auto fwd = forward_on_tape(tape, wired, ncfg, frame_ids);
    return loss_on_tape(tape, fwd.densities, target_ids);
  };

  GradCheckOptions gopts;
  gopts.seed = cfg.seed + 99;
  gopts.eps = 3e-4;  // deep graphs: keeps difference noise below the 1e-4 bar
  const GradCheckResult r = finite_diff_check<double>(build, param_values, gopts);
  const double threshold = 1e-4;
  const bool pass = r.max_rel_err < threshold;
  std::printf("%s max_rel_err=%.3e threshold=%.0e\n", pass ? "PASS" : "FAIL", r.max_rel_err, threshold);
  if (!cfg.output_dir.empty()) {
    nlohmann::json metrics{{"max_rel_err", r.max_rel_err}, {"pass", pass}};
    write_manifest(cfg.output_dir, "gradcheck", cfg, metrics);
  }
  if (!pass) throw NumericalError("gradient check failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crowdflow — spatiotemporal crowd density estimation"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  CommonArgs density_args, synth_args, train_args, eval_args, predict_args, transfer_args, grad_args;
  std::string eval_checkpoint, predict_checkpoint, predict_frames, transfer_checkpoint;
  bool eval_echo_gt = false, eval_dump = false;

  CLI::App* density = app.add_subcommand("density", "generate ground-truth density maps");
  add_common(density, density_args);
  CLI::App* synth = app.add_subcommand("synth", "write a synthetic pedestrian dataset");
  add_common(synth, synth_args);
  CLI::App* train_cmd = app.add_subcommand("train", "train a model");
  add_common(train_cmd, train_args);
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(eval_cmd, eval_args);
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint file");
  eval_cmd->add_flag("--echo-gt", eval_echo_gt, "stub predictor that echoes the ground truth");
  eval_cmd->add_flag("--dump-predictions", eval_dump, "also write predicted density tensors");
  CLI::App* predict = app.add_subcommand("predict", "predict density maps for raw frames");
  add_common(predict, predict_args);
  predict->add_option("--checkpoint", predict_checkpoint, "checkpoint file");
  predict->add_option("--frames", predict_frames, "frame glob, e.g. frames/*.pgm");
  CLI::App* transfer = app.add_subcommand("transfer", "train on source, adapt to target");
  add_common(transfer, transfer_args);
  transfer->add_option("--checkpoint", transfer_checkpoint, "pre-trained source checkpoint");
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the backward pass");
  add_common(gradcheck, grad_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (density->parsed()) return cmd_density(density_args);
    if (synth->parsed()) return cmd_synth(synth_args);
    if (train_cmd->parsed()) {
      const RunConfig cfg = load_config(train_args);
      return cfg.precision == "f64" ? run_train<double>(cfg) : run_train<float>(cfg);
    }
    if (eval_cmd->parsed()) {
      const RunConfig cfg = load_config(eval_args);
      return cfg.precision == "f64" ? run_eval<double>(cfg, eval_checkpoint, eval_echo_gt, eval_dump)
                                    : run_eval<float>(cfg, eval_checkpoint, eval_echo_gt, eval_dump);
    }
    if (predict->parsed()) {
      const RunConfig cfg = load_config(predict_args);
      return cfg.precision == "f64" ? run_predict<double>(cfg, predict_checkpoint, predict_frames)
                                    : run_predict<float>(cfg, predict_checkpoint, predict_frames);
    }
    if (transfer->parsed()) {
      const RunConfig cfg = load_config(transfer_args);
      return cfg.precision == "f64" ? run_transfer<double>(cfg, transfer_checkpoint)
                                    : run_transfer<float>(cfg, transfer_checkpoint);
    }
    if (gradcheck->parsed()) return cmd_gradcheck(grad_args);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: config: %s\n", e.what());
    return 1;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "error: numerical: %s\n", e.what());
    return 3;
  } catch (const DataError& e) {
    std::fprintf(stderr, "error: data: %s\n", e.what());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: unexpected: %s\n", e.what());
    return 2;
  }
  return 0;
}
