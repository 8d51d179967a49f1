#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "crowdflow/checkpoint.hpp"
#include "crowdflow/convlstm.hpp"
#include "crowdflow/data.hpp"
#include "crowdflow/error.hpp"
#include "crowdflow/eval.hpp"
#include "crowdflow/optim.hpp"

namespace crowdflow {

struct TrainOptions {
  AdamOptions adam;
  int clip_len = 10;
  int max_epochs = 100;
  int patience = 10;     // evaluation rounds without val-MAE improvement before stopping
  int eval_every = 1;    // epochs between validation rounds
  int batch_clips = 1;   // gradients averaged over this many clips per step
  int threads = 1;
  double val_fraction = 0.15;
  std::uint64_t seed = 1;
  double time_limit_sec = 0.0;  // 0 = unlimited
  int patch_size = 0;           // 0 = train on full frames
  int patches_per_clip = 4;     // random patch clips drawn per training clip
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_mae = -1.0;  // negative when this epoch had no validation round
};

template <typename S>
struct TrainResult {
  NetworkParams<S> params;  // best-on-validation parameters
  AdamState<S> adam;
  std::vector<EpochLog> log;
  double best_val_mae = -1.0;
  int epochs_run = 0;
  bool hit_time_limit = false;
};

namespace detail {

template <typename S>
struct TrainSample {
  std::vector<Tensor<S>> frames;
  std::vector<Tensor<S>> targets;
  std::vector<double> true_counts;
};

// Gradient of the clip loss in canonical parameter order, plus the loss value.
template <typename S>
std::pair<std::vector<Tensor<S>>, double> clip_gradient(NetworkParams<S>& net,
                                                        const TrainSample<S>& sample,
                                                        const Tensor<S>* roi) {
  Tape<S> tape;
  NetworkParamIds ids = register_parameters(tape, net);
  std::vector<ValueId> frame_ids, target_ids;
  for (const auto& f : sample.frames) frame_ids.push_back(tape.constant(f));
  for (const auto& t : sample.targets) target_ids.push_back(tape.constant(t));
  const ValueId roi_id = roi ? tape.constant(*roi) : kNoValue;

  const TapeForward<S> fwd = forward_on_tape(tape, ids, net.config, frame_ids);
  const ValueId loss = loss_on_tape(tape, fwd.densities, target_ids, roi_id);
  const double loss_value = static_cast<double>(tape.value(loss).value());

  const GradientSet<S> grads = tape.backward(loss);
  std::vector<Tensor<S>> ordered;
  ordered.reserve(ids.ordered.size());
  for (ValueId id : ids.ordered) ordered.push_back(grads.at(id));
  return {std::move(ordered), loss_value};
}

template <typename S>
double validation_mae(const NetworkParams<S>& net, const std::vector<TrainSample<S>*>& val,
                      const Tensor<S>* roi_grid) {
  std::vector<double> t_counts, p_counts;
  for (const TrainSample<S>* s : val) {
    const auto out = predict_clip(net, s->frames);
    for (std::size_t t = 0; t < out.densities.size(); ++t) {
      double pred;
      if (roi_grid)
        pred = (out.densities[t].array().template cast<double>() *
                roi_grid->array().template cast<double>())
                   .sum();
      else
        pred = out.densities[t].sum_double();
      t_counts.push_back(s->true_counts[t]);
      p_counts.push_back(pred);
    }
  }
  return metrics(t_counts, p_counts).first;
}

}  // namespace detail

// Trains `net` in place-of: returns the best-on-validation parameters. One
// optimizer step per batch of clips; batch gradients are computed in
// parallel worker threads and summed in clip order, so a given seed yields
// an identical run at any thread count.
template <typename S>
TrainResult<S> train(NetworkParams<S> net, const std::vector<VideoClip<S>>& clips,
                     const KernelRule& rule, std::type_identity_t<const PerspectiveMap<S>*> persp,
                     std::type_identity_t<const RoiMask<S>*> roi, TrainOptions opts,
                     const std::function<void(const EpochLog&)>& on_epoch = {}) {
  if (clips.empty()) throw ContractError("train: no clips");
  net.config.validate();
  if (opts.patch_size > 0 && roi) throw ContractError("train: ROI masking with patch training is not supported");

  const auto started = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  };

  Rng rng(opts.seed);

  // materialize training samples (and their density targets) once
  std::vector<detail::TrainSample<S>> samples;
  for (const VideoClip<S>& clip : clips) {
    const int h = clip.frames.front().extent(1), w = clip.frames.front().extent(2);
    if (opts.patch_size > 0) {
      const auto origins =
          random_patch_origins(h, w, opts.patch_size, opts.patches_per_clip, rng);
      for (const PatchOrigin& o : origins) {
        VideoClip<S> pc = crop_clip(clip, o, opts.patch_size);
        detail::TrainSample<S> s;
        s.targets = clip_targets<S>(pc, rule, nullptr, nullptr);
        s.frames = std::move(pc.frames);
        for (const auto& a : pc.annotations) s.true_counts.push_back(a.count());
        samples.push_back(std::move(s));
      }
    } else {
      detail::TrainSample<S> s;
      s.frames = clip.frames;
      s.targets = clip_targets(clip, rule, persp, roi);
      for (const auto& a : clip.annotations) s.true_counts.push_back(a.count());
      samples.push_back(std::move(s));
    }
  }

  // validation tail
  std::vector<detail::TrainSample<S>*> train_set, val_set;
  int val_count = 0;
  if (opts.val_fraction > 0 && samples.size() > 1)
    val_count = std::max(1, static_cast<int>(std::lround(opts.val_fraction * samples.size())));
  if (val_count >= static_cast<int>(samples.size())) val_count = static_cast<int>(samples.size()) - 1;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (static_cast<int>(i) >= static_cast<int>(samples.size()) - val_count)
      val_set.push_back(&samples[i]);
    else
      train_set.push_back(&samples[i]);
  }

  const Tensor<S>* roi_grid = roi ? &roi->grid : nullptr;

  auto named = named_parameters(net);
  std::vector<Shape> shapes;
  for (const auto& p : named) shapes.push_back(p.tensor->shape());
  TrainResult<S> result;
  result.adam = AdamState<S>::init(shapes, opts.adam);
  result.params = net;

  double best_mae = -1.0;
  int rounds_since_best = 0;
  const int threads = std::max(1, opts.threads);
  const int batch = std::max(1, opts.batch_clips);

  for (int epoch = 1; epoch <= opts.max_epochs; ++epoch) {
    std::vector<int> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);

    double epoch_loss = 0.0;
    std::int64_t loss_terms = 0;
    for (std::size_t pos = 0; pos < order.size(); pos += static_cast<std::size_t>(batch)) {
      const int n = static_cast<int>(std::min<std::size_t>(batch, order.size() - pos));
      std::vector<std::pair<std::vector<Tensor<S>>, double>> results(static_cast<std::size_t>(n));

      if (threads > 1 && n > 1) {
        std::vector<std::thread> pool;
        std::exception_ptr first_error;
        std::mutex error_mutex;
        for (int w = 0; w < std::min(threads, n); ++w) {
          pool.emplace_back([&, w] {
            try {
              for (int i = w; i < n; i += std::min(threads, n))
                results[static_cast<std::size_t>(i)] = detail::clip_gradient(
                    net, *train_set[static_cast<std::size_t>(order[pos + static_cast<std::size_t>(i)])],
                    roi_grid);
            } catch (...) {
              std::lock_guard<std::mutex> lock(error_mutex);
              if (!first_error) first_error = std::current_exception();
            }
          });
        }
        for (auto& th : pool) th.join();
        if (first_error) std::rethrow_exception(first_error);
      } else {
        for (int i = 0; i < n; ++i)
          results[static_cast<std::size_t>(i)] = detail::clip_gradient(
              net, *train_set[static_cast<std::size_t>(order[pos + static_cast<std::size_t>(i)])], roi_grid);
      }

      // average gradients in clip order
      std::vector<Tensor<S>>& acc = results[0].first;
      double batch_loss = results[0].second;
      for (int i = 1; i < n; ++i) {
        for (std::size_t p = 0; p < acc.size(); ++p)
          acc[p].array() += results[static_cast<std::size_t>(i)].first[p].array();
        batch_loss += results[static_cast<std::size_t>(i)].second;
      }
      if (!std::isfinite(batch_loss)) throw NumericalError("loss is not finite (NaN/Inf) at epoch " + std::to_string(epoch));
      if (n > 1)
        for (auto& g : acc) g.array() *= S(1) / static_cast<S>(n);

      std::vector<Tensor<S>*> params;
      std::vector<const Tensor<S>*> grads;
      for (std::size_t p = 0; p < named.size(); ++p) {
        params.push_back(named[p].tensor);
        grads.push_back(&acc[p]);
      }
      adam_step(params, grads, result.adam);
      epoch_loss += batch_loss;
      loss_terms += n;

      if (opts.time_limit_sec > 0 && elapsed() > opts.time_limit_sec) {
        result.hit_time_limit = true;
        break;
      }
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_terms ? epoch_loss / static_cast<double>(loss_terms) : 0.0;

    const bool eval_round = !val_set.empty() && (epoch % opts.eval_every == 0 || result.hit_time_limit ||
                                                 epoch == opts.max_epochs);
    if (eval_round) {
      log.val_mae = detail::validation_mae(net, val_set, roi_grid);
      if (best_mae < 0 || log.val_mae < best_mae) {
        best_mae = log.val_mae;
        result.params = net;
        rounds_since_best = 0;
      } else {
        ++rounds_since_best;
      }
    }
    result.log.push_back(log);
    result.epochs_run = epoch;
    if (on_epoch) on_epoch(log);

    if (result.hit_time_limit) break;
    if (!val_set.empty() && rounds_since_best >= opts.patience) break;
  }

  if (val_set.empty() || best_mae < 0) result.params = net;  // no validation: keep the last state
  result.best_val_mae = best_mae;
  return result;
}

// ---- transfer protocol ----

struct TransferOptions {
  int adaptation_frames = 50;
  int adaptation_epochs = 20;
  double lr_multiplier = 0.1;
  bool contiguous = true;  // adaptation window starts at the target train split's first frame
  std::uint64_t seed = 1;
};

template <typename S>
struct TransferResult {
  EvalReport pre;
  EvalReport post;
  NetworkParams<S> adapted;
};

// Adaptation clips from the target's train split: the first
// `adaptation_frames` frames, or a seeded contiguous window when
// contiguous=false.
template <typename S>
std::vector<VideoClip<S>> adaptation_clips(const Dataset<S>& target, const TransferOptions& topts,
                                           int clip_len) {
  if (target.spec.train_ranges.empty()) throw DataError("transfer: target has no train split");
  int available = 0;
  for (const auto& r : target.spec.train_ranges) available += r.end - r.begin;
  if (topts.adaptation_frames > available)
    throw DataError("transfer: adaptation budget " + std::to_string(topts.adaptation_frames) +
                    " exceeds available target train frames " + std::to_string(available));
  const SplitRange first = target.spec.train_ranges.front();
  int start = first.begin;
  if (!topts.contiguous) {
    Rng rng(topts.seed);
    const int span = first.end - first.begin - topts.adaptation_frames;
    if (span > 0) start = first.begin + rng.uniform_int(span + 1);
  }
  const int end = std::min(first.end, start + topts.adaptation_frames);
  if (end - start < topts.adaptation_frames)
    throw DataError("transfer: first target train range too short for the adaptation window");
  return target.clips({SplitRange{start, end}}, clip_len);
}

// Fine-tunes a source-trained model on a small adaptation set from the
// target domain and reports MAE before and after. All layers adapt; the
// learning rate is scaled by lr_multiplier. A spatial-size mismatch is
// bridged by center-crop/zero-pad of the peephole tensors.
template <typename S>
TransferResult<S> transfer_run(const NetworkParams<S>& source_net, const Dataset<S>& target,
                               TrainOptions adapt_opts, const TransferOptions& topts) {
  NetworkParams<S> net = source_net;
  if (net.config.height != target.height || net.config.width != target.width)
    net = resize_spatial(net, target.height, target.width);

  const RoiMask<S>* roi = target.roi ? &*target.roi : nullptr;
  const PerspectiveMap<S>* persp = target.perspective ? &*target.perspective : nullptr;
  const auto test = target.test_clips(adapt_opts.clip_len);

  TransferResult<S> result;
  result.pre = evaluate(make_predictor(net), test, roi, target.spec.frame_glob, "pre-adaptation");

  if (topts.adaptation_epochs > 0) {
    const auto adapt = adaptation_clips(target, topts, adapt_opts.clip_len);
    adapt_opts.adam.lr *= topts.lr_multiplier;
    adapt_opts.max_epochs = topts.adaptation_epochs;
    adapt_opts.val_fraction = 0.0;  // tiny adaptation sets train for the full budget
    adapt_opts.seed = topts.seed;
    auto trained = train(net, adapt, target.spec.rule, persp, roi, adapt_opts);
    result.adapted = std::move(trained.params);
  } else {
    result.adapted = net;
  }
  result.post =
      evaluate(make_predictor(result.adapted), test, roi, target.spec.frame_glob, "post-adaptation");
  return result;
}

}  // namespace crowdflow
