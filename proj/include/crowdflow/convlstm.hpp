#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "crowdflow/error.hpp"
#include "crowdflow/rng.hpp"
#include "crowdflow/tape.hpp"
#include "crowdflow/tensor.hpp"

namespace crowdflow {

// Convolutional LSTM cell:
//
//   i_t = sigmoid(W_xi * X_t + W_hi * H_{t-1} + W_ci o C_{t-1} + b_i)
//   f_t = sigmoid(W_xf * X_t + W_hf * H_{t-1} + W_cf o C_{t-1} + b_f)
//   C_t = f_t o C_{t-1} + i_t o tanh(W_xc * X_t + W_hc * H_{t-1} + b_c)
//   o_t = sigmoid(W_xo * X_t + W_ho * H_{t-1} + W_co o C_t + b_o)
//   H_t = o_t o tanh(C_t)
//
// '*' is 2D convolution with zero same-padding, 'o' the Hadamard product.
// The output gate's peephole reads the NEW cell state C_t. Peephole weights
// are per-position tensors of the state shape, which ties a parameter set to
// a fixed spatial size; patch-based inference keeps shapes fixed.

enum class Direction { Unidirectional, Bidirectional, NoTemporal };

inline const char* direction_name(Direction d) {
  switch (d) {
    case Direction::Unidirectional: return "unidirectional";
    case Direction::Bidirectional: return "bidirectional";
    case Direction::NoTemporal: return "no-temporal";
  }
  return "?";
}

inline Direction direction_from_name(const std::string& s) {
  if (s == "unidirectional") return Direction::Unidirectional;
  if (s == "bidirectional") return Direction::Bidirectional;
  if (s == "no-temporal") return Direction::NoTemporal;
  throw ConfigError("unknown direction: " + s);
}

struct NetworkConfig {
  std::vector<int> layer_channels{128, 64, 64, 64};
  int kernel_size = 5;
  Direction direction = Direction::Unidirectional;
  int input_channels = 1;
  int height = 0;  // spatial size the parameters are tied to
  int width = 0;

  void validate() const {
    if (layer_channels.empty()) throw ConfigError("network needs at least one layer");
    for (int c : layer_channels)
      if (c < 1) throw ConfigError("layer channels must be >= 1");
    if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("kernel size must be odd and >= 1");
    if (input_channels < 1) throw ConfigError("input channels must be >= 1");
    if (height < 1 || width < 1) throw ConfigError("network spatial size must be set");
  }

  // channels entering layer l (concat doubles them above a bidirectional layer)
  int layer_input_channels(int l) const {
    if (l == 0) return input_channels;
    const int mult = direction == Direction::Bidirectional ? 2 : 1;
    return layer_channels[static_cast<std::size_t>(l - 1)] * mult;
  }

  int top_feature_channels() const {
    const int mult = direction == Direction::Bidirectional ? 2 : 1;
    return layer_channels.back() * mult;
  }

  int num_layers() const { return static_cast<int>(layer_channels.size()); }
};

template <typename S>
struct CellParams {
  Tensor<S> w_xi, w_xf, w_xc, w_xo;  // [Ch,Cin,K,K]
  Tensor<S> w_hi, w_hf, w_hc, w_ho;  // [Ch,Ch,K,K]
  Tensor<S> w_ci, w_cf, w_co;        // [Ch,H,W] peepholes
  Tensor<S> b_i, b_f, b_c, b_o;      // [Ch]
};

template <typename S>
struct CellState {
  Tensor<S> h;
  Tensor<S> c;
};

template <typename S>
CellState<S> zero_state(int channels, int height, int width) {
  return {Tensor<S>::zeros({channels, height, width}), Tensor<S>::zeros({channels, height, width})};
}

template <typename S>
struct NetworkParams {
  NetworkConfig config;
  std::vector<CellParams<S>> layers;      // forward-in-time cells (the only set unless bidirectional)
  std::vector<CellParams<S>> layers_bwd;  // backward-in-time cells, bidirectional only
  Tensor<S> head_w;                       // [1,Ctop,1,1]
  Tensor<S> head_b;                       // [1]
};

template <typename S>
struct NamedParam {
  std::string name;
  Tensor<S>* tensor;
};

// Canonical parameter ordering shared by the optimizer, checkpoints and
// gradient plumbing.
template <typename S>
std::vector<NamedParam<S>> named_parameters(NetworkParams<S>& net) {
  std::vector<NamedParam<S>> out;
  auto add_cell = [&](const std::string& prefix, CellParams<S>& c) {
    out.push_back({prefix + ".w_xi", &c.w_xi});
    out.push_back({prefix + ".w_xf", &c.w_xf});
    out.push_back({prefix + ".w_xc", &c.w_xc});
    out.push_back({prefix + ".w_xo", &c.w_xo});
    out.push_back({prefix + ".w_hi", &c.w_hi});
    out.push_back({prefix + ".w_hf", &c.w_hf});
    out.push_back({prefix + ".w_hc", &c.w_hc});
    out.push_back({prefix + ".w_ho", &c.w_ho});
    out.push_back({prefix + ".w_ci", &c.w_ci});
    out.push_back({prefix + ".w_cf", &c.w_cf});
    out.push_back({prefix + ".w_co", &c.w_co});
    out.push_back({prefix + ".b_i", &c.b_i});
    out.push_back({prefix + ".b_f", &c.b_f});
    out.push_back({prefix + ".b_c", &c.b_c});
    out.push_back({prefix + ".b_o", &c.b_o});
  };
  for (std::size_t l = 0; l < net.layers.size(); ++l)
    add_cell("layer" + std::to_string(l) + ".fw", net.layers[l]);
  for (std::size_t l = 0; l < net.layers_bwd.size(); ++l)
    add_cell("layer" + std::to_string(l) + ".bw", net.layers_bwd[l]);
  out.push_back({"head.w", &net.head_w});
  out.push_back({"head.b", &net.head_b});
  return out;
}

// Kernels uniform in +-sqrt(6/(fan_in+fan_out)), peepholes zero, biases zero
// except the forget gate's, which starts at 1.
template <typename S>
NetworkParams<S> init_params(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const int k = config.kernel_size;

  auto glorot = [&](Shape shape, int fan_in, int fan_out) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    return Tensor<S>::random_uniform(std::move(shape), static_cast<S>(-bound), static_cast<S>(bound), rng);
  };
  auto make_cell = [&](int c_in, int ch) {
    CellParams<S> p;
    const int fan_x_in = c_in * k * k, fan_x_out = ch * k * k, fan_h = ch * k * k;
    for (Tensor<S>* w : {&p.w_xi, &p.w_xf, &p.w_xc, &p.w_xo})
      *w = glorot({ch, c_in, k, k}, fan_x_in, fan_x_out);
    for (Tensor<S>* w : {&p.w_hi, &p.w_hf, &p.w_hc, &p.w_ho})
      *w = glorot({ch, ch, k, k}, fan_h, fan_h);
    for (Tensor<S>* w : {&p.w_ci, &p.w_cf, &p.w_co})
      *w = Tensor<S>::zeros({ch, config.height, config.width});
    p.b_i = Tensor<S>::zeros({ch});
    p.b_f = Tensor<S>::full({ch}, S(1));
    p.b_c = Tensor<S>::zeros({ch});
    p.b_o = Tensor<S>::zeros({ch});
    return p;
  };

  NetworkParams<S> net;
  net.config = config;
  for (int l = 0; l < config.num_layers(); ++l) {
    const int c_in = config.layer_input_channels(l);
    const int ch = config.layer_channels[static_cast<std::size_t>(l)];
    net.layers.push_back(make_cell(c_in, ch));
    if (config.direction == Direction::Bidirectional) net.layers_bwd.push_back(make_cell(c_in, ch));
  }
  const int c_top = config.top_feature_channels();
  net.head_w = glorot({1, c_top, 1, 1}, c_top, 1);
  net.head_b = Tensor<S>::zeros({1});
  return net;
}

// ---- on-tape execution ----

struct CellParamIds {
  ValueId w_xi, w_xf, w_xc, w_xo;
  ValueId w_hi, w_hf, w_hc, w_ho;
  ValueId w_ci, w_cf, w_co;
  ValueId b_i, b_f, b_c, b_o;
};

struct CellStateIds {
  ValueId h = kNoValue;
  ValueId c = kNoValue;
};

struct NetworkParamIds {
  std::vector<CellParamIds> layers;
  std::vector<CellParamIds> layers_bwd;
  ValueId head_w = kNoValue;
  ValueId head_b = kNoValue;
  std::vector<ValueId> ordered;  // aligned with named_parameters()
};

template <typename S>
NetworkParamIds register_parameters(Tape<S>& tape, NetworkParams<S>& net) {
  NetworkParamIds ids;
  auto reg_cell = [&](CellParams<S>& c) {
    CellParamIds ci;
    ci.w_xi = tape.parameter(c.w_xi);
    ci.w_xf = tape.parameter(c.w_xf);
    ci.w_xc = tape.parameter(c.w_xc);
    ci.w_xo = tape.parameter(c.w_xo);
    ci.w_hi = tape.parameter(c.w_hi);
    ci.w_hf = tape.parameter(c.w_hf);
    ci.w_hc = tape.parameter(c.w_hc);
    ci.w_ho = tape.parameter(c.w_ho);
    ci.w_ci = tape.parameter(c.w_ci);
    ci.w_cf = tape.parameter(c.w_cf);
    ci.w_co = tape.parameter(c.w_co);
    ci.b_i = tape.parameter(c.b_i);
    ci.b_f = tape.parameter(c.b_f);
    ci.b_c = tape.parameter(c.b_c);
    ci.b_o = tape.parameter(c.b_o);
    for (ValueId v : {ci.w_xi, ci.w_xf, ci.w_xc, ci.w_xo, ci.w_hi, ci.w_hf, ci.w_hc, ci.w_ho,
                      ci.w_ci, ci.w_cf, ci.w_co, ci.b_i, ci.b_f, ci.b_c, ci.b_o})
      ids.ordered.push_back(v);
    return ci;
  };
  for (auto& c : net.layers) ids.layers.push_back(reg_cell(c));
  for (auto& c : net.layers_bwd) ids.layers_bwd.push_back(reg_cell(c));
  ids.head_w = tape.parameter(net.head_w);
  ids.head_b = tape.parameter(net.head_b);
  ids.ordered.push_back(ids.head_w);
  ids.ordered.push_back(ids.head_b);
  return ids;
}

// Rebuilds the id structure from leaves laid out in canonical parameter
// order (as produced by register_parameters or an external caller that
// registered named_parameters() in order).
inline NetworkParamIds wire_parameter_ids(const NetworkConfig& cfg,
                                          const std::vector<ValueId>& ordered) {
  NetworkParamIds ids;
  std::size_t k = 0;
  auto take = [&] {
    if (k >= ordered.size()) throw ContractError("wire_parameter_ids: too few ids");
    return ordered[k++];
  };
  auto take_cell = [&] {
    CellParamIds ci;
    ci.w_xi = take(); ci.w_xf = take(); ci.w_xc = take(); ci.w_xo = take();
    ci.w_hi = take(); ci.w_hf = take(); ci.w_hc = take(); ci.w_ho = take();
    ci.w_ci = take(); ci.w_cf = take(); ci.w_co = take();
    ci.b_i = take(); ci.b_f = take(); ci.b_c = take(); ci.b_o = take();
    return ci;
  };
  for (int l = 0; l < cfg.num_layers(); ++l) ids.layers.push_back(take_cell());
  if (cfg.direction == Direction::Bidirectional)
    for (int l = 0; l < cfg.num_layers(); ++l) ids.layers_bwd.push_back(take_cell());
  ids.head_w = take();
  ids.head_b = take();
  if (k != ordered.size()) throw ContractError("wire_parameter_ids: too many ids");
  ids.ordered = ordered;
  return ids;
}

// One recurrent step on the tape. This is the single definition of the gate
// equations; every forward path goes through it.
template <typename S>
CellStateIds cell_step(Tape<S>& tape, ValueId x, CellStateIds prev, const CellParamIds& p) {
  const ValueId i_pre =
      tape.add(tape.add(tape.conv2d(x, p.w_xi, p.b_i), tape.conv2d(prev.h, p.w_hi)),
               tape.hadamard(p.w_ci, prev.c));
  const ValueId i = tape.sigmoid(i_pre);

  const ValueId f_pre =
      tape.add(tape.add(tape.conv2d(x, p.w_xf, p.b_f), tape.conv2d(prev.h, p.w_hf)),
               tape.hadamard(p.w_cf, prev.c));
  const ValueId f = tape.sigmoid(f_pre);

  const ValueId g =
      tape.tanh(tape.add(tape.conv2d(x, p.w_xc, p.b_c), tape.conv2d(prev.h, p.w_hc)));
  const ValueId c = tape.add(tape.hadamard(f, prev.c), tape.hadamard(i, g));

  const ValueId o_pre =
      tape.add(tape.add(tape.conv2d(x, p.w_xo, p.b_o), tape.conv2d(prev.h, p.w_ho)),
               tape.hadamard(p.w_co, c));
  const ValueId o = tape.sigmoid(o_pre);

  return {tape.hadamard(o, tape.tanh(c)), c};
}

// Value-level step: runs the same graph on a throwaway tape.
template <typename S>
CellState<S> cell_step(const Tensor<S>& x, const CellState<S>& prev, const CellParams<S>& p) {
  Tape<S> tape;
  CellParamIds ids{tape.constant(p.w_xi), tape.constant(p.w_xf), tape.constant(p.w_xc),
                   tape.constant(p.w_xo), tape.constant(p.w_hi), tape.constant(p.w_hf),
                   tape.constant(p.w_hc), tape.constant(p.w_ho), tape.constant(p.w_ci),
                   tape.constant(p.w_cf), tape.constant(p.w_co), tape.constant(p.b_i),
                   tape.constant(p.b_f), tape.constant(p.b_c), tape.constant(p.b_o)};
  const CellStateIds out =
      cell_step(tape, tape.constant(x), CellStateIds{tape.constant(prev.h), tape.constant(prev.c)}, ids);
  return {tape.value(out.h), tape.value(out.c)};
}

namespace detail {

template <typename S>
void check_clip(const NetworkConfig& cfg, const std::vector<Tensor<S>>& frames) {
  if (frames.empty()) throw ContractError("forward: empty clip");
  for (const auto& f : frames) {
    if (f.rank() != 3 || f.extent(0) != cfg.input_channels || f.extent(1) != cfg.height ||
        f.extent(2) != cfg.width)
      throw DimensionError("forward: frame shape " + shape_str(f.shape()) +
                           " does not match network input [" + std::to_string(cfg.input_channels) +
                           "," + std::to_string(cfg.height) + "," + std::to_string(cfg.width) + "]");
  }
}

}  // namespace detail

template <typename S>
struct TapeForward {
  std::vector<ValueId> features;   // top-layer features per frame, pre-head
  std::vector<ValueId> densities;  // [1,H,W] per frame
};

// Unrolls the whole clip onto one tape; this is the training path.
// States start at zero. Layer k consumes layer k-1's hidden sequence; in the
// bidirectional case each layer concatenates its two directions before
// feeding upward, and in the no-temporal case the previous state is zero at
// every step.
template <typename S>
TapeForward<S> forward_on_tape(Tape<S>& tape, const NetworkParamIds& ids,
                               const NetworkConfig& cfg, const std::vector<ValueId>& frames) {
  const int t_len = static_cast<int>(frames.size());
  if (t_len == 0) throw ContractError("forward: empty clip");
  std::vector<ValueId> seq = frames;

  for (int l = 0; l < cfg.num_layers(); ++l) {
    const int ch = cfg.layer_channels[static_cast<std::size_t>(l)];
    const CellState<S> zero = zero_state<S>(ch, cfg.height, cfg.width);

    std::vector<ValueId> fwd(static_cast<std::size_t>(t_len));
    if (cfg.direction == Direction::NoTemporal) {
      for (int t = 0; t < t_len; ++t) {
        CellStateIds st{tape.constant(zero.h), tape.constant(zero.c)};
        fwd[static_cast<std::size_t>(t)] =
            cell_step(tape, seq[static_cast<std::size_t>(t)], st, ids.layers[static_cast<std::size_t>(l)]).h;
      }
      seq = std::move(fwd);
      continue;
    }

    CellStateIds st{tape.constant(zero.h), tape.constant(zero.c)};
    for (int t = 0; t < t_len; ++t) {
      st = cell_step(tape, seq[static_cast<std::size_t>(t)], st, ids.layers[static_cast<std::size_t>(l)]);
      fwd[static_cast<std::size_t>(t)] = st.h;
    }

    if (cfg.direction == Direction::Unidirectional) {
      seq = std::move(fwd);
      continue;
    }

    std::vector<ValueId> bwd(static_cast<std::size_t>(t_len));
    CellStateIds sb{tape.constant(zero.h), tape.constant(zero.c)};
    for (int t = t_len - 1; t >= 0; --t) {
      sb = cell_step(tape, seq[static_cast<std::size_t>(t)], sb, ids.layers_bwd[static_cast<std::size_t>(l)]);
      bwd[static_cast<std::size_t>(t)] = sb.h;
    }
    for (int t = 0; t < t_len; ++t)
      fwd[static_cast<std::size_t>(t)] =
          tape.concat_channels({fwd[static_cast<std::size_t>(t)], bwd[static_cast<std::size_t>(t)]});
    seq = std::move(fwd);
  }

  TapeForward<S> out;
  out.features = seq;
  out.densities.reserve(static_cast<std::size_t>(t_len));
  for (int t = 0; t < t_len; ++t)
    out.densities.push_back(tape.conv2d(seq[static_cast<std::size_t>(t)], ids.head_w, ids.head_b));
  return out;
}

template <typename S>
struct ForwardOutput {
  std::vector<Tensor<S>> features;
  std::vector<Tensor<S>> densities;
};

// Value-level forward with bounded memory: each cell step runs on its own
// short-lived tape and only the hidden sequences survive. The arithmetic is
// the op-for-op twin of forward_on_tape.
template <typename S>
ForwardOutput<S> forward_values(const NetworkParams<S>& net, const std::vector<Tensor<S>>& frames,
                                Direction direction) {
  const NetworkConfig& cfg = net.config;
  detail::check_clip(cfg, frames);
  const int t_len = static_cast<int>(frames.size());
  std::vector<Tensor<S>> seq = frames;

  for (int l = 0; l < cfg.num_layers(); ++l) {
    const int ch = cfg.layer_channels[static_cast<std::size_t>(l)];
    std::vector<Tensor<S>> fwd(static_cast<std::size_t>(t_len));

    if (direction == Direction::NoTemporal) {
      for (int t = 0; t < t_len; ++t)
        fwd[static_cast<std::size_t>(t)] =
            cell_step(seq[static_cast<std::size_t>(t)], zero_state<S>(ch, cfg.height, cfg.width),
                      net.layers[static_cast<std::size_t>(l)])
                .h;
      seq = std::move(fwd);
      continue;
    }

    CellState<S> st = zero_state<S>(ch, cfg.height, cfg.width);
    for (int t = 0; t < t_len; ++t) {
      st = cell_step(seq[static_cast<std::size_t>(t)], st, net.layers[static_cast<std::size_t>(l)]);
      fwd[static_cast<std::size_t>(t)] = st.h;
    }

    if (direction == Direction::Unidirectional) {
      seq = std::move(fwd);
      continue;
    }

    std::vector<Tensor<S>> bwd(static_cast<std::size_t>(t_len));
    CellState<S> sb = zero_state<S>(ch, cfg.height, cfg.width);
    for (int t = t_len - 1; t >= 0; --t) {
      sb = cell_step(seq[static_cast<std::size_t>(t)], sb, net.layers_bwd[static_cast<std::size_t>(l)]);
      bwd[static_cast<std::size_t>(t)] = sb.h;
    }
    for (int t = 0; t < t_len; ++t)
      fwd[static_cast<std::size_t>(t)] = concat_channels<S>(
          {fwd[static_cast<std::size_t>(t)], bwd[static_cast<std::size_t>(t)]});
    seq = std::move(fwd);
  }

  ForwardOutput<S> out;
  out.features = seq;
  out.densities.reserve(static_cast<std::size_t>(t_len));
  for (const auto& f : out.features) out.densities.push_back(conv2d(f, net.head_w, net.head_b));
  return out;
}

template <typename S>
ForwardOutput<S> forward_sequence(const NetworkParams<S>& net, const std::vector<Tensor<S>>& frames) {
  if (net.config.direction == Direction::Bidirectional)
    throw ContractError("forward_sequence: network is bidirectional, use forward_bidirectional");
  return forward_values(net, frames, Direction::Unidirectional);
}

template <typename S>
ForwardOutput<S> forward_bidirectional(const NetworkParams<S>& net, const std::vector<Tensor<S>>& frames) {
  if (net.config.direction != Direction::Bidirectional)
    throw ContractError("forward_bidirectional: network is not bidirectional");
  return forward_values(net, frames, Direction::Bidirectional);
}

// Frames processed independently: previous state forced to zero at every step.
template <typename S>
ForwardOutput<S> forward_nt(const NetworkParams<S>& net, const std::vector<Tensor<S>>& frames) {
  if (net.config.direction == Direction::Bidirectional)
    throw ContractError("forward_nt: network is bidirectional");
  return forward_values(net, frames, Direction::NoTemporal);
}

// Dispatch on the configured direction.
template <typename S>
ForwardOutput<S> predict_clip(const NetworkParams<S>& net, const std::vector<Tensor<S>>& frames) {
  return forward_values(net, frames, net.config.direction);
}

// ---- parameter-space transformations ----

namespace detail {

// Swaps the two input-channel halves of a [Cout,Cin,Kh,Kw] kernel bank.
template <typename S>
Tensor<S> swap_input_halves(const Tensor<S>& k) {
  const int c_in = k.extent(1);
  if (c_in % 2 != 0) throw ContractError("swap_input_halves: odd input channel count");
  Tensor<S> out(k.shape());
  const std::int64_t per = static_cast<std::int64_t>(k.extent(2)) * k.extent(3);
  const int half = c_in / 2;
  for (int o = 0; o < k.extent(0); ++o) {
    for (int c = 0; c < c_in; ++c) {
      const int src = c < half ? c + half : c - half;
      std::copy(k.data() + (static_cast<std::int64_t>(o) * c_in + src) * per,
                k.data() + (static_cast<std::int64_t>(o) * c_in + src + 1) * per,
                out.data() + (static_cast<std::int64_t>(o) * c_in + c) * per);
    }
  }
  return out;
}

}  // namespace detail

// Time-reversal twin of a bidirectional network: per layer the forward and
// backward parameter sets trade places, and because every concat above layer
// 0 presents its halves in the opposite order, the x-kernels (and the head)
// of the upper layers get their input-channel halves swapped. Running the
// twin on a reversed clip reproduces the original features reversed in time
// with channel halves swapped, and the original densities reversed.
template <typename S>
NetworkParams<S> reverse_direction_params(const NetworkParams<S>& net) {
  if (net.config.direction != Direction::Bidirectional)
    throw ContractError("reverse_direction_params: network is not bidirectional");
  NetworkParams<S> out = net;
  std::swap(out.layers, out.layers_bwd);
  for (int l = 1; l < out.config.num_layers(); ++l) {
    for (auto* cell : {&out.layers[static_cast<std::size_t>(l)], &out.layers_bwd[static_cast<std::size_t>(l)]}) {
      cell->w_xi = detail::swap_input_halves(cell->w_xi);
      cell->w_xf = detail::swap_input_halves(cell->w_xf);
      cell->w_xc = detail::swap_input_halves(cell->w_xc);
      cell->w_xo = detail::swap_input_halves(cell->w_xo);
    }
  }
  out.head_w = detail::swap_input_halves(out.head_w);
  return out;
}

// Re-targets a parameter set to a new spatial size by center-cropping or
// zero-padding the peephole tensors; convolution kernels are size-agnostic.
// Used when adapting a trained model to a dataset with different frame or
// patch extents.
template <typename S>
NetworkParams<S> resize_spatial(const NetworkParams<S>& net, int height, int width) {
  NetworkParams<S> out = net;
  out.config.height = height;
  out.config.width = width;
  auto resize = [&](const Tensor<S>& p) {
    const int ch = p.extent(0), h0 = p.extent(1), w0 = p.extent(2);
    Tensor<S> r({ch, height, width});
    const int copy_h = std::min(h0, height), copy_w = std::min(w0, width);
    const int sy = (h0 - copy_h) / 2, sx = (w0 - copy_w) / 2;
    const int dy = (height - copy_h) / 2, dx = (width - copy_w) / 2;
    for (int c = 0; c < ch; ++c)
      for (int y = 0; y < copy_h; ++y)
        for (int x = 0; x < copy_w; ++x) r(c, dy + y, dx + x) = p(c, sy + y, sx + x);
    return r;
  };
  for (auto* layers : {&out.layers, &out.layers_bwd}) {
    for (auto& cell : *layers) {
      cell.w_ci = resize(cell.w_ci);
      cell.w_cf = resize(cell.w_cf);
      cell.w_co = resize(cell.w_co);
    }
  }
  return out;
}

}  // namespace crowdflow
