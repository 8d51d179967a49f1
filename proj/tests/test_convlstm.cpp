#include <doctest.h>

#include <cmath>

#include "crowdflow/convlstm.hpp"
#include "crowdflow/gradcheck.hpp"
#include "crowdflow/optim.hpp"

#include "oracles.hpp"
#include "test_support.hpp"

using namespace crowdflow;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

CellParams<double> zero_cell(int c_in, int ch, int k, int h, int w) {
  CellParams<double> p;
  for (Tensor<double>* t : {&p.w_xi, &p.w_xf, &p.w_xc, &p.w_xo})
    *t = Tensor<double>::zeros({ch, c_in, k, k});
  for (Tensor<double>* t : {&p.w_hi, &p.w_hf, &p.w_hc, &p.w_ho})
    *t = Tensor<double>::zeros({ch, ch, k, k});
  for (Tensor<double>* t : {&p.w_ci, &p.w_cf, &p.w_co}) *t = Tensor<double>::zeros({ch, h, w});
  for (Tensor<double>* t : {&p.b_i, &p.b_f, &p.b_c, &p.b_o}) *t = Tensor<double>::zeros({ch});
  return p;
}

CellParams<double> random_cell(int c_in, int ch, int k, int h, int w, Rng& rng) {
  CellParams<double> p = zero_cell(c_in, ch, k, h, w);
  for (Tensor<double>* t : {&p.w_xi, &p.w_xf, &p.w_xc, &p.w_xo, &p.w_hi, &p.w_hf, &p.w_hc, &p.w_ho,
                            &p.w_ci, &p.w_cf, &p.w_co, &p.b_i, &p.b_f, &p.b_c, &p.b_o})
    *t = random_tensor<double>(t->shape(), rng, -0.5, 0.5);
  return p;
}

std::vector<Tensor<double>> random_clip(int t_len, int c, int h, int w, Rng& rng) {
  std::vector<Tensor<double>> frames;
  for (int t = 0; t < t_len; ++t) frames.push_back(random_tensor<double>({c, h, w}, rng, 0.0, 1.0));
  return frames;
}

}  // namespace

TEST_SUITE_BEGIN("convlstm");

TEST_CASE("cell with all-zero parameters: gates 0.5, state stays zero") {
  const auto p = zero_cell(1, 2, 3, 4, 4);
  const auto x = Tensor<double>::ones({1, 4, 4});
  const auto out = cell_step(x, zero_state<double>(2, 4, 4), p);
  for (std::int64_t i = 0; i < out.c.size(); ++i) {
    CHECK(out.c.data()[i] == 0.0);
    CHECK(out.h.data()[i] == 0.0);
  }
}

TEST_CASE("zero convolutions reduce the cell to scalar recursions") {
  // C_new = 0.5 c, H = 0.5 tanh(0.5 c)
  const auto p = zero_cell(1, 1, 3, 2, 2);
  const auto x = Tensor<double>::ones({1, 2, 2});
  CellState<double> prev = zero_state<double>(1, 2, 2);
  const double c0 = 0.8;
  prev.c = Tensor<double>::full({1, 2, 2}, c0);
  const auto out = cell_step(x, prev, p);
  for (std::int64_t i = 0; i < out.c.size(); ++i) {
    CHECK(out.c.data()[i] == doctest::Approx(0.5 * c0).epsilon(1e-15));
    CHECK(out.h.data()[i] == doctest::Approx(0.5 * std::tanh(0.5 * c0)).epsilon(1e-15));
  }
}

TEST_CASE("forget bias 1 with zero weights decays the cell state by sigmoid(1)") {
  auto p = zero_cell(1, 1, 3, 2, 2);
  p.b_f = Tensor<double>::ones({1});
  CellState<double> prev = zero_state<double>(1, 2, 2);
  prev.c = Tensor<double>::full({1, 2, 2}, 2.0);
  const auto out = cell_step(Tensor<double>::zeros({1, 2, 2}), prev, p);
  const double sig1 = 1.0 / (1.0 + std::exp(-1.0));
  CHECK(out.c(0, 0, 0) == doctest::Approx(2.0 * sig1).epsilon(1e-15));
}

TEST_CASE("cell_step matches the naive gate-equation oracle") {
  Rng rng(51);
  for (int it = 0; it < 20; ++it) {
    const int c_in = 1 + rng.uniform_int(2);
    const int ch = 1 + rng.uniform_int(2);
    const int h = 2 + rng.uniform_int(5);
    const int w = 2 + rng.uniform_int(5);
    const auto p = random_cell(c_in, ch, 5, h, w, rng);
    const auto x = random_tensor<double>({c_in, h, w}, rng);
    CellState<double> prev{random_tensor<double>({ch, h, w}, rng),
                           random_tensor<double>({ch, h, w}, rng)};
    const auto got = cell_step(x, prev, p);
    const auto want = oracle::cell_step(x, prev, p);
    CHECK(max_abs_diff(got.h, want.h) < 1e-12);
    CHECK(max_abs_diff(got.c, want.c) < 1e-12);
  }
}

TEST_CASE("gate activations stay in range") {
  Rng rng(53);
  const auto p = random_cell(1, 2, 5, 6, 6, rng);
  const auto x = random_tensor<double>({1, 6, 6}, rng, -2.0, 2.0);
  CellState<double> prev{random_tensor<double>({2, 6, 6}, rng, -1.0, 1.0),
                         random_tensor<double>({2, 6, 6}, rng, -1.0, 1.0)};
  // i gate from its definition
  const auto i = sigmoid(add(add(conv2d(x, p.w_xi, p.b_i), conv2d(prev.h, p.w_hi)),
                             hadamard(p.w_ci, prev.c)));
  for (std::int64_t k = 0; k < i.size(); ++k) {
    CHECK(i.data()[k] > 0.0);
    CHECK(i.data()[k] < 1.0);
  }
  const auto out = cell_step(x, prev, p);
  for (std::int64_t k = 0; k < out.h.size(); ++k) {
    CHECK(std::isfinite(out.h.data()[k]));
    CHECK(std::abs(out.h.data()[k]) < 1.0);  // o in (0,1), tanh in (-1,1)
  }

  // extreme inputs saturate without overflowing
  const auto wild_x = random_tensor<double>({1, 6, 6}, rng, -1e4, 1e4);
  const CellState<double> wild_prev{random_tensor<double>({2, 6, 6}, rng, -1e4, 1e4),
                                    random_tensor<double>({2, 6, 6}, rng, -1e4, 1e4)};
  const auto wild = cell_step(wild_x, wild_prev, p);
  for (std::int64_t k = 0; k < wild.h.size(); ++k) {
    CHECK(std::isfinite(wild.h.data()[k]));
    CHECK(std::isfinite(wild.c.data()[k]));
  }
}

TEST_CASE("tape and value forward paths agree bit for bit") {
  Rng rng(57);
  for (Direction dir : {Direction::Unidirectional, Direction::Bidirectional, Direction::NoTemporal}) {
    NetworkConfig cfg;
    cfg.layer_channels = {3, 2};
    cfg.direction = dir;
    cfg.height = 5;
    cfg.width = 6;
    NetworkParams<double> net = init_params<double>(cfg, 7);
    const auto frames = random_clip(3, 1, 5, 6, rng);

    const auto eager = forward_values(net, frames, dir);

    Tape<double> tape;
    const NetworkParamIds ids = register_parameters(tape, net);
    std::vector<ValueId> frame_ids;
    for (const auto& f : frames) frame_ids.push_back(tape.constant(f));
    const auto taped = forward_on_tape(tape, ids, cfg, frame_ids);

    REQUIRE(taped.densities.size() == eager.densities.size());
    for (std::size_t t = 0; t < eager.densities.size(); ++t) {
      CHECK(testutil::bit_equal(tape.value(taped.densities[t]), eager.densities[t]));
      CHECK(testutil::bit_equal(tape.value(taped.features[t]), eager.features[t]));
    }
  }
}

TEST_CASE("T=1 degeneracy: no-temporal equals the sequence forward bit-exact") {
  Rng rng(61);
  NetworkConfig cfg;
  cfg.layer_channels = {4, 3};
  cfg.height = 6;
  cfg.width = 6;
  NetworkParams<double> net = init_params<double>(cfg, 11);
  const auto frames = random_clip(1, 1, 6, 6, rng);
  const auto seq = forward_sequence(net, frames);
  const auto nt = forward_nt(net, frames);
  CHECK(testutil::bit_equal(seq.densities[0], nt.densities[0]));
}

TEST_CASE("no-temporal equals per-frame sequence forward exactly") {
  Rng rng(67);
  NetworkConfig cfg;
  cfg.layer_channels = {3};
  cfg.height = 5;
  cfg.width = 5;
  NetworkParams<double> net = init_params<double>(cfg, 13);
  const auto frames = random_clip(4, 1, 5, 5, rng);
  const auto nt = forward_nt(net, frames);
  for (int t = 0; t < 4; ++t) {
    const auto single = forward_sequence(net, {frames[static_cast<std::size_t>(t)]});
    CHECK(testutil::bit_equal(nt.densities[static_cast<std::size_t>(t)], single.densities[0]));
  }
}

TEST_CASE("state carry is exactly the forget path once recurrent weights vanish") {
  // With all state-to-state and peephole weights zero, the only remaining
  // temporal coupling is f o C_{t-1}. Killing the cell-input branch
  // (w_xc = 0, b_c = 0) pins C at zero, and the sequence path then matches
  // the no-temporal path bit for bit; restoring w_xc separates them again.
  Rng rng(71);
  NetworkConfig cfg;
  cfg.layer_channels = {3, 2};
  cfg.height = 5;
  cfg.width = 5;
  NetworkParams<double> net = init_params<double>(cfg, 17);
  for (auto& cell : net.layers) {
    for (Tensor<double>* t : {&cell.w_hi, &cell.w_hf, &cell.w_hc, &cell.w_ho, &cell.w_ci,
                              &cell.w_cf, &cell.w_co})
      *t = Tensor<double>::zeros(t->shape());
  }
  NetworkParams<double> no_carry = net;
  for (auto& cell : no_carry.layers) {
    cell.w_xc = Tensor<double>::zeros(cell.w_xc.shape());
    cell.b_c = Tensor<double>::zeros(cell.b_c.shape());
  }
  const auto frames = random_clip(3, 1, 5, 5, rng);

  const auto seq0 = forward_sequence(no_carry, frames);
  const auto nt0 = forward_nt(no_carry, frames);
  for (int t = 0; t < 3; ++t)
    CHECK(testutil::bit_equal(seq0.densities[static_cast<std::size_t>(t)],
                              nt0.densities[static_cast<std::size_t>(t)]));

  const auto seq = forward_sequence(net, frames);
  const auto nt = forward_nt(net, frames);
  CHECK(max_abs_diff(seq.densities[2], nt.densities[2]) > 0.0);
}

TEST_CASE("no-temporal forward is permutation-equivariant") {
  Rng rng(73);
  NetworkConfig cfg;
  cfg.layer_channels = {2};
  cfg.height = 4;
  cfg.width = 4;
  NetworkParams<double> net = init_params<double>(cfg, 19);
  auto frames = random_clip(4, 1, 4, 4, rng);
  const auto base = forward_nt(net, frames);
  std::vector<Tensor<double>> permuted{frames[2], frames[0], frames[3], frames[1]};
  const auto out = forward_nt(net, permuted);
  CHECK(testutil::bit_equal(out.densities[0], base.densities[2]));
  CHECK(testutil::bit_equal(out.densities[1], base.densities[0]));
  CHECK(testutil::bit_equal(out.densities[2], base.densities[3]));
  CHECK(testutil::bit_equal(out.densities[3], base.densities[1]));
}

TEST_CASE("unidirectional forward is causal: future frames cannot touch the past") {
  Rng rng(79);
  NetworkConfig cfg;
  cfg.layer_channels = {3, 2};
  cfg.height = 5;
  cfg.width = 5;
  NetworkParams<double> net = init_params<double>(cfg, 23);
  auto frames = random_clip(4, 1, 5, 5, rng);
  const auto base = forward_sequence(net, frames);

  const int t_perturb = 2;
  frames[t_perturb] = random_tensor<double>({1, 5, 5}, rng, 0.0, 1.0);
  const auto modified = forward_sequence(net, frames);
  for (int t = 0; t < t_perturb; ++t)
    CHECK(testutil::bit_equal(base.densities[static_cast<std::size_t>(t)],
                              modified.densities[static_cast<std::size_t>(t)]));
  CHECK_FALSE(testutil::bit_equal(base.densities[t_perturb], modified.densities[t_perturb]));
}

TEST_CASE("bidirectional reversal symmetry, single layer") {
  Rng rng(83);
  NetworkConfig cfg;
  cfg.layer_channels = {3};
  cfg.direction = Direction::Bidirectional;
  cfg.height = 5;
  cfg.width = 4;
  NetworkParams<double> net = init_params<double>(cfg, 29);
  const int t_len = 4;
  const auto frames = random_clip(t_len, 1, 5, 4, rng);

  const auto fwd = forward_bidirectional(net, frames);
  const NetworkParams<double> twin = reverse_direction_params(net);
  std::vector<Tensor<double>> reversed(frames.rbegin(), frames.rend());
  const auto rev = forward_bidirectional(twin, reversed);

  const int ch = 3;
  for (int t = 0; t < t_len; ++t) {
    const auto& orig = fwd.features[static_cast<std::size_t>(t)];
    const auto& mirr = rev.features[static_cast<std::size_t>(t_len - 1 - t)];
    // channel halves swapped
    CHECK(max_abs_diff(slice_channels(orig, 0, ch), slice_channels(mirr, ch, 2 * ch)) < 1e-12);
    CHECK(max_abs_diff(slice_channels(orig, ch, 2 * ch), slice_channels(mirr, 0, ch)) < 1e-12);
    // densities reverse exactly (head input-halves swapped too)
    CHECK(max_abs_diff(fwd.densities[static_cast<std::size_t>(t)],
                       rev.densities[static_cast<std::size_t>(t_len - 1 - t)]) < 1e-12);
  }
}

TEST_CASE("bidirectional reversal symmetry, stacked layers") {
  Rng rng(89);
  NetworkConfig cfg;
  cfg.layer_channels = {3, 2};
  cfg.direction = Direction::Bidirectional;
  cfg.height = 4;
  cfg.width = 5;
  NetworkParams<double> net = init_params<double>(cfg, 31);
  const int t_len = 3;
  const auto frames = random_clip(t_len, 1, 4, 5, rng);

  const auto fwd = forward_bidirectional(net, frames);
  const auto twin = reverse_direction_params(net);
  std::vector<Tensor<double>> reversed(frames.rbegin(), frames.rend());
  const auto rev = forward_bidirectional(twin, reversed);

  const int ch = 2;  // top layer channels
  for (int t = 0; t < t_len; ++t) {
    const auto& orig = fwd.features[static_cast<std::size_t>(t)];
    const auto& mirr = rev.features[static_cast<std::size_t>(t_len - 1 - t)];
    CHECK(max_abs_diff(slice_channels(orig, 0, ch), slice_channels(mirr, ch, 2 * ch)) < 1e-12);
    CHECK(max_abs_diff(slice_channels(orig, ch, 2 * ch), slice_channels(mirr, 0, ch)) < 1e-12);
    CHECK(max_abs_diff(fwd.densities[static_cast<std::size_t>(t)],
                       rev.densities[static_cast<std::size_t>(t_len - 1 - t)]) < 1e-12);
  }
}

TEST_CASE("zeroed backward cells leave the backward feature half exactly zero") {
  Rng rng(97);
  NetworkConfig cfg;
  cfg.layer_channels = {3};
  cfg.direction = Direction::Bidirectional;
  cfg.height = 4;
  cfg.width = 4;
  NetworkParams<double> net = init_params<double>(cfg, 37);
  for (auto& cell : net.layers_bwd) cell = zero_cell(1, 3, 5, 4, 4);
  const auto frames = random_clip(3, 1, 4, 4, rng);
  const auto out = forward_bidirectional(net, frames);
  for (const auto& f : out.features) {
    const auto back_half = slice_channels(f, 3, 6);
    for (std::int64_t i = 0; i < back_half.size(); ++i) CHECK(back_half.data()[i] == 0.0);
  }
}

TEST_CASE("init_params is deterministic and shaped by the config") {
  NetworkConfig cfg;
  cfg.layer_channels = {8, 4};
  cfg.direction = Direction::Bidirectional;
  cfg.height = 6;
  cfg.width = 7;
  NetworkParams<float> a = init_params<float>(cfg, 12345);
  NetworkParams<float> b = init_params<float>(cfg, 12345);
  NetworkParams<float> c = init_params<float>(cfg, 54321);
  auto na = named_parameters(a), nb = named_parameters(b), nc = named_parameters(c);
  bool any_differs = false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    CHECK(testutil::bit_equal(*na[i].tensor, *nb[i].tensor));
    if (!testutil::bit_equal(*na[i].tensor, *nc[i].tensor)) any_differs = true;
  }
  CHECK(any_differs);

  // layer 1 consumes the concat of both directions of layer 0
  CHECK(a.layers[1].w_xi.shape() == Shape{4, 16, 5, 5});
  CHECK(a.head_w.shape() == Shape{1, 8, 1, 1});
  CHECK(a.layers[0].w_ci.shape() == Shape{8, 6, 7});

  // kernels inside the fan bound, peepholes zero, forget bias one
  const double bound = std::sqrt(6.0 / (1 * 25 + 8 * 25));
  for (std::int64_t i = 0; i < a.layers[0].w_xi.size(); ++i)
    CHECK(std::abs(a.layers[0].w_xi.data()[i]) <= bound);
  for (std::int64_t i = 0; i < a.layers[0].w_ci.size(); ++i)
    CHECK(a.layers[0].w_ci.data()[i] == 0.0f);
  for (int ch = 0; ch < 8; ++ch) {
    CHECK(a.layers[0].b_f(ch) == 1.0f);
    CHECK(a.layers[0].b_i(ch) == 0.0f);
  }
}

TEST_CASE("default four-layer config initializes within the fan bounds") {
  NetworkConfig cfg;  // default 128,64,64,64
  cfg.height = 8;
  cfg.width = 8;
  NetworkParams<float> net = init_params<float>(cfg, 77);
  REQUIRE(net.layers.size() == 4);
  CHECK(net.layers[0].w_xi.shape() == Shape{128, 1, 5, 5});
  CHECK(net.layers[1].w_xi.shape() == Shape{64, 128, 5, 5});
  CHECK(net.layers[3].w_hi.shape() == Shape{64, 64, 5, 5});
  CHECK(net.head_w.shape() == Shape{1, 64, 1, 1});
  for (std::size_t l = 0; l < 4; ++l) {
    const auto& w = net.layers[l].w_xi;
    const int fan_in = w.extent(1) * 25, fan_out = w.extent(0) * 25;
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    float lo = 0, hi = 0;
    for (std::int64_t i = 0; i < w.size(); ++i) {
      CHECK(std::abs(w.data()[i]) <= bound);
      lo = std::min(lo, w.data()[i]);
      hi = std::max(hi, w.data()[i]);
    }
    // the draw actually spans the interval
    CHECK(lo < -0.5 * bound);
    CHECK(hi > 0.5 * bound);
  }
}

TEST_CASE("full-model gradient check, unidirectional two layers") {
  NetworkConfig cfg;
  cfg.layer_channels = {4, 3};
  cfg.height = 6;
  cfg.width = 6;
  NetworkParams<double> net = init_params<double>(cfg, 41);
  Rng rng(43);
  const auto frames = random_clip(2, 1, 6, 6, rng);
  std::vector<Tensor<double>> targets;
  for (int t = 0; t < 2; ++t) targets.push_back(random_tensor<double>({1, 6, 6}, rng, 0.0, 0.2));

  auto named = named_parameters(net);
  std::vector<Tensor<double>> params;
  for (const auto& p : named) params.push_back(*p.tensor);

  auto build = [&](Tape<double>& tape, const std::vector<ValueId>& ids) {
    const NetworkParamIds wired = wire_parameter_ids(cfg, ids);
    std::vector<ValueId> frame_ids, target_ids;
    for (const auto& f : frames) frame_ids.push_back(tape.constant(f));
    for (const auto& t : targets) target_ids.push_back(tape.constant(t));
    const auto fwd = forward_on_tape(tape, wired, cfg, frame_ids);
    return loss_on_tape(tape, fwd.densities, target_ids);
  };
  GradCheckOptions opts;
  opts.coords_per_param = 8;
  opts.seed = 4242;
  opts.eps = 3e-4;
  const auto r = finite_diff_check<double>(build, params, opts);
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("forward contract errors") {
  NetworkConfig cfg;
  cfg.layer_channels = {2};
  cfg.height = 4;
  cfg.width = 4;
  NetworkParams<double> net = init_params<double>(cfg, 3);
  CHECK_THROWS_AS(forward_sequence(net, {}), ContractError);
  CHECK_THROWS_AS(forward_sequence(net, {Tensor<double>::ones({1, 3, 4})}), DimensionError);
  CHECK_THROWS_AS(forward_bidirectional(net, {Tensor<double>::ones({1, 4, 4})}), ContractError);

  NetworkConfig bad;
  bad.layer_channels = {};
  bad.height = 4;
  bad.width = 4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  NetworkConfig even;
  even.layer_channels = {2};
  even.kernel_size = 4;
  even.height = 4;
  even.width = 4;
  CHECK_THROWS_AS(even.validate(), ConfigError);
}

TEST_CASE("resize_spatial center-crops and zero-pads peepholes") {
  NetworkConfig cfg;
  cfg.layer_channels = {1};
  cfg.height = 4;
  cfg.width = 4;
  NetworkParams<double> net = init_params<double>(cfg, 5);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) net.layers[0].w_ci(0, y, x) = 10 * y + x;

  const auto grown = resize_spatial(net, 6, 6);
  CHECK(grown.config.height == 6);
  CHECK(grown.layers[0].w_ci.shape() == Shape{1, 6, 6});
  CHECK(grown.layers[0].w_ci(0, 1, 1) == 0.0);   // new border
  CHECK(grown.layers[0].w_ci(0, 1, 0) == 0.0);
  CHECK(grown.layers[0].w_ci(0, 1 + 0, 1 + 0) == net.layers[0].w_ci(0, 0, 0));
  CHECK(grown.layers[0].w_ci(0, 1 + 3, 1 + 3) == net.layers[0].w_ci(0, 3, 3));

  const auto shrunk = resize_spatial(net, 2, 2);
  CHECK(shrunk.layers[0].w_ci(0, 0, 0) == net.layers[0].w_ci(0, 1, 1));
  CHECK(shrunk.layers[0].w_ci(0, 1, 1) == net.layers[0].w_ci(0, 2, 2));

  // kernels are untouched
  CHECK(testutil::bit_equal(grown.layers[0].w_xi, net.layers[0].w_xi));
}

TEST_CASE("wire_parameter_ids mirrors register_parameters") {
  NetworkConfig cfg;
  cfg.layer_channels = {2, 2};
  cfg.direction = Direction::Bidirectional;
  cfg.height = 4;
  cfg.width = 4;
  NetworkParams<double> net = init_params<double>(cfg, 7);
  Tape<double> tape;
  const NetworkParamIds reg = register_parameters(tape, net);
  const NetworkParamIds wired = wire_parameter_ids(cfg, reg.ordered);
  CHECK(wired.layers[0].w_xi == reg.layers[0].w_xi);
  CHECK(wired.layers[1].b_o == reg.layers[1].b_o);
  CHECK(wired.layers_bwd[1].w_co == reg.layers_bwd[1].w_co);
  CHECK(wired.head_w == reg.head_w);
  CHECK(wired.head_b == reg.head_b);
  CHECK_THROWS_AS(wire_parameter_ids(cfg, std::vector<ValueId>(5, 0)), ContractError);
}

TEST_SUITE_END();
