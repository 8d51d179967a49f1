#include <doctest.h>

#include <cmath>

#include "crowdflow/density.hpp"

#include "test_support.hpp"

using namespace crowdflow;

namespace {

AnnotationSet make_ann(std::vector<Point2> pts) {
  AnnotationSet a;
  a.points = std::move(pts);
  return a;
}

}  // namespace

TEST_SUITE_BEGIN("density");

TEST_CASE("empty annotation set gives an all-zero map") {
  const auto map = generate_density<double>(AnnotationSet{}, KernelRule::fixed(2.0), nullptr, nullptr, 16, 16);
  CHECK(count(map) == 0.0);
  for (std::int64_t i = 0; i < map.size(); ++i) CHECK(map.data()[i] == 0.0);
}

TEST_CASE("single centered kernel has unit mass and peaks at the point") {
  const auto map = generate_density<double>(make_ann({{32.0, 32.0}}), KernelRule::fixed(2.0),
                                            nullptr, nullptr, 64, 64);
  CHECK(count(map) == doctest::Approx(1.0).epsilon(1e-6));
  double best = -1;
  int by = -1, bx = -1;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      if (map(0, y, x) > best) {
        best = map(0, y, x);
        by = y;
        bx = x;
      }
  CHECK(by == 32);
  CHECK(bx == 32);
}

TEST_CASE("mass conservation over random annotation sets, both sigma modes") {
  Rng rng(71);
  Tensor<double> pg({1, 24, 20});
  for (std::int64_t i = 0; i < pg.size(); ++i) pg.data()[i] = rng.uniform(2.0, 12.0);
  const PerspectiveMap<double> persp(pg);

  for (int it = 0; it < 200; ++it) {
    const int n = rng.uniform_int(51);
    AnnotationSet ann;
    for (int i = 0; i < n; ++i) ann.points.push_back({rng.uniform(0.0, 20.0 - 1e-9), rng.uniform(0.0, 24.0 - 1e-9)});
    const bool fixed = it % 2 == 0;
    const KernelRule rule = fixed ? KernelRule::fixed(rng.uniform(0.4, 3.0))
                                  : KernelRule::perspective(0.3);
    const auto map = generate_density<double>(ann, rule, fixed ? nullptr : &persp, nullptr, 24, 20);
    CHECK(std::abs(count(map) - n) <= 1e-6 * std::max(n, 1));
  }
}

TEST_CASE("translation equivariance away from borders, fixed sigma") {
  const KernelRule rule = KernelRule::fixed(1.5);
  const int h = 40, w = 40, margin = 10;
  Rng rng(5);
  std::vector<Point2> pts;
  for (int i = 0; i < 6; ++i)
    pts.push_back({rng.uniform(margin, w - margin), rng.uniform(margin, h - margin)});
  const int dx = 3, dy = -2;
  std::vector<Point2> shifted;
  for (const auto& p : pts) shifted.push_back({p.x + dx, p.y + dy});

  const auto a = generate_density<double>(make_ann(pts), rule, nullptr, nullptr, h, w);
  const auto b = generate_density<double>(make_ann(shifted), rule, nullptr, nullptr, h, w);
  for (int y = margin; y < h - margin; ++y)
    for (int x = margin; x < w - margin; ++x) CHECK(a(0, y, x) == b(0, y + dy, x + dx));
}

TEST_CASE("adding a point never decreases any pixel") {
  Rng rng(9);
  std::vector<Point2> pts;
  for (int i = 0; i < 5; ++i) pts.push_back({rng.uniform(0.0, 31.0), rng.uniform(0.0, 31.0)});
  const auto before = generate_density<double>(make_ann(pts), KernelRule::fixed(2.0), nullptr, nullptr, 32, 32);
  pts.push_back({15.5, 15.5});
  const auto after = generate_density<double>(make_ann(pts), KernelRule::fixed(2.0), nullptr, nullptr, 32, 32);
  for (std::int64_t i = 0; i < before.size(); ++i) CHECK(after.data()[i] >= before.data()[i] - 1e-15);
}

TEST_CASE("larger sigma lowers the peak") {
  double last_peak = 1e9;
  for (double sigma : {0.6, 1.0, 1.7, 2.5, 4.0}) {
    const auto map = generate_density<double>(make_ann({{24.0, 24.0}}), KernelRule::fixed(sigma),
                                              nullptr, nullptr, 48, 48);
    double peak = 0;
    for (std::int64_t i = 0; i < map.size(); ++i) peak = std::max(peak, map.data()[i]);
    CHECK(peak <= last_peak + 1e-12);
    last_peak = peak;
  }
}

TEST_CASE("perspective rule takes sigma from the map at the head position") {
  // two heads over very different M(p): the high-M kernel must be wider
  Tensor<double> pg({1, 32, 32});
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) pg(0, y, x) = x < 16 ? 2.0 : 10.0;
  const PerspectiveMap<double> persp(pg);
  const auto narrow = generate_density<double>(make_ann({{8.0, 16.0}}), KernelRule::perspective(0.3),
                                               &persp, nullptr, 32, 32);
  const auto wide = generate_density<double>(make_ann({{24.0, 16.0}}), KernelRule::perspective(0.3),
                                             &persp, nullptr, 32, 32);
  double peak_narrow = 0, peak_wide = 0;
  for (std::int64_t i = 0; i < narrow.size(); ++i) peak_narrow = std::max(peak_narrow, narrow.data()[i]);
  for (std::int64_t i = 0; i < wide.size(); ++i) peak_wide = std::max(peak_wide, wide.data()[i]);
  CHECK(peak_wide < peak_narrow);
  CHECK(count(narrow) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(count(wide) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("ROI zeroes mass before renormalization") {
  Tensor<double> mg({1, 16, 16});
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) mg(0, y, x) = x < 8 ? 1.0 : 0.0;
  const RoiMask<double> roi(mg);
  // head inside the ROI near its edge: full unit mass must stay inside
  const auto map = generate_density<double>(make_ann({{6.0, 8.0}}), KernelRule::fixed(2.0),
                                            nullptr, &roi, 16, 16);
  CHECK(count(map, &roi) == doctest::Approx(1.0).epsilon(1e-6));
  for (int y = 0; y < 16; ++y)
    for (int x = 8; x < 16; ++x) CHECK(map(0, y, x) == 0.0);
}

TEST_CASE("count with and without ROI") {
  const auto zero = Tensor<double>::zeros({1, 8, 8});
  CHECK(count(zero) == 0.0);

  const auto c_map = Tensor<double>::full({1, 8, 8}, 0.25);
  CHECK(count(c_map) == doctest::Approx(0.25 * 64));

  Tensor<double> half({1, 8, 8});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) half(0, y, x) = y < 4 ? 1.0 : 0.0;
  const RoiMask<double> roi(half);
  CHECK(count(c_map, &roi) == doctest::Approx(0.25 * 32));
  CHECK_THROWS_AS(count(Tensor<double>::zeros({1, 4, 4}), &roi), DimensionError);
}

TEST_CASE("apply_roi") {
  Rng rng(3);
  const auto t = testutil::random_tensor<double>({1, 6, 6}, rng);
  const RoiMask<double> full(Tensor<double>::ones({1, 6, 6}));
  CHECK(testutil::bit_equal(apply_roi(t, full), t));
  const RoiMask<double> none(Tensor<double>::zeros({1, 6, 6}));
  const auto z = apply_roi(t, none);
  for (std::int64_t i = 0; i < z.size(); ++i) CHECK(z.data()[i] == 0.0);
}

TEST_CASE("generate rejects out-of-frame annotations") {
  CHECK_THROWS_AS(generate_density<double>(make_ann({{-0.5, 4.0}}), KernelRule::fixed(1.0),
                                           nullptr, nullptr, 8, 8),
                  DataError);
  CHECK_THROWS_AS(generate_density<double>(make_ann({{4.0, 8.0}}), KernelRule::fixed(1.0),
                                           nullptr, nullptr, 8, 8),
                  DataError);
}

TEST_CASE("kernel rule and map validation") {
  CHECK_THROWS_AS(KernelRule::fixed(0.0), DataError);
  CHECK_THROWS_AS(KernelRule::fixed(-1.0), DataError);
  CHECK_THROWS_AS(KernelRule::perspective(0.0), DataError);
  CHECK_THROWS_AS(PerspectiveMap<double>(Tensor<double>::zeros({1, 4, 4})), DataError);
  CHECK_THROWS_AS(RoiMask<double>(Tensor<double>::full({1, 4, 4}, 0.5)), DataError);
  // perspective rule without a perspective map
  CHECK_THROWS_AS(generate_density<double>(make_ann({{2.0, 2.0}}), KernelRule::perspective(0.3),
                                           nullptr, nullptr, 8, 8),
                  ContractError);
}

TEST_CASE("tiny perspective values clamp to the minimum sigma") {
  Tensor<double> pg = Tensor<double>::full({1, 16, 16}, 0.01);  // sigma would be 0.003
  const PerspectiveMap<double> persp(pg);
  const auto map = generate_density<double>(make_ann({{8.0, 8.0}}), KernelRule::perspective(0.3),
                                            &persp, nullptr, 16, 16);
  CHECK(count(map) == doctest::Approx(1.0).epsilon(1e-6));
  // sigma clamped at 0.5: more than one pixel must carry mass
  int nonzero = 0;
  for (std::int64_t i = 0; i < map.size(); ++i) nonzero += map.data()[i] > 1e-9 ? 1 : 0;
  CHECK(nonzero > 1);
}

TEST_SUITE_END();
