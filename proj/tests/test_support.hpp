#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "crowdflow/rng.hpp"
#include "crowdflow/tensor.hpp"

namespace testutil {

template <typename S>
double max_abs_diff(const crowdflow::Tensor<S>& a, const crowdflow::Tensor<S>& b) {
  REQUIRE(a.shape() == b.shape());
  double worst = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
  return worst;
}

template <typename S>
bool bit_equal(const crowdflow::Tensor<S>& a, const crowdflow::Tensor<S>& b) {
  if (a.shape() != b.shape()) return false;
  for (std::int64_t i = 0; i < a.size(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

template <typename S>
crowdflow::Tensor<S> random_tensor(crowdflow::Shape shape, crowdflow::Rng& rng, double lo = -1.0,
                                   double hi = 1.0) {
  return crowdflow::Tensor<S>::random_uniform(std::move(shape), static_cast<S>(lo),
                                              static_cast<S>(hi), rng);
}

// Unique scratch directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("crowdflow_test_" + tag + "_" + std::to_string(counter()++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& rel = "") const {
    return rel.empty() ? path_.string() : (path_ / rel).string();
  }

 private:
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::filesystem::path path_;
};

}  // namespace testutil
