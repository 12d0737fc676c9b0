// tests/test_util.hpp

#ifndef AUD_TESTS_TEST_UTIL_HPP_
#define AUD_TESTS_TEST_UTIL_HPP_

#include "aud/common.hpp"
#include "aud/nn.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include <unistd.h>

namespace aud::test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("aud-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = normal(rng);
  return m;
}

// Central difference of `loss` with respect to one entry of `param`.
inline double central_difference(MatrixXd& param, Eigen::Index r, Eigen::Index c, const std::function<double()>& loss,
                                 double step = 1e-3) {
  const double saved = param(r, c);
  param(r, c) = saved + step;
  const double up = loss();
  param(r, c) = saved - step;
  const double down = loss();
  param(r, c) = saved;
  return (up - down) / (2.0 * step);
}

inline double relative_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Worst relative error between analytic gradients and central differences
// over `samples` random entries of every parameter.
inline double worst_gradient_error(const nn::ParameterList& params, const std::function<double()>& loss,
                                   const std::function<void()>& backprop, std::mt19937_64& rng, int samples = 6,
                                   double step = 1e-3) {
  backprop();
  std::vector<MatrixXd> analytic;
  for (auto* p : params) analytic.push_back(p->grad);
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& value = params[i]->value;
    std::uniform_int_distribution<Eigen::Index> pick_r(0, value.rows() - 1), pick_c(0, value.cols() - 1);
    for (int s = 0; s < samples; ++s) {
      const auto r = pick_r(rng), c = pick_c(rng);
      const double numeric = central_difference(value, r, c, loss, step);
      // Entries with negligible gradient only need absolute agreement.
      const double err = std::abs(numeric - analytic[i](r, c)) / std::max({std::abs(numeric), std::abs(analytic[i](r, c)), 1e-3});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace aud::test

#endif  // AUD_TESTS_TEST_UTIL_HPP_
