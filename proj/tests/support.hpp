#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "earl/earl.hpp"

namespace earl::testing {

inline Matrix normal_matrix(Rng& rng, Eigen::Index n, Eigen::Index p) {
  std::normal_distribution<double> N;
  Matrix X(n, p);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < p; ++j) X(i, j) = N(rng);
  return X;
}

inline Eigen::VectorXi random_arms(Rng& rng, Eigen::Index n) {
  std::bernoulli_distribution coin(0.5);
  Eigen::VectorXi A(n);
  for (Eigen::Index i = 0; i < n; ++i) A[i] = coin(rng) ? 1 : -1;
  return A;
}

inline Dataset random_dataset(Rng& rng, Eigen::Index n, Eigen::Index p) {
  std::normal_distribution<double> N;
  Vector Y(n);
  for (Eigen::Index i = 0; i < n; ++i) Y[i] = N(rng);
  return Dataset(normal_matrix(rng, n, p), random_arms(rng, n), std::move(Y));
}

inline NuisancePredictions constant_predictions(Eigen::Index n, double pi_pos, double q_pos, double q_neg) {
  NuisancePredictions p;
  p.pi_pos = Vector::Constant(n, pi_pos);
  p.pi_neg = Vector::Constant(n, 1.0 - pi_pos);
  p.q_pos = Vector::Constant(n, q_pos);
  p.q_neg = Vector::Constant(n, q_neg);
  return p;
}

/// A scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("earl-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
  const std::filesystem::path& path() const { return path_; }

  std::filesystem::path write(const std::string& name, const std::string& content) const {
    const auto p = path_ / name;
    std::ofstream(p) << content;
    return p;
  }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace earl::testing
