#pragma once

#include "artprobe/time_series.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace artprobe::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("artprobe-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
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

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n(rng);
  return m;
}

inline TimeSeries random_series(std::mt19937_64& rng, Eigen::Index frames, Eigen::Index channels, double rate,
                                Dtype dtype = Dtype::f64) {
  TimeSeries s;
  s.data = random_matrix(rng, frames, channels);
  if (dtype == Dtype::f32) s.data = s.data.cast<float>().cast<double>();
  s.rate_hz = rate;
  s.dtype = dtype;
  for (Eigen::Index c = 0; c < channels; ++c) s.channels.push_back("c" + std::to_string(c));
  return s;
}

}  // namespace artprobe::testing
