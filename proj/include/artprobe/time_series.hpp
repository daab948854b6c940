#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace artprobe {

// Row-major so that a row is one time frame, matching the on-disk layout.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class Dtype { f32, f64 };

std::size_t dtype_size(Dtype d);
std::string to_string(Dtype d);
Dtype parse_dtype(const std::string& s);

// A rate-stamped frames x channels matrix. Values are held as f64; `dtype`
// records the storage precision used on disk.
struct TimeSeries {
  Matrix data;
  double rate_hz = 0.0;
  std::vector<std::string> channels;
  Dtype dtype = Dtype::f64;

  std::size_t frames() const { return static_cast<std::size_t>(data.rows()); }
  std::size_t num_channels() const { return static_cast<std::size_t>(data.cols()); }
  double duration_seconds() const { return rate_hz > 0 ? frames() / rate_hz : 0.0; }

  bool operator==(const TimeSeries& o) const;
};

// Throws FormatError when T, C, rate or channel names are invalid.
void check_invariants(const TimeSeries& s);

bool all_finite(const TimeSeries& s);

}  // namespace artprobe
