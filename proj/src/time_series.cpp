#include "artprobe/time_series.hpp"

#include "artprobe/error.hpp"

#include <cmath>
#include <cstring>
#include <set>

namespace artprobe {

std::size_t dtype_size(Dtype d) { return d == Dtype::f32 ? 4 : 8; }

std::string to_string(Dtype d) { return d == Dtype::f32 ? "f32" : "f64"; }

Dtype parse_dtype(const std::string& s) {
  if (s == "f32") return Dtype::f32;
  if (s == "f64") return Dtype::f64;
  throw FormatError("unknown dtype '" + s + "'");
}

bool TimeSeries::operator==(const TimeSeries& o) const {
  if (dtype != o.dtype || channels != o.channels) return false;
  if (std::memcmp(&rate_hz, &o.rate_hz, sizeof(double)) != 0) return false;
  if (data.rows() != o.data.rows() || data.cols() != o.data.cols()) return false;
  return std::memcmp(data.data(), o.data.data(), sizeof(double) * data.size()) == 0;
}

void check_invariants(const TimeSeries& s) {
  if (s.data.rows() < 1 || s.data.cols() < 1)
    throw FormatError("time series must have at least one frame and one channel");
  if (s.channels.empty()) throw FormatError("empty channel list");
  if (s.channels.size() != s.num_channels())
    throw FormatError("channel name count " + std::to_string(s.channels.size()) +
                      " does not match matrix width " + std::to_string(s.num_channels()));
  std::set<std::string> seen;
  for (const auto& name : s.channels) {
    if (name.empty()) throw FormatError("empty channel name");
    if (!seen.insert(name).second) throw FormatError("duplicate channel name '" + name + "'");
  }
  if (!std::isfinite(s.rate_hz) || s.rate_hz <= 0.0)
    throw FormatError("rate_hz must be finite and positive");
}

bool all_finite(const TimeSeries& s) { return s.data.allFinite(); }

}  // namespace artprobe
