#pragma once

#include "artprobe/time_series.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>

namespace artprobe {

// APT1 layout: "APT1" | u32 LE header length H | H bytes of UTF-8 JSON
// {"channels":[...],"dtype":"f32|f64","rate_hz":r,"shape":[T,C]} |
// T*C little-endian values, row-major.
inline constexpr char kTensorMagic[4] = {'A', 'P', 'T', '1'};

std::string encode_tensor_header(const TimeSeries& series);

std::size_t write_tensor(const TimeSeries& series, std::ostream& sink);
TimeSeries read_tensor(std::istream& source);

// File variants. Writes go to a sibling temp file renamed into place.
std::size_t write_tensor_file(const TimeSeries& series, const std::filesystem::path& path);
TimeSeries read_tensor_file(const std::filesystem::path& path);

struct AlignmentReport {
  bool rates_equal = false;
  std::size_t frame_gap = 0;
  std::size_t common_length = 0;
};

AlignmentReport validate_pairing(const TimeSeries& features, const TimeSeries& ema,
                                 std::size_t frame_tolerance);

}  // namespace artprobe
