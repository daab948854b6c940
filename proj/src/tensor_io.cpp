#include "artprobe/tensor_io.hpp"

#include "artprobe/error.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <set>

namespace artprobe {
namespace {

constexpr std::uint32_t kMaxHeaderBytes = 64u << 20;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void encode_payload(const TimeSeries& s, std::string& out) {
  const std::size_t width = dtype_size(s.dtype);
  out.reserve(out.size() + s.data.size() * width);
  const double* values = s.data.data();  // row-major storage
  for (Eigen::Index i = 0; i < s.data.size(); ++i) {
    if (s.dtype == Dtype::f32) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
    } else {
      const auto bits = std::bit_cast<std::uint64_t>(values[i]);
      for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
    }
  }
}

TimeSeries decode_header(const std::string& body) {
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad APT1 header encoding: ") + e.what());
  }
  if (!h.is_object()) throw FormatError("APT1 header is not a key/value record");
  static const std::set<std::string> kKeys = {"channels", "dtype", "rate_hz", "shape"};
  for (const auto& [key, _] : h.items())
    if (!kKeys.count(key)) throw FormatError("unknown APT1 header key '" + key + "'");
  for (const auto& key : kKeys)
    if (!h.contains(key)) throw FormatError("APT1 header missing key '" + key + "'");

  TimeSeries s;
  if (!h["dtype"].is_string()) throw FormatError("APT1 dtype must be a string");
  s.dtype = parse_dtype(h["dtype"].get<std::string>());

  const auto& shape = h["shape"];
  if (!shape.is_array() || shape.size() != 2 || !shape[0].is_number_unsigned() ||
      !shape[1].is_number_unsigned())
    throw FormatError("APT1 shape must be [T, C] with non-negative integers");
  const auto rows = shape[0].get<std::uint64_t>();
  const auto cols = shape[1].get<std::uint64_t>();
  if (rows < 1 || cols < 1) throw FormatError("APT1 shape must have T >= 1 and C >= 1");
  if (rows > (std::uint64_t{1} << 40) / cols) throw FormatError("APT1 shape too large");

  if (!h["rate_hz"].is_number()) throw FormatError("APT1 rate_hz must be a number");
  s.rate_hz = h["rate_hz"].get<double>();
  if (!std::isfinite(s.rate_hz) || s.rate_hz <= 0) throw FormatError("APT1 rate_hz must be finite and positive");

  if (!h["channels"].is_array()) throw FormatError("APT1 channels must be an array");
  for (const auto& c : h["channels"]) {
    if (!c.is_string()) throw FormatError("APT1 channel names must be strings");
    s.channels.push_back(c.get<std::string>());
  }
  s.data.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  return s;
}

}  // namespace

std::string encode_tensor_header(const TimeSeries& series) {
  nlohmann::json h;
  h["dtype"] = to_string(series.dtype);
  h["shape"] = {static_cast<std::uint64_t>(series.frames()),
                static_cast<std::uint64_t>(series.num_channels())};
  h["rate_hz"] = series.rate_hz;
  h["channels"] = series.channels;
  return h.dump();
}

std::size_t write_tensor(const TimeSeries& series, std::ostream& sink) {
  check_invariants(series);
  const std::string header = encode_tensor_header(series);
  std::string out(kTensorMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  encode_payload(series, out);
  sink.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!sink) throw IoError("failed writing APT1 stream");
  return out.size();
}

TimeSeries read_tensor(std::istream& source) {
  unsigned char prefix[8];
  source.read(reinterpret_cast<char*>(prefix), 8);
  if (source.gcount() < 4 || std::memcmp(prefix, kTensorMagic, 4) != 0)
    throw FormatError("not an APT1 file");
  if (source.gcount() < 8) throw TruncationError("truncated tensor: header length missing");
  const std::uint32_t header_len = get_u32(prefix + 4);
  if (header_len == 0 || header_len > kMaxHeaderBytes)
    throw FormatError("implausible APT1 header length " + std::to_string(header_len));

  std::string body(header_len, '\0');
  source.read(body.data(), header_len);
  if (static_cast<std::uint32_t>(source.gcount()) != header_len)
    throw TruncationError("truncated tensor: header shorter than declared");

  TimeSeries s = decode_header(body);
  check_invariants(s);

  const std::size_t width = dtype_size(s.dtype);
  const std::size_t count = static_cast<std::size_t>(s.data.size());
  std::string payload(count * width, '\0');
  source.read(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (static_cast<std::size_t>(source.gcount()) != payload.size())
    throw TruncationError("truncated tensor: expected " + std::to_string(payload.size()) +
                          " payload bytes, got " + std::to_string(source.gcount()));
  if (source.peek() != std::char_traits<char>::eof())
    throw FormatError("APT1 payload longer than declared shape");

  const auto* p = reinterpret_cast<const unsigned char*>(payload.data());
  double* values = s.data.data();
  for (std::size_t i = 0; i < count; ++i, p += width) {
    if (s.dtype == Dtype::f32) {
      values[i] = static_cast<double>(std::bit_cast<float>(get_u32(p)));
    } else {
      const std::uint64_t bits = static_cast<std::uint64_t>(get_u32(p)) |
                                 (static_cast<std::uint64_t>(get_u32(p + 4)) << 32);
      values[i] = std::bit_cast<double>(bits);
    }
  }
  return s;
}

std::size_t write_tensor_file(const TimeSeries& series, const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  std::size_t n = 0;
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    n = write_tensor(series, out);
    out.flush();
    if (!out) throw IoError("failed writing '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp.string() + "': " + ec.message());
  return n;
}

TimeSeries read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open tensor file '" + path.string() + "'");
  try {
    return read_tensor(in);
  } catch (const TruncationError& e) {
    throw TruncationError(path.string() + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

AlignmentReport validate_pairing(const TimeSeries& features, const TimeSeries& ema,
                                 std::size_t frame_tolerance) {
  AlignmentReport r;
  const double scale = std::max(std::abs(features.rate_hz), std::abs(ema.rate_hz));
  r.rates_equal = std::abs(features.rate_hz - ema.rate_hz) <= 1e-9 * scale;
  if (!r.rates_equal)
    throw PairingError("rate mismatch: features at " + std::to_string(features.rate_hz) +
                       " Hz, EMA at " + std::to_string(ema.rate_hz) + " Hz");
  const std::size_t tf = features.frames(), te = ema.frames();
  r.frame_gap = tf > te ? tf - te : te - tf;
  r.common_length = std::min(tf, te);
  if (r.frame_gap > frame_tolerance)
    throw PairingError("frame count gap " + std::to_string(r.frame_gap) + " (" + std::to_string(tf) +
                       " vs " + std::to_string(te) + ") exceeds tolerance " +
                       std::to_string(frame_tolerance));
  return r;
}

}  // namespace artprobe
