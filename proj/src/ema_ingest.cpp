#include "artprobe/ema_ingest.hpp"

#include "artprobe/error.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace artprobe {
namespace {

constexpr std::size_t kMaxHeaderBytes = 1u << 20;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

long long parse_count(const std::string& key, const std::string& value) {
  long long v = 0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (ec != std::errc() || ptr != end) throw FormatError("EST header: " + key + " is not an integer: '" + value + "'");
  return v;
}

double parse_real(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw FormatError("EST header: " + key + " is not a number: '" + value + "'");
  }
}

bool parse_flag(const std::string& key, const std::string& value) {
  const std::string v = lower(value);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw FormatError("EST header: " + key + " must be true/false, got '" + value + "'");
}

float decode_f32(const unsigned char* p, bool big_endian) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) {
    const int shift = big_endian ? 8 * (3 - i) : 8 * i;
    bits |= static_cast<std::uint32_t>(p[i]) << shift;
  }
  return std::bit_cast<float>(bits);
}

// Snap a rate derived from float32 time stamps to the integer it obviously is.
double tidy_rate(double rate) {
  const double nearest = std::round(rate);
  if (nearest > 0 && std::abs(rate - nearest) <= 1e-4 * nearest) return nearest;
  return rate;
}

}  // namespace

std::vector<std::string> canonical_channel_names() {
  return {kCanonicalChannels.begin(), kCanonicalChannels.end()};
}

TimeSeries parse_est_track(std::istream& source) {
  std::string line;
  if (!std::getline(source, line) || trim(line) != "EST_File Track")
    throw FormatError("missing 'EST_File Track' signature");

  std::map<std::string, std::string> keys;
  std::map<long long, std::string> names;
  bool header_end = false;
  std::size_t header_bytes = line.size();
  while (std::getline(source, line)) {
    header_bytes += line.size() + 1;
    if (header_bytes > kMaxHeaderBytes) break;
    const std::string t = trim(line);
    if (t == "EST_Header_End") {
      header_end = true;
      break;
    }
    if (t.empty()) continue;
    const auto sep = t.find_first_of(" \t");
    const std::string key = t.substr(0, sep);
    const std::string value = sep == std::string::npos ? std::string() : trim(t.substr(sep));
    if (key.rfind("Channel_", 0) == 0) {
      const long long idx = parse_count(key, key.substr(8));
      if (!names.emplace(idx, value).second) throw FormatError("EST header: " + key + " given twice");
    } else {
      keys[key] = value;
    }
  }
  if (!header_end) throw FormatError("EST header not terminated by EST_Header_End");

  const auto require = [&](const std::string& key) -> const std::string& {
    const auto it = keys.find(key);
    if (it == keys.end()) throw FormatError("EST header missing " + key);
    return it->second;
  };

  const std::string data_type = require("DataType");
  if (data_type != "binary") throw UnsupportedFormatError("unsupported EST DataType '" + data_type + "'");

  bool big_endian = false;
  if (const auto it = keys.find("ByteOrder"); it != keys.end()) {
    if (it->second == "01")
      big_endian = true;
    else if (it->second == "10")
      big_endian = false;
    else
      throw FormatError("EST header: unknown ByteOrder '" + it->second + "'");
  } else {
    throw FormatError("EST header missing ByteOrder");
  }

  const long long frames = parse_count("NumFrames", require("NumFrames"));
  const long long channels = parse_count("NumChannels", require("NumChannels"));
  if (frames < 1) throw FormatError("EST header: NumFrames must be positive");
  if (channels < 1) throw FormatError("EST header: NumChannels must be positive");
  if (frames > (1LL << 32) || channels > (1LL << 16)) throw FormatError("EST header: implausible shape");
  if (const auto it = keys.find("NumAuxChannels"); it != keys.end() && parse_count(it->first, it->second) != 0)
    throw UnsupportedFormatError("EST auxiliary channels are not supported");
  const bool breaks = keys.count("BreaksPresent") ? parse_flag("BreaksPresent", keys["BreaksPresent"]) : false;
  if (keys.count("EqualSpace")) parse_flag("EqualSpace", keys["EqualSpace"]);

  TimeSeries out;
  out.dtype = Dtype::f32;
  out.channels.resize(static_cast<std::size_t>(channels));
  for (long long c = 0; c < channels; ++c) out.channels[static_cast<std::size_t>(c)] = "track" + std::to_string(c);
  for (const auto& [idx, name] : names) {
    if (idx < 0 || idx >= channels)
      throw FormatError("EST header: Channel_" + std::to_string(idx) + " outside NumChannels");
    if (name.empty()) throw FormatError("EST header: Channel_" + std::to_string(idx) + " has no name");
    out.channels[static_cast<std::size_t>(idx)] = name;
  }

  const std::size_t values_per_frame = 1 + (breaks ? 1 : 0) + static_cast<std::size_t>(channels);
  const std::size_t expected = static_cast<std::size_t>(frames) * values_per_frame * 4;
  std::string payload(expected, '\0');
  source.read(payload.data(), static_cast<std::streamsize>(expected));
  const auto got = static_cast<std::size_t>(source.gcount());
  if (got != expected)
    throw TruncationError("EST payload has " + std::to_string(got) + " bytes, header implies " +
                          std::to_string(expected));
  if (source.peek() != std::char_traits<char>::eof())
    throw TruncationError("EST payload longer than NumFrames x NumChannels implies");

  out.data.resize(frames, channels);
  std::vector<double> times(static_cast<std::size_t>(frames));
  const auto* p = reinterpret_cast<const unsigned char*>(payload.data());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (long long t = 0; t < frames; ++t) {
    times[static_cast<std::size_t>(t)] = decode_f32(p, big_endian);
    p += 4;
    bool valid = true;
    if (breaks) {
      valid = decode_f32(p, big_endian) != 0.0f;
      p += 4;
    }
    for (long long c = 0; c < channels; ++c, p += 4)
      out.data(t, c) = valid ? static_cast<double>(decode_f32(p, big_endian)) : nan;
  }

  double rate = 0.0;
  for (const auto& [key, value] : keys) {
    const std::string k = lower(key);
    if (k == "sample_rate" || k == "samplerate" || k == "sampling_rate")
      rate = parse_real(key, value);
    else if (k == "frame_shift" || k == "shift")
      rate = 1.0 / parse_real(key, value);
  }
  if (rate == 0.0) {
    if (frames < 2) throw FormatError("EST track with one frame and no rate key: rate unknown");
    const double span = times.back() - times.front();
    if (!(span > 0.0)) throw FormatError("EST time stamps do not increase; rate unknown");
    rate = tidy_rate(static_cast<double>(frames - 1) / span);
  }
  out.rate_hz = rate;
  check_invariants(out);
  return out;
}

TimeSeries parse_est_track_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open EST file '" + path.string() + "'");
  try {
    return parse_est_track(in);
  } catch (const TruncationError& e) {
    throw TruncationError(path.string() + ": " + e.what());
  } catch (const UnsupportedFormatError& e) {
    throw UnsupportedFormatError(path.string() + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<std::string> ChannelMapping::sources_in_canonical_order() const {
  std::map<std::string, std::string> by_target;
  std::set<std::string> seen_sources;
  for (const auto& [src, target] : entries) {
    if (!seen_sources.insert(src).second)
      throw MappingError("channel mapping lists source '" + src + "' twice");
    if (target == kIgnored) continue;
    if (std::find(kCanonicalChannels.begin(), kCanonicalChannels.end(), target) == kCanonicalChannels.end())
      throw MappingError("channel mapping target '" + target + "' is not a canonical channel");
    if (!by_target.emplace(target, src).second)
      throw MappingError("canonical channel '" + target + "' mapped more than once");
  }
  std::vector<std::string> out;
  for (const auto name : kCanonicalChannels) {
    const auto it = by_target.find(std::string(name));
    if (it == by_target.end()) throw MappingError("canonical channel '" + std::string(name) + "' has no source");
    out.push_back(it->second);
  }
  return out;
}

ChannelMapping parse_channel_mapping(std::istream& in) {
  ChannelMapping m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    std::istringstream fields(trim(line.substr(0, hash)));
    std::string a, b, extra;
    if (!(fields >> a)) continue;
    if (!(fields >> b) || (fields >> extra))
      throw MappingError("channel mapping line " + std::to_string(lineno) + ": expected 'source target'");
    if (a == "corpus")
      m.corpus = b;
    else
      m.entries.emplace_back(a, b);
  }
  m.sources_in_canonical_order();
  return m;
}

ChannelMapping load_channel_mapping(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open channel mapping '" + path.string() + "'");
  return parse_channel_mapping(in);
}

ChannelMapping default_channel_mapping(const std::string& corpus) {
  ChannelMapping m;
  m.corpus = corpus;
  if (corpus == "mngu0") {
    const std::pair<const char*, const char*> coils[] = {{"jaw", "li"}, {"upperlip", "ul"}, {"lowerlip", "ll"},
                                                        {"T1", "tt"},  {"T2", "tb"},       {"T3", "td"}};
    for (const auto& [coil, art] : coils) {
      m.entries.emplace_back(std::string(coil) + "_py", std::string(art) + "_x");
      m.entries.emplace_back(std::string(coil) + "_pz", std::string(art) + "_y");
    }
  } else if (corpus == "mocha") {
    for (const auto name : kCanonicalChannels) m.entries.emplace_back(std::string(name), std::string(name));
    for (const char* other : {"ui_x", "ui_y", "v_x", "v_y", "bn_x", "bn_y"})
      m.entries.emplace_back(other, std::string(kIgnored));
  } else {
    throw MappingError("no default channel mapping for corpus '" + corpus + "'");
  }
  return m;
}

TimeSeries select_canonical_channels(const TimeSeries& raw, const ChannelMapping& mapping) {
  const auto sources = mapping.sources_in_canonical_order();
  TimeSeries out;
  out.rate_hz = raw.rate_hz;
  out.dtype = raw.dtype;
  out.channels = canonical_channel_names();
  out.data.resize(raw.data.rows(), static_cast<Eigen::Index>(kNumEmaChannels));
  for (std::size_t k = 0; k < sources.size(); ++k) {
    const auto it = std::find(raw.channels.begin(), raw.channels.end(), sources[k]);
    if (it == raw.channels.end())
      throw MappingError("source channel '" + sources[k] + "' (for " + out.channels[k] + ") not in recording");
    out.data.col(static_cast<Eigen::Index>(k)) = raw.data.col(it - raw.channels.begin());
  }
  return out;
}

bool DropoutReport::empty() const {
  return std::all_of(gaps.begin(), gaps.end(), [](const auto& g) { return g.empty(); });
}

std::pair<TimeSeries, DropoutReport> clean_dropouts(const TimeSeries& series, std::size_t max_gap_frames) {
  TimeSeries out = series;
  DropoutReport report;
  const auto frames = static_cast<std::size_t>(series.data.rows());
  report.gaps.resize(series.num_channels());
  for (Eigen::Index c = 0; c < series.data.cols(); ++c) {
    auto col = out.data.col(c);
    auto& gaps = report.gaps[static_cast<std::size_t>(c)];
    std::size_t t = 0;
    while (t < frames) {
      if (std::isfinite(col(static_cast<Eigen::Index>(t)))) {
        ++t;
        continue;
      }
      const std::size_t start = t;
      while (t < frames && !std::isfinite(col(static_cast<Eigen::Index>(t)))) ++t;
      gaps.push_back({start, t - start});
    }
    for (const auto& gap : gaps) {
      const std::size_t end = gap.start + gap.length;
      if (gap.length > max_gap_frames || (gap.start == 0 && end == frames)) {
        report.rejected = true;
        continue;
      }
      const auto s = static_cast<Eigen::Index>(gap.start);
      const auto e = static_cast<Eigen::Index>(end);
      if (gap.start == 0) {
        col.segment(0, e).setConstant(col(e));
      } else if (end == frames) {
        col.segment(s, e - s).setConstant(col(s - 1));
      } else {
        const double left = col(s - 1), right = col(e);
        const double steps = static_cast<double>(gap.length + 1);
        for (Eigen::Index i = s; i < e; ++i)
          col(i) = left + (right - left) * static_cast<double>(i - s + 1) / steps;
      }
      report.repaired = true;
    }
  }
  return {std::move(out), std::move(report)};
}

}  // namespace artprobe
