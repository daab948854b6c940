#pragma once
// Minimal EST-Track binary writer used to exercise the parser.

#include <bit>
#include <cstdint>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace artprobe::testing {

struct EstTrack {
  std::vector<float> times;
  std::vector<std::vector<float>> values;  // frames x channels
  std::vector<bool> breaks;                // true = frame present; empty when no break column
  std::vector<std::string> names;          // empty = leave channels unnamed
  bool big_endian = false;
  bool write_rate = false;
  double rate_hz = 0.0;
};

inline void put_f32(std::ostream& out, float v, bool big_endian) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) {
    const int shift = big_endian ? 8 * (3 - i) : 8 * i;
    out.put(static_cast<char>((bits >> shift) & 0xFF));
  }
}

inline std::string est_header(const EstTrack& t) {
  std::ostringstream h;
  const std::size_t channels = t.values.empty() ? t.names.size() : t.values.front().size();
  h << "EST_File Track\n";
  h << "DataType binary\n";
  h << "ByteOrder " << (t.big_endian ? "01" : "10") << "\n";
  h << "NumFrames " << t.times.size() << "\n";
  h << "NumChannels " << channels << "\n";
  h << "NumAuxChannels 0\n";
  h << "EqualSpace 1\n";
  h << "BreaksPresent " << (t.breaks.empty() ? "false" : "true") << "\n";
  if (t.write_rate) h << "sample_rate " << t.rate_hz << "\n";
  for (std::size_t c = 0; c < t.names.size(); ++c) h << "Channel_" << c << " " << t.names[c] << "\n";
  h << "EST_Header_End\n";
  return h.str();
}

inline std::string est_payload(const EstTrack& t) {
  std::ostringstream out;
  for (std::size_t f = 0; f < t.times.size(); ++f) {
    put_f32(out, t.times[f], t.big_endian);
    if (!t.breaks.empty()) put_f32(out, t.breaks[f] ? 1.0f : 0.0f, t.big_endian);
    for (const float v : t.values[f]) put_f32(out, v, t.big_endian);
  }
  return out.str();
}

inline std::string est_bytes(const EstTrack& t) { return est_header(t) + est_payload(t); }

struct Mutation {
  std::string name;
  std::string bytes;
  std::string diagnostic;  // expected substring of the error message
};

inline std::string replace_line(std::string text, const std::string& prefix, const std::string& with) {
  const auto at = text.find(prefix);
  if (at == std::string::npos) return text;
  const auto end = text.find('\n', at);
  return text.replace(at, end - at + (with.empty() ? 1 : 0), with);
}

// Ten header/payload corruptions of a valid track.
inline std::vector<Mutation> malformed_corpus(const EstTrack& t) {
  const std::string h = est_header(t), p = est_payload(t);
  return {
      {"no signature", replace_line(h, "EST_File", "EST_File Wave") + p, "EST_File Track"},
      {"ascii data", replace_line(h, "DataType", "DataType ascii") + p, "DataType"},
      {"no byte order", replace_line(h, "ByteOrder", "") + p, "ByteOrder"},
      {"bad byte order", replace_line(h, "ByteOrder", "ByteOrder 11") + p, "ByteOrder"},
      {"bad frame count", replace_line(h, "NumFrames", "NumFrames 1x") + p, "NumFrames"},
      {"no channel count", replace_line(h, "NumChannels", "") + p, "NumChannels"},
      {"unterminated header", replace_line(h, "EST_Header_End", ""), "EST_Header_End"},
      {"short payload", h + p.substr(0, p.size() - 5), "payload"},
      {"long payload", h + p + std::string(4, '\0'), "payload"},
      {"aux channels", replace_line(h, "NumAuxChannels", "NumAuxChannels 2") + p, "auxiliary"},
  };
}

}  // namespace artprobe::testing
