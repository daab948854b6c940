#pragma once

#include "artprobe/time_series.hpp"

#include <array>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace artprobe {

// Canonical EMA layout: lower incisor, upper lip, lower lip, tongue tip,
// tongue blade, tongue dorsum; X then Y midsagittal coordinate.
inline constexpr std::size_t kNumEmaChannels = 12;
inline constexpr std::array<std::string_view, kNumEmaChannels> kCanonicalChannels = {
    "li_x", "li_y", "ul_x", "ul_y", "ll_x", "ll_y",
    "tt_x", "tt_y", "tb_x", "tb_y", "td_x", "td_y"};

std::vector<std::string> canonical_channel_names();

// Decodes an Edinburgh Speech Tools binary Track file. Frames flagged as
// breaks become rows of NaN. Channel names and native rate come from the
// header; the rate is taken from an explicit rate/shift key if present and
// otherwise derived from the per-frame time stamps.
TimeSeries parse_est_track(std::istream& source);
TimeSeries parse_est_track_file(const std::filesystem::path& path);

inline constexpr std::string_view kIgnored = "ignored";

// Source channel -> canonical channel (or "ignored") for one corpus layout.
struct ChannelMapping {
  std::string corpus;
  std::vector<std::pair<std::string, std::string>> entries;

  // Source name for each canonical channel, in canonical order.
  // Throws MappingError if any canonical name is unmapped or mapped twice.
  std::vector<std::string> sources_in_canonical_order() const;
};

ChannelMapping parse_channel_mapping(std::istream& in);
ChannelMapping load_channel_mapping(const std::filesystem::path& path);
// Built-in defaults for "mngu0" and "mocha"; identical to config/*.map.
ChannelMapping default_channel_mapping(const std::string& corpus);

TimeSeries select_canonical_channels(const TimeSeries& raw, const ChannelMapping& mapping);

inline constexpr std::size_t kDefaultMaxGapFrames = 10;

struct DropoutGap {
  std::size_t start = 0;
  std::size_t length = 0;
};

struct DropoutReport {
  std::vector<std::vector<DropoutGap>> gaps;  // one list per channel
  bool repaired = false;
  bool rejected = false;

  bool empty() const;
};

// Interpolates non-finite runs of length <= max_gap_frames (edge runs take the
// nearest finite value). Any longer run, or a channel with no finite sample,
// marks the series rejected; such runs are left non-finite.
std::pair<TimeSeries, DropoutReport> clean_dropouts(const TimeSeries& series,
                                                    std::size_t max_gap_frames = kDefaultMaxGapFrames);

}  // namespace artprobe
