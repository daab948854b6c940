#include "artprobe/scoring.hpp"

#include "artprobe/error.hpp"

#include <algorithm>
#include <numeric>

namespace artprobe {

ArticulatoryScore articulatory_score(const std::map<std::string, ChannelScores>& per_subject) {
  if (per_subject.empty()) throw ArgumentError("articulatory score needs at least one subject");
  ArticulatoryScore out;
  const auto& layout = per_subject.begin()->second.channels;
  std::vector<double> channel_sum(layout.size(), 0.0);
  std::vector<std::size_t> channel_n(layout.size(), 0);
  double subject_sum = 0.0;
  for (const auto& [subject, scores] : per_subject) {
    if (scores.channels != layout)
      throw ArgumentError("subject " + subject + " has a different channel layout");
    if (scores.valid_count() == 0)
      throw ArgumentError("subject " + subject + " has no valid channel correlations");
    const double mean = scores.mean_valid();
    out.per_subject[subject] = mean;
    subject_sum += mean;
    for (std::size_t c = 0; c < layout.size(); ++c) {
      if (scores.valid[c]) {
        channel_sum[c] += scores.r[c];
        ++channel_n[c];
      } else {
        ++out.invalid_channels;
      }
    }
  }
  out.overall = subject_sum / static_cast<double>(per_subject.size());
  for (std::size_t c = 0; c < layout.size(); ++c)
    if (channel_n[c]) out.per_channel.emplace_back(layout[c], channel_sum[c] / static_cast<double>(channel_n[c]));
  return out;
}

std::vector<double> average_ranks(const std::vector<double>& values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double spearman_rank(const std::map<std::string, double>& a, const std::map<std::string, double>& b) {
  if (a.size() != b.size() ||
      !std::equal(a.begin(), a.end(), b.begin(), [](const auto& x, const auto& y) { return x.first == y.first; }))
    throw ArgumentError("spearman_rank: the two score maps name different representations");
  if (a.size() < 2) throw ArgumentError("spearman_rank: need at least 2 entries");
  std::vector<double> va, vb;
  for (const auto& [k, v] : a) va.push_back(v);
  for (const auto& [k, v] : b) vb.push_back(v);
  const auto ra = average_ranks(va);
  const auto rb = average_ranks(vb);
  return pearson_r(ra, rb);
}

std::pair<std::size_t, double> best_layer(const LayerProfile& profile) {
  if (profile.scores.empty()) throw ArgumentError("best_layer: empty profile");
  std::size_t best = 0;
  for (std::size_t i = 1; i < profile.scores.size(); ++i)
    if (profile.scores[i] > profile.scores[best]) best = i;
  return {best, profile.scores[best]};
}

std::vector<std::size_t> find_score_peaks(const LayerProfile& profile) {
  const auto& s = profile.scores;
  if (s.size() < 3) throw ArgumentError("find_score_peaks: need at least 3 layers");
  std::vector<std::size_t> peaks;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const bool above_left = i == 0 || s[i] > s[i - 1];
    const bool above_right = i + 1 == s.size() || s[i] > s[i + 1];
    if (above_left && above_right) peaks.push_back(i);
  }
  return peaks;
}

}  // namespace artprobe
