#pragma once

#include "artprobe/probe.hpp"

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace artprobe {

struct ArticulatoryScore {
  double overall = 0.0;
  std::map<std::string, double> per_subject;                // mean over valid channels
  std::vector<std::pair<std::string, double>> per_channel;  // mean over subjects where valid
  std::size_t invalid_channels = 0;                         // excluded (subject, channel) pairs
};

// Mean correlation over channels, then unweighted mean over subjects.
ArticulatoryScore articulatory_score(const std::map<std::string, ChannelScores>& per_subject);

// Mean (fractional) ranks, 1-based; tied values share the average of their ranks.
std::vector<double> average_ranks(const std::vector<double>& values);

// Pearson correlation of average ranks over the shared keys.
double spearman_rank(const std::map<std::string, double>& a, const std::map<std::string, double>& b);

// Layer 0 is the convolutional encoder output.
struct LayerProfile {
  std::vector<double> scores;
};

// Highest score; ties go to the lowest layer.
std::pair<std::size_t, double> best_layer(const LayerProfile& profile);

// Strict local maxima; an endpoint counts when it beats its single neighbour.
std::vector<std::size_t> find_score_peaks(const LayerProfile& profile);

}  // namespace artprobe
