#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace artprobe {

enum class Split { train, test, rejected };

std::string to_string(Split s);
Split parse_split(const std::string& s);

struct Utterance {
  std::string id;
  double duration_seconds = 0.0;
  Split split = Split::train;
  std::string ema_path;          // relative to the manifest directory
  std::string feature_template;  // may contain {rep} and {layer}
};

struct SubjectEntry {
  std::string id;
  std::string corpus;  // "mngu0", "mocha", "synth", ...
  std::vector<Utterance> utterances;

  std::vector<Utterance> with_split(Split s) const;
  double duration_seconds(Split s) const;
};

// Tab-separated text record:
//   #artprobe-manifest v1
//   subject <S> <corpus>
//   utt <S> <id> <duration_s> <train|test|rejected> <ema_path> <feature_template>
struct DatasetManifest {
  std::vector<SubjectEntry> subjects;
  std::filesystem::path root;  // directory relative paths resolve against

  const SubjectEntry& subject(const std::string& id) const;
  SubjectEntry* find_subject(const std::string& id);
  std::vector<std::string> subject_ids() const;

  std::filesystem::path ema_path(const Utterance& u) const;
  std::filesystem::path feature_path(const Utterance& u, const std::string& rep, int layer) const;
};

DatasetManifest parse_manifest(std::istream& in, const std::filesystem::path& root);
void write_manifest(const DatasetManifest& m, std::ostream& out);
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);

// Held-out test utterances per subject: 100 for MNGU0, 50 for each MOCHA-TIMIT speaker.
std::optional<std::size_t> corpus_test_size(const std::string& corpus);

}  // namespace artprobe
