#include "artprobe/manifest.hpp"

#include "artprobe/error.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

namespace artprobe {
namespace {

constexpr const char* kManifestMagic = "#artprobe-manifest v1";

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

std::string replace_all(std::string s, const std::string& what, const std::string& with) {
  for (std::size_t pos = s.find(what); pos != std::string::npos; pos = s.find(what, pos + with.size()))
    s.replace(pos, what.size(), with);
  return s;
}

}  // namespace

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::rejected: return "rejected";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  if (s == "rejected") return Split::rejected;
  throw FormatError("unknown split label '" + s + "'");
}

std::vector<Utterance> SubjectEntry::with_split(Split s) const {
  std::vector<Utterance> out;
  for (const auto& u : utterances)
    if (u.split == s) out.push_back(u);
  return out;
}

double SubjectEntry::duration_seconds(Split s) const {
  double total = 0.0;
  for (const auto& u : utterances)
    if (u.split == s) total += u.duration_seconds;
  return total;
}

const SubjectEntry& DatasetManifest::subject(const std::string& id) const {
  for (const auto& s : subjects)
    if (s.id == id) return s;
  throw ArgumentError("subject '" + id + "' not in manifest");
}

SubjectEntry* DatasetManifest::find_subject(const std::string& id) {
  for (auto& s : subjects)
    if (s.id == id) return &s;
  return nullptr;
}

std::vector<std::string> DatasetManifest::subject_ids() const {
  std::vector<std::string> ids;
  for (const auto& s : subjects) ids.push_back(s.id);
  return ids;
}

std::filesystem::path DatasetManifest::ema_path(const Utterance& u) const { return root / u.ema_path; }

std::filesystem::path DatasetManifest::feature_path(const Utterance& u, const std::string& rep, int layer) const {
  return root / replace_all(replace_all(u.feature_template, "{rep}", rep), "{layer}", std::to_string(layer));
}

DatasetManifest parse_manifest(std::istream& in, const std::filesystem::path& root) {
  DatasetManifest m;
  m.root = root;
  std::string line;
  if (!std::getline(in, line) || line != kManifestMagic) throw FormatError("manifest: missing '#artprobe-manifest v1' header");
  int lineno = 1;
  std::set<std::string> utt_ids;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto f = split_tabs(line);
    const auto where = "manifest line " + std::to_string(lineno) + ": ";
    if (f[0] == "subject") {
      if (f.size() != 3) throw FormatError(where + "subject record needs 3 fields");
      if (m.find_subject(f[1])) throw FormatError(where + "subject '" + f[1] + "' declared twice");
      m.subjects.push_back({f[1], f[2], {}});
    } else if (f[0] == "utt") {
      if (f.size() != 7) throw FormatError(where + "utt record needs 7 fields");
      SubjectEntry* s = m.find_subject(f[1]);
      if (!s) throw FormatError(where + "utterance for undeclared subject '" + f[1] + "'");
      if (!utt_ids.insert(f[1] + "\t" + f[2]).second) throw FormatError(where + "duplicate utterance '" + f[2] + "'");
      Utterance u;
      u.id = f[2];
      const auto [ptr, ec] = std::from_chars(f[3].data(), f[3].data() + f[3].size(), u.duration_seconds);
      if (ec != std::errc() || ptr != f[3].data() + f[3].size() || !std::isfinite(u.duration_seconds) ||
          u.duration_seconds < 0)
        throw FormatError(where + "bad duration '" + f[3] + "'");
      u.split = parse_split(f[4]);
      u.ema_path = f[5];
      u.feature_template = f[6];
      s->utterances.push_back(std::move(u));
    } else {
      throw FormatError(where + "unknown record type '" + f[0] + "'");
    }
  }
  return m;
}

void write_manifest(const DatasetManifest& m, std::ostream& out) {
  out << kManifestMagic << '\n';
  for (const auto& s : m.subjects) {
    out << "subject\t" << s.id << '\t' << s.corpus << '\n';
    for (const auto& u : s.utterances) {
      char buf[64];
      const auto res = std::to_chars(buf, buf + sizeof(buf), u.duration_seconds);
      out << "utt\t" << s.id << '\t' << u.id << '\t' << std::string_view(buf, res.ptr - buf) << '\t'
          << to_string(u.split) << '\t' << u.ema_path << '\t' << u.feature_template << '\n';
    }
  }
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  return parse_manifest(in, path.parent_path());
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write manifest '" + tmp.string() + "'");
    write_manifest(m, out);
    if (!out) throw IoError("failed writing manifest '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

std::optional<std::size_t> corpus_test_size(const std::string& corpus) {
  if (corpus == "mngu0") return 100;
  if (corpus == "mocha") return 50;
  return std::nullopt;
}

}  // namespace artprobe
