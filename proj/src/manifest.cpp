#include "sedt/manifest.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace sedt {

using nlohmann::json;

namespace {

const char* kKnownKeys[] = {"clip_id", "duration_sec", "synth_seed",
                            "annotation_kind", "events", "tags"};

bool is_known(const std::string& key) {
  return std::find(std::begin(kKnownKeys), std::end(kKnownKeys), key) !=
         std::end(kKnownKeys);
}

json entry_to_json(const ManifestEntry& entry) {
  const ClipRecord& rec = entry.record;
  json j;
  j["clip_id"] = rec.clip_id;
  j["duration_sec"] = rec.duration_sec;
  j["synth_seed"] = rec.synth_seed;
  j["annotation_kind"] = to_string(rec.annotation_kind);
  j["events"] = json::array();
  for (const Event& e : rec.events) {
    j["events"].push_back({{"label", e.label},
                           {"onset_sec", e.onset_sec(rec.duration_sec)},
                           {"offset_sec", e.offset_sec(rec.duration_sec)}});
  }
  j["tags"] = json::array();
  for (const auto& t : rec.tags) j["tags"].push_back(t);
  if (!entry.extra_json.empty()) {
    const json extra = json::parse(entry.extra_json);
    for (const auto& [key, value] : extra.items()) {
      j[key] = value;
    }
  }
  return j;
}

ManifestEntry entry_from_json(const json& j) {
  ManifestEntry entry;
  ClipRecord& rec = entry.record;
  rec.clip_id = j.at("clip_id").get<std::string>();
  rec.duration_sec = j.at("duration_sec").get<double>();
  rec.synth_seed = j.at("synth_seed").get<long long>();
  rec.annotation_kind =
      annotation_kind_from_string(j.at("annotation_kind").get<std::string>());
  for (const auto& je : j.at("events")) {
    rec.events.push_back(Event::from_onset_offset(
        je.at("label").get<std::string>(),
        je.at("onset_sec").get<double>() / rec.duration_sec,
        je.at("offset_sec").get<double>() / rec.duration_sec));
  }
  std::sort(rec.events.begin(), rec.events.end(),
            [](const Event& a, const Event& b) { return a.onset() < b.onset(); });
  for (const auto& jt : j.at("tags")) rec.tags.insert(jt.get<std::string>());

  json extra = json::object();
  for (auto& [key, value] : j.items()) {
    if (!is_known(key)) extra[key] = value;
  }
  if (!extra.empty()) entry.extra_json = extra.dump();
  return entry;
}

}  // namespace

void save_manifest(const std::vector<ManifestEntry>& entries,
                   const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open manifest for writing: " + path);
  for (const auto& entry : entries) {
    out << entry_to_json(entry).dump() << '\n';
  }
  if (!out) throw std::runtime_error("manifest write failed: " + path);
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      entries.push_back(entry_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ": malformed manifest line " +
                               std::to_string(line_no) + ": " + e.what());
    }
  }
  return entries;
}

std::vector<ManifestEntry> wrap_records(const std::vector<ClipRecord>& records) {
  std::vector<ManifestEntry> entries;
  entries.reserve(records.size());
  for (const auto& r : records) entries.push_back({r, ""});
  return entries;
}

std::vector<ClipRecord> unwrap_records(const std::vector<ManifestEntry>& entries) {
  std::vector<ClipRecord> records;
  records.reserve(entries.size());
  for (const auto& e : entries) records.push_back(e.record);
  return records;
}

}  // namespace sedt
