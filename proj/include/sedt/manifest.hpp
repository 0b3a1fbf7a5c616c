#pragma once

#include "sedt/types.hpp"

#include <string>
#include <vector>

namespace sedt {

/// JSON Lines manifest I/O. Round-trip is lossless: fields we do not model
/// are carried through save untouched.
struct ManifestEntry {
  ClipRecord record;
  std::string extra_json;  // unknown fields as a JSON object, "" if none
};

void save_manifest(const std::vector<ManifestEntry>& entries,
                   const std::string& path);
std::vector<ManifestEntry> load_manifest(const std::string& path);

std::vector<ManifestEntry> wrap_records(const std::vector<ClipRecord>& records);
std::vector<ClipRecord> unwrap_records(const std::vector<ManifestEntry>& entries);

}  // namespace sedt
