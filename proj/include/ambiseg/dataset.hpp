#pragma once

// On-disk dataset: images/<id>.png, masks/<id>.png, manifest.jsonl.

#include <cstdint>
#include <string>
#include <vector>

#include "ambiseg/scenegen.hpp"
#include "json.hpp"

namespace ambiseg::data {

struct ManifestRecord {
  std::string id;
  int category = 0;
  int round = 0;
  std::uint64_t seed = 0;
  std::size_t k = 1;
  bool hard = false;
  std::string filter_status = "unfiltered";  // unfiltered | kept | rejected
  std::string filter_reason;
  std::string label = "generator";  // generator | labeler (8-bit quantized, binarized at 0.5)

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

void to_json(nlohmann::json& j, const ManifestRecord& r);
void from_json(const nlohmann::json& j, ManifestRecord& r);

ManifestRecord record_of(const scene::Sample& s);

std::string manifest_text(const std::vector<ManifestRecord>& records);
std::vector<ManifestRecord> parse_manifest(const std::string& text);
void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records);
std::vector<ManifestRecord> read_manifest(const std::string& path);

/// Writes images, masks (the sample's gt unless `labels` is given) and the
/// manifest; `records` defaults to record_of each sample.
void write_dataset(const std::string& dir, const std::vector<scene::Sample>& samples,
                   const std::vector<ManifestRecord>& records = {},
                   const std::vector<Mask>* labels = nullptr);

struct Entry {
  ManifestRecord record;
  Raster image;
  Mask mask;
};
std::vector<Entry> read_dataset(const std::string& dir);

/// Hash of the manifest file contents.
std::string manifest_hash(const std::string& dir);

}  // namespace ambiseg::data
