#include "ambiseg/dataset.hpp"

#include <filesystem>
#include <sstream>
#include <stdexcept>

#include "ambiseg/image_io.hpp"

namespace fs = std::filesystem;

namespace ambiseg::data {

namespace {

nlohmann::ordered_json ordered(const ManifestRecord& r) {
  return nlohmann::ordered_json{{"id", r.id},
                             {"category", r.category},
                             {"round", r.round},
                             {"seed", r.seed},
                             {"K", r.k},
                             {"hard", r.hard},
                             {"filter_status", r.filter_status},
                             {"filter_reason", r.filter_reason},
                             {"label", r.label}};
}

}  // namespace

void to_json(nlohmann::json& j, const ManifestRecord& r) {
  for (const auto& [k, v] : ordered(r).items()) j[k] = v;
}

void from_json(const nlohmann::json& j, ManifestRecord& r) {
  r.id = j.at("id").get<std::string>();
  r.category = j.at("category").get<int>();
  r.round = j.at("round").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.k = j.at("K").get<std::size_t>();
  r.hard = j.value("hard", false);
  r.filter_status = j.value("filter_status", std::string("unfiltered"));
  r.filter_reason = j.value("filter_reason", std::string());
  r.label = j.value("label", std::string("generator"));
}

ManifestRecord record_of(const scene::Sample& s) {
  ManifestRecord r;
  r.id = s.id;
  r.category = s.category;
  r.round = s.round;
  r.seed = s.seed;
  r.k = s.k();
  r.hard = s.hard;
  return r;
}

std::string manifest_text(const std::vector<ManifestRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += ordered(r).dump();
    out += '\n';
  }
  return out;
}

std::vector<ManifestRecord> parse_manifest(const std::string& text) {
  std::vector<ManifestRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<ManifestRecord>());
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records) {
  io::write_text(path, manifest_text(records));
}

std::vector<ManifestRecord> read_manifest(const std::string& path) {
  return parse_manifest(io::read_text(path));
}

void write_dataset(const std::string& dir, const std::vector<scene::Sample>& samples,
                   const std::vector<ManifestRecord>& records, const std::vector<Mask>* labels) {
  if (!records.empty() && records.size() != samples.size()) {
    throw std::invalid_argument("write_dataset: record count does not match sample count");
  }
  if (labels && labels->size() != samples.size()) {
    throw std::invalid_argument("write_dataset: label count does not match sample count");
  }
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");
  std::vector<ManifestRecord> recs = records;
  if (recs.empty())
    for (const auto& s : samples) recs.push_back(record_of(s));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    io::write_png(s.image, (fs::path(dir) / "images" / (s.id + ".png")).string());
    io::write_mask(labels ? (*labels)[i] : s.gt, (fs::path(dir) / "masks" / (s.id + ".png")).string());
  }
  write_manifest((fs::path(dir) / "manifest.jsonl").string(), recs);
}

std::vector<Entry> read_dataset(const std::string& dir) {
  std::vector<Entry> out;
  for (auto& r : read_manifest((fs::path(dir) / "manifest.jsonl").string())) {
    Entry e;
    e.image = io::read_png((fs::path(dir) / "images" / (r.id + ".png")).string());
    e.mask = io::read_mask((fs::path(dir) / "masks" / (r.id + ".png")).string());
    e.record = std::move(r);
    out.push_back(std::move(e));
  }
  return out;
}

std::string manifest_hash(const std::string& dir) {
  return io::file_hash((fs::path(dir) / "manifest.jsonl").string());
}

}  // namespace ambiseg::data
