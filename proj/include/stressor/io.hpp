#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "stressor/features.hpp"
#include "stressor/session.hpp"
#include "stressor/synth.hpp"

namespace stressor {

namespace fs = std::filesystem;

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const fs::path& path);

// Shortest round-trip decimal form; missing values become an empty field.
std::string format_number(double v);
// Accepts the format_number output plus "nan"/"NA". Throws kParse.
double parse_number(std::string_view text);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(std::string_view name) const;  // -1 if absent
};

CsvTable read_csv(const fs::path& path);
void write_csv(const fs::path& path, const CsvTable& table);

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, std::string_view text);
nlohmann::json read_json(const fs::path& path);
// Pretty-printed with a trailing newline; key order is sorted by nlohmann.
void write_json(const fs::path& path, const nlohmann::json& j);

// Session directory: channels.csv, optional vehicle.csv, meta.json and an
// optional ground_truth.json sidecar.
void write_session_dir(const fs::path& dir, const Session& session, const GroundTruth* truth = nullptr);
Session read_session_dir(const fs::path& dir);
// Subject, kind, phases and events from meta.json; no traces are read.
Session read_session_header(const fs::path& dir);
std::optional<GroundTruth> read_ground_truth(const fs::path& dir);
// Sub-directories holding a meta.json, sorted by name.
std::vector<fs::path> list_session_dirs(const fs::path& root);

nlohmann::json session_meta(const Session& session);

// Frame CSV: subject, session, time_s, label, then one column per feature.
void write_frame_csv(const fs::path& path, const FeatureFrame& frame);
FeatureFrame read_frame_csv(const fs::path& path);

// Digest every regular file below `root` (relative paths, sorted).
std::map<std::string, std::string> digest_tree(const fs::path& root);

struct RunManifest {
  std::string command;
  std::uint64_t master_seed = 0;
  std::string config_digest;
  std::map<std::string, std::string> inputs;   // relative path -> sha256
  std::map<std::string, std::string> outputs;  // relative path -> sha256

  nlohmann::json to_json() const;
};

inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kToolVersion = "1.0.0";

}  // namespace stressor
