#include "stressor/io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "stressor/error.hpp"

namespace stressor {

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorKind::kIo, "sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 15]);
  }
  return out;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_text(path)); }

std::string format_number(double v) {
  if (is_missing(v)) return "";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

double parse_number(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty() || s == "nan" || s == "NaN" || s == "NA") return kMissing;
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(ErrorKind::kParse, "not a number: '" + std::string(s) + "'");
  }
  return v;
}

int CsvTable::column(std::string_view name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  return it == header.end() ? -1 : static_cast<int>(it - header.begin());
}

namespace {

// Minimal RFC 4180 field splitting: quoted fields may contain commas and
// doubled quotes, but not newlines.
std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string quote_field(const std::string& f) {
  if (f.find_first_of(",\"\n") == std::string::npos) return f;
  std::string q = "\"";
  for (char c : f) {
    if (c == '"') q.push_back('"');
    q.push_back(c);
  }
  q.push_back('"');
  return q;
}

std::string context(const fs::path& path, std::size_t line, std::size_t field) {
  return path.filename().string() + " line " + std::to_string(line) + " field " + std::to_string(field);
}

double number_at(const CsvTable& t, const fs::path& path, std::size_t row, std::size_t col) {
  try {
    return parse_number(t.rows[row][col]);
  } catch (const Error& e) {
    throw Error(ErrorKind::kParse, context(path, row + 2, col + 1) + ": " + e.what());
  }
}

}  // namespace

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(ErrorKind::kIo, "write failed for " + path.string());
}

CsvTable read_csv(const fs::path& path) {
  const std::string text = read_text(path);
  CsvTable t;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string_view line(text.data() + pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw Error(ErrorKind::kParse, path.filename().string() + " line " + std::to_string(line_no) + ": expected " +
                                         std::to_string(t.header.size()) + " fields, found " +
                                         std::to_string(fields.size()));
    }
    t.rows.push_back(std::move(fields));
  }
  if (t.header.empty()) throw Error(ErrorKind::kParse, path.filename().string() + ": missing header row");
  return t;
}

void write_csv(const fs::path& path, const CsvTable& table) {
  std::string out;
  auto emit = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out.push_back(',');
      out += quote_field(fields[i]);
    }
    out.push_back('\n');
  };
  emit(table.header);
  for (const auto& r : table.rows) emit(r);
  write_text(path, out);
}

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::kParse, path.filename().string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

nlohmann::json session_meta(const Session& s) {
  nlohmann::json phases = nlohmann::json::object();
  for (const auto& [name, iv] : s.phases.named()) phases[name] = {iv.start_s, iv.end_s};
  nlohmann::json events = nlohmann::json::array();
  for (const auto& e : s.events) events.push_back({{"name", e.name}, {"onset_s", e.onset_s}});
  nlohmann::json meta{{"subject", s.subject_id},
                      {"session_kind", std::string(1, session_letter(s.kind))},
                      {"phases", phases},
                      {"events", events}};
  if (!s.traces.empty()) meta["sample_rate_hz"] = s.traces.begin()->second.sample_rate_hz();
  if (s.vehicle) meta["vehicle_rate_hz"] = s.vehicle->speed.sample_rate_hz();
  return meta;
}

void write_session_dir(const fs::path& dir, const Session& s, const GroundTruth* truth) {
  fs::create_directories(dir);
  if (s.traces.empty()) throw Error(ErrorKind::kValidation, "session has no channels");
  const SignalTrace& first = s.traces.begin()->second;
  for (const auto& [name, tr] : s.traces) {
    if (tr.size() != first.size() || tr.sample_rate_hz() != first.sample_rate_hz()) {
      throw Error(ErrorKind::kShape, "channels.csv needs equal rate and length; " + name + " differs");
    }
  }
  std::string out = "time_s";
  for (const auto& [name, tr] : s.traces) out += "," + name;
  out.push_back('\n');
  out.reserve(first.size() * (s.traces.size() + 1) * 12);
  for (std::size_t i = 0; i < first.size(); ++i) {
    out += format_number(first.time_at(i));
    for (const auto& [name, tr] : s.traces) {
      out.push_back(',');
      out += format_number(tr.samples()[i]);
    }
    out.push_back('\n');
  }
  write_text(dir / "channels.csv", out);

  if (s.vehicle) {
    const VehicleTelemetry& v = *s.vehicle;
    std::string vo = "time_s,speed,steering_angle,throttle,brake\n";
    for (std::size_t i = 0; i < v.speed.size(); ++i) {
      vo += format_number(v.speed.time_at(i)) + "," + format_number(v.speed.samples()[i]) + "," +
            format_number(v.steering_angle.samples()[i]) + "," + format_number(v.throttle.samples()[i]) + "," +
            format_number(v.brake.samples()[i]) + "\n";
    }
    write_text(dir / "vehicle.csv", vo);
  }
  write_json(dir / "meta.json", session_meta(s));
  if (truth) write_json(dir / "ground_truth.json", to_json(*truth));
}

Session read_session_header(const fs::path& dir) {
  const nlohmann::json meta = read_json(dir / "meta.json");
  Session s;
  try {
    s.subject_id = meta.at("subject").get<std::string>();
    s.kind = parse_session_kind(meta.at("session_kind").get<std::string>());
    for (const auto& [name, iv] : meta.at("phases").items()) {
      s.phases.set(name, TimeInterval{iv.at(0).get<double>(), iv.at(1).get<double>()});
    }
    for (const auto& e : meta.at("events")) {
      s.events.push_back({e.at("name").get<std::string>(), e.at("onset_s").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, (dir / "meta.json").string() + ": " + e.what());
  }
  return s;
}

Session read_session_dir(const fs::path& dir) {
  const nlohmann::json meta = read_json(dir / "meta.json");
  Session s = read_session_header(dir);
  const double fs_hz = meta.value("sample_rate_hz", 0.0);
  if (!(fs_hz > 0.0)) throw Error(ErrorKind::kParse, "meta.json: sample_rate_hz must be positive");

  const CsvTable ch = read_csv(dir / "channels.csv");
  if (ch.column("time_s") != 0) throw Error(ErrorKind::kParse, "channels.csv: first column must be time_s");
  if (ch.rows.empty()) throw Error(ErrorKind::kParse, "channels.csv: no samples");
  const double t0 = number_at(ch, dir / "channels.csv", 0, 0);
  for (std::size_t c = 1; c < ch.header.size(); ++c) {
    std::vector<double> v(ch.rows.size());
    for (std::size_t r = 0; r < ch.rows.size(); ++r) v[r] = number_at(ch, dir / "channels.csv", r, c);
    s.traces.emplace(ch.header[c], SignalTrace(std::move(v), fs_hz, t0, ch.header[c]));
  }

  if (fs::exists(dir / "vehicle.csv")) {
    const double vfs = meta.value("vehicle_rate_hz", 0.0);
    if (!(vfs > 0.0)) throw Error(ErrorKind::kParse, "meta.json: vehicle_rate_hz must be positive");
    const fs::path vp = dir / "vehicle.csv";
    const CsvTable vt = read_csv(vp);
    std::vector<double> cols[4];
    const char* names[4] = {"speed", "steering_angle", "throttle", "brake"};
    for (int k = 0; k < 4; ++k) {
      const int c = vt.column(names[k]);
      if (c < 0) throw Error(ErrorKind::kParse, "vehicle.csv: missing column " + std::string(names[k]));
      cols[k].resize(vt.rows.size());
      for (std::size_t r = 0; r < vt.rows.size(); ++r) cols[k][r] = number_at(vt, vp, r, static_cast<std::size_t>(c));
    }
    const double vt0 = vt.rows.empty() ? 0.0 : number_at(vt, vp, 0, 0);
    s.vehicle = VehicleTelemetry{SignalTrace(std::move(cols[0]), vfs, vt0, names[0]),
                                 SignalTrace(std::move(cols[1]), vfs, vt0, names[1]),
                                 SignalTrace(std::move(cols[2]), vfs, vt0, names[2]),
                                 SignalTrace(std::move(cols[3]), vfs, vt0, names[3])};
  }
  s.validate();
  return s;
}

std::optional<GroundTruth> read_ground_truth(const fs::path& dir) {
  if (!fs::exists(dir / "ground_truth.json")) return std::nullopt;
  return ground_truth_from_json(read_json(dir / "ground_truth.json"));
}

std::vector<fs::path> list_session_dirs(const fs::path& root) {
  if (!fs::is_directory(root)) throw Error(ErrorKind::kIo, root.string() + " is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && fs::exists(e.path() / "meta.json")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void write_frame_csv(const fs::path& path, const FeatureFrame& f) {
  std::string out = "subject,session,time_s,label";
  for (const auto& c : f.columns) out += "," + c;
  out.push_back('\n');
  for (std::size_t r = 0; r < f.rows(); ++r) {
    out += f.subject_ids[r];
    out.push_back(',');
    out.push_back(session_letter(f.session_kinds[r]));
    out += "," + format_number(f.timestamps_s[r]) + "," + std::string(to_string(f.labels[r]));
    for (std::size_t c = 0; c < f.cols(); ++c) out += "," + format_number(f.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
    out.push_back('\n');
  }
  write_text(path, out);
}

FeatureFrame read_frame_csv(const fs::path& path) {
  const CsvTable t = read_csv(path);
  if (t.header.size() < 4 || t.header[0] != "subject" || t.header[1] != "session" || t.header[2] != "time_s" ||
      t.header[3] != "label") {
    throw Error(ErrorKind::kParse, path.filename().string() + ": expected subject,session,time_s,label header");
  }
  FeatureFrame f;
  f.columns.assign(t.header.begin() + 4, t.header.end());
  f.values.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(f.columns.size()));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    f.subject_ids.push_back(t.rows[r][0]);
    try {
      f.session_kinds.push_back(parse_session_kind(t.rows[r][1]));
      f.labels.push_back(parse_row_label(t.rows[r][3]));
    } catch (const Error& e) {
      throw Error(ErrorKind::kParse, path.filename().string() + " line " + std::to_string(r + 2) + ": " + e.what());
    }
    f.timestamps_s.push_back(number_at(t, path, r, 2));
    for (std::size_t c = 0; c < f.columns.size(); ++c) {
      f.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = number_at(t, path, r, c + 4);
    }
  }
  f.constant_columns.assign(f.columns.size(), false);
  return f;
}

std::map<std::string, std::string> digest_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  if (!fs::exists(root)) return out;
  if (fs::is_regular_file(root)) {
    out[root.filename().string()] = sha256_file(root);
    return out;
  }
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), root).generic_string();
    if (rel == kManifestName) continue;
    out[rel] = sha256_file(e.path());
  }
  return out;
}

nlohmann::json RunManifest::to_json() const {
  return {{"tool", "stressor"},
          {"version", kToolVersion},
          {"command", command},
          {"master_seed", master_seed},
          {"config_digest", config_digest},
          {"modules",
           {{"signal-core", kToolVersion},
            {"cardiac", kToolVersion},
            {"eda", kToolVersion},
            {"respiration", kToolVersion},
            {"feature-matrix", kToolVersion},
            {"gbt", kToolVersion},
            {"stats", kToolVersion},
            {"experiments", kToolVersion},
            {"synth", kToolVersion}}},
          {"inputs", inputs},
          {"outputs", outputs}};
}

}  // namespace stressor
