#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "stressor/error.hpp"
#include "stressor/experiments.hpp"
#include "stressor/io.hpp"
#include "stressor/parallel.hpp"
#include "stressor/session.hpp"
#include "stressor/synth.hpp"

using namespace stressor;
using nlohmann::json;

namespace {

// Analysis parameters that are not part of the LOSO configuration.
struct AnalysisConfig {
  double alpha = 0.05;
  int behavior_stride = 30;
  int shap_row_stride = 10;
};

struct FeatureConfig {
  double window_s = 30.0;
  double hop_s = 1.0;
  bool vehicle = false;
};

// Everything a run can be configured with. One JSON file covers all
// sections; flags are applied on top.
struct RunConfig {
  std::optional<std::uint64_t> seed;
  SynthConfig synth;
  PreprocessOptions preprocess;
  FeatureConfig features;
  LosoConfig experiment;
  AnalysisConfig analysis;
};

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) throw Error(ErrorKind::kValidation, "unknown config key '" + where + k + "'");
  }
}

RunConfig load_config(const std::string& path) {
  RunConfig c;
  if (path.empty()) return c;
  const json j = read_json(path);
  if (!j.is_object()) throw Error(ErrorKind::kValidation, "config must be a JSON object");
  reject_unknown(j, {"seed", "synth", "preprocess", "features", "experiment", "analysis"}, "");
  try {
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("synth")) c.synth = synth_config_from_json(j.at("synth"));
    if (j.contains("preprocess")) {
      const json& p = j.at("preprocess");
      reject_unknown(p, {"mains_hz", "target_hz"}, "preprocess.");
      c.preprocess.mains_hz = p.value("mains_hz", c.preprocess.mains_hz);
      c.preprocess.target_hz = p.value("target_hz", c.preprocess.target_hz);
    }
    if (j.contains("features")) {
      const json& f = j.at("features");
      reject_unknown(f, {"window_s", "hop_s", "vehicle"}, "features.");
      c.features.window_s = f.value("window_s", c.features.window_s);
      c.features.hop_s = f.value("hop_s", c.features.hop_s);
      c.features.vehicle = f.value("vehicle", c.features.vehicle);
    }
    if (j.contains("experiment")) c.experiment = loso_config_from_json(j.at("experiment"));
    if (j.contains("analysis")) {
      const json& a = j.at("analysis");
      reject_unknown(a, {"alpha", "behavior_stride", "shap_row_stride"}, "analysis.");
      c.analysis.alpha = a.value("alpha", c.analysis.alpha);
      c.analysis.behavior_stride = a.value("behavior_stride", c.analysis.behavior_stride);
      c.analysis.shap_row_stride = a.value("shap_row_stride", c.analysis.shap_row_stride);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kValidation, "config: " + std::string(e.what()));
  }
  return c;
}

json to_json(const RunConfig& c) {
  return {{"seed", c.seed ? json(*c.seed) : json(nullptr)},
          {"synth", to_json(c.synth)},
          {"preprocess", {{"mains_hz", c.preprocess.mains_hz}, {"target_hz", c.preprocess.target_hz}}},
          {"features", {{"window_s", c.features.window_s}, {"hop_s", c.features.hop_s}, {"vehicle", c.features.vehicle}}},
          {"experiment", to_json(c.experiment)},
          {"analysis",
           {{"alpha", c.analysis.alpha},
            {"behavior_stride", c.analysis.behavior_stride},
            {"shap_row_stride", c.analysis.shap_row_stride}}}};
}

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  int jobs = 0;
};

// Precedence: config file < STRESSOR_SEED < --seed.
RunConfig resolve(const Common& common) {
  RunConfig c = load_config(common.config_path);
  if (const char* env = std::getenv("STRESSOR_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      c.seed = std::stoull(env, &used);
      if (env[used] != '\0') throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw Error(ErrorKind::kValidation, "STRESSOR_SEED must be a non-negative integer");
    }
  }
  if (common.seed) c.seed = common.seed;
  if (c.seed) {
    c.synth.seed = *c.seed;
    c.experiment.master_seed = *c.seed;
  }
  const int jobs = common.jobs > 0 ? common.jobs : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  c.experiment.jobs = jobs;
  return c;
}

std::string dir_name(const Session& s) { return s.subject_id + "_" + session_letter(s.kind); }

void write_manifest(const fs::path& out, const std::string& command, const RunConfig& cfg, const fs::path& input) {
  RunManifest m;
  m.command = command;
  m.master_seed = cfg.seed.value_or(0);
  m.config_digest = sha256_hex(to_json(cfg).dump());
  if (!input.empty()) m.inputs = digest_tree(input);
  m.outputs = digest_tree(out);
  write_json(out / kManifestName, m.to_json());
}

// A directory holding meta.json is one session; otherwise every
// sub-directory holding one is.
std::vector<fs::path> session_inputs(const fs::path& in) {
  if (fs::exists(in / "meta.json")) return {in};
  std::vector<fs::path> dirs = list_session_dirs(in);
  if (dirs.empty()) throw Error(ErrorKind::kIo, in.string() + " holds no session directories");
  return dirs;
}

fs::path session_output(const fs::path& in, const fs::path& out, const fs::path& dir) {
  return dir == in ? out : out / dir.filename();
}

void cmd_synth(const Common& common, const fs::path& out, std::optional<int> subjects) {
  RunConfig cfg = resolve(common);
  if (subjects) cfg.synth.n_subjects = *subjects;
  cfg.synth.validate();
  std::vector<std::pair<int, SessionKind>> work;
  for (int i = 0; i < cfg.synth.n_subjects; ++i) {
    for (SessionKind k : cfg.synth.session_kinds) work.emplace_back(i, k);
  }
  // Generated and written one session at a time: raw-rate cohorts do not fit in memory.
  parallel_for(work.size(), cfg.experiment.jobs, [&](std::size_t w) {
    const SynthSession s = generate_session(cfg.synth, work[w].first, work[w].second);
    write_session_dir(out / dir_name(s.session), s.session, &s.truth);
  });
  write_json(out / "synth_config.json", to_json(cfg.synth));
  write_manifest(out, "synth", cfg, {});
}

void cmd_preprocess(const Common& common, const fs::path& in, const fs::path& out) {
  const RunConfig cfg = resolve(common);
  const std::vector<fs::path> dirs = session_inputs(in);
  parallel_for(dirs.size(), cfg.experiment.jobs, [&](std::size_t i) {
    const Session raw = read_session_dir(dirs[i]);
    const Session pre = preprocess_session(raw, cfg.preprocess);
    const std::optional<GroundTruth> truth = read_ground_truth(dirs[i]);
    write_session_dir(session_output(in, out, dirs[i]), pre, truth ? &*truth : nullptr);
  });
  write_manifest(out, "preprocess", cfg, in);
}

void cmd_features(const Common& common, const fs::path& in, const fs::path& out, std::optional<bool> vehicle,
                  std::optional<double> window, std::optional<double> hop) {
  RunConfig cfg = resolve(common);
  if (vehicle) cfg.features.vehicle = *vehicle;
  if (window) cfg.features.window_s = *window;
  if (hop) cfg.features.hop_s = *hop;
  FrameOptions opts;
  opts.window_s = cfg.features.window_s;
  opts.hop_s = cfg.features.hop_s;
  const std::vector<fs::path> dirs = session_inputs(in);
  parallel_for(dirs.size(), cfg.experiment.jobs, [&](std::size_t i) {
    const Session s = read_session_dir(dirs[i]);
    const fs::path dst = session_output(in, out, dirs[i]);
    write_frame_csv(dst / "features.csv", build_feature_frame(s, cfg.features.vehicle && s.vehicle, opts));
    if (s.vehicle) write_frame_csv(dst / "vehicle_metrics.csv", build_vehicle_frame(s, opts));
    write_json(dst / "meta.json", session_meta(s));
  });
  write_manifest(out, "features", cfg, in);
}

// Feature directories are loaded as they are; preprocessed session
// directories are turned into frames on the fly.
std::vector<SessionFrames> load_dataset(const fs::path& in, const RunConfig& cfg) {
  const std::vector<fs::path> dirs = session_inputs(in);
  std::vector<SessionFrames> out(dirs.size());
  FrameOptions opts;
  opts.window_s = cfg.features.window_s;
  opts.hop_s = cfg.features.hop_s;
  parallel_for(dirs.size(), cfg.experiment.jobs, [&](std::size_t i) {
    if (fs::exists(dirs[i] / "features.csv")) {
      out[i].meta = SessionMeta::of(read_session_header(dirs[i]));
      out[i].features = read_frame_csv(dirs[i] / "features.csv");
      if (fs::exists(dirs[i] / "vehicle_metrics.csv")) {
        out[i].vehicle_metrics = read_frame_csv(dirs[i] / "vehicle_metrics.csv");
      }
    } else {
      out[i] = build_session_frames(read_session_dir(dirs[i]), opts);
    }
  });
  return out;
}

void write_predictions(const fs::path& path, const std::vector<PredictionRow>& rows) {
  CsvTable t;
  t.header = {"subject", "session", "seed", "time_s", "p_stress", "label"};
  t.rows.reserve(rows.size());
  for (const auto& r : rows) {
    t.rows.push_back({r.subject_id, std::string(1, session_letter(r.kind)), std::to_string(r.seed),
                      format_number(r.time_s), format_number(r.p_stress), std::string(to_string(r.label))});
  }
  write_csv(path, t);
}

std::string num_or_empty(const json& j) { return j.is_number() ? format_number(j.get<double>()) : ""; }

void cmd_experiment(const Common& common, const std::string& name, const fs::path& in, const fs::path& out) {
  const RunConfig cfg = resolve(common);
  cfg.experiment.validate();
  const std::vector<SessionFrames> dataset = load_dataset(in, cfg);
  json report;

  if (name == "matrix") {
    const SessionMatrix m = cross_session_matrix(dataset, cfg.experiment);
    report = to_json(m);
    CsvTable t{{"train", "test", "auroc", "ci_low", "ci_high", "mean_train_rows"}, {}};
    for (const auto& c : m.cells) {
      t.rows.push_back({c.train, c.test, c.auroc ? format_number(c.auroc->auroc) : "",
                        c.auroc ? format_number(c.auroc->ci_low) : "", c.auroc ? format_number(c.auroc->ci_high) : "",
                        format_number(c.mean_train_rows)});
    }
    write_csv(out / "matrix.csv", t);
  } else {
    const LosoResult loso = run_loso(dataset, cfg.experiment);
    write_predictions(out / "predictions.csv", loso.predictions);
    json base = to_json(loso, cfg.experiment);
    if (name == "loso") {
      report = base;
    } else if (name == "events") {
      const auto events = event_sensitivity(loso.averaged, cfg.analysis.alpha);
      report = to_json(events);
      CsvTable t{{"event", "subject", "auroc", "slope", "p_fdr", "flagged"}, {}};
      for (const auto& e : events) {
        for (std::size_t i = 0; i < e.subjects.size(); ++i) {
          t.rows.push_back({e.event_name, e.subjects[i], format_number(e.auroc[i]), format_number(e.slope[i]),
                            format_number(e.p_fdr), e.flagged ? "true" : "false"});
        }
      }
      write_csv(out / "events.csv", t);
    } else if (name == "behavior") {
      json kinds = json::array();
      CsvTable t{{"session_kind", "metric", "beta", "ci_low", "ci_high", "p", "p_fdr", "significant"}, {}};
      for (SessionKind k : cfg.experiment.test_sessions) {
        try {
          const BehaviorReport b =
              behavior_association(loso.averaged, dataset, k, cfg.analysis.behavior_stride, cfg.analysis.alpha);
          kinds.push_back(to_json(b));
          for (const auto& m : b.metrics) {
            if (!m.fit) continue;
            t.rows.push_back({std::string(1, session_letter(k)), m.metric, format_number(m.fit->beta[1]),
                              format_number(m.fit->beta_ci[1].low), format_number(m.fit->beta_ci[1].high),
                              format_number(m.fit->beta_p[1]), format_number(m.p_fdr),
                              m.significant ? "true" : "false"});
          }
        } catch (const Error& e) {
          kinds.push_back({{"session_kind", std::string(1, session_letter(k))},
                           {"skipped", std::string(to_string(e.kind())) + ": " + e.what()}});
        }
      }
      report = {{"experiment", "behavior"}, {"stride", cfg.analysis.behavior_stride}, {"kinds", kinds}};
      write_csv(out / "behavior.csv", t);
    } else if (name == "recovery") {
      const RecoveryReport r = recovery_analysis(loso.averaged);
      report = to_json(r);
      CsvTable t{{"session", "category", "rho", "p_fdr", "start_level"}, {}};
      for (const auto& s : report.at("sessions")) {
        t.rows.push_back({s.at("session").get<std::string>(), s.at("category").get<std::string>(),
                          num_or_empty(s.at("rho")), num_or_empty(s.at("p_fdr")), num_or_empty(s.at("start_level"))});
      }
      write_csv(out / "recovery.csv", t);
    } else {
      throw Error(ErrorKind::kValidation, "unknown experiment '" + name + "'");
    }
    if (name != "loso") report["loso"] = base;
  }
  write_json(out / "report.json", report);
  write_manifest(out, "experiment " + name, cfg, in);
}

void cmd_shap(const Common& common, const fs::path& in, const fs::path& out, std::optional<int> stride) {
  RunConfig cfg = resolve(common);
  if (stride) cfg.analysis.shap_row_stride = *stride;
  cfg.experiment.validate();
  const std::vector<SessionFrames> dataset = load_dataset(in, cfg);
  const ShapResult r = shap_analysis(dataset, cfg.experiment, cfg.analysis.shap_row_stride);
  CsvTable summary{{"rank", "feature", "mean_abs_shap"}, {}};
  for (std::size_t i = 0; i < r.summary.ranking.size(); ++i) {
    summary.rows.push_back(
        {std::to_string(i + 1), r.summary.ranking[i].feature, format_number(r.summary.ranking[i].mean_abs)});
  }
  write_csv(out / "shap_summary.csv", summary);
  CsvTable values{{"session", "time_s", "feature", "shap", "value"}, {}};
  for (Eigen::Index row = 0; row < r.summary.values.rows(); ++row) {
    for (std::size_t c = 0; c < r.columns.size(); ++c) {
      const auto ci = static_cast<Eigen::Index>(c);
      values.rows.push_back({r.row_sessions[static_cast<std::size_t>(row)],
                             format_number(r.row_times_s[static_cast<std::size_t>(row)]), r.columns[c],
                             format_number(r.summary.values(row, ci)), format_number(r.features(row, ci))});
    }
  }
  write_csv(out / "shap_values.csv", values);
  json report = to_json(r);
  report["config"] = to_json(cfg.experiment);
  report["row_stride"] = cfg.analysis.shap_row_stride;
  write_json(out / "report.json", report);
  write_manifest(out, "shap", cfg, in);
}

int emit_error(const std::string& command, const std::string& kind, const std::string& message, int code) {
  std::cerr << json{{"error", {{"command", command}, {"kind", kind}, {"message", message}}}}.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal driver stress estimation pipeline"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  Common common;
  std::optional<std::uint64_t> seed;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "JSON configuration file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Master seed (overrides config and STRESSOR_SEED)");
    sub->add_option("--jobs", common.jobs, "Worker threads (default: hardware concurrency)")
        ->check(CLI::NonNegativeNumber);
  };

  std::string in, out;

  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic raw dataset with ground truth");
  std::optional<int> subjects;
  synth->add_option("--out", out, "Output dataset directory")->required();
  synth->add_option("--subjects", subjects, "Number of subjects")->check(CLI::PositiveNumber);
  add_common(synth);

  CLI::App* pre = app.add_subcommand("preprocess", "Filter, fuse and downsample raw sessions");
  pre->add_option("--in", in, "Raw session or dataset directory")->required()->check(CLI::ExistingDirectory);
  pre->add_option("--out", out, "Output directory")->required();
  add_common(pre);

  CLI::App* feat = app.add_subcommand("features", "Build per-second feature frames");
  std::optional<bool> vehicle;
  std::optional<double> window, hop;
  feat->add_option("--in", in, "Preprocessed session or dataset directory")->required()->check(CLI::ExistingDirectory);
  feat->add_option("--out", out, "Output directory")->required();
  feat->add_flag("--vehicle", vehicle, "Add the vehicle model columns");
  feat->add_option("--window", window, "Window length in seconds (default 30)")->check(CLI::PositiveNumber);
  feat->add_option("--hop", hop, "Hop in seconds (default 1)")->check(CLI::PositiveNumber);
  add_common(feat);

  CLI::App* exp = app.add_subcommand("experiment", "Run an experiment on a feature or preprocessed dataset");
  std::string experiment;
  exp->add_option("name", experiment, "loso | matrix | events | behavior | recovery")
      ->required()
      ->check(CLI::IsMember({"loso", "matrix", "events", "behavior", "recovery"}));
  exp->add_option("--in", in, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  exp->add_option("--out", out, "Output directory")->required();
  add_common(exp);

  CLI::App* shap = app.add_subcommand("shap", "TreeSHAP attributions over held-out rows");
  std::optional<int> shap_stride;
  shap->add_option("--in", in, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  shap->add_option("--out", out, "Output directory")->required();
  shap->add_option("--row-stride", shap_stride, "Keep every n-th labelled row")->check(CLI::PositiveNumber);
  add_common(shap);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return emit_error("", "usage", e.what(), 2);
  }

  common.seed = seed;
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (command == "synth") cmd_synth(common, out, subjects);
    else if (command == "preprocess") cmd_preprocess(common, in, out);
    else if (command == "features") cmd_features(common, in, out, vehicle, window, hop);
    else if (command == "experiment") cmd_experiment(common, experiment, in, out);
    else if (command == "shap") cmd_shap(common, in, out, shap_stride);
  } catch (const Error& e) {
    return emit_error(command, std::string(to_string(e.kind())), e.what(), 1);
  } catch (const std::exception& e) {
    return emit_error(command, "internal", e.what(), 1);
  }
  return 0;
}
