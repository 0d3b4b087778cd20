#include "stressor/experiments.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <map>
#include <random>
#include <set>

#include "stressor/error.hpp"
#include "stressor/io.hpp"
#include "stressor/parallel.hpp"
#include "stressor/synth.hpp"

namespace stressor {

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

bool has_kind(const std::vector<SessionKind>& kinds, SessionKind k) {
  return std::find(kinds.begin(), kinds.end(), k) != kinds.end();
}

std::vector<std::string> subject_list(const std::vector<SessionFrames>& sessions) {
  std::set<std::string> ids;
  for (const auto& s : sessions) ids.insert(s.meta.subject_id);
  return {ids.begin(), ids.end()};
}

}  // namespace

SessionMeta SessionMeta::of(const Session& s) { return {s.subject_id, s.kind, s.phases, s.events}; }

SessionFrames build_session_frames(const Session& preprocessed, const FrameOptions& options) {
  SessionFrames out;
  out.meta = SessionMeta::of(preprocessed);
  const bool vehicle = preprocessed.vehicle.has_value();
  out.features = build_feature_frame(preprocessed, vehicle, options);
  if (vehicle) out.vehicle_metrics = build_vehicle_frame(preprocessed, options);
  return out;
}

std::vector<SessionFrames> build_dataset_frames(const std::vector<Session>& preprocessed,
                                                const FrameOptions& options, int jobs) {
  std::vector<SessionFrames> out(preprocessed.size());
  FrameOptions inner = options;
  inner.jobs = 1;
  parallel_for(out.size(), jobs, [&](std::size_t i) { out[i] = build_session_frames(preprocessed[i], inner); });
  return out;
}

void LosoConfig::validate() const {
  gbt.validate();
  std::vector<std::string> bad;
  if (n_seeds < 1) bad.push_back("n_seeds");
  if (modalities.empty()) bad.push_back("modalities");
  if (train_sessions.empty()) bad.push_back("train_sessions");
  if (test_sessions.empty()) bad.push_back("test_sessions");
  if (knn_k < 1) bad.push_back("knn_k");
  if (!(baseline_s > 0.0)) bad.push_back("baseline_s");
  if (bootstrap_iters < 0) bad.push_back("bootstrap_iters");
  if (permutation_models < 1) bad.push_back("permutation_models");
  if (permutation_boot < 1) bad.push_back("permutation_boot");
  if (!bad.empty()) {
    std::string msg = "invalid experiment config fields:";
    for (const auto& b : bad) msg += " " + b;
    throw Error(ErrorKind::kValidation, msg);
  }
}

nlohmann::json to_json(const LosoConfig& c) {
  nlohmann::json mods = nlohmann::json::array();
  for (Modality m : c.modalities) mods.push_back(std::string(to_string(m)));
  auto kinds = [](const std::vector<SessionKind>& ks) {
    nlohmann::json a = nlohmann::json::array();
    for (SessionKind k : ks) a.push_back(std::string(1, session_letter(k)));
    return a;
  };
  return {{"gbt", to_json(c.gbt)},
          {"n_seeds", c.n_seeds},
          {"modalities", mods},
          {"train_sessions", kinds(c.train_sessions)},
          {"test_sessions", kinds(c.test_sessions)},
          {"master_seed", c.master_seed},
          {"knn_k", c.knn_k},
          {"baseline_s", c.baseline_s},
          {"bootstrap_iters", c.bootstrap_iters},
          {"permutation", c.permutation},
          {"permutation_models", c.permutation_models},
          {"permutation_boot", c.permutation_boot}};
}

LosoConfig loso_config_from_json(const nlohmann::json& j, LosoConfig c) {
  if (!j.is_object()) throw Error(ErrorKind::kValidation, "experiment config must be a JSON object");
  std::vector<std::string> bad;
  auto kinds = [](const nlohmann::json& a) {
    std::vector<SessionKind> out;
    for (const auto& k : a) out.push_back(parse_session_kind(k.get<std::string>()));
    return out;
  };
  for (const auto& [k, v] : j.items()) {
    try {
      if (k == "gbt") c.gbt = gbt_config_from_json(v, c.gbt);
      else if (k == "n_seeds") c.n_seeds = v.get<int>();
      else if (k == "modalities") {
        c.modalities.clear();
        for (const auto& m : v) c.modalities.push_back(parse_modality(m.get<std::string>()));
      } else if (k == "train_sessions") c.train_sessions = kinds(v);
      else if (k == "test_sessions") c.test_sessions = kinds(v);
      else if (k == "master_seed") c.master_seed = v.get<std::uint64_t>();
      else if (k == "knn_k") c.knn_k = v.get<int>();
      else if (k == "baseline_s") c.baseline_s = v.get<double>();
      else if (k == "bootstrap_iters") c.bootstrap_iters = v.get<int>();
      else if (k == "permutation") c.permutation = v.get<bool>();
      else if (k == "permutation_models") c.permutation_models = v.get<int>();
      else if (k == "permutation_boot") c.permutation_boot = v.get<int>();
      else bad.push_back(k);
    } catch (const nlohmann::json::exception&) {
      bad.push_back(k);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kValidation) throw;
      bad.push_back(k);
    }
  }
  if (!bad.empty()) {
    std::string msg = "invalid experiment config fields:";
    for (const auto& b : bad) msg += " " + b;
    throw Error(ErrorKind::kValidation, msg);
  }
  c.validate();
  return c;
}

std::vector<std::string> modality_columns(const std::vector<Modality>& modalities,
                                          const std::vector<std::string>& available) {
  std::vector<std::string> out;
  for (const auto& c : available) {
    if (std::find(modalities.begin(), modalities.end(), column_modality(c)) != modalities.end()) out.push_back(c);
  }
  return out;
}

std::uint64_t fold_seed(std::uint64_t master_seed, const std::string& subject_id, int seed_index) {
  return mix_seed(master_seed, fnv1a(subject_id), static_cast<std::uint64_t>(seed_index));
}

NormalizedDataset normalize_sessions(const std::vector<SessionFrames>& sessions, int knn_k, double baseline_s,
                                     int jobs) {
  std::vector<std::optional<SessionFrames>> slots(sessions.size());
  std::vector<std::string> reasons(sessions.size());
  parallel_for(sessions.size(), jobs, [&](std::size_t i) {
    const SessionFrames& s = sessions[i];
    try {
      const TimeInterval base = baseline_interval(s.meta.phases, baseline_s);
      SessionFrames n = s;
      n.features = knn_impute(zscore_baseline(s.features, base), knn_k, true);
      slots[i] = std::move(n);
    } catch (const Error& e) {
      reasons[i] = s.meta.key() + ": " + e.what();
    }
  });
  NormalizedDataset out;
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    if (slots[i]) out.sessions.push_back(std::move(*slots[i]));
    else out.skipped.push_back(reasons[i]);
  }
  return out;
}

namespace {

// Column lookup of `columns` inside one session frame (-1 where absent).
std::vector<int> column_map(const FeatureFrame& f, const std::vector<std::string>& columns) {
  std::vector<int> m;
  for (const auto& c : columns) m.push_back(f.column_index(c));
  return m;
}

std::map<std::string, std::vector<std::size_t>> sessions_by_subject(const std::vector<SessionFrames>& s) {
  std::map<std::string, std::vector<std::size_t>> m;
  for (std::size_t i = 0; i < s.size(); ++i) m[s[i].meta.subject_id].push_back(i);
  return m;
}

Eigen::MatrixXd rows_matrix(const FeatureFrame& f, const std::vector<int>& map,
                            const std::vector<std::size_t>& rows) {
  Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(map.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < map.size(); ++c) {
      X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          map[c] < 0 ? kMissing : f.values(static_cast<Eigen::Index>(rows[r]), map[c]);
    }
  }
  return X;
}

}  // namespace

FoldData fold_training_data(const std::vector<SessionFrames>& normalized, const std::string& held_out,
                            int seed_index, const LosoConfig& config, const std::vector<std::string>& columns) {
  const auto by_subject = sessions_by_subject(normalized);
  std::vector<std::string> pool;
  for (const auto& [id, idx] : by_subject) {
    if (id != held_out) pool.push_back(id);
  }
  FoldData d;
  if (pool.empty()) return d;
  const std::uint64_t seed = fold_seed(config.master_seed, held_out, seed_index);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  for (std::size_t i = 0; i < pool.size(); ++i) d.train_subjects.push_back(pool[pick(rng)]);

  std::mt19937_64 flip_rng(mix_seed(seed, 0x9E3779B9ULL, 1));
  std::bernoulli_distribution coin(0.5);
  std::vector<std::vector<double>> rows;
  for (const auto& subj : d.train_subjects) {
    for (std::size_t si : by_subject.at(subj)) {
      const SessionFrames& s = normalized[si];
      if (!has_kind(config.train_sessions, s.meta.kind)) continue;
      const bool swap = config.permute_labels && coin(flip_rng);
      const auto map = column_map(s.features, columns);
      for (std::size_t r = 0; r < s.features.rows(); ++r) {
        const RowLabel l = s.features.labels[r];
        if (l == RowLabel::kExcluded) continue;
        std::vector<double> row(columns.size());
        for (std::size_t c = 0; c < columns.size(); ++c) {
          row[c] = map[c] < 0 ? kMissing : s.features.values(static_cast<Eigen::Index>(r), map[c]);
        }
        rows.push_back(std::move(row));
        const bool stress = l == RowLabel::kStress;
        d.y.push_back((stress != swap) ? 1.0 : 0.0);
        d.provenance.push_back(s.meta.key());
      }
    }
  }
  d.X.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < columns.size(); ++c) d.X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  return d;
}

std::string fold_fingerprint(const FoldData& d) {
  std::string bytes;
  bytes.reserve(static_cast<std::size_t>(d.X.size() + d.y.size()) * sizeof(double));
  auto put = [&](double v) {
    if (is_missing(v)) v = kMissing;  // one NaN bit pattern
    char b[sizeof(double)];
    std::memcpy(b, &v, sizeof v);
    bytes.append(b, sizeof b);
  };
  for (Eigen::Index r = 0; r < d.X.rows(); ++r) {
    for (Eigen::Index c = 0; c < d.X.cols(); ++c) put(d.X(r, c));
  }
  for (double v : d.y) put(v);
  return sha256_hex(bytes);
}

EvalReport evaluate_predictions(const std::vector<SessionPredictions>& predictions,
                                const std::vector<SessionKind>& kinds, int bootstrap_iters, std::uint64_t seed) {
  std::vector<double> scores;
  std::vector<int> labels;
  double free_sum = 0.0, stress_sum = 0.0;
  for (const auto& p : predictions) {
    if (!has_kind(kinds, p.meta.kind)) continue;
    for (std::size_t i = 0; i < p.times_s.size(); ++i) {
      if (p.labels[i] == RowLabel::kExcluded) continue;
      const bool stress = p.labels[i] == RowLabel::kStress;
      scores.push_back(p.p_stress[i]);
      labels.push_back(stress ? 1 : 0);
      (stress ? stress_sum : free_sum) += p.p_stress[i];
    }
  }
  EvalReport r;
  r.n_rows = scores.size();
  if (bootstrap_iters > 0) {
    r.auroc = auroc_with_ci(scores, labels, bootstrap_iters, seed);
  } else {
    r.auroc.auroc = auroc_labeled(scores, labels);
    r.auroc.ci_low = r.auroc.ci_high = r.auroc.auroc;
    for (int l : labels) (l ? r.auroc.n_pos : r.auroc.n_neg)++;
  }
  r.mean_p_free = free_sum / static_cast<double>(r.auroc.n_neg);
  r.mean_p_stress = stress_sum / static_cast<double>(r.auroc.n_pos);
  return r;
}

namespace {

std::vector<std::string> dataset_columns(const std::vector<SessionFrames>& sessions) {
  std::set<std::string> present;
  for (const auto& s : sessions) present.insert(s.features.columns.begin(), s.features.columns.end());
  std::vector<std::string> out;
  for (const auto& c : physiological_columns()) {
    if (present.count(c)) out.push_back(c);
  }
  for (const auto& c : vehicle_model_columns()) {
    if (present.count(c)) out.push_back(c);
  }
  return out;
}

struct FoldOutput {
  std::vector<std::size_t> sessions;          // indices into the normalised dataset
  std::vector<std::vector<double>> p_stress;  // per session, per row
  FoldAudit audit;
};

LosoResult run_loso_normalized(const NormalizedDataset& data, const LosoConfig& config);

ScoredSample scored_sample(const std::vector<SessionPredictions>& preds, const std::vector<SessionKind>& kinds) {
  ScoredSample s;
  for (const auto& p : preds) {
    if (!has_kind(kinds, p.meta.kind)) continue;
    for (std::size_t i = 0; i < p.times_s.size(); ++i) {
      if (p.labels[i] == RowLabel::kExcluded) continue;
      s.scores.push_back(p.p_stress[i]);
      s.labels.push_back(p.labels[i] == RowLabel::kStress ? 1 : 0);
    }
  }
  return s;
}

LosoResult run_loso_normalized(const NormalizedDataset& data, const LosoConfig& config) {
  config.validate();
  const std::vector<SessionFrames>& sessions = data.sessions;
  const std::vector<std::string> subjects = subject_list(sessions);
  if (subjects.size() < 3) {
    throw Error(ErrorKind::kInsufficientData, "LOSO needs at least 3 subjects, found " +
                                                  std::to_string(subjects.size()));
  }
  LosoResult result;
  result.skipped = data.skipped;
  result.columns = modality_columns(config.modalities, dataset_columns(sessions));
  if (result.columns.empty()) throw Error(ErrorKind::kValidation, "no feature columns for the selected modalities");
  const auto by_subject = sessions_by_subject(sessions);

  const std::size_t n_jobs = subjects.size() * static_cast<std::size_t>(config.n_seeds);
  std::vector<FoldOutput> outputs(n_jobs);
  parallel_for(n_jobs, config.jobs, [&](std::size_t job) {
    const std::string& held_out = subjects[job / static_cast<std::size_t>(config.n_seeds)];
    const int seed_index = static_cast<int>(job % static_cast<std::size_t>(config.n_seeds));
    FoldOutput& out = outputs[job];
    const FoldData fold = fold_training_data(sessions, held_out, seed_index, config, result.columns);
    out.audit.held_out = held_out;
    out.audit.seed_index = seed_index;
    out.audit.seed = fold_seed(config.master_seed, held_out, seed_index);
    out.audit.train_subjects = fold.train_subjects;
    out.audit.train_rows = fold.y.size();
    out.audit.fingerprint = fold_fingerprint(fold);
    const std::string prefix = held_out + "/";
    out.audit.leaked =
        std::find(fold.train_subjects.begin(), fold.train_subjects.end(), held_out) != fold.train_subjects.end() ||
        std::any_of(fold.provenance.begin(), fold.provenance.end(),
                    [&](const std::string& k) { return k.rfind(prefix, 0) == 0; });

    std::vector<std::size_t> targets;
    for (std::size_t si : by_subject.at(held_out)) {
      if (has_kind(config.test_sessions, sessions[si].meta.kind)) targets.push_back(si);
    }
    if (targets.empty() || fold.y.empty()) return;
    GbtConfig gc = config.gbt;
    gc.seed = out.audit.seed;
    const GbtModel model = fit_gbt(fold.X, fold.y, gc);
    for (std::size_t si : targets) {
      const FeatureFrame& f = sessions[si].features;
      std::vector<std::size_t> all(f.rows());
      for (std::size_t r = 0; r < all.size(); ++r) all[r] = r;
      out.sessions.push_back(si);
      out.p_stress.push_back(predict_proba(model, rows_matrix(f, column_map(f, result.columns), all)));
    }
  });

  // Assemble in (subject, session, seed) order so output never depends on scheduling.
  std::map<std::size_t, std::vector<const std::vector<double>*>> per_session;
  for (std::size_t job = 0; job < n_jobs; ++job) {
    result.audits.push_back(outputs[job].audit);
    for (std::size_t k = 0; k < outputs[job].sessions.size(); ++k) {
      per_session[outputs[job].sessions[k]].push_back(&outputs[job].p_stress[k]);
    }
  }
  std::vector<std::size_t> order;
  for (const auto& [si, v] : per_session) order.push_back(si);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return sessions[a].meta.key() < sessions[b].meta.key(); });
  for (std::size_t si : order) {
    const FeatureFrame& f = sessions[si].features;
    const auto& seeds = per_session[si];
    SessionPredictions sp;
    sp.meta = sessions[si].meta;
    sp.times_s = f.timestamps_s;
    sp.labels = f.labels;
    sp.p_stress.assign(f.rows(), 0.0);
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      for (std::size_t r = 0; r < f.rows(); ++r) {
        sp.p_stress[r] += (*seeds[k])[r] / static_cast<double>(seeds.size());
        result.predictions.push_back({sp.meta.subject_id, sp.meta.kind, static_cast<int>(k), f.timestamps_s[r],
                                      (*seeds[k])[r], f.labels[r]});
      }
    }
    result.averaged.push_back(std::move(sp));
  }

  result.report = evaluate_predictions(result.averaged, config.test_sessions, config.bootstrap_iters,
                                       mix_seed(config.master_seed, 0xB0075ULL));
  if (config.permutation) {
    LosoConfig null_cfg = config;
    null_cfg.permutation = false;
    null_cfg.permute_labels = true;
    null_cfg.n_seeds = 1;
    null_cfg.bootstrap_iters = 0;
    const auto null_run = [&](std::uint64_t seed) {
      LosoConfig c = null_cfg;
      c.master_seed = seed;
      return scored_sample(run_loso_normalized(data, c).averaged, config.test_sessions);
    };
    result.report.permutation_p =
        permutation_pvalue(result.report.auroc.auroc, null_run, config.permutation_models, config.permutation_boot,
                           mix_seed(config.master_seed, 0x9E12ULL));
  }
  return result;
}

}  // namespace

LosoResult run_loso(const std::vector<SessionFrames>& dataset, const LosoConfig& config) {
  config.validate();
  return run_loso_normalized(normalize_sessions(dataset, config.knn_k, config.baseline_s, config.jobs), config);
}

nlohmann::json to_json(const LosoResult& r, const LosoConfig& c) {
  nlohmann::json audits = nlohmann::json::array();
  for (const auto& a : r.audits) {
    audits.push_back({{"held_out", a.held_out},
                      {"seed_index", a.seed_index},
                      {"seed", a.seed},
                      {"train_subjects", a.train_subjects},
                      {"train_rows", a.train_rows},
                      {"fingerprint", a.fingerprint},
                      {"leaked", a.leaked}});
  }
  nlohmann::json per_subject = nlohmann::json::array();
  for (const auto& p : r.averaged) {
    try {
      const EvalReport e = evaluate_predictions({p}, {p.meta.kind}, 0, 0);
      per_subject.push_back({{"session", p.meta.key()}, {"auroc", e.auroc.auroc},
                             {"mean_p_free", e.mean_p_free}, {"mean_p_stress", e.mean_p_stress}});
    } catch (const Error&) {
      per_subject.push_back({{"session", p.meta.key()}, {"auroc", nullptr}});
    }
  }
  const EvalReport& e = r.report;
  return {{"experiment", "loso"},
          {"auroc", e.auroc.auroc},
          {"ci", {e.auroc.ci_low, e.auroc.ci_high}},
          {"n_pos", e.auroc.n_pos},
          {"n_neg", e.auroc.n_neg},
          {"mean_p_free", e.mean_p_free},
          {"mean_p_stress", e.mean_p_stress},
          {"permutation_p", e.permutation_p ? nlohmann::json(*e.permutation_p) : nlohmann::json(nullptr)},
          {"columns", r.columns},
          {"config", to_json(c)},
          {"sessions", per_subject},
          {"skipped", r.skipped},
          {"audits", audits}};
}

SessionMatrix cross_session_matrix(const std::vector<SessionFrames>& dataset, const LosoConfig& config) {
  config.validate();
  const NormalizedDataset data = normalize_sessions(dataset, config.knn_k, config.baseline_s, config.jobs);
  const std::vector<std::pair<std::string, std::vector<SessionKind>>> sets{
      {"I", {SessionKind::kIrritation}},
      {"M", {SessionKind::kImpatience}},
      {"S", {SessionKind::kSurprise}},
      {"All", {SessionKind::kImpatience, SessionKind::kSurprise, SessionKind::kIrritation}}};
  auto subjects_with = [&](const std::vector<SessionKind>& kinds) {
    std::set<std::string> ids;
    for (const auto& s : data.sessions) {
      if (has_kind(kinds, s.meta.kind)) ids.insert(s.meta.subject_id);
    }
    return ids.size();
  };
  SessionMatrix m;
  for (const auto& [train_name, train_kinds] : sets) {
    std::optional<LosoResult> res;
    if (subjects_with(train_kinds) >= 3) {
      LosoConfig c = config;
      c.permutation = false;
      c.train_sessions = train_kinds;
      c.test_sessions = sets.back().second;
      try {
        res = run_loso_normalized(data, c);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kDegenerateLabels && e.kind() != ErrorKind::kUndefinedMetric &&
            e.kind() != ErrorKind::kInsufficientData) {
          throw;
        }
      }
    }
    for (const auto& [test_name, test_kinds] : sets) {
      MatrixCell cell;
      cell.train = train_name;
      cell.test = test_name;
      if (res && subjects_with(test_kinds) >= 3) {
        double rows = 0.0;
        for (const auto& a : res->audits) rows += static_cast<double>(a.train_rows);
        cell.mean_train_rows = res->audits.empty() ? 0.0 : rows / static_cast<double>(res->audits.size());
        try {
          cell.auroc = evaluate_predictions(res->averaged, test_kinds, config.bootstrap_iters,
                                            mix_seed(config.master_seed, fnv1a(train_name + ">" + test_name)))
                           .auroc;
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::kUndefinedMetric && e.kind() != ErrorKind::kInsufficientData) throw;
        }
      }
      m.cells.push_back(cell);
    }
  }
  return m;
}

std::vector<EventWindowStats> event_sensitivity(const std::vector<SessionPredictions>& predictions, double alpha) {
  std::vector<std::string> names;
  for (const auto& p : predictions) {
    for (const auto& e : p.meta.events) {
      if (std::find(names.begin(), names.end(), e.name) == names.end()) names.push_back(e.name);
    }
  }
  std::vector<EventWindowStats> out;
  for (const auto& name : names) {
    EventWindowStats st;
    st.event_name = name;
    // subject -> (auroc sum, slope sum, count)
    std::map<std::string, std::array<double, 3>> acc;
    for (const auto& p : predictions) {
      for (const auto& e : p.meta.events) {
        if (e.name != name) continue;
        std::vector<double> window, free;
        for (std::size_t i = 0; i < p.times_s.size(); ++i) {
          const double t = p.times_s[i];
          if (t >= e.onset_s && t < e.onset_s + kEventWindowS) window.push_back(p.p_stress[i]);
          if (p.labels[i] == RowLabel::kFree) free.push_back(p.p_stress[i]);
        }
        const double dt = p.times_s.size() > 1 ? p.times_s[1] - p.times_s[0] : 1.0;
        if (static_cast<double>(window.size()) * dt + 1e-9 < kEventWindowS) st.truncated = true;
        if (window.size() < 2 || free.empty()) continue;
        auto& a = acc[p.meta.subject_id];
        a[0] += auroc(window, free);
        a[1] += linear_slope(window, dt);
        a[2] += 1.0;
      }
    }
    for (const auto& [subj, a] : acc) {
      st.subjects.push_back(subj);
      st.auroc.push_back(a[0] / a[2]);
      st.slope.push_back(a[1] / a[2]);
    }
    if (!st.subjects.empty()) {
      st.mean_auroc = mean_of(st.auroc);
      st.mean_slope = mean_of(st.slope);
      try {
        st.wilcoxon_p = wilcoxon_signed_rank(st.slope, Alternative::kGreater).p;
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kUndefinedTest) throw;
        st.wilcoxon_p = 1.0;
      }
    }
    out.push_back(std::move(st));
  }
  std::vector<double> ps;
  for (const auto& s : out) ps.push_back(s.wilcoxon_p);
  const FdrResult fdr = fdr_bh(ps, alpha);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].p_fdr = fdr.adjusted[i];
    out[i].flagged = fdr.rejected[i];
  }
  return out;
}

BehaviorReport behavior_association(const std::vector<SessionPredictions>& predictions,
                                    const std::vector<SessionFrames>& dataset, SessionKind kind, int stride,
                                    double alpha) {
  if (stride < 1) throw Error(ErrorKind::kValidation, "stride must be >= 1");
  std::map<std::string, const SessionFrames*> frames;
  for (const auto& s : dataset) frames[s.meta.key()] = &s;
  const auto& metrics = vehicle_metric_columns();
  std::vector<std::vector<double>> ys(metrics.size()), xs(metrics.size());
  std::vector<std::vector<std::string>> gs(metrics.size());
  for (const auto& p : predictions) {
    if (p.meta.kind != kind) continue;
    const auto it = frames.find(p.meta.key());
    if (it == frames.end() || it->second->vehicle_metrics.rows() == 0) continue;
    const FeatureFrame& v = it->second->vehicle_metrics;
    std::map<long long, std::size_t> by_time;
    for (std::size_t r = 0; r < v.rows(); ++r) by_time[std::llround(v.timestamps_s[r] * 1000.0)] = r;
    std::size_t aligned = 0;
    for (std::size_t i = 0; i < p.times_s.size(); ++i) {
      const auto f = by_time.find(std::llround(p.times_s[i] * 1000.0));
      if (f == by_time.end() || is_missing(p.p_stress[i])) continue;
      if (aligned++ % static_cast<std::size_t>(stride) != 0) continue;
      for (std::size_t m = 0; m < metrics.size(); ++m) {
        const int c = v.column_index(metrics[m]);
        if (c < 0) continue;
        const double y = v.values(static_cast<Eigen::Index>(f->second), c);
        if (is_missing(y)) continue;
        ys[m].push_back(y);
        xs[m].push_back(p.p_stress[i]);
        gs[m].push_back(p.meta.subject_id);
      }
    }
  }
  BehaviorReport rep;
  rep.kind = kind;
  std::vector<double> ps;
  std::vector<std::size_t> fitted;
  for (std::size_t m = 0; m < metrics.size(); ++m) {
    MetricAssociation a;
    a.metric = metrics[m];
    if (ys[m].empty()) {
      a.skipped_reason = "metric entirely missing";
    } else {
      try {
        a.fit = lmm_fit(ys[m], xs[m], gs[m]);
        ps.push_back(a.fit->beta_p[1]);
        fitted.push_back(m);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kRankDeficiency) throw;
        a.skipped_reason = e.what();
      }
    }
    rep.metrics.push_back(std::move(a));
  }
  const FdrResult fdr = fdr_bh(ps, alpha);
  for (std::size_t k = 0; k < fitted.size(); ++k) {
    rep.metrics[fitted[k]].p_fdr = fdr.adjusted[k];
    rep.metrics[fitted[k]].significant = fdr.rejected[k];
  }
  return rep;
}

std::string_view to_string(RecoveryCategory c) {
  switch (c) {
    case RecoveryCategory::kIncrease: return "Increase";
    case RecoveryCategory::kDecrease: return "Decrease";
    case RecoveryCategory::kStable: return "Stable";
  }
  return "?";
}

RecoverySession recovery_trend(const SessionPredictions& p) {
  if (!p.meta.phases.recovery) {
    throw Error(ErrorKind::kInsufficientRecovery, p.meta.key() + ": no recovery phase");
  }
  const TimeInterval rec = *p.meta.phases.recovery;
  if (rec.duration() < kMinRecoveryS) {
    throw Error(ErrorKind::kInsufficientRecovery, p.meta.key() + ": recovery shorter than 60 s");
  }
  std::vector<double> t, v, start;
  for (std::size_t i = 0; i < p.times_s.size(); ++i) {
    if (!rec.contains(p.times_s[i]) || is_missing(p.p_stress[i])) continue;
    t.push_back(p.times_s[i]);
    v.push_back(p.p_stress[i]);
    if (p.times_s[i] < rec.start_s + kStartLevelS) start.push_back(p.p_stress[i]);
  }
  if (t.size() < 3) {
    throw Error(ErrorKind::kInsufficientRecovery, p.meta.key() + ": too few recovery predictions");
  }
  RecoverySession r;
  r.session_key = p.meta.key();
  r.n = t.size();
  r.start_level = mean_of(start);
  try {
    const CorrelationResult c = spearman_rho(t, v);
    r.rho = c.rho;
    r.p = c.p;
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kUndefinedTest) throw;
    r.rho = 0.0;
    r.p = 1.0;
  }
  return r;
}

RecoveryReport recovery_analysis(const std::vector<SessionPredictions>& predictions) {
  RecoveryReport rep;
  for (const auto& p : predictions) {
    try {
      rep.sessions.push_back(recovery_trend(p));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kInsufficientRecovery) throw;
      rep.skipped.push_back(e.what());
    }
  }
  std::vector<double> ps;
  for (const auto& s : rep.sessions) ps.push_back(s.p);
  const FdrResult fdr = fdr_bh(ps, 0.05);
  std::vector<double> dec, rest;
  for (std::size_t i = 0; i < rep.sessions.size(); ++i) {
    auto& s = rep.sessions[i];
    s.p_fdr = fdr.adjusted[i];
    if (s.p_fdr < kRecoveryAlpha) s.category = s.rho > 0 ? RecoveryCategory::kIncrease : RecoveryCategory::kDecrease;
    (s.category == RecoveryCategory::kDecrease ? dec : rest).push_back(s.start_level);
  }
  if (dec.size() >= 2 && rest.size() >= 2) {
    try {
      rep.start_level_test = welch_t_test(rest, dec);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kUndefinedTest) throw;
    }
  }
  return rep;
}

ShapResult shap_analysis(const std::vector<SessionFrames>& dataset, const LosoConfig& config, int row_stride) {
  config.validate();
  if (row_stride < 1) throw Error(ErrorKind::kValidation, "row stride must be >= 1");
  const NormalizedDataset data = normalize_sessions(dataset, config.knn_k, config.baseline_s, config.jobs);
  const auto& sessions = data.sessions;
  const std::vector<std::string> subjects = subject_list(sessions);
  if (subjects.size() < 3) throw Error(ErrorKind::kInsufficientData, "SHAP analysis needs at least 3 subjects");
  const std::vector<std::string> columns = modality_columns(config.modalities, dataset_columns(sessions));
  const auto by_subject = sessions_by_subject(sessions);

  struct Part {
    std::vector<std::vector<double>> phi, x;
    std::vector<std::string> keys;
    std::vector<double> times;
    double base = 0.0;
  };
  std::vector<Part> parts(subjects.size());
  parallel_for(subjects.size(), config.jobs, [&](std::size_t i) {
    const FoldData fold = fold_training_data(sessions, subjects[i], 0, config, columns);
    if (fold.y.empty()) return;
    GbtConfig gc = config.gbt;
    gc.seed = fold_seed(config.master_seed, subjects[i], 0);
    const GbtModel model = fit_gbt(fold.X, fold.y, gc);
    Part& part = parts[i];
    for (std::size_t si : by_subject.at(subjects[i])) {
      const SessionFrames& s = sessions[si];
      if (!has_kind(config.test_sessions, s.meta.kind)) continue;
      const auto map = column_map(s.features, columns);
      std::size_t labelled = 0;
      for (std::size_t r = 0; r < s.features.rows(); ++r) {
        if (s.features.labels[r] == RowLabel::kExcluded) continue;
        if (labelled++ % static_cast<std::size_t>(row_stride) != 0) continue;
        const Eigen::MatrixXd row = rows_matrix(s.features, map, {r});
        std::vector<double> x(row.data(), row.data() + row.size());
        const ShapAttribution a = tree_shap(model, x);
        part.phi.push_back(a.values);
        part.x.push_back(std::move(x));
        part.keys.push_back(s.meta.key());
        part.times.push_back(s.features.timestamps_s[r]);
        part.base = a.base_value;
      }
    }
  });
  ShapResult res;
  res.columns = columns;
  std::size_t n = 0;
  double base = 0.0;
  std::size_t folds = 0;
  for (const auto& p : parts) {
    n += p.phi.size();
    if (!p.phi.empty()) {
      base += p.base;
      ++folds;
    }
  }
  const auto nc = static_cast<Eigen::Index>(columns.size());
  res.summary.values.resize(static_cast<Eigen::Index>(n), nc);
  res.features.resize(static_cast<Eigen::Index>(n), nc);
  Eigen::Index row = 0;
  for (const auto& p : parts) {
    for (std::size_t k = 0; k < p.phi.size(); ++k, ++row) {
      for (Eigen::Index c = 0; c < nc; ++c) {
        res.summary.values(row, c) = p.phi[k][static_cast<std::size_t>(c)];
        res.features(row, c) = p.x[k][static_cast<std::size_t>(c)];
      }
      res.row_sessions.push_back(p.keys[k]);
      res.row_times_s.push_back(p.times[k]);
    }
  }
  res.summary.base_value = folds ? base / static_cast<double>(folds) : 0.0;
  for (Eigen::Index c = 0; c < nc; ++c) {
    const double m = n ? res.summary.values.col(c).cwiseAbs().mean() : 0.0;
    res.summary.ranking.push_back({columns[static_cast<std::size_t>(c)], m});
  }
  std::stable_sort(res.summary.ranking.begin(), res.summary.ranking.end(),
                   [](const ShapRanking& a, const ShapRanking& b) { return a.mean_abs > b.mean_abs; });
  return res;
}

namespace {

nlohmann::json nullable(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

nlohmann::json lmm_json(const LmmFit& f) {
  return {{"intercept", f.beta[0]},
          {"slope", f.beta[1]},
          {"slope_se", f.beta_se[1]},
          {"slope_ci", {f.beta_ci[1].low, f.beta_ci[1].high}},
          {"slope_p", f.beta_p[1]},
          {"sigma2_residual", f.sigma2_residual},
          {"sigma2_intercept", f.sigma2_intercept},
          {"groups", f.group_count},
          {"n", f.n},
          {"log_likelihood", f.log_likelihood}};
}

}  // namespace

nlohmann::json to_json(const SessionMatrix& m) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : m.cells) {
    nlohmann::json j{{"train", c.train}, {"test", c.test}, {"mean_train_rows", c.mean_train_rows}};
    if (c.auroc) {
      j["auroc"] = c.auroc->auroc;
      j["ci"] = {c.auroc->ci_low, c.auroc->ci_high};
    } else {
      j["auroc"] = nullptr;
      j["ci"] = nullptr;
    }
    cells.push_back(std::move(j));
  }
  return {{"experiment", "matrix"}, {"cells", cells}};
}

nlohmann::json to_json(const std::vector<EventWindowStats>& events) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& e : events) {
    nlohmann::json per = nlohmann::json::array();
    for (std::size_t i = 0; i < e.subjects.size(); ++i) {
      per.push_back({{"subject", e.subjects[i]}, {"auroc", nullable(e.auroc[i])}, {"slope", nullable(e.slope[i])}});
    }
    out.push_back({{"event", e.event_name},
                   {"mean_auroc", nullable(e.mean_auroc)},
                   {"mean_slope", nullable(e.mean_slope)},
                   {"wilcoxon_p", e.wilcoxon_p},
                   {"p_fdr", e.p_fdr},
                   {"flagged", e.flagged},
                   {"truncated", e.truncated},
                   {"subjects", per}});
  }
  return {{"experiment", "events"}, {"window_s", kEventWindowS}, {"events", out}};
}

nlohmann::json to_json(const BehaviorReport& r) {
  nlohmann::json metrics = nlohmann::json::array();
  for (const auto& m : r.metrics) {
    nlohmann::json j{{"metric", m.metric}, {"p_fdr", m.p_fdr}, {"significant", m.significant}};
    if (m.fit) j["fit"] = lmm_json(*m.fit);
    else j["skipped"] = m.skipped_reason;
    metrics.push_back(std::move(j));
  }
  return {{"session_kind", std::string(1, session_letter(r.kind))}, {"metrics", metrics}};
}

nlohmann::json to_json(const RecoveryReport& r) {
  nlohmann::json sessions = nlohmann::json::array();
  std::map<std::string, int> counts{{"Increase", 0}, {"Decrease", 0}, {"Stable", 0}};
  for (const auto& s : r.sessions) {
    ++counts[std::string(to_string(s.category))];
    sessions.push_back({{"session", s.session_key},
                        {"rho", s.rho},
                        {"p", s.p},
                        {"p_fdr", s.p_fdr},
                        {"start_level", nullable(s.start_level)},
                        {"n", s.n},
                        {"category", to_string(s.category)}});
  }
  nlohmann::json welch = nullptr;
  if (r.start_level_test) {
    welch = {{"t", r.start_level_test->t}, {"df", r.start_level_test->df}, {"p", r.start_level_test->p}};
  }
  return {{"experiment", "recovery"},
          {"alpha", kRecoveryAlpha},
          {"counts", counts},
          {"sessions", sessions},
          {"skipped", r.skipped},
          {"start_level_test", welch}};
}

nlohmann::json to_json(const ShapResult& r) {
  nlohmann::json ranking = nlohmann::json::array();
  for (const auto& k : r.summary.ranking) ranking.push_back({{"feature", k.feature}, {"mean_abs", k.mean_abs}});
  return {{"experiment", "shap"},
          {"base_value", r.summary.base_value},
          {"rows", r.row_sessions.size()},
          {"ranking", ranking}};
}

}  // namespace stressor
