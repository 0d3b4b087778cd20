#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "stressor/features.hpp"
#include "stressor/gbt.hpp"
#include "stressor/session.hpp"
#include "stressor/stats.hpp"

namespace stressor {

// Everything an experiment needs to know about a session besides its frames.
struct SessionMeta {
  std::string subject_id;
  SessionKind kind = SessionKind::kImpatience;
  Phases phases;
  std::vector<StressorEvent> events;

  std::string key() const { return subject_id + "/" + session_letter(kind); }
  static SessionMeta of(const Session& s);
};

struct SessionFrames {
  SessionMeta meta;
  FeatureFrame features;         // physiological columns, plus vehicle model columns when recorded
  FeatureFrame vehicle_metrics;  // 8 behaviour metrics; empty without telemetry
};

SessionFrames build_session_frames(const Session& preprocessed, const FrameOptions& options = {});
std::vector<SessionFrames> build_dataset_frames(const std::vector<Session>& preprocessed,
                                                const FrameOptions& options = {}, int jobs = 1);

struct LosoConfig {
  GbtConfig gbt;
  int n_seeds = 10;
  std::vector<Modality> modalities{Modality::kEcg, Modality::kEda, Modality::kRsp, Modality::kSkt};
  std::vector<SessionKind> train_sessions{SessionKind::kImpatience, SessionKind::kSurprise,
                                          SessionKind::kIrritation};
  std::vector<SessionKind> test_sessions{SessionKind::kImpatience, SessionKind::kSurprise,
                                         SessionKind::kIrritation};
  std::uint64_t master_seed = 0;
  int knn_k = 5;
  double baseline_s = 60.0;
  int bootstrap_iters = 1000;
  // Permutation null: models trained on block-swapped labels.
  bool permutation = false;
  int permutation_models = 20;
  int permutation_boot = 50;
  // Train every fold on block-swapped labels (used for null runs).
  bool permute_labels = false;
  int jobs = 1;

  void validate() const;
};

nlohmann::json to_json(const LosoConfig& c);
// Missing keys keep `base` values; unknown keys are rejected.
LosoConfig loso_config_from_json(const nlohmann::json& j, LosoConfig base = {});

// Columns of `available` that belong to the selected modalities, in frame order.
std::vector<std::string> modality_columns(const std::vector<Modality>& modalities,
                                          const std::vector<std::string>& available);

// Fold seed from master seed, subject and seed index; stable under cohort growth.
std::uint64_t fold_seed(std::uint64_t master_seed, const std::string& subject_id, int seed_index);

// Baseline z-scoring followed by per-session k-NN imputation. Sessions that
// cannot be normalised are dropped and reported in `skipped`.
struct NormalizedDataset {
  std::vector<SessionFrames> sessions;
  std::vector<std::string> skipped;
};
NormalizedDataset normalize_sessions(const std::vector<SessionFrames>& sessions, int knn_k, double baseline_s,
                                     int jobs = 1);

struct FoldData {
  Eigen::MatrixXd X;
  std::vector<double> y;
  std::vector<std::string> provenance;  // session key per row
  std::vector<std::string> train_subjects;  // resampled multiset, draw order
};

// Training set of one fold: N-1 subjects drawn with replacement from the
// non-held-out pool, labelled rows of their `train_sessions`.
FoldData fold_training_data(const std::vector<SessionFrames>& normalized, const std::string& held_out,
                            int seed_index, const LosoConfig& config, const std::vector<std::string>& columns);
std::string fold_fingerprint(const FoldData& data);

struct PredictionRow {
  std::string subject_id;
  SessionKind kind = SessionKind::kImpatience;
  int seed = 0;
  double time_s = 0.0;
  double p_stress = 0.0;
  RowLabel label = RowLabel::kExcluded;
};

// Per-second predictions of one held-out session, averaged over seeds.
struct SessionPredictions {
  SessionMeta meta;
  std::vector<double> times_s;
  std::vector<double> p_stress;
  std::vector<RowLabel> labels;
};

struct FoldAudit {
  std::string held_out;
  int seed_index = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> train_subjects;
  std::size_t train_rows = 0;
  std::string fingerprint;
  bool leaked = false;  // held-out subject present in the training input
};

struct EvalReport {
  AurocResult auroc;
  double mean_p_free = kMissing;
  double mean_p_stress = kMissing;
  std::size_t n_rows = 0;
  std::optional<double> permutation_p;
};

struct LosoResult {
  std::vector<std::string> columns;
  std::vector<PredictionRow> predictions;  // every fold x seed x row
  std::vector<SessionPredictions> averaged;
  EvalReport report;
  std::vector<FoldAudit> audits;
  std::vector<std::string> skipped;
};

// Scores pooled per-second predictions of the selected session kinds.
EvalReport evaluate_predictions(const std::vector<SessionPredictions>& predictions,
                                const std::vector<SessionKind>& kinds, int bootstrap_iters, std::uint64_t seed);

LosoResult run_loso(const std::vector<SessionFrames>& dataset, const LosoConfig& config);
nlohmann::json to_json(const LosoResult& r, const LosoConfig& c);

struct MatrixCell {
  std::string train;
  std::string test;
  std::optional<AurocResult> auroc;  // empty when not available
  double mean_train_rows = 0.0;
};

struct SessionMatrix {
  std::vector<MatrixCell> cells;  // row-major over {I, M, S, All} x {I, M, S, All}
};

SessionMatrix cross_session_matrix(const std::vector<SessionFrames>& dataset, const LosoConfig& config);
nlohmann::json to_json(const SessionMatrix& m);

inline constexpr double kEventWindowS = 15.0;

struct EventWindowStats {
  std::string event_name;
  std::vector<std::string> subjects;
  std::vector<double> auroc;  // window vs free driving, per subject
  std::vector<double> slope;  // per second, per subject
  double mean_auroc = kMissing;
  double mean_slope = kMissing;
  double wilcoxon_p = 1.0;
  double p_fdr = 1.0;
  bool flagged = false;
  bool truncated = false;
};

std::vector<EventWindowStats> event_sensitivity(const std::vector<SessionPredictions>& predictions,
                                                double alpha = 0.05);
nlohmann::json to_json(const std::vector<EventWindowStats>& events);

struct MetricAssociation {
  std::string metric;
  std::optional<LmmFit> fit;
  std::string skipped_reason;
  double p_fdr = 1.0;
  bool significant = false;
};

struct BehaviorReport {
  SessionKind kind = SessionKind::kImpatience;
  std::vector<MetricAssociation> metrics;
};

// Aligns predictions with vehicle metrics on the shared per-second grid; every
// `stride`-th aligned row per session is kept.
BehaviorReport behavior_association(const std::vector<SessionPredictions>& predictions,
                                    const std::vector<SessionFrames>& dataset, SessionKind kind, int stride = 1,
                                    double alpha = 0.05);
nlohmann::json to_json(const BehaviorReport& r);

enum class RecoveryCategory { kIncrease, kDecrease, kStable };
std::string_view to_string(RecoveryCategory c);

inline constexpr double kRecoveryAlpha = 0.001;
inline constexpr double kMinRecoveryS = 60.0;
inline constexpr double kStartLevelS = 30.0;

struct RecoverySession {
  std::string session_key;
  double rho = 0.0;
  double p = 1.0;
  double p_fdr = 1.0;
  double start_level = kMissing;
  std::size_t n = 0;
  RecoveryCategory category = RecoveryCategory::kStable;
};

// Spearman trend of one session's recovery predictions (category left Stable
// until the family is FDR-corrected). Throws kInsufficientRecovery.
RecoverySession recovery_trend(const SessionPredictions& predictions);

struct RecoveryReport {
  std::vector<RecoverySession> sessions;
  std::vector<std::string> skipped;
  std::optional<WelchResult> start_level_test;  // Decrease vs the rest
};

RecoveryReport recovery_analysis(const std::vector<SessionPredictions>& predictions);
nlohmann::json to_json(const RecoveryReport& r);

struct ShapResult {
  std::vector<std::string> columns;  // column order of summary.values and features
  ShapSummary summary;
  std::vector<std::string> row_sessions;
  std::vector<double> row_times_s;
  Eigen::MatrixXd features;  // normalised inputs matching summary.values
};

// TreeSHAP over held-out rows of each fold (seed index 0); `row_stride`
// subsamples labelled rows to bound the cost.
ShapResult shap_analysis(const std::vector<SessionFrames>& dataset, const LosoConfig& config, int row_stride = 1);
nlohmann::json to_json(const ShapResult& r);

}  // namespace stressor
