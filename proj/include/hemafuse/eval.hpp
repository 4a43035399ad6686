#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hemafuse/ensemble.hpp"
#include "hemafuse/ingest.hpp"

namespace hemafuse {

/// Componentwise sum of raw scores; no renormalization.
ScoreVector sum_rule_fuse(const ScoreVector& a, const ScoreVector& b, const ScoreVector& c);

/// Argmax of a two-class score; an exact tie goes to label 0.
LabelId decide(const ScoreVector& f);

/// Positive class is label 1.
struct ConfusionCounts {
  long tp = 0, tn = 0, fp = 0, fn = 0;
  long total() const { return tp + tn + fp + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

ConfusionCounts confusion(const std::vector<int>& y_true, const std::vector<int>& y_pred);

// Each metric is empty when its denominator is zero.
std::optional<double> accuracy(const ConfusionCounts& c);
std::optional<double> precision(const ConfusionCounts& c);
std::optional<double> recall(const ConfusionCounts& c);
std::optional<double> f1_score(const ConfusionCounts& c);
std::optional<double> specificity(const ConfusionCounts& c);

struct RocPoint {
  double fpr = 0, tpr = 0;
  bool operator==(const RocPoint&) const = default;
};

/// Threshold sweep over distinct scores, highest first; tied scores move in
/// one step. Throws ArgumentError("ROC undefined ...") unless both classes occur.
std::vector<RocPoint> roc_curve(const std::vector<int>& y_true, const std::vector<double>& positive_scores);
/// Trapezoidal area under a curve of points ordered by fpr.
double auc(const std::vector<RocPoint>& points);

struct MetricsReport {
  std::optional<double> accuracy, precision, recall, f1, specificity;
  ConfusionCounts confusion;
  std::vector<RocPoint> roc;  // empty when only one class is present
  std::optional<double> auc;
  /// Names of the metrics that are undefined for this sample.
  std::vector<std::string> undefined;
};

MetricsReport make_report(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                          const std::vector<double>& positive_scores);

struct FusionResult {
  std::vector<ScoreVector> fused;
  std::vector<int> decisions;
  MetricsReport report;
};

/// Fuses three predictors' per-image class means. ROC uses f[1] / sum(f).
FusionResult evaluate_fusion(const std::array<std::vector<ScoreVector>, 3>& scores, const std::vector<int>& labels);

/// Single-predictor report on the same footing (decision by argmax, ROC on p[1]).
MetricsReport evaluate_scores(const std::vector<ScoreVector>& scores, const std::vector<int>& labels);

struct PipelineEvaluation {
  std::array<MetricsReport, 3> per_arch;
  FusionResult fused;
  std::array<std::vector<UncertainPrediction>, 3> predictions;
};

/// Runs each ensemble on the test set and fuses their mean scores.
PipelineEvaluation evaluate_pipeline(const std::array<const Ensemble*, 3>& ensembles, const ImageSet& test_set);

std::string format_report_json(const MetricsReport& r);
/// `fpr,tpr` rows.
std::string format_roc_csv(const std::vector<RocPoint>& points);
/// `epoch,train_loss,train_acc,val_loss,val_acc` rows.
std::string format_history_csv(const std::vector<EpochStats>& history);

}  // namespace hemafuse
