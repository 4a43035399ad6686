#include "hemafuse/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "json_io.hpp"

namespace hemafuse {

namespace {

std::optional<double> ratio(long num, long den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

void check_labels(const std::vector<int>& y, const char* what) {
  for (int v : y)
    if (v != 0 && v != 1) throw ArgumentError(std::string(what) + " must contain only labels 0 and 1");
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

ScoreVector sum_rule_fuse(const ScoreVector& a, const ScoreVector& b, const ScoreVector& c) {
  if (a.size() != b.size() || a.size() != c.size()) throw ShapeError("sum_rule_fuse: score vectors differ in length");
  return a + b + c;
}

LabelId decide(const ScoreVector& f) {
  if (f.size() != 2) throw ShapeError("decide expects a two-class score vector");
  if (!f.allFinite()) throw ArgumentError("decide: non-finite score");
  return LabelId(f[1] > f[0] ? 1 : 0);
}

ConfusionCounts confusion(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
  if (y_true.size() != y_pred.size()) throw ArgumentError("confusion: label vectors differ in length");
  if (y_true.empty()) throw ArgumentError("confusion: no samples");
  check_labels(y_true, "y_true");
  check_labels(y_pred, "y_pred");
  ConfusionCounts c;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] == 1)
      (y_pred[i] == 1 ? c.tp : c.fn)++;
    else
      (y_pred[i] == 1 ? c.fp : c.tn)++;
  }
  return c;
}

std::optional<double> accuracy(const ConfusionCounts& c) { return ratio(c.tp + c.tn, c.total()); }
std::optional<double> precision(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fp); }
std::optional<double> recall(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fn); }
std::optional<double> specificity(const ConfusionCounts& c) { return ratio(c.tn, c.tn + c.fp); }

std::optional<double> f1_score(const ConfusionCounts& c) {
  const auto p = precision(c), r = recall(c);
  if (!p || !r || *p + *r == 0.0) return std::nullopt;
  return 2 * *p * *r / (*p + *r);
}

std::vector<RocPoint> roc_curve(const std::vector<int>& y_true, const std::vector<double>& scores) {
  if (y_true.size() != scores.size()) throw ArgumentError("roc_curve: labels and scores differ in length");
  check_labels(y_true, "y_true");
  for (double s : scores)
    if (!std::isfinite(s)) throw ArgumentError("roc_curve: non-finite score");
  const long pos = std::count(y_true.begin(), y_true.end(), 1);
  const long neg = static_cast<long>(y_true.size()) - pos;
  if (pos == 0 || neg == 0) throw ArgumentError("ROC undefined: y_true contains a single class");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<RocPoint> pts = {{0.0, 0.0}};
  long tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) (y_true[order[i]] == 1 ? tp : fp)++;
    pts.push_back({static_cast<double>(fp) / static_cast<double>(neg), static_cast<double>(tp) / static_cast<double>(pos)});
  }
  return pts;
}

double auc(const std::vector<RocPoint>& p) {
  if (p.size() < 2) throw ArgumentError("auc needs at least two points");
  double area = 0.0;
  for (std::size_t i = 1; i < p.size(); ++i) {
    if (p[i].fpr < p[i - 1].fpr) throw ArgumentError("auc: points must be ordered by false-positive rate");
    area += (p[i].fpr - p[i - 1].fpr) * (p[i].tpr + p[i - 1].tpr) / 2;
  }
  return area;
}

MetricsReport make_report(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                          const std::vector<double>& positive_scores) {
  MetricsReport r;
  r.confusion = confusion(y_true, y_pred);
  r.accuracy = accuracy(r.confusion);
  r.precision = precision(r.confusion);
  r.recall = recall(r.confusion);
  r.f1 = f1_score(r.confusion);
  r.specificity = specificity(r.confusion);
  if (r.confusion.tp + r.confusion.fn > 0 && r.confusion.tn + r.confusion.fp > 0) {
    r.roc = roc_curve(y_true, positive_scores);
    r.auc = auc(r.roc);
  } else if (positive_scores.size() != y_true.size()) {
    throw ArgumentError("make_report: one score per sample required");
  }
  const std::pair<const char*, const std::optional<double>*> fields[] = {
      {"accuracy", &r.accuracy}, {"precision", &r.precision}, {"recall", &r.recall},
      {"f1", &r.f1},             {"specificity", &r.specificity}, {"auc", &r.auc}};
  for (const auto& [name, v] : fields)
    if (!*v) r.undefined.emplace_back(name);
  return r;
}

FusionResult evaluate_fusion(const std::array<std::vector<ScoreVector>, 3>& scores, const std::vector<int>& labels) {
  const std::size_t n = labels.size();
  if (n == 0) throw ArgumentError("evaluate_fusion: empty test split");
  for (const auto& s : scores)
    if (s.size() != n) throw ShapeError("evaluate_fusion: one score vector per test image required");
  FusionResult out;
  std::vector<double> positive;
  for (std::size_t i = 0; i < n; ++i) {
    auto f = sum_rule_fuse(scores[0][i], scores[1][i], scores[2][i]);
    out.decisions.push_back(decide(f).value());
    positive.push_back(f[1] / f.sum());
    out.fused.push_back(std::move(f));
  }
  out.report = make_report(labels, out.decisions, positive);
  return out;
}

MetricsReport evaluate_scores(const std::vector<ScoreVector>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw ShapeError("evaluate_scores: one score vector per label required");
  std::vector<int> pred;
  std::vector<double> positive;
  for (const auto& s : scores) {
    pred.push_back(decide(s).value());
    positive.push_back(s[1]);
  }
  return make_report(labels, pred, positive);
}

PipelineEvaluation evaluate_pipeline(const std::array<const Ensemble*, 3>& ensembles, const ImageSet& test_set) {
  if (test_set.size() == 0) throw ArgumentError("evaluate_pipeline: empty test split");
  PipelineEvaluation out;
  std::array<std::vector<ScoreVector>, 3> mu;
  for (std::size_t a = 0; a < 3; ++a) {
    if (!ensembles[a]) throw ArgumentError("evaluate_pipeline: missing predictor");
    out.predictions[a] = predict_uncertain(*ensembles[a], test_set.images);
    for (const auto& p : out.predictions[a]) mu[a].push_back(p.mu);
    out.per_arch[a] = evaluate_scores(mu[a], test_set.labels);
  }
  out.fused = evaluate_fusion(mu, test_set.labels);
  return out;
}

std::string format_report_json(const MetricsReport& r) { return detail::to_json(r).dump(2) + "\n"; }

std::string format_roc_csv(const std::vector<RocPoint>& points) {
  std::string out = "fpr,tpr\n";
  for (const auto& p : points) out += num(p.fpr) + "," + num(p.tpr) + "\n";
  return out;
}

std::string format_history_csv(const std::vector<EpochStats>& history) {
  std::string out = "epoch,train_loss,train_acc,val_loss,val_acc\n";
  for (std::size_t e = 0; e < history.size(); ++e) {
    const auto& s = history[e];
    out += std::to_string(e) + "," + num(s.train_loss) + "," + num(s.train_acc) + "," + num(s.val_loss) + "," +
           num(s.val_acc) + "\n";
  }
  return out;
}

}  // namespace hemafuse
