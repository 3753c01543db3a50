#pragma once

#include "nbids/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace nbids {

/// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::size_t n_classes = 0;
  std::vector<std::int64_t> counts; ///< row-major [C, C]
  std::vector<std::string> names;

  [[nodiscard]] std::int64_t at(std::size_t truth, std::size_t pred) const { return counts[truth * n_classes + pred]; }
  [[nodiscard]] std::int64_t total() const;
  [[nodiscard]] std::int64_t row_sum(std::size_t c) const;
  [[nodiscard]] std::int64_t col_sum(std::size_t c) const;
  [[nodiscard]] bool is_diagonal() const;
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

/// Names default to "0".."C-1". Throws LabelError on an out-of-range label.
ConfusionMatrix confusion(std::span<const int> y_true, std::span<const int> y_pred, std::size_t n_classes,
                          std::vector<std::string> names = {});
/// Builds a matrix from explicit counts.
ConfusionMatrix confusion_from_counts(std::size_t n_classes, std::vector<std::int64_t> counts,
                                      std::vector<std::string> names = {});

struct OneVsRest {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};
OneVsRest one_vs_rest(const ConfusionMatrix& cm, std::size_t class_id);

struct ClassScores {
  double accuracy = 0.0, recall = 0.0, precision = 0.0, f1 = 0.0;
};

/// One-vs-rest scores; any zero denominator yields 0.
ClassScores eq_metrics(const ConfusionMatrix& cm, std::size_t class_id);
ClassScores binary_scores(const OneVsRest& c);

double cohen_kappa(const ConfusionMatrix& cm);
double cohen_kappa_ovr(const ConfusionMatrix& cm, std::size_t class_id);
double binary_kappa(const OneVsRest& c);

/// Multiclass MCC in covariance form; equals the binary formula for C = 2.
double mcc(const ConfusionMatrix& cm);
double mcc_ovr(const ConfusionMatrix& cm, std::size_t class_id);
double binary_mcc(const OneVsRest& c);

struct RocCurve {
  std::vector<double> thresholds; ///< first entry is +inf for the (0, 0) point
  std::vector<double> fpr, tpr;
  double auc = 0.0;
};

/// One point per distinct score, descending. Throws DataError when truths
/// hold a single class.
RocCurve roc_curve(std::span<const double> scores, std::span<const int> truths);
double auc(const RocCurve& curve);

struct MulticlassRoc {
  std::vector<RocCurve> per_class;
  RocCurve macro; ///< per-class TPR interpolated on the union of FPR values
};

/// probs is [N, C]; class c is scored by column c against label == c.
MulticlassRoc roc_one_vs_rest(const Tensor& probs, std::span<const int> labels);

struct ReportRow {
  std::string name;
  double precision = 0.0, recall = 0.0, f1 = 0.0, accuracy = 0.0;
  double kappa = 0.0, mcc = 0.0;
  std::optional<double> auc;
  std::int64_t support = 0;
};

struct ClassReport {
  std::vector<ReportRow> classes;
  double accuracy = 0.0;
  double kappa = 0.0; ///< multiclass
  double mcc = 0.0;   ///< multiclass
  std::optional<double> macro_auc;
  ReportRow macro, weighted;
  std::int64_t total = 0;
  ConfusionMatrix cm;
};

/// Throws DataError on an empty matrix.
ClassReport build_report(const ConfusionMatrix& cm, const MulticlassRoc* roc = nullptr);

enum class ReportFormat { text, csv, json };
ReportFormat parse_report_format(std::string_view s);
std::string format_name(ReportFormat f);

/// Text rounds to 3 decimals; csv and json keep round-trip precision.
std::string render_report(const ClassReport& report, ReportFormat format);

/// Columns: class, threshold, fpr, tpr. The macro curve uses class "macro".
void write_roc_csv(const std::filesystem::path& path, const MulticlassRoc& roc, const std::vector<std::string>& names);

} // namespace nbids
