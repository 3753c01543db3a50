#include "nbids/metrics.hpp"

#include "nbids/errors.hpp"
#include "nbids/text.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

namespace nbids {

std::int64_t ConfusionMatrix::total() const { return std::accumulate(counts.begin(), counts.end(), std::int64_t{0}); }

std::int64_t ConfusionMatrix::row_sum(std::size_t c) const {
  std::int64_t s = 0;
  for (std::size_t j = 0; j < n_classes; ++j) s += at(c, j);
  return s;
}

std::int64_t ConfusionMatrix::col_sum(std::size_t c) const {
  std::int64_t s = 0;
  for (std::size_t i = 0; i < n_classes; ++i) s += at(i, c);
  return s;
}

bool ConfusionMatrix::is_diagonal() const {
  for (std::size_t i = 0; i < n_classes; ++i)
    for (std::size_t j = 0; j < n_classes; ++j)
      if (i != j && at(i, j) != 0) return false;
  return true;
}

namespace {

std::vector<std::string> default_names(std::size_t n, std::vector<std::string> names) {
  if (names.empty())
    for (std::size_t c = 0; c < n; ++c) names.push_back(std::to_string(c));
  if (names.size() != n)
    throw ShapeError("confusion: " + std::to_string(names.size()) + " class names for " + std::to_string(n) +
                     " classes");
  return names;
}

void require_nonempty(const ConfusionMatrix& cm, const char* what) {
  if (cm.n_classes == 0 || cm.total() <= 0) throw DataError(std::string(what) + ": empty confusion matrix");
}

void require_class(const ConfusionMatrix& cm, std::size_t c, const char* what) {
  if (c >= cm.n_classes)
    throw LabelError(std::string(what) + ": class " + std::to_string(c) + " outside [0, " +
                     std::to_string(cm.n_classes) + ")");
}

double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

} // namespace

ConfusionMatrix confusion(std::span<const int> y_true, std::span<const int> y_pred, std::size_t n_classes,
                          std::vector<std::string> names) {
  if (y_true.size() != y_pred.size())
    throw ShapeError("confusion: " + std::to_string(y_true.size()) + " truths but " + std::to_string(y_pred.size()) +
                     " predictions");
  ConfusionMatrix cm{n_classes, std::vector<std::int64_t>(n_classes * n_classes, 0),
                     default_names(n_classes, std::move(names))};
  for (std::size_t t = 0; t < y_true.size(); ++t) {
    const int a = y_true[t], b = y_pred[t];
    if (a < 0 || static_cast<std::size_t>(a) >= n_classes || b < 0 || static_cast<std::size_t>(b) >= n_classes)
      throw LabelError("confusion: label pair (" + std::to_string(a) + ", " + std::to_string(b) + ") at position " +
                       std::to_string(t) + " outside [0, " + std::to_string(n_classes) + ")");
    ++cm.counts[static_cast<std::size_t>(a) * n_classes + static_cast<std::size_t>(b)];
  }
  return cm;
}

ConfusionMatrix confusion_from_counts(std::size_t n_classes, std::vector<std::int64_t> counts,
                                      std::vector<std::string> names) {
  if (counts.size() != n_classes * n_classes)
    throw ShapeError("confusion: " + std::to_string(counts.size()) + " counts for " + std::to_string(n_classes) +
                     " classes");
  for (auto v : counts)
    if (v < 0) throw DataError("confusion: negative count");
  return {n_classes, std::move(counts), default_names(n_classes, std::move(names))};
}

OneVsRest one_vs_rest(const ConfusionMatrix& cm, std::size_t c) {
  require_class(cm, c, "one_vs_rest");
  OneVsRest r;
  r.tp = cm.at(c, c);
  r.fn = cm.row_sum(c) - r.tp;
  r.fp = cm.col_sum(c) - r.tp;
  r.tn = cm.total() - r.tp - r.fn - r.fp;
  return r;
}

ClassScores binary_scores(const OneVsRest& c) {
  ClassScores s;
  const double n = static_cast<double>(c.tp + c.fp + c.fn + c.tn);
  s.accuracy = ratio(static_cast<double>(c.tp + c.tn), n);
  s.recall = ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn));
  s.precision = ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp));
  s.f1 = ratio(2.0 * s.precision * s.recall, s.precision + s.recall);
  return s;
}

ClassScores eq_metrics(const ConfusionMatrix& cm, std::size_t class_id) {
  return binary_scores(one_vs_rest(cm, class_id));
}

double cohen_kappa(const ConfusionMatrix& cm) {
  require_nonempty(cm, "cohen_kappa");
  const std::int64_t n = cm.total();
  std::int64_t trace = 0, chance = 0;
  for (std::size_t c = 0; c < cm.n_classes; ++c) {
    trace += cm.at(c, c);
    chance += cm.row_sum(c) * cm.col_sum(c);
  }
  const double nn = static_cast<double>(n);
  if (chance == n * n) return trace == n ? 1.0 : 0.0;
  const double po = static_cast<double>(trace) / nn;
  const double pe = static_cast<double>(chance) / (nn * nn);
  return (po - pe) / (1.0 - pe);
}

double binary_kappa(const OneVsRest& c) {
  return cohen_kappa(confusion_from_counts(2, {c.tp, c.fn, c.fp, c.tn}));
}

double cohen_kappa_ovr(const ConfusionMatrix& cm, std::size_t class_id) {
  require_nonempty(cm, "cohen_kappa_ovr");
  return binary_kappa(one_vs_rest(cm, class_id));
}

double mcc(const ConfusionMatrix& cm) {
  require_nonempty(cm, "mcc");
  const double s = static_cast<double>(cm.total());
  double trace = 0.0, pt = 0.0, pp = 0.0, tt = 0.0;
  for (std::size_t k = 0; k < cm.n_classes; ++k) {
    const double t = static_cast<double>(cm.row_sum(k));
    const double p = static_cast<double>(cm.col_sum(k));
    trace += static_cast<double>(cm.at(k, k));
    pt += p * t;
    pp += p * p;
    tt += t * t;
  }
  const double den = std::sqrt((s * s - pp) * (s * s - tt));
  return ratio(trace * s - pt, den);
}

double binary_mcc(const OneVsRest& c) {
  const double tp = static_cast<double>(c.tp), tn = static_cast<double>(c.tn);
  const double fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
  const double den = std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
  return ratio(tp * tn - fp * fn, den);
}

double mcc_ovr(const ConfusionMatrix& cm, std::size_t class_id) {
  require_nonempty(cm, "mcc_ovr");
  return binary_mcc(one_vs_rest(cm, class_id));
}

RocCurve roc_curve(std::span<const double> scores, std::span<const int> truths) {
  if (scores.size() != truths.size())
    throw ShapeError("roc_curve: " + std::to_string(scores.size()) + " scores but " + std::to_string(truths.size()) +
                     " truths");
  std::size_t pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw DataError("roc_curve: non-finite score at position " + std::to_string(i));
    if (truths[i] != 0) ++pos;
  }
  const std::size_t neg = truths.size() - pos;
  if (pos == 0 || neg == 0)
    throw DataError("roc_curve: undefined curve, truths contain " + std::string(pos == 0 ? "no positives" : "no negatives"));

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve r;
  r.thresholds.push_back(std::numeric_limits<double>::infinity());
  r.fpr.push_back(0.0);
  r.tpr.push_back(0.0);
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) (truths[order[i]] != 0 ? tp : fp)++;
    r.thresholds.push_back(s);
    r.fpr.push_back(static_cast<double>(fp) / static_cast<double>(neg));
    r.tpr.push_back(static_cast<double>(tp) / static_cast<double>(pos));
  }
  r.auc = auc(r);
  return r;
}

double auc(const RocCurve& c) {
  double area = 0.0;
  for (std::size_t i = 1; i < c.fpr.size(); ++i) area += (c.fpr[i] - c.fpr[i - 1]) * (c.tpr[i] + c.tpr[i - 1]) / 2.0;
  return area;
}

namespace {

// TPR at x; on a vertical segment the highest TPR at that FPR wins.
double tpr_at(const RocCurve& c, double x) {
  const auto it = std::upper_bound(c.fpr.begin(), c.fpr.end(), x);
  const auto i = static_cast<std::size_t>(it - c.fpr.begin()) - 1;
  if (c.fpr[i] == x || i + 1 >= c.fpr.size()) return c.tpr[i];
  const double w = (x - c.fpr[i]) / (c.fpr[i + 1] - c.fpr[i]);
  return c.tpr[i] + w * (c.tpr[i + 1] - c.tpr[i]);
}

} // namespace

MulticlassRoc roc_one_vs_rest(const Tensor& probs, std::span<const int> labels) {
  if (probs.rank() != 2 || probs.dim(0) != labels.size())
    throw ShapeError("roc_one_vs_rest: probabilities " + shape_str(probs.shape()) + " for " +
                     std::to_string(labels.size()) + " labels");
  const std::size_t n = probs.dim(0), C = probs.dim(1);
  MulticlassRoc out;
  std::vector<double> scores(n);
  std::vector<int> truth(n);
  std::vector<double> grid;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = probs(i, c);
      truth[i] = labels[i] == static_cast<int>(c) ? 1 : 0;
    }
    out.per_class.push_back(roc_curve(scores, truth));
    grid.insert(grid.end(), out.per_class.back().fpr.begin(), out.per_class.back().fpr.end());
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  auto& m = out.macro;
  m.thresholds.push_back(std::numeric_limits<double>::quiet_NaN());
  m.fpr.push_back(0.0);
  m.tpr.push_back(0.0);
  for (double x : grid) {
    double mean = 0.0;
    for (const auto& curve : out.per_class) mean += tpr_at(curve, x);
    m.thresholds.push_back(std::numeric_limits<double>::quiet_NaN());
    m.fpr.push_back(x);
    m.tpr.push_back(mean / static_cast<double>(C));
  }
  m.auc = auc(m);
  return out;
}

ClassReport build_report(const ConfusionMatrix& cm, const MulticlassRoc* roc) {
  require_nonempty(cm, "build_report");
  if (roc && roc->per_class.size() != cm.n_classes)
    throw ShapeError("build_report: ROC has " + std::to_string(roc->per_class.size()) + " classes, matrix has " +
                     std::to_string(cm.n_classes));
  ClassReport r;
  r.cm = cm;
  r.total = cm.total();
  const double n = static_cast<double>(r.total);
  std::int64_t trace = 0;
  for (std::size_t c = 0; c < cm.n_classes; ++c) {
    const auto s = eq_metrics(cm, c);
    ReportRow row{cm.names[c], s.precision, s.recall, s.f1, s.accuracy, cohen_kappa_ovr(cm, c), mcc_ovr(cm, c),
                  std::nullopt, cm.row_sum(c)};
    if (roc) row.auc = roc->per_class[c].auc;
    r.classes.push_back(row);
    trace += cm.at(c, c);
  }
  r.accuracy = static_cast<double>(trace) / n;
  r.kappa = cohen_kappa(cm);
  r.mcc = mcc(cm);
  if (roc) r.macro_auc = roc->macro.auc;

  r.macro.name = "macro avg";
  r.weighted.name = "weighted avg";
  const double k = static_cast<double>(cm.n_classes);
  double macro_auc = 0.0, weighted_auc = 0.0;
  for (const auto& row : r.classes) {
    const double w = static_cast<double>(row.support);
    r.macro.precision += row.precision;
    r.macro.recall += row.recall;
    r.macro.f1 += row.f1;
    r.macro.accuracy += row.accuracy;
    r.macro.kappa += row.kappa;
    r.macro.mcc += row.mcc;
    r.weighted.precision += row.precision * w;
    r.weighted.recall += row.recall * w;
    r.weighted.f1 += row.f1 * w;
    r.weighted.accuracy += row.accuracy * w;
    r.weighted.kappa += row.kappa * w;
    r.weighted.mcc += row.mcc * w;
    if (row.auc) {
      macro_auc += *row.auc;
      weighted_auc += *row.auc * w;
    }
  }
  for (double* v : {&r.macro.precision, &r.macro.recall, &r.macro.f1, &r.macro.accuracy, &r.macro.kappa, &r.macro.mcc})
    *v /= k;
  for (double* v : {&r.weighted.precision, &r.weighted.recall, &r.weighted.f1, &r.weighted.accuracy,
                    &r.weighted.kappa, &r.weighted.mcc})
    *v /= n;
  if (roc) {
    r.macro.auc = macro_auc / k;
    r.weighted.auc = weighted_auc / n;
  }
  r.macro.support = r.weighted.support = r.total;
  return r;
}

ReportFormat parse_report_format(std::string_view s) {
  const auto v = text::to_lower(text::trim(s));
  if (v == "text") return ReportFormat::text;
  if (v == "csv") return ReportFormat::csv;
  if (v == "json") return ReportFormat::json;
  throw ConfigError("unknown report format '" + std::string(s) + "' (expected text, csv or json)");
}

std::string format_name(ReportFormat f) {
  switch (f) {
    case ReportFormat::text: return "text";
    case ReportFormat::csv: return "csv";
    case ReportFormat::json: return "json";
  }
  return "text";
}

namespace {

std::string render_text(const ClassReport& r) {
  std::size_t w = 12;
  for (const auto& row : r.classes) w = std::max(w, row.name.size());
  w += 2;
  std::ostringstream o;
  auto num = [&](double v) { return text::format_fixed(v, 3); };
  o << std::left << std::setw(static_cast<int>(w)) << "" << std::right << std::setw(10) << "precision"
    << std::setw(10) << "recall" << std::setw(10) << "f1-score" << std::setw(10) << "accuracy" << std::setw(10)
    << "support" << '\n';
  auto row_line = [&](const ReportRow& row) {
    o << std::left << std::setw(static_cast<int>(w)) << row.name << std::right << std::setw(10) << num(row.precision)
      << std::setw(10) << num(row.recall) << std::setw(10) << num(row.f1) << std::setw(10) << num(row.accuracy)
      << std::setw(10) << row.support << '\n';
  };
  for (const auto& row : r.classes) row_line(row);
  o << '\n'
    << std::left << std::setw(static_cast<int>(w)) << "accuracy" << std::right << std::setw(40) << num(r.accuracy)
    << std::setw(10) << r.total << '\n';
  row_line(r.macro);
  row_line(r.weighted);

  o << '\n'
    << std::left << std::setw(static_cast<int>(w)) << "" << std::right << std::setw(10) << "kappa" << std::setw(10)
    << "mcc" << std::setw(10) << "auc" << '\n';
  auto rel_line = [&](const std::string& name, double kappa, double m, std::optional<double> a) {
    o << std::left << std::setw(static_cast<int>(w)) << name << std::right << std::setw(10) << num(kappa)
      << std::setw(10) << num(m) << std::setw(10) << (a ? num(*a) : std::string("-")) << '\n';
  };
  for (const auto& row : r.classes) rel_line(row.name, row.kappa, row.mcc, row.auc);
  rel_line("multiclass", r.kappa, r.mcc, r.macro_auc);
  return o.str();
}

std::string render_csv(const ClassReport& r) {
  std::ostringstream o;
  auto f = [](double v) { return text::format_double(v); };
  auto opt = [&](const std::optional<double>& v) { return v ? f(*v) : std::string(); };
  o << "row,name,precision,recall,f1,accuracy,cohen_kappa,mcc,auc,support\n";
  auto line = [&](const char* kind, const ReportRow& row) {
    o << kind << ',' << row.name << ',' << f(row.precision) << ',' << f(row.recall) << ',' << f(row.f1) << ','
      << f(row.accuracy) << ',' << f(row.kappa) << ',' << f(row.mcc) << ',' << opt(row.auc) << ',' << row.support
      << '\n';
  };
  for (const auto& row : r.classes) line("class", row);
  o << "accuracy,accuracy,,,," << f(r.accuracy) << ',' << f(r.kappa) << ',' << f(r.mcc) << ',' << opt(r.macro_auc)
    << ',' << r.total << '\n';
  line("macro", r.macro);
  line("weighted", r.weighted);
  return o.str();
}

nlohmann::ordered_json row_json(const ReportRow& row) {
  nlohmann::ordered_json j;
  j["name"] = row.name;
  j["precision"] = row.precision;
  j["recall"] = row.recall;
  j["f1"] = row.f1;
  j["accuracy"] = row.accuracy;
  j["cohen_kappa"] = row.kappa;
  j["mcc"] = row.mcc;
  if (row.auc) j["auc"] = *row.auc;
  j["support"] = row.support;
  return j;
}

std::string render_json(const ClassReport& r) {
  nlohmann::ordered_json j;
  j["classes"] = nlohmann::ordered_json::array();
  for (const auto& row : r.classes) j["classes"].push_back(row_json(row));
  j["accuracy"] = r.accuracy;
  j["cohen_kappa"] = r.kappa;
  j["mcc"] = r.mcc;
  if (r.macro_auc) j["macro_roc_auc"] = *r.macro_auc;
  j["macro_avg"] = row_json(r.macro);
  j["weighted_avg"] = row_json(r.weighted);
  j["total"] = r.total;
  auto& cm = j["confusion_matrix"];
  cm = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < r.cm.n_classes; ++i) {
    auto row = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < r.cm.n_classes; ++k) row.push_back(r.cm.at(i, k));
    cm.push_back(row);
  }
  return j.dump(2) + "\n";
}

} // namespace

std::string render_report(const ClassReport& report, ReportFormat format) {
  switch (format) {
    case ReportFormat::text: return render_text(report);
    case ReportFormat::csv: return render_csv(report);
    case ReportFormat::json: return render_json(report);
  }
  return render_text(report);
}

void write_roc_csv(const std::filesystem::path& path, const MulticlassRoc& roc, const std::vector<std::string>& names) {
  if (names.size() != roc.per_class.size())
    throw ShapeError("write_roc_csv: " + std::to_string(names.size()) + " names for " +
                     std::to_string(roc.per_class.size()) + " curves");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw PathError("cannot open '" + path.string() + "' for writing");
  out << "class,threshold,fpr,tpr\n";
  auto emit = [&](const std::string& name, const RocCurve& c) {
    for (std::size_t i = 0; i < c.fpr.size(); ++i)
      out << name << ',' << text::format_double(c.thresholds[i]) << ',' << text::format_double(c.fpr[i]) << ','
          << text::format_double(c.tpr[i]) << '\n';
  };
  for (std::size_t c = 0; c < names.size(); ++c) emit(names[c], roc.per_class[c]);
  emit("macro", roc.macro);
}

} // namespace nbids
