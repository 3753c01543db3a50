#pragma once

#include "oracles.hpp"

#include "nbids/metrics.hpp"
#include "nbids/rng.hpp"

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

/// Randomized metric property trials. Each returns the number of failing
/// trials and records the first failure in `first`.
namespace metric_cases {

struct Outcome {
  std::size_t trials = 0;
  std::size_t failures = 0;
  std::string first;

  void fail(std::size_t trial, const std::string& what) {
    if (failures++ == 0) first = "trial " + std::to_string(trial) + ": " + what;
  }
  [[nodiscard]] bool ok() const { return failures == 0; }
};

inline std::vector<int> random_labels(std::size_t n, int C, nbids::Rng& rng) {
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(C)));
  return y;
}

/// Predictions that agree with the truth with probability `agree`.
inline std::vector<int> noisy_copy(const std::vector<int>& y, int C, double agree, nbids::Rng& rng) {
  std::vector<int> p(y);
  for (auto& v : p)
    if (!rng.bernoulli(agree)) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(C)));
  return p;
}

inline nbids::ConfusionMatrix random_counts(std::size_t C, nbids::Rng& rng, bool diagonal_only, std::int64_t max = 50) {
  std::vector<std::int64_t> counts(C * C, 0);
  for (std::size_t i = 0; i < C; ++i)
    for (std::size_t j = 0; j < C; ++j)
      if (!diagonal_only || i == j) counts[i * C + j] = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(max)));
  if (std::accumulate(counts.begin(), counts.end(), std::int64_t{0}) == 0) counts[0] = 1;
  return nbids::confusion_from_counts(C, std::move(counts));
}

/// confusion, kappa, MCC and AUC against the enumeration oracles.
inline Outcome oracle_agreement(std::size_t trials, std::uint64_t seed) {
  Outcome out;
  nbids::Rng rng(seed, "metric_cases.oracle");
  for (std::size_t t = 0; t < trials; ++t, ++out.trials) {
    const int C = 2 + static_cast<int>(rng.below(9));
    const std::size_t n = 1 + rng.below(300);
    const auto y = random_labels(n, C, rng);
    const auto p = noisy_copy(y, C, rng.uniform(), rng);
    const auto cm = nbids::confusion(y, p, static_cast<std::size_t>(C));
    const auto want = oracle::count_pairs(y, p, C);
    for (int i = 0; i < C; ++i)
      for (int j = 0; j < C; ++j)
        if (cm.at(i, j) != want[i][j]) out.fail(t, "confusion cell differs");
    if (std::abs(nbids::cohen_kappa(cm) - oracle::kappa(want)) > 1e-12) out.fail(t, "kappa differs");
    if (std::abs(nbids::mcc(cm) - oracle::mcc_pearson(y, p, C)) > 1e-12) out.fail(t, "mcc differs");

    std::vector<double> scores(n);
    std::vector<int> truth(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = static_cast<int>(rng.below(2));
      scores[i] = static_cast<double>(rng.below(20)) / 20.0 + 0.3 * truth[i] * rng.uniform();
    }
    if (n < 2) continue;
    truth[0] = 0;
    truth[1] = 1;
    const double a = nbids::roc_curve(scores, truth).auc;
    if (std::abs(a - oracle::auc_pairs(scores, truth)) > 1e-12) out.fail(t, "auc differs");
  }
  return out;
}

/// Cohen's kappa equals 1 exactly when the matrix is diagonal.
inline Outcome kappa_one_iff_diagonal(std::size_t trials, std::uint64_t seed) {
  Outcome out;
  nbids::Rng rng(seed, "metric_cases.kappa");
  for (std::size_t t = 0; t < trials; ++t, ++out.trials) {
    const std::size_t C = 2 + rng.below(9);
    const auto cm = random_counts(C, rng, t % 2 == 0);
    const bool one = nbids::cohen_kappa(cm) == 1.0;
    if (one != cm.is_diagonal()) out.fail(t, "kappa == 1 disagrees with diagonality");
    if (std::abs(nbids::cohen_kappa(cm)) > 1.0) out.fail(t, "kappa outside [-1, 1]");
  }
  return out;
}

/// Flipping every binary prediction negates MCC; swapping the positive class
/// in both truth and prediction leaves it unchanged.
inline Outcome mcc_inversion(std::size_t trials, std::uint64_t seed) {
  Outcome out;
  nbids::Rng rng(seed, "metric_cases.mcc");
  for (std::size_t t = 0; t < trials; ++t, ++out.trials) {
    const auto cm = random_counts(2, rng, false);
    const auto a = cm.at(0, 0), b = cm.at(0, 1), c = cm.at(1, 0), d = cm.at(1, 1);
    const auto flipped = nbids::confusion_from_counts(2, {b, a, d, c});
    const auto swapped = nbids::confusion_from_counts(2, {d, c, b, a});
    const double m = nbids::mcc(cm);
    if (std::abs(nbids::mcc(flipped) + m) > 1e-12) out.fail(t, "mcc did not flip sign");
    if (std::abs(nbids::mcc(swapped) - m) > 1e-12) out.fail(t, "mcc changed under label swap");
    if (std::abs(nbids::mcc_ovr(cm, 1) - m) > 1e-12) out.fail(t, "binary and multiclass mcc differ");
    if (std::abs(m) > 1.0 + 1e-15) out.fail(t, "mcc outside [-1, 1]");
  }
  return out;
}

/// AUC and the ROC points are unchanged by a strictly increasing map of the
/// scores.
inline Outcome auc_monotone_invariance(std::size_t trials, std::uint64_t seed) {
  Outcome out;
  nbids::Rng rng(seed, "metric_cases.auc");
  for (std::size_t t = 0; t < trials; ++t, ++out.trials) {
    const std::size_t n = 2 + rng.below(200);
    std::vector<double> s(n), g(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(rng.below(2));
      s[i] = static_cast<double>(rng.below(40)) / 8.0 - 2.5 + 0.5 * y[i];
      g[i] = s[i] * s[i] * s[i] + 2.0 * s[i] + 7.0;
    }
    y[0] = 0;
    y[1] = 1;
    const auto a = nbids::roc_curve(s, y), b = nbids::roc_curve(g, y);
    if (a.auc != b.auc) out.fail(t, "auc changed");
    if (a.fpr != b.fpr || a.tpr != b.tpr) out.fail(t, "curve points changed");
    if (a.auc < 0.0 || a.auc > 1.0) out.fail(t, "auc outside [0, 1]");
  }
  return out;
}

/// Permuting class ids permutes per-class scores and keeps kappa and MCC.
inline Outcome relabel_invariance(std::size_t trials, std::uint64_t seed) {
  Outcome out;
  nbids::Rng rng(seed, "metric_cases.relabel");
  for (std::size_t t = 0; t < trials; ++t, ++out.trials) {
    const int C = 2 + static_cast<int>(rng.below(9));
    const auto y = random_labels(1 + rng.below(200), C, rng);
    const auto p = noisy_copy(y, C, rng.uniform(), rng);
    std::vector<int> perm(static_cast<std::size_t>(C));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span(perm));
    std::vector<int> yp(y.size()), pp(p.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
      yp[i] = perm[static_cast<std::size_t>(y[i])];
      pp[i] = perm[static_cast<std::size_t>(p[i])];
    }
    const auto a = nbids::confusion(y, p, static_cast<std::size_t>(C));
    const auto b = nbids::confusion(yp, pp, static_cast<std::size_t>(C));
    if (std::abs(nbids::cohen_kappa(a) - nbids::cohen_kappa(b)) > 1e-12) out.fail(t, "kappa changed");
    if (std::abs(nbids::mcc(a) - nbids::mcc(b)) > 1e-12) out.fail(t, "mcc changed");
    for (int c = 0; c < C; ++c) {
      const auto sa = nbids::eq_metrics(a, static_cast<std::size_t>(c));
      const auto sb = nbids::eq_metrics(b, static_cast<std::size_t>(perm[static_cast<std::size_t>(c)]));
      if (sa.accuracy != sb.accuracy || sa.recall != sb.recall || sa.precision != sb.precision || sa.f1 != sb.f1)
        out.fail(t, "per-class scores not permuted");
    }
  }
  return out;
}

/// f1 is the harmonic mean of precision and recall; TP+FP+FN+TN == N.
inline Outcome class_score_identities(std::size_t trials, std::uint64_t seed) {
  Outcome out;
  nbids::Rng rng(seed, "metric_cases.f1");
  for (std::size_t t = 0; t < trials; ++t, ++out.trials) {
    const std::size_t C = 2 + rng.below(9);
    const auto cm = random_counts(C, rng, false);
    for (std::size_t c = 0; c < C; ++c) {
      const auto o = nbids::one_vs_rest(cm, c);
      if (o.tp + o.fp + o.fn + o.tn != cm.total()) out.fail(t, "one-vs-rest counts do not partition N");
      const auto s = nbids::eq_metrics(cm, c);
      const double pr = s.precision + s.recall;
      if (pr > 0 && std::abs(s.f1 - 2 * s.precision * s.recall / pr) > 1e-12) out.fail(t, "f1 is not 2PR/(P+R)");
      for (double v : {s.accuracy, s.recall, s.precision, s.f1})
        if (v < 0.0 || v > 1.0) out.fail(t, "score outside [0, 1]");
    }
  }
  return out;
}

} // namespace metric_cases
