#pragma once

// Evaluation protocols: one-vs-rest classification metrics, ROC/AUC by
// threshold sweep, Euclidean pair verification and the 10-fold
// threshold-selection protocol (thresholds are chosen on the training folds
// only and applied unchanged to the held-out fold).

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "btn/csv.hpp"
#include "btn/data.hpp"
#include "btn/mining.hpp"
#include "btn/network.hpp"
#include "btn/svg.hpp"
#include "btn/tensor.hpp"

namespace btn {

// ---------------------------------------------------------------------------
// Confusion matrix and one-vs-rest rates
// ---------------------------------------------------------------------------

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int k) : k_(k), counts_(static_cast<std::size_t>(k) * k, 0) {
    if (k < 2) throw std::invalid_argument("ConfusionMatrix: need k >= 2");
  }

  void add(int true_class, int predicted_class) {
    check(true_class);
    check(predicted_class);
    ++counts_[static_cast<std::size_t>(true_class) * k_ + predicted_class];
  }

  int classes() const { return k_; }
  long long at(int true_class, int predicted_class) const {
    check(true_class);
    check(predicted_class);
    return counts_[static_cast<std::size_t>(true_class) * k_ + predicted_class];
  }
  long long total() const {
    long long t = 0;
    for (long long c : counts_) t += c;
    return t;
  }
  long long row_sum(int i) const {
    check(i);
    long long t = 0;
    for (int j = 0; j < k_; ++j) t += at(i, j);
    return t;
  }
  long long col_sum(int j) const {
    check(j);
    long long t = 0;
    for (int i = 0; i < k_; ++i) t += at(i, j);
    return t;
  }

 private:
  void check(int i) const {
    if (i < 0 || i >= k_) throw std::out_of_range("ConfusionMatrix: class out of range");
  }
  int k_;
  std::vector<long long> counts_;
};

// Rates carry no value when their denominator is zero.
struct BinaryRates {
  std::optional<real> accuracy;
  std::optional<real> sensitivity;
  std::optional<real> specificity;
  long long tp = 0, fp = 0, tn = 0, fn = 0;
};

inline BinaryRates binary_rates(const ConfusionMatrix& cm, int c) {
  BinaryRates r;
  r.tp = cm.at(c, c);
  r.fn = cm.row_sum(c) - r.tp;
  r.fp = cm.col_sum(c) - r.tp;
  r.tn = cm.total() - r.tp - r.fn - r.fp;
  const long long all = r.tp + r.fp + r.tn + r.fn;
  if (all > 0) r.accuracy = static_cast<real>(r.tp + r.tn) / static_cast<real>(all);
  if (r.tp + r.fn > 0) r.sensitivity = static_cast<real>(r.tp) / static_cast<real>(r.tp + r.fn);
  if (r.tn + r.fp > 0) r.specificity = static_cast<real>(r.tn) / static_cast<real>(r.tn + r.fp);
  return r;
}

// ---------------------------------------------------------------------------
// ROC / AUC
// ---------------------------------------------------------------------------

struct RocCurve {
  std::vector<std::pair<real, real>> points;  // (FPR, TPR), monotone from (0,0) to (1,1)
  real auc = 0;
};

// Sweeps every distinct score as a threshold; AUC by trapezoid, which gives
// tied scores half credit, matching P(score_pos > score_neg) + P(tie)/2.
inline RocCurve roc_auc(const std::vector<real>& scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("roc_auc: size mismatch");
  long long pos = 0, neg = 0;
  for (bool l : labels) (l ? pos : neg)++;
  if (pos == 0 || neg == 0) throw std::invalid_argument("roc_auc: need at least one positive and one negative label");

  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve out;
  out.points.emplace_back(real(0), real(0));
  long long tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const real s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      (labels[order[i]] ? tp : fp)++;
      ++i;
    }
    out.points.emplace_back(static_cast<real>(fp) / static_cast<real>(neg),
                            static_cast<real>(tp) / static_cast<real>(pos));
  }
  real auc = 0;
  for (std::size_t p = 1; p < out.points.size(); ++p) {
    const auto& [x0, y0] = out.points[p - 1];
    const auto& [x1, y1] = out.points[p];
    auc += (x1 - x0) * (y0 + y1) / real(2);
  }
  out.auc = auc;
  return out;
}

// ---------------------------------------------------------------------------
// Pair verification
// ---------------------------------------------------------------------------

inline real pair_distance(const Tensor& x, const Tensor& y) {
  if (x.shape() != y.shape() || x.rank() != 1) throw std::invalid_argument("pair_distance: expects equal-length vectors");
  real s = 0;
  for (std::size_t i = 0; i < x.values().size(); ++i) {
    const real d = x.values()[i] - y.values()[i];
    s += d * d;
  }
  return std::sqrt(s);
}

struct EmbeddingPair {
  Tensor x;
  Tensor y;
  bool same_class = false;
};

struct PairSet {
  std::vector<EmbeddingPair> pairs;
};

// Samples the requested same/different mix, without replacement while the
// candidate pools last.
inline PairSet build_pair_set(const Tensor& embeddings, const std::vector<int>& labels, int count,
                              real same_fraction, Rng& rng) {
  if (embeddings.rank() != 2) throw std::invalid_argument("build_pair_set: embeddings must be [N,d]");
  if (count < 1) throw std::invalid_argument("build_pair_set: count must be >= 1");
  if (same_fraction < real(0) || same_fraction > real(1)) throw std::invalid_argument("build_pair_set: same_fraction must be in [0,1]");
  const int n = embeddings.dim(0);
  if (static_cast<int>(labels.size()) != n) throw std::invalid_argument("build_pair_set: label count mismatch");

  std::vector<std::pair<int, int>> same, diff;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      (labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)] ? same : diff).emplace_back(i, j);
    }
  const int want_same = static_cast<int>(std::lround(static_cast<double>(same_fraction) * count));
  const int want_diff = count - want_same;
  if ((want_same > 0 && same.empty()) || (want_diff > 0 && diff.empty())) {
    throw std::runtime_error("build_pair_set: insufficient samples for the requested pair mix");
  }
  rng.shuffle(same);
  rng.shuffle(diff);

  auto emb_row = [&](int i) {
    std::vector<real> v(static_cast<std::size_t>(embeddings.dim(1)));
    for (int c = 0; c < embeddings.dim(1); ++c) v[static_cast<std::size_t>(c)] = embeddings.at({i, c});
    return Tensor({embeddings.dim(1)}, std::move(v));
  };
  PairSet out;
  for (int i = 0; i < want_same; ++i) {
    const auto& [a, b] = same[static_cast<std::size_t>(i) % same.size()];
    out.pairs.push_back(EmbeddingPair{emb_row(a), emb_row(b), true});
  }
  for (int i = 0; i < want_diff; ++i) {
    const auto& [a, b] = diff[static_cast<std::size_t>(i) % diff.size()];
    out.pairs.push_back(EmbeddingPair{emb_row(a), emb_row(b), false});
  }
  rng.shuffle(out.pairs);
  return out;
}

struct PairRecord {
  real distance = 0;
  bool same_class = false;
  int fold = -1;
  real threshold = 0;  // the fold's chosen threshold
  bool correct = false;
};

struct KFoldResult {
  real mean_accuracy = 0;
  std::vector<real> fold_thresholds;
  std::vector<real> fold_accuracies;
  std::vector<PairRecord> records;
};

namespace detail {

// Candidate thresholds: midpoints between consecutive distinct sorted
// distances plus +-infinity sentinels. Predicts "same" when dist < t; the
// smallest maximizing threshold wins.
inline real best_threshold(const std::vector<real>& dists, const std::vector<bool>& same) {
  std::vector<real> sorted = dists;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<real> candidates;
  candidates.push_back(-std::numeric_limits<real>::infinity());
  for (std::size_t i = 1; i < sorted.size(); ++i) candidates.push_back((sorted[i - 1] + sorted[i]) / real(2));
  candidates.push_back(std::numeric_limits<real>::infinity());

  real best_t = candidates.front();
  long long best_correct = -1;
  for (real t : candidates) {
    long long correct = 0;
    for (std::size_t i = 0; i < dists.size(); ++i) {
      const bool predicted_same = dists[i] < t;
      if (predicted_same == same[i]) ++correct;
    }
    if (correct > best_correct) {
      best_correct = correct;
      best_t = t;
    }
  }
  return best_t;
}

}  // namespace detail

// For each fold: pick the threshold maximizing accuracy on the other folds,
// apply it unchanged to the held-out fold. Fold sizes are near-equal.
inline KFoldResult kfold_pair_eval(const PairSet& pair_set, int folds = 10) {
  if (folds < 2) throw std::invalid_argument("kfold_pair_eval: need at least 2 folds");
  const int n = static_cast<int>(pair_set.pairs.size());
  if (n < folds) throw std::invalid_argument("kfold_pair_eval: fewer pairs than folds");

  std::vector<real> dist(static_cast<std::size_t>(n));
  std::vector<bool> same(static_cast<std::size_t>(n));
  std::vector<int> fold_of(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    dist[static_cast<std::size_t>(i)] = pair_distance(pair_set.pairs[static_cast<std::size_t>(i)].x,
                                                      pair_set.pairs[static_cast<std::size_t>(i)].y);
    same[static_cast<std::size_t>(i)] = pair_set.pairs[static_cast<std::size_t>(i)].same_class;
    fold_of[static_cast<std::size_t>(i)] = static_cast<int>((static_cast<long long>(i) * folds) / n);
  }

  KFoldResult out;
  out.records.resize(static_cast<std::size_t>(n));
  real acc_sum = 0;
  for (int f = 0; f < folds; ++f) {
    std::vector<real> train_d;
    std::vector<bool> train_s;
    for (int i = 0; i < n; ++i) {
      if (fold_of[static_cast<std::size_t>(i)] == f) continue;
      train_d.push_back(dist[static_cast<std::size_t>(i)]);
      train_s.push_back(same[static_cast<std::size_t>(i)]);
    }
    const real t = detail::best_threshold(train_d, train_s);
    long long held = 0, correct = 0;
    for (int i = 0; i < n; ++i) {
      if (fold_of[static_cast<std::size_t>(i)] != f) continue;
      ++held;
      const bool predicted_same = dist[static_cast<std::size_t>(i)] < t;
      const bool ok = predicted_same == same[static_cast<std::size_t>(i)];
      if (ok) ++correct;
      out.records[static_cast<std::size_t>(i)] = PairRecord{dist[static_cast<std::size_t>(i)], same[static_cast<std::size_t>(i)], f, t, ok};
    }
    const real acc = held > 0 ? static_cast<real>(correct) / static_cast<real>(held) : real(0);
    out.fold_thresholds.push_back(t);
    out.fold_accuracies.push_back(acc);
    acc_sum += acc;
  }
  out.mean_accuracy = acc_sum / static_cast<real>(folds);
  return out;
}

// ---------------------------------------------------------------------------
// Full report
// ---------------------------------------------------------------------------

struct PairEvalConfig {
  int count = 600;
  real same_fraction = real(0.6);
  int folds = 10;
  int seed = 1;
};

struct EvalReport {
  ConfusionMatrix confusion{2};
  std::vector<BinaryRates> per_class;
  std::vector<RocCurve> roc;                  // one-vs-rest per class
  real overall_accuracy = 0;                  // top-1, the Table-style average figure
  std::optional<real> mean_sensitivity;
  std::optional<real> mean_specificity;
  std::optional<real> mean_auc;
  KFoldResult pair_eval;
  std::vector<std::string> class_names;
};

// Batched inference over a dataset: softmax rows and embeddings.
inline std::pair<Tensor, Tensor> infer_dataset(const Network& net, const Dataset& ds, int batch_size = 32) {
  if (ds.size() == 0) throw std::invalid_argument("infer_dataset: empty dataset");
  std::vector<real> probs, embs;
  const int k = net.config.num_classes, d = net.config.embedding_dim;
  for (std::size_t start = 0; start < ds.size(); start += static_cast<std::size_t>(batch_size)) {
    std::vector<int> idx;
    for (std::size_t i = start; i < std::min(ds.size(), start + static_cast<std::size_t>(batch_size)); ++i) {
      idx.push_back(static_cast<int>(i));
    }
    BatchOutputs out = forward_batch(net, stack_batch(ds, idx));
    probs.insert(probs.end(), out.probs.values().begin(), out.probs.values().end());
    embs.insert(embs.end(), out.embeddings.values().begin(), out.embeddings.values().end());
  }
  return {Tensor({static_cast<int>(ds.size()), k}, std::move(probs)),
          Tensor({static_cast<int>(ds.size()), d}, std::move(embs))};
}

inline int argmax_row(const Tensor& rows, int r) {
  int best = 0;
  for (int j = 1; j < rows.dim(1); ++j) {
    if (rows.at({r, j}) > rows.at({r, best})) best = j;
  }
  return best;
}

inline EvalReport full_report(const Network& net, const Dataset& test, const PairEvalConfig& pair_cfg) {
  test.validate();
  if (test.num_classes() != net.config.num_classes) {
    throw std::invalid_argument("full_report: dataset class count does not match the network");
  }
  const int k = net.config.num_classes;
  auto [probs, embeddings] = infer_dataset(net, test);

  EvalReport report;
  report.class_names = test.class_names;
  report.confusion = ConfusionMatrix(k);
  long long correct = 0;
  for (int i = 0; i < static_cast<int>(test.size()); ++i) {
    const int pred = argmax_row(probs, i);
    report.confusion.add(test.labels[static_cast<std::size_t>(i)], pred);
    if (pred == test.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  report.overall_accuracy = static_cast<real>(correct) / static_cast<real>(test.size());

  real sens_sum = 0, spec_sum = 0, auc_sum = 0;
  int sens_n = 0, spec_n = 0, auc_n = 0;
  for (int c = 0; c < k; ++c) {
    report.per_class.push_back(binary_rates(report.confusion, c));
    if (report.per_class.back().sensitivity) {
      sens_sum += *report.per_class.back().sensitivity;
      ++sens_n;
    }
    if (report.per_class.back().specificity) {
      spec_sum += *report.per_class.back().specificity;
      ++spec_n;
    }
    std::vector<real> scores;
    std::vector<bool> onevsrest;
    for (int i = 0; i < static_cast<int>(test.size()); ++i) {
      scores.push_back(probs.at({i, c}));
      onevsrest.push_back(test.labels[static_cast<std::size_t>(i)] == c);
    }
    report.roc.push_back(roc_auc(scores, onevsrest));
    auc_sum += report.roc.back().auc;
    ++auc_n;
  }
  if (sens_n) report.mean_sensitivity = sens_sum / static_cast<real>(sens_n);
  if (spec_n) report.mean_specificity = spec_sum / static_cast<real>(spec_n);
  if (auc_n) report.mean_auc = auc_sum / static_cast<real>(auc_n);

  Rng rng(static_cast<std::uint64_t>(pair_cfg.seed) * 0x94d049bb133111ebULL + 5);
  PairSet pairs = build_pair_set(embeddings, test.labels, pair_cfg.count, pair_cfg.same_fraction, rng);
  report.pair_eval = kfold_pair_eval(pairs, pair_cfg.folds);
  return report;
}

// ---------------------------------------------------------------------------
// Report emission: CSV tables and SVG plots
// ---------------------------------------------------------------------------

namespace detail {

inline std::string rate_cell(const std::optional<real>& r) {
  return r ? csv_number(static_cast<double>(*r)) : std::string("-");
}

}  // namespace detail

// Writes report.csv, confusion.csv, roc_<class>.csv, pairs.csv and the SVG
// plots into out_dir. ROC plots use fixed [0,1] axes.
inline void write_report_files(const EvalReport& report, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const int k = report.confusion.classes();

  CsvTable summary;
  summary.header = {"class", "accuracy", "sensitivity", "specificity", "auc"};
  for (int c = 0; c < k; ++c) {
    summary.rows.push_back({report.class_names[static_cast<std::size_t>(c)],
                            detail::rate_cell(report.per_class[static_cast<std::size_t>(c)].accuracy),
                            detail::rate_cell(report.per_class[static_cast<std::size_t>(c)].sensitivity),
                            detail::rate_cell(report.per_class[static_cast<std::size_t>(c)].specificity),
                            csv_number(static_cast<double>(report.roc[static_cast<std::size_t>(c)].auc))});
  }
  summary.rows.push_back({"average", csv_number(static_cast<double>(report.overall_accuracy)),
                          detail::rate_cell(report.mean_sensitivity), detail::rate_cell(report.mean_specificity),
                          detail::rate_cell(report.mean_auc)});
  write_csv((fs::path(out_dir) / "report.csv").string(), summary);

  CsvTable confusion;
  confusion.header = {"true_class"};
  for (int j = 0; j < k; ++j) confusion.header.push_back(report.class_names[static_cast<std::size_t>(j)]);
  for (int i = 0; i < k; ++i) {
    std::vector<std::string> row{report.class_names[static_cast<std::size_t>(i)]};
    for (int j = 0; j < k; ++j) row.push_back(std::to_string(report.confusion.at(i, j)));
    confusion.rows.push_back(std::move(row));
  }
  write_csv((fs::path(out_dir) / "confusion.csv").string(), confusion);

  std::vector<SvgSeries> roc_series;
  for (int c = 0; c < k; ++c) {
    CsvTable roc;
    roc.header = {"fpr", "tpr"};
    SvgSeries series;
    series.name = report.class_names[static_cast<std::size_t>(c)] +
                  " (AUC " + csv_number(std::round(static_cast<double>(report.roc[static_cast<std::size_t>(c)].auc) * 1000) / 1000) + ")";
    for (const auto& [fpr, tpr] : report.roc[static_cast<std::size_t>(c)].points) {
      roc.rows.push_back({csv_number(static_cast<double>(fpr)), csv_number(static_cast<double>(tpr))});
      series.points.emplace_back(static_cast<double>(fpr), static_cast<double>(tpr));
    }
    write_csv((fs::path(out_dir) / ("roc_" + report.class_names[static_cast<std::size_t>(c)] + ".csv")).string(), roc);
    roc_series.push_back(std::move(series));
  }
  write_svg_line_chart((fs::path(out_dir) / "roc.svg").string(), "One-vs-rest ROC", "false positive rate",
                       "true positive rate", roc_series, 0, 1, 0, 1);

  CsvTable pairs;
  pairs.header = {"distance", "same_class", "fold", "threshold", "correct"};
  for (const auto& r : report.pair_eval.records) {
    pairs.rows.push_back({csv_number(static_cast<double>(r.distance)), r.same_class ? "1" : "0", std::to_string(r.fold),
                          csv_number(static_cast<double>(r.threshold)), r.correct ? "1" : "0"});
  }
  write_csv((fs::path(out_dir) / "pairs.csv").string(), pairs);

  std::vector<std::vector<double>> cm(static_cast<std::size_t>(k), std::vector<double>(static_cast<std::size_t>(k)));
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) cm[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = static_cast<double>(report.confusion.at(i, j));
  write_svg_heatmap((fs::path(out_dir) / "confusion.svg").string(), "Confusion matrix", cm, report.class_names);
}

}  // namespace btn
