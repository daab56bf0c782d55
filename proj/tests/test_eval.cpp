#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <vector>

#include "btn/eval.hpp"
#include "support/fd.hpp"
#include "support/probes.hpp"

using btn::ConfusionMatrix;
using btn::PairSet;
using btn::Rng;
using btn::Tensor;

namespace {

// independent oracle: P(pos outscored by none) with ties half credit
double concordance(const std::vector<double>& scores, const std::vector<bool>& labels) {
  double num = 0;
  long long pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      ++pairs;
      if (scores[i] > scores[j]) num += 1.0;
      else if (scores[i] == scores[j]) num += 0.5;
    }
  }
  return num / static_cast<double>(pairs);
}

PairSet pair_set_from_distances(const std::vector<double>& wanted, const std::vector<bool>& same) {
  // embed distances on a 1-D line: x = 0, y = distance
  PairSet ps;
  for (std::size_t i = 0; i < wanted.size(); ++i) {
    ps.pairs.push_back(btn::EmbeddingPair{Tensor({1}, {0.0}), Tensor({1}, {wanted[i]}), same[i]});
  }
  return ps;
}

}  // namespace

TEST_CASE("binary rates from one-vs-rest counts") {
  ConfusionMatrix cm(2);
  for (int i = 0; i < 90; ++i) cm.add(0, 0);
  for (int i = 0; i < 10; ++i) cm.add(0, 1);
  for (int i = 0; i < 100; ++i) cm.add(1, 1);
  btn::BinaryRates r = btn::binary_rates(cm, 0);
  CHECK(*r.sensitivity == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(*r.specificity == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(*r.accuracy == doctest::Approx(0.95).epsilon(1e-12));

  // derived counts stay consistent with the matrix
  CHECK(r.tp + r.fn == cm.row_sum(0));
  CHECK(r.tn + r.fp == cm.total() - cm.row_sum(0));

  ConfusionMatrix perfect(3);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 5; ++i) perfect.add(c, c);
  for (int c = 0; c < 3; ++c) {
    btn::BinaryRates pr = btn::binary_rates(perfect, c);
    CHECK(*pr.accuracy == 1.0);
    CHECK(*pr.sensitivity == 1.0);
    CHECK(*pr.specificity == 1.0);
  }
}

TEST_CASE("zero denominators yield undefined markers, not NaN") {
  ConfusionMatrix cm(3);
  cm.add(0, 0);
  cm.add(1, 0);
  btn::BinaryRates r = btn::binary_rates(cm, 2);  // class 2 never appears
  CHECK(!r.sensitivity.has_value());
  CHECK(r.specificity.has_value());
  CHECK(r.accuracy.has_value());
}

TEST_CASE("roc_auc on the spec cases") {
  btn::RocCurve sep = btn::roc_auc({0.9, 0.8, 0.2, 0.1}, {true, true, false, false});
  CHECK(sep.auc == doctest::Approx(1.0).epsilon(1e-12));

  btn::RocCurve tied = btn::roc_auc({0.5, 0.5, 0.5, 0.5}, {true, false, true, false});
  CHECK(tied.auc == doctest::Approx(0.5).epsilon(1e-12));

  btn::RocCurve mixed = btn::roc_auc({0.9, 0.8, 0.4, 0.3}, {true, false, true, false});
  CHECK(mixed.auc == doctest::Approx(0.75).epsilon(1e-12));

  CHECK_THROWS_AS(btn::roc_auc({0.1, 0.2}, {true, true}), std::invalid_argument);
}

TEST_CASE("trapezoid AUC equals pairwise concordance probability") {
  Rng rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 5 + rng.uniform_int(196);
    std::vector<double> scores(static_cast<std::size_t>(n));
    std::vector<bool> labels(static_cast<std::size_t>(n));
    bool has_pos = false, has_neg = false;
    for (int i = 0; i < n; ++i) {
      // coarse grid forces ties
      scores[static_cast<std::size_t>(i)] = rng.uniform_int(12) / 11.0;
      labels[static_cast<std::size_t>(i)] = rng.bernoulli(0.4);
      has_pos = has_pos || labels[static_cast<std::size_t>(i)];
      has_neg = has_neg || !labels[static_cast<std::size_t>(i)];
    }
    if (!has_pos) labels[0] = true;
    if (!has_neg) labels[1] = false;
    btn::RocCurve curve = btn::roc_auc(scores, labels);
    CHECK(std::abs(curve.auc - concordance(scores, labels)) < 1e-9);

    // monotone non-decreasing in both coordinates
    for (std::size_t p = 1; p < curve.points.size(); ++p) {
      CHECK(curve.points[p].first >= curve.points[p - 1].first);
      CHECK(curve.points[p].second >= curve.points[p - 1].second);
    }
    CHECK(curve.points.front() == std::pair<double, double>{0.0, 0.0});
    CHECK(curve.points.back() == std::pair<double, double>{1.0, 1.0});
  }
}

TEST_CASE("pair_distance is the Euclidean metric") {
  Tensor a({2}, {0.0, 0.0});
  Tensor b({2}, {3.0, 4.0});
  CHECK(btn::pair_distance(a, b) == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(btn::pair_distance(a, a) == 0.0);

  Rng rng(5);
  Tensor x({128}, fd::random_uniform(rng, 128));
  Tensor y({128}, fd::random_uniform(rng, 128));
  Tensor z({128}, fd::random_uniform(rng, 128));
  double manual = 0;
  for (int i = 0; i < 128; ++i) {
    const double d = x.values()[static_cast<std::size_t>(i)] - y.values()[static_cast<std::size_t>(i)];
    manual += d * d;
  }
  CHECK(std::abs(btn::pair_distance(x, y) - std::sqrt(manual)) < 1e-12);
  CHECK(btn::pair_distance(x, y) == btn::pair_distance(y, x));
  CHECK(btn::pair_distance(x, z) <= btn::pair_distance(x, y) + btn::pair_distance(y, z) + 1e-12);

  Tensor wrong({3}, {1.0, 2.0, 3.0});
  CHECK_THROWS_AS(btn::pair_distance(a, wrong), std::invalid_argument);
}

TEST_CASE("build_pair_set mixes same and different pairs as requested") {
  Rng erng(7);
  const int n = 40, d = 4;
  std::vector<double> vals = fd::random_uniform(erng, static_cast<std::size_t>(n * d));
  Tensor embeddings({n, d}, vals);
  std::vector<int> labels;
  for (int i = 0; i < n; ++i) labels.push_back(i % 4);

  Rng rng(11);
  PairSet ps = btn::build_pair_set(embeddings, labels, 100, 0.6, rng);
  int same = 0;
  for (const auto& p : ps.pairs) same += p.same_class ? 1 : 0;
  CHECK(ps.pairs.size() == 100);
  CHECK(same == 60);

  Rng rng2(11);
  PairSet again = btn::build_pair_set(embeddings, labels, 100, 0.6, rng2);
  for (std::size_t i = 0; i < 100; ++i) {
    CHECK(ps.pairs[i].same_class == again.pairs[i].same_class);
    CHECK(ps.pairs[i].x.values() == again.pairs[i].x.values());
  }

  Rng rng3(13);
  PairSet all_same = btn::build_pair_set(embeddings, labels, 50, 1.0, rng3);
  for (const auto& p : all_same.pairs) CHECK(p.same_class);

  // all labels equal: different-class pairs are impossible
  std::vector<int> solo(static_cast<std::size_t>(n), 0);
  Rng rng4(17);
  CHECK_THROWS_AS(btn::build_pair_set(embeddings, solo, 10, 0.5, rng4), std::runtime_error);
}

TEST_CASE("kfold on perfectly separated distances is always perfect") {
  Rng rng(19);
  std::vector<double> dist;
  std::vector<bool> same;
  for (int i = 0; i < 120; ++i) {
    const bool s = i % 2 == 0;
    dist.push_back(s ? rng.uniform(0.05, 0.4) : rng.uniform(0.8, 1.5));
    same.push_back(s);
  }
  for (int folds : {2, 5, 10}) {
    btn::KFoldResult r = btn::kfold_pair_eval(pair_set_from_distances(dist, same), folds);
    CHECK(r.mean_accuracy == 1.0);
    CHECK(static_cast<int>(r.fold_thresholds.size()) == folds);
  }
}

TEST_CASE("two-fold hand-traced threshold selection") {
  // fold 0 = {0.1 same, 0.9 diff}, fold 1 = {0.3 same, 0.7 diff}
  // training on fold 1 gives threshold 0.5, which classifies fold 0 perfectly
  std::vector<double> dist{0.1, 0.9, 0.3, 0.7};
  std::vector<bool> same{true, false, true, false};
  btn::KFoldResult r = btn::kfold_pair_eval(pair_set_from_distances(dist, same), 2);
  CHECK(r.fold_thresholds[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.fold_thresholds[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.mean_accuracy == 1.0);

  CHECK_THROWS_AS(btn::kfold_pair_eval(pair_set_from_distances(dist, same), 1), std::invalid_argument);
  CHECK_THROWS_AS(btn::kfold_pair_eval(pair_set_from_distances({0.1}, {true}), 2), std::invalid_argument);
}

TEST_CASE("identical distances with the 60/40 mix fall in the majority band") {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> dist(600, 0.5);
    std::vector<bool> same(600);
    for (int i = 0; i < 600; ++i) same[static_cast<std::size_t>(i)] = rng.bernoulli(0.6);
    btn::KFoldResult r = btn::kfold_pair_eval(pair_set_from_distances(dist, same), 10);
    CHECK(r.mean_accuracy >= 0.45);
    CHECK(r.mean_accuracy <= 0.75);
  }
}

TEST_CASE("threshold selection never reads held-out labels") {
  Rng rng(29);
  std::vector<double> dist;
  std::vector<bool> same;
  for (int i = 0; i < 100; ++i) {
    dist.push_back(rng.uniform(0.0, 2.0));
    same.push_back(rng.bernoulli(0.6));
  }
  const int folds = 5;
  btn::KFoldResult base = btn::kfold_pair_eval(pair_set_from_distances(dist, same), folds);
  for (int f = 0; f < folds; ++f) {
    // permute the held-out fold's labels; its chosen threshold must not move
    std::vector<bool> permuted = same;
    std::vector<int> members;
    for (int i = 0; i < 100; ++i) {
      if (static_cast<int>((static_cast<long long>(i) * folds) / 100) == f) members.push_back(i);
    }
    for (std::size_t i = 0; i < members.size(); ++i) {
      permuted[static_cast<std::size_t>(members[i])] = same[static_cast<std::size_t>(members[(i + 7) % members.size()])];
    }
    btn::KFoldResult shuffled = btn::kfold_pair_eval(pair_set_from_distances(dist, permuted), folds);
    CHECK(shuffled.fold_thresholds[static_cast<std::size_t>(f)] == base.fold_thresholds[static_cast<std::size_t>(f)]);
  }
}

TEST_CASE("full report on an untrained network sits at chance level") {
  btn::Dataset ds = btn::make_synthetic(4, 50, 16, 16, 31);
  btn::BackboneConfig cfg = probes::tiny_config();
  cfg.in_height = 16;
  cfg.in_width = 16;
  cfg.num_classes = 4;
  btn::Network net = btn::init_parameters(cfg, 2);
  btn::PairEvalConfig pcfg;
  pcfg.count = 200;
  btn::EvalReport report = btn::full_report(net, ds, pcfg);
  CHECK(report.overall_accuracy >= 0.15);
  CHECK(report.overall_accuracy <= 0.35);
  CHECK(report.confusion.total() == 200);
  CHECK(report.per_class.size() == 4);
  CHECK(report.pair_eval.records.size() == 200);
}

TEST_CASE("report files: layout, arity and numeric round-trip") {
  namespace fs = std::filesystem;
  btn::Dataset ds = btn::make_synthetic(3, 30, 12, 12, 37);
  btn::BackboneConfig cfg = probes::tiny_config();
  cfg.in_height = 12;
  cfg.in_width = 12;
  cfg.num_classes = 3;
  btn::Network net = btn::init_parameters(cfg, 3);
  btn::PairEvalConfig pcfg;
  pcfg.count = 90;
  pcfg.folds = 5;
  btn::EvalReport report = btn::full_report(net, ds, pcfg);

  const std::string dir = (fs::temp_directory_path() / "btn_eval_report").string();
  fs::remove_all(dir);
  btn::write_report_files(report, dir);
  for (const char* f : {"report.csv", "confusion.csv", "pairs.csv", "roc.svg", "confusion.svg",
                        "roc_class_0.csv", "roc_class_1.csv", "roc_class_2.csv"}) {
    CHECK(fs::exists(fs::path(dir) / f));
  }

  btn::CsvTable summary = btn::read_csv((fs::path(dir) / "report.csv").string());
  CHECK(summary.rows.size() == 4);  // k classes + average
  CHECK(summary.rows.back()[0] == "average");
  // numeric cells round-trip exactly through %.17g
  const double acc = std::stod(summary.rows.back()[1]);
  CHECK(btn::csv_number(acc) == summary.rows.back()[1]);
  CHECK(acc == static_cast<double>(report.overall_accuracy));

  btn::CsvTable pairs = btn::read_csv((fs::path(dir) / "pairs.csv").string());
  CHECK(pairs.rows.size() == 90);
  for (const auto& row : pairs.rows) {
    const double dist = std::stod(row[0]);
    CHECK(btn::csv_number(dist) == row[0]);
  }
  fs::remove_all(dir);
}
