#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <map>
#include <vector>

#include "btn/mining.hpp"
#include "support/fd.hpp"

using btn::MiningStrategy;
using btn::Rng;
using btn::SamplerConfig;
using btn::SimilarityMatrix;
using btn::Tensor;
using btn::Triplet;

namespace {

Tensor random_unit_rows(Rng& rng, int n, int d) {
  std::vector<double> v(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i) {
    double ss = 0;
    for (int j = 0; j < d; ++j) {
      v[static_cast<std::size_t>(i * d + j)] = rng.uniform(-1, 1);
      ss += v[static_cast<std::size_t>(i * d + j)] * v[static_cast<std::size_t>(i * d + j)];
    }
    const double norm = std::sqrt(ss);
    for (int j = 0; j < d; ++j) v[static_cast<std::size_t>(i * d + j)] /= norm;
  }
  return Tensor({n, d}, std::move(v));
}

// Brute-force reference: for each anchor, enumerate all valid (p, n).
struct Mined {
  int positive = -1;
  int negative = -1;
  int semi_negative = -1;
};

Mined brute_force(const Tensor& d, const std::vector<int>& labels, int anchor) {
  Mined m;
  const int b = static_cast<int>(labels.size());
  for (int j = 0; j < b; ++j) {
    if (j == anchor || labels[static_cast<std::size_t>(j)] != labels[static_cast<std::size_t>(anchor)]) continue;
    if (m.positive < 0 || d.at({anchor, j}) > d.at({anchor, m.positive})) m.positive = j;
  }
  for (int j = 0; j < b; ++j) {
    if (labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(anchor)]) continue;
    if (m.negative < 0 || d.at({anchor, j}) < d.at({anchor, m.negative})) m.negative = j;
  }
  if (m.positive >= 0) {
    const double dp = d.at({anchor, m.positive});
    for (int j = 0; j < b; ++j) {
      if (labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(anchor)]) continue;
      if (d.at({anchor, j}) <= dp) continue;
      if (m.semi_negative < 0 || d.at({anchor, j}) < d.at({anchor, m.semi_negative})) m.semi_negative = j;
    }
    if (m.semi_negative < 0) m.semi_negative = m.negative;
  }
  return m;
}

}  // namespace

TEST_CASE("pairwise distances: zeros, orthogonal pairs and the loop oracle") {
  Tensor same({3, 4}, {0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5});
  Tensor dz = btn::pairwise_distances(same);
  for (double v : dz.values()) CHECK(v == 0.0);

  Tensor ortho({2, 2}, {1.0, 0.0, 0.0, 1.0});
  CHECK(btn::pairwise_distances(ortho).at({0, 1}) == doctest::Approx(2.0).epsilon(1e-15));

  Rng rng(3);
  Tensor e = random_unit_rows(rng, 10, 6);
  Tensor d = btn::pairwise_distances(e);
  for (int i = 0; i < 10; ++i) {
    CHECK(d.at({i, i}) == 0.0);
    for (int j = 0; j < 10; ++j) {
      double s = 0;
      for (int c = 0; c < 6; ++c) {
        const double diff = e.at({i, c}) - e.at({j, c});
        s += diff * diff;
      }
      CHECK(std::abs(d.at({i, j}) - s) < 1e-12);
      CHECK(d.at({i, j}) == d.at({j, i}));  // exact symmetry
      CHECK(d.at({i, j}) >= 0.0);
      CHECK(d.at({i, j}) <= 4.0 + 1e-12);
    }
  }
}

TEST_CASE("hand-built four-sample batch mines the known extremes") {
  // classes [0,0,1,1]; distances chosen so the extremes are unambiguous
  std::vector<double> d = {
      0.0, 0.9, 0.3, 1.5,
      0.9, 0.0, 1.2, 0.4,
      0.3, 1.2, 0.0, 0.8,
      1.5, 0.4, 0.8, 0.0,
  };
  Tensor dist({4, 4}, d);
  std::vector<int> labels{0, 0, 1, 1};
  auto triplets = btn::mine_hard_triplets(dist, labels, MiningStrategy::kHard);
  REQUIRE(triplets.size() == 4);
  // anchor 0: positive 1 (0.9), negative 2 (0.3 < 1.5)
  CHECK(triplets[0].anchor == 0);
  CHECK(triplets[0].positive == 1);
  CHECK(triplets[0].negative == 2);
  // anchor 1: positive 0 (0.9), negative 3 (0.4 < 1.2)
  CHECK(triplets[1].positive == 0);
  CHECK(triplets[1].negative == 3);
  // anchor 2: positive 3 (0.8), negative 0 (0.3 < 1.2)
  CHECK(triplets[2].positive == 3);
  CHECK(triplets[2].negative == 0);
  // anchor 3: positive 2 (0.8), negative 1 (0.4 < 1.5)
  CHECK(triplets[3].positive == 2);
  CHECK(triplets[3].negative == 1);
}

TEST_CASE("unique negative is forced") {
  std::vector<double> d = {
      0.0, 0.0, 0.7,
      0.0, 0.0, 0.9,
      0.7, 0.9, 0.0,
  };
  Tensor dist({3, 3}, d);
  auto triplets = btn::mine_hard_triplets(dist, {0, 0, 1}, MiningStrategy::kHard);
  REQUIRE(triplets.size() == 2);  // the singleton class-1 sample yields no anchor
  CHECK(triplets[0].negative == 2);
  CHECK(triplets[1].negative == 2);
}

TEST_CASE("hard and semi-hard mining match exhaustive enumeration") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int b = 4 + rng.uniform_int(13);  // up to 16
    std::vector<int> labels(static_cast<std::size_t>(b));
    const int k = 2 + rng.uniform_int(3);
    bool multi = false;
    for (int i = 0; i < b; ++i) {
      labels[static_cast<std::size_t>(i)] = rng.uniform_int(k);
      if (labels[static_cast<std::size_t>(i)] != labels[0]) multi = true;
    }
    if (!multi) labels[static_cast<std::size_t>(b - 1)] = (labels[0] + 1) % k;

    Tensor e = random_unit_rows(rng, b, 5);
    Tensor d = btn::pairwise_distances(e);

    auto hard = btn::mine_hard_triplets(d, labels, MiningStrategy::kHard);
    auto semi = btn::mine_hard_triplets(d, labels, MiningStrategy::kSemiHard);
    btn::validate_triplets(hard, labels);
    btn::validate_triplets(semi, labels);

    std::size_t expect_count = 0;
    for (int a = 0; a < b; ++a) {
      Mined m = brute_force(d, labels, a);
      if (m.positive < 0) continue;
      REQUIRE(expect_count < hard.size());
      CHECK(hard[expect_count].anchor == a);
      CHECK(hard[expect_count].positive == m.positive);
      CHECK(hard[expect_count].negative == m.negative);
      CHECK(semi[expect_count].positive == m.positive);
      CHECK(semi[expect_count].negative == m.semi_negative);
      ++expect_count;
    }
    CHECK(hard.size() == expect_count);
  }
}

TEST_CASE("mining error paths") {
  Tensor d({2, 2}, {0.0, 0.1, 0.1, 0.0});
  CHECK_THROWS_AS(btn::mine_hard_triplets(d, {0, 0}, MiningStrategy::kHard), std::invalid_argument);
  CHECK_THROWS_AS(btn::mine_hard_triplets(d, {0, 1}, MiningStrategy::kRandom), std::invalid_argument);
}

TEST_CASE("random strategy respects label constraints and is reproducible") {
  Rng rng(11);
  Tensor e = random_unit_rows(rng, 12, 4);
  Tensor d = btn::pairwise_distances(e);
  std::vector<int> labels{0, 0, 0, 1, 1, 1, 2, 2, 2, 0, 1, 2};
  Rng r1(5), r2(5);
  auto t1 = btn::mine_hard_triplets(d, labels, MiningStrategy::kRandom, &r1);
  auto t2 = btn::mine_hard_triplets(d, labels, MiningStrategy::kRandom, &r2);
  btn::validate_triplets(t1, labels);
  REQUIRE(t1.size() == t2.size());
  for (std::size_t i = 0; i < t1.size(); ++i) {
    CHECK(t1[i].positive == t2[i].positive);
    CHECK(t1[i].negative == t2[i].negative);
  }
}

TEST_CASE("sample_batch arity and reproducibility") {
  btn::Dataset ds = btn::make_synthetic(4, 10, 8, 8, 3);
  SamplerConfig cfg;
  cfg.classes_per_batch = 2;
  cfg.samples_per_class = 2;
  SimilarityMatrix sm(4);
  Rng r1(9), r2(9);
  btn::TripletBatch b1 = btn::sample_batch(ds, cfg, sm, r1);
  btn::TripletBatch b2 = btn::sample_batch(ds, cfg, sm, r2);
  CHECK(b1.images.shape() == std::vector<int>{4, 3, 8, 8});
  CHECK(b1.labels.size() == 4);
  CHECK(b1.dataset_indices == b2.dataset_indices);
  std::map<int, int> counts;
  for (int l : b1.labels) counts[l]++;
  CHECK(counts.size() == 2);
  for (auto& [cls, n] : counts) CHECK(n == 2);

  // class with fewer than q samples
  SamplerConfig big = cfg;
  big.samples_per_class = 50;
  Rng r3(1);
  CHECK_THROWS_AS(btn::sample_batch(ds, big, sm, r3), std::runtime_error);
}

TEST_CASE("uniform similarity keeps class selection uniform") {
  btn::Dataset ds = btn::make_synthetic(4, 6, 6, 6, 5);
  SamplerConfig cfg;
  cfg.classes_per_batch = 2;
  cfg.samples_per_class = 2;
  SimilarityMatrix sm(4);
  Rng rng(13);
  std::vector<int> appearances(4, 0);
  const int rounds = 20000;
  for (int i = 0; i < rounds; ++i) {
    btn::TripletBatch b = btn::sample_batch(ds, cfg, sm, rng);
    appearances[static_cast<std::size_t>(b.labels[0])]++;
    appearances[static_cast<std::size_t>(b.labels[2])]++;
  }
  for (int c = 0; c < 4; ++c) {
    const double freq = static_cast<double>(appearances[static_cast<std::size_t>(c)]) / rounds;
    CHECK(freq > 0.46);
    CHECK(freq < 0.54);  // each class sits in half of all uniform 2-of-4 picks
  }
}

TEST_CASE("a dominant confusable pair co-occurs most often") {
  btn::Dataset ds = btn::make_synthetic(4, 6, 6, 6, 7);
  SamplerConfig cfg;
  cfg.classes_per_batch = 2;
  cfg.samples_per_class = 2;
  cfg.oversample_with_similarity = true;

  // classes 1 and 2 confuse each other hard
  SimilarityMatrix sm(4, 0.0);
  Tensor rows({4, 4}, {
      0.97, 0.01, 0.01, 0.01,
      0.01, 0.50, 0.48, 0.01,
      0.01, 0.48, 0.50, 0.01,
      0.01, 0.01, 0.01, 0.97,
  });
  sm = sm.updated(rows, {0, 1, 2, 3});

  Rng rng(17);
  std::map<std::pair<int, int>, int> cooccur;
  for (int i = 0; i < 10000; ++i) {
    btn::TripletBatch b = btn::sample_batch(ds, cfg, sm, rng);
    int lo = std::min(b.labels[0], b.labels[2]);
    int hi = std::max(b.labels[0], b.labels[2]);
    cooccur[{lo, hi}]++;
  }
  const int target = cooccur[{1, 2}];
  for (auto& [pair, n] : cooccur) {
    if (pair != std::make_pair(1, 2)) CHECK(target > n);
  }
}
