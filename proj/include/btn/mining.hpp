#pragma once

// Online triplet selection inside mini-batches: hard-positive / hard-negative
// mining with a semi-hard alternative, plus similarity-driven oversampling of
// confusable class pairs when composing batches.

#include <stdexcept>
#include <string>
#include <vector>

#include "btn/data.hpp"
#include "btn/losses.hpp"
#include "btn/tensor.hpp"

namespace btn {

struct Triplet {
  int anchor = -1;
  int positive = -1;
  int negative = -1;
};

struct TripletBatch {
  Tensor images;  // [B,c,h,w], normalized to (-1,+1)
  std::vector<int> labels;
  std::vector<int> dataset_indices;
  std::vector<Triplet> triplets;  // filled by mining once embeddings exist
};

enum class MiningStrategy { kHard, kSemiHard, kRandom };

struct SamplerConfig {
  int classes_per_batch = 4;   // p
  int samples_per_class = 8;   // q, batch size B = p*q
  MiningStrategy strategy = MiningStrategy::kSemiHard;
  bool oversample_with_similarity = true;

  int batch_size() const { return classes_per_batch * samples_per_class; }
  void validate() const {
    if (classes_per_batch < 2) throw std::invalid_argument("SamplerConfig: need p >= 2 classes per batch");
    if (samples_per_class < 2) throw std::invalid_argument("SamplerConfig: need q >= 2 samples per class");
  }
};

// D[i][j] = ||e_i - e_j||^2 with exact symmetry and zero diagonal. For unit
// rows every entry lies in [0, 4].
inline Tensor pairwise_distances(const Tensor& embeddings) {
  if (embeddings.rank() != 2) throw std::invalid_argument("pairwise_distances: expects [B,d] embeddings");
  const int b = embeddings.dim(0), d = embeddings.dim(1);
  std::vector<real> out(static_cast<std::size_t>(b) * b, real(0));
  const real* e = embeddings.values().data();
  for (int i = 0; i < b; ++i) {
    for (int j = i + 1; j < b; ++j) {
      real s = 0;
      for (int c = 0; c < d; ++c) {
        const real diff = e[i * d + c] - e[j * d + c];
        s += diff * diff;
      }
      out[static_cast<std::size_t>(i) * b + j] = s;
      out[static_cast<std::size_t>(j) * b + i] = s;
    }
  }
  return Tensor({b, b}, std::move(out));
}

// One triplet per eligible anchor. hard: positive = farthest same-class,
// negative = closest other-class. semi_hard: negative = closest other-class
// sample farther than the positive, falling back to the hard negative.
// Ties break toward the lowest index.
inline std::vector<Triplet> mine_hard_triplets(const Tensor& distances, const std::vector<int>& labels,
                                               MiningStrategy strategy, Rng* rng = nullptr) {
  if (distances.rank() != 2 || distances.dim(0) != distances.dim(1)) {
    throw std::invalid_argument("mine_hard_triplets: distance matrix must be square");
  }
  const int b = distances.dim(0);
  if (static_cast<int>(labels.size()) != b) throw std::invalid_argument("mine_hard_triplets: label count mismatch");
  if (strategy == MiningStrategy::kRandom && !rng) {
    throw std::invalid_argument("mine_hard_triplets: random strategy needs an rng");
  }
  bool multi_class = false;
  for (int i = 1; i < b; ++i) {
    if (labels[static_cast<std::size_t>(i)] != labels[0]) multi_class = true;
  }
  if (!multi_class) throw std::invalid_argument("mine_hard_triplets: batch contains a single class, no negatives exist");

  std::vector<Triplet> out;
  for (int a = 0; a < b; ++a) {
    const int cls = labels[static_cast<std::size_t>(a)];
    int positive = -1, negative = -1;
    if (strategy == MiningStrategy::kRandom) {
      std::vector<int> pos, neg;
      for (int j = 0; j < b; ++j) {
        if (j == a) continue;
        (labels[static_cast<std::size_t>(j)] == cls ? pos : neg).push_back(j);
      }
      if (pos.empty()) continue;  // singleton class yields no anchor
      positive = pos[static_cast<std::size_t>(rng->uniform_int(static_cast<int>(pos.size())))];
      negative = neg[static_cast<std::size_t>(rng->uniform_int(static_cast<int>(neg.size())))];
      out.push_back(Triplet{a, positive, negative});
      continue;
    }
    for (int j = 0; j < b; ++j) {
      if (j == a || labels[static_cast<std::size_t>(j)] != cls) continue;
      if (positive < 0 || distances.at({a, j}) > distances.at({a, positive})) positive = j;
    }
    if (positive < 0) continue;
    if (strategy == MiningStrategy::kSemiHard) {
      const real dp = distances.at({a, positive});
      for (int j = 0; j < b; ++j) {
        if (labels[static_cast<std::size_t>(j)] == cls) continue;
        if (distances.at({a, j}) <= dp) continue;
        if (negative < 0 || distances.at({a, j}) < distances.at({a, negative})) negative = j;
      }
    }
    if (negative < 0) {  // hard strategy, or semi-hard fallback
      for (int j = 0; j < b; ++j) {
        if (labels[static_cast<std::size_t>(j)] == cls) continue;
        if (negative < 0 || distances.at({a, j}) < distances.at({a, negative})) negative = j;
      }
    }
    out.push_back(Triplet{a, positive, negative});
  }
  return out;
}

namespace detail {

// First class pair drawn proportionally to (eps + off-diagonal similarity
// mass) with eps = 1/k; remaining classes uniform among the rest.
inline std::vector<int> choose_batch_classes(const SimilarityMatrix& sm, int p, bool oversample, Rng& rng) {
  const int k = sm.classes();
  if (p > k) throw std::invalid_argument("choose_batch_classes: more classes per batch than classes exist");
  std::vector<int> chosen;
  if (oversample && p >= 2) {
    const real eps = real(1) / static_cast<real>(k);
    std::vector<std::pair<int, int>> pairs;
    std::vector<double> weights;
    double total = 0;
    for (int i = 0; i < k; ++i)
      for (int j = i + 1; j < k; ++j) {
        pairs.emplace_back(i, j);
        const double w = static_cast<double>(eps + sm.at(i, j) + sm.at(j, i));
        weights.push_back(w);
        total += w;
      }
    double pick = rng.next_double() * total;
    std::size_t sel = 0;
    for (; sel + 1 < pairs.size(); ++sel) {
      pick -= weights[sel];
      if (pick < 0) break;
    }
    chosen.push_back(pairs[sel].first);
    chosen.push_back(pairs[sel].second);
  }
  std::vector<int> rest;
  for (int c = 0; c < k; ++c) {
    bool used = false;
    for (int u : chosen) used = used || (u == c);
    if (!used) rest.push_back(c);
  }
  rng.shuffle(rest);
  for (int c : rest) {
    if (static_cast<int>(chosen.size()) >= p) break;
    chosen.push_back(c);
  }
  return chosen;
}

}  // namespace detail

// Composes a batch of p classes x q samples. Images are stacked in (-1,+1)
// range; triplets are left empty for the online mining step.
inline TripletBatch sample_batch(const Dataset& ds, const SamplerConfig& config,
                                 const SimilarityMatrix& sm, Rng& rng) {
  config.validate();
  ds.validate();
  if (sm.classes() != ds.num_classes()) throw std::invalid_argument("sample_batch: similarity matrix class count mismatch");
  const auto by_class = ds.indices_by_class();
  std::vector<int> classes = detail::choose_batch_classes(sm, config.classes_per_batch,
                                                          config.oversample_with_similarity, rng);
  std::vector<int> picked;
  for (int c : classes) {
    const auto& members = by_class[static_cast<std::size_t>(c)];
    if (static_cast<int>(members.size()) < config.samples_per_class) {
      throw std::runtime_error("sample_batch: class '" + ds.class_names[static_cast<std::size_t>(c)] +
                               "' has fewer than q=" + std::to_string(config.samples_per_class) + " samples");
    }
    std::vector<int> pool = members;
    rng.shuffle(pool);
    for (int i = 0; i < config.samples_per_class; ++i) picked.push_back(pool[static_cast<std::size_t>(i)]);
  }
  TripletBatch batch;
  batch.images = stack_batch(ds, picked);
  batch.dataset_indices = picked;
  for (int idx : picked) batch.labels.push_back(ds.labels[static_cast<std::size_t>(idx)]);
  return batch;
}

// Exhaustive label-constraint check used by tests and the trainer's debug path.
inline void validate_triplets(const std::vector<Triplet>& triplets, const std::vector<int>& labels) {
  const int b = static_cast<int>(labels.size());
  for (const auto& t : triplets) {
    if (t.anchor < 0 || t.anchor >= b || t.positive < 0 || t.positive >= b || t.negative < 0 || t.negative >= b) {
      throw std::logic_error("validate_triplets: index out of range");
    }
    if (t.anchor == t.positive) throw std::logic_error("validate_triplets: anchor == positive");
    if (labels[static_cast<std::size_t>(t.anchor)] != labels[static_cast<std::size_t>(t.positive)]) {
      throw std::logic_error("validate_triplets: anchor/positive labels differ");
    }
    if (labels[static_cast<std::size_t>(t.anchor)] == labels[static_cast<std::size_t>(t.negative)]) {
      throw std::logic_error("validate_triplets: anchor/negative labels match");
    }
  }
}

}  // namespace btn
