#pragma once

// Loss functions: plain and constrained triplet losses, the class-confusion
// similarity matrix, misclassification-probability weighted softmax loss and
// the joint trade-off objective. Every margin term is clamped at zero.

#include <stdexcept>
#include <string>
#include <vector>

#include "btn/tensor.hpp"

namespace btn {

struct Margins {
  real mu1 = real(0.5);      // minimum gap between anchor-negative and anchor-positive squared distances
  real mu2 = real(0.5);      // cap on anchor-positive squared distance
  real b = real(1.0);        // weight of the intra-class cap term
  real alpha_t = real(0.55); // softmax/triplet trade-off

  void validate() const {
    if (mu1 <= real(0)) throw std::invalid_argument("Margins: mu1 must be > 0");
    if (mu2 <= real(0)) throw std::invalid_argument("Margins: mu2 must be > 0");
    if (b < real(0)) throw std::invalid_argument("Margins: b must be >= 0");
    if (alpha_t < real(0) || alpha_t > real(1)) throw std::invalid_argument("Margins: alpha_t must be in [0,1]");
  }
};

// k x k row-stochastic matrix; entry (i,j) estimates the probability that a
// class-i sample is predicted as class j. Starts uniform so the weighted
// softmax loss begins as scaled cross-entropy instead of zero.
class SimilarityMatrix {
 public:
  explicit SimilarityMatrix(int k, real update_momentum = real(0.9))
      : k_(k), momentum_(update_momentum), s_(static_cast<std::size_t>(k) * k, real(1) / static_cast<real>(k)) {
    if (k < 2) throw std::invalid_argument("SimilarityMatrix: need k >= 2");
    if (update_momentum < real(0) || update_momentum >= real(1)) {
      throw std::invalid_argument("SimilarityMatrix: momentum must be in [0,1)");
    }
  }

  static SimilarityMatrix identity(int k, real update_momentum = real(0.9)) {
    SimilarityMatrix sm(k, update_momentum);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) sm.s_[static_cast<std::size_t>(i) * k + j] = (i == j) ? real(1) : real(0);
    return sm;
  }

  int classes() const { return k_; }
  real momentum() const { return momentum_; }
  real at(int i, int j) const {
    check_class(i);
    check_class(j);
    return s_[static_cast<std::size_t>(i) * k_ + j];
  }
  Tensor matrix() const { return Tensor({k_, k_}, s_); }

  // P_i = sum_{j != i} S[i][j]
  real misclass_prob(int i) const {
    check_class(i);
    real p = 0;
    for (int j = 0; j < k_; ++j)
      if (j != i) p += s_[static_cast<std::size_t>(i) * k_ + j];
    return p;
  }

  // Fresh estimate per class = mean softmax row over samples of that class;
  // classes absent from the batch keep their previous row unchanged.
  SimilarityMatrix updated(const Tensor& softmax_outputs, const std::vector<int>& labels) const {
    if (softmax_outputs.rank() != 2 || softmax_outputs.dim(1) != k_) {
      throw std::invalid_argument("SimilarityMatrix: outputs must be [B," + std::to_string(k_) + "]");
    }
    const int batch = softmax_outputs.dim(0);
    if (static_cast<int>(labels.size()) != batch) throw std::invalid_argument("SimilarityMatrix: label count mismatch");
    for (int l : labels) check_class(l);
    for (int r = 0; r < batch; ++r) {
      real s = 0;
      for (int j = 0; j < k_; ++j) s += softmax_outputs.at({r, j});
      if (std::abs(s - real(1)) > real(1e-6)) throw std::invalid_argument("SimilarityMatrix: softmax rows must sum to 1");
    }

    std::vector<real> est(static_cast<std::size_t>(k_) * k_, real(0));
    std::vector<int> counts(static_cast<std::size_t>(k_), 0);
    for (int r = 0; r < batch; ++r) {
      const int c = labels[static_cast<std::size_t>(r)];
      ++counts[static_cast<std::size_t>(c)];
      for (int j = 0; j < k_; ++j) est[static_cast<std::size_t>(c) * k_ + j] += softmax_outputs.at({r, j});
    }
    SimilarityMatrix next = *this;
    for (int i = 0; i < k_; ++i) {
      if (counts[static_cast<std::size_t>(i)] == 0) continue;  // keep previous row exactly
      const real inv = real(1) / static_cast<real>(counts[static_cast<std::size_t>(i)]);
      for (int j = 0; j < k_; ++j) {
        const real mean = est[static_cast<std::size_t>(i) * k_ + j] * inv;
        real& cell = next.s_[static_cast<std::size_t>(i) * k_ + j];
        cell = momentum_ * cell + (real(1) - momentum_) * mean;
      }
    }
    return next;
  }

  void load_rows(const Tensor& rows) {
    if (rows.rank() != 2 || rows.dim(0) != k_ || rows.dim(1) != k_) {
      throw std::invalid_argument("SimilarityMatrix: bad row tensor");
    }
    s_ = rows.values();
  }

 private:
  void check_class(int i) const {
    if (i < 0 || i >= k_) throw std::out_of_range("SimilarityMatrix: class id " + std::to_string(i) + " out of range");
  }
  int k_;
  real momentum_;
  std::vector<real> s_;
};

namespace detail {

inline Tensor as_rows(const Tensor& t, const char* op) {
  if (t.rank() == 1) return reshape(t, {1, t.dim(0)});
  if (t.rank() == 2) return t;
  throw std::invalid_argument(std::string(op) + ": embeddings must be [d] or [N,d]");
}

inline void check_embedding_dims(const Tensor& a, const Tensor& p, const Tensor& n, const char* op) {
  if (a.shape() != p.shape() || a.shape() != n.shape()) {
    throw std::invalid_argument(std::string(op) + ": anchor/positive/negative shapes differ");
  }
}

// [N,d] x [N,d] -> [N] of squared row distances
inline Tensor row_sq_distance(const Tensor& x, const Tensor& y) {
  return sum_axis(square(sub(x, y)), 1);
}

}  // namespace detail

// mean over triplets of max(0, ||a-p||^2 - ||a-n||^2 + mu1)
inline Tensor triplet_loss(const Tensor& emb_a, const Tensor& emb_p, const Tensor& emb_n, real mu1) {
  if (mu1 <= real(0)) throw std::invalid_argument("triplet_loss: mu1 must be > 0");
  detail::check_embedding_dims(emb_a, emb_p, emb_n, "triplet_loss");
  Tensor a = detail::as_rows(emb_a, "triplet_loss");
  Tensor p = detail::as_rows(emb_p, "triplet_loss");
  Tensor n = detail::as_rows(emb_n, "triplet_loss");
  Tensor d_ap = detail::row_sq_distance(a, p);
  Tensor d_an = detail::row_sq_distance(a, n);
  return mean(relu(add_scalar(sub(d_ap, d_an), mu1)));
}

// b * mean(max(0, ||a-p||^2 - mu2)) + mean(max(0, ||a-p||^2 - ||a-n||^2 + mu1))
inline Tensor constrained_triplet_loss(const Tensor& emb_a, const Tensor& emb_p, const Tensor& emb_n,
                                       const Margins& margins) {
  margins.validate();
  detail::check_embedding_dims(emb_a, emb_p, emb_n, "constrained_triplet_loss");
  Tensor a = detail::as_rows(emb_a, "constrained_triplet_loss");
  Tensor p = detail::as_rows(emb_p, "constrained_triplet_loss");
  Tensor n = detail::as_rows(emb_n, "constrained_triplet_loss");
  Tensor d_ap = detail::row_sq_distance(a, p);
  Tensor d_an = detail::row_sq_distance(a, n);
  Tensor triplet = mean(relu(add_scalar(sub(d_ap, d_an), margins.mu1)));
  Tensor intra = mean(relu(add_scalar(d_ap, -margins.mu2)));
  return add(scale(intra, margins.b), triplet);
}

// (1/N) sum_i -log(f_s(i)[label_i]), probabilities clamped at 1e-12
inline Tensor cross_entropy_loss(const Tensor& softmax_outputs, const std::vector<int>& labels) {
  Tensor picked = gather_labels(softmax_outputs, labels);
  return scale(mean(log_clamped(picked, real(1e-12))), real(-1));
}

// (1/N) sum_i -P_{label_i} * log(f_s(i)[label_i]); P comes from the
// similarity matrix and carries no gradient.
inline Tensor weighted_softmax_loss(const Tensor& softmax_outputs, const std::vector<int>& labels,
                                    const SimilarityMatrix& sm) {
  if (softmax_outputs.rank() != 2 || softmax_outputs.dim(1) != sm.classes()) {
    throw std::invalid_argument("weighted_softmax_loss: outputs must be [B,k]");
  }
  const int batch = softmax_outputs.dim(0);
  if (static_cast<int>(labels.size()) != batch) throw std::invalid_argument("weighted_softmax_loss: label count mismatch");
  std::vector<real> weights(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) weights[static_cast<std::size_t>(i)] = sm.misclass_prob(labels[static_cast<std::size_t>(i)]);
  Tensor picked = gather_labels(softmax_outputs, labels);
  Tensor weighted = mul(log_clamped(picked, real(1e-12)), Tensor({batch}, std::move(weights)));
  return scale(mean(weighted), real(-1));
}

// alpha_t * L_softmax + (1 - alpha_t) * L_triplet; exact at the boundaries.
inline Tensor joint_loss(const Tensor& l_softmax, const Tensor& l_triplet, real alpha_t) {
  if (alpha_t < real(0) || alpha_t > real(1)) throw std::invalid_argument("joint_loss: alpha_t must be in [0,1]");
  if (l_softmax.size() != 1 || l_triplet.size() != 1) throw std::invalid_argument("joint_loss: losses must be scalar");
  if (alpha_t == real(1)) return l_softmax;
  if (alpha_t == real(0)) return l_triplet;
  return add(scale(l_softmax, alpha_t), scale(l_triplet, real(1) - alpha_t));
}

inline real joint_loss(real l_softmax, real l_triplet, real alpha_t) {
  return joint_loss(Tensor::scalar(l_softmax), Tensor::scalar(l_triplet), alpha_t).value();
}

}  // namespace btn
