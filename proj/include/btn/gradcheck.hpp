#pragma once

// Self-check suite behind the `gradcheck` subcommand: central-difference
// validation of every differentiable op, every loss and a full network, at
// rel. err < 1e-4 (f64). The unit-test suites keep their own independent
// oracle; this one exists so a build can validate itself in the field.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "btn/losses.hpp"
#include "btn/network.hpp"
#include "btn/rng.hpp"
#include "btn/tensor.hpp"

namespace btn {

struct GradCheckResult {
  std::string name;
  real max_rel_error = 0;
  bool pass = false;
};

namespace detail {

inline std::vector<real> gc_central_diff(const std::function<real(const std::vector<real>&)>& f,
                                         std::vector<real> x, real h) {
  std::vector<real> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const real orig = x[i];
    x[i] = orig + h;
    const real fp = f(x);
    x[i] = orig - h;
    const real fm = f(x);
    x[i] = orig;
    g[i] = (fp - fm) / (real(2) * h);
  }
  return g;
}

inline real gc_rel_error(const std::vector<real>& ga, const std::vector<real>& gfd) {
  real diff = 0, norm = 0;
  for (std::size_t i = 0; i < ga.size(); ++i) {
    const real d = ga[i] - gfd[i];
    diff += d * d;
    norm += gfd[i] * gfd[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(norm), real(1e-8));
}

template <class OpFn>
real gc_op_error(OpFn op, const std::vector<int>& shape, const std::vector<real>& x0, Rng& wrng) {
  Tensor probe(shape, x0);
  Tensor out0 = op(probe);
  std::vector<real> w(static_cast<std::size_t>(out0.size()));
  for (auto& v : w) v = static_cast<real>(wrng.uniform(-1, 1));
  Tensor weights(out0.shape(), w);

  GradTape tape;
  Tensor x = tape.watch(probe);
  tape.backward(sum(mul(op(x), weights)));
  const std::vector<real> analytic = tape.grad(x).values();

  auto f = [&](const std::vector<real>& xv) {
    Tensor y = op(Tensor(shape, xv));
    real s = 0;
    for (std::size_t i = 0; i < w.size(); ++i) s += y.values()[i] * w[i];
    return s;
  };
  return gc_rel_error(analytic, gc_central_diff(f, x0, real(1e-5)));
}

inline std::vector<real> gc_random(Rng& rng, std::size_t n, real lo, real hi) {
  std::vector<real> v(n);
  for (auto& x : v) x = static_cast<real>(rng.uniform(lo, hi));
  return v;
}

inline std::vector<real> gc_random_signed(Rng& rng, std::size_t n, real lo, real hi) {
  std::vector<real> v(n);
  for (auto& x : v) {
    const real mag = static_cast<real>(rng.uniform(lo, hi));
    x = rng.bernoulli(0.5) ? mag : -mag;
  }
  return v;
}

}  // namespace detail

inline std::vector<GradCheckResult> run_gradient_checks(int seed = 1, int trials = 20, real tolerance = real(1e-4)) {
  Rng rng(static_cast<std::uint64_t>(seed) * 0x6c62272e07bb0142ULL + 3);
  std::vector<GradCheckResult> results;
  auto run = [&](const std::string& name, std::function<real(Rng&, Rng&)> one_trial) {
    GradCheckResult r;
    r.name = name;
    for (int t = 0; t < trials; ++t) {
      Rng wrng(rng.next_u64());
      r.max_rel_error = std::max(r.max_rel_error, one_trial(rng, wrng));
    }
    r.pass = r.max_rel_error < tolerance;
    results.push_back(r);
  };

  using detail::gc_op_error;
  using detail::gc_random;
  using detail::gc_random_signed;

  run("relu", [](Rng& rng, Rng& w) {
    return gc_op_error([](const Tensor& x) { return relu(x); }, {12}, gc_random_signed(rng, 12, real(0.1), real(1)), w);
  });
  run("signed_sqrt", [](Rng& rng, Rng& w) {
    return gc_op_error([](const Tensor& x) { return signed_sqrt(x); }, {9}, gc_random_signed(rng, 9, real(0.1), real(1)), w);
  });
  run("square", [](Rng& rng, Rng& w) {
    return gc_op_error([](const Tensor& x) { return square(x); }, {10}, gc_random(rng, 10, real(-1), real(1)), w);
  });
  run("log", [](Rng& rng, Rng& w) {
    return gc_op_error([](const Tensor& x) { return log_clamped(x); }, {8}, gc_random(rng, 8, real(0.1), real(2)), w);
  });
  run("add_sub_mul_scale", [](Rng& rng, Rng& w) {
    Tensor other({3, 4}, gc_random(rng, 12, real(-1), real(1)));
    auto x0 = gc_random(rng, 12, real(-1), real(1));
    real e = gc_op_error([&](const Tensor& x) { return add(x, other); }, {3, 4}, x0, w);
    e = std::max(e, gc_op_error([&](const Tensor& x) { return sub(other, x); }, {3, 4}, x0, w));
    e = std::max(e, gc_op_error([&](const Tensor& x) { return mul(x, other); }, {3, 4}, x0, w));
    e = std::max(e, gc_op_error([](const Tensor& x) { return scale(x, real(-1.3)); }, {3, 4}, x0, w));
    return e;
  });
  run("matmul", [](Rng& rng, Rng& w) {
    Tensor b({2, 4}, gc_random(rng, 8, real(-1), real(1)));
    Tensor a({3, 2}, gc_random(rng, 6, real(-1), real(1)));
    real e = gc_op_error([&](const Tensor& x) { return matmul(x, b); }, {3, 2}, a.values(), w);
    return std::max(e, gc_op_error([&](const Tensor& x) { return matmul(a, x); }, {2, 4}, b.values(), w));
  });
  run("reductions", [](Rng& rng, Rng& w) {
    auto x0 = gc_random(rng, 12, real(-1), real(1));
    real e = gc_op_error([](const Tensor& x) { return sum(x); }, {12}, x0, w);
    e = std::max(e, gc_op_error([](const Tensor& x) { return mean(x); }, {12}, x0, w));
    e = std::max(e, gc_op_error([](const Tensor& x) { return sum_axis(x, 0); }, {3, 4}, x0, w));
    return std::max(e, gc_op_error([](const Tensor& x) { return sum_axis(x, 1); }, {3, 4}, x0, w));
  });
  run("softmax", [](Rng& rng, Rng& w) {
    return gc_op_error([](const Tensor& x) { return softmax(x, 1); }, {2, 5}, gc_random(rng, 10, real(-2), real(2)), w);
  });
  run("l2_normalize", [](Rng& rng, Rng& w) {
    return gc_op_error([](const Tensor& x) { return l2_normalize(x, 1); }, {2, 5}, gc_random_signed(rng, 10, real(0.2), real(1)), w);
  });
  run("conv2d", [](Rng& rng, Rng& w) {
    Tensor kern({2, 2, 3, 3}, gc_random(rng, 36, real(-1), real(1)));
    Tensor img({2, 4, 4}, gc_random(rng, 32, real(-1), real(1)));
    real e = gc_op_error([&](const Tensor& x) { return conv2d(x, kern, 1, 1); }, {2, 4, 4}, img.values(), w);
    return std::max(e, gc_op_error([&](const Tensor& k) { return conv2d(img, k, 1, 1); }, {2, 2, 3, 3}, kern.values(), w));
  });
  run("pooling", [](Rng& rng, Rng& w) {
    auto x0 = gc_random(rng, 32, real(-1), real(1));
    real e = gc_op_error([](const Tensor& x) { return max_pool2d(x, 2); }, {2, 4, 4}, x0, w);
    return std::max(e, gc_op_error([](const Tensor& x) { return global_avg_pool(x); }, {2, 4, 4}, x0, w));
  });
  run("bias_gather", [](Rng& rng, Rng& w) {
    Tensor bias({4}, gc_random(rng, 4, real(-1), real(1)));
    auto x0 = gc_random(rng, 12, real(-1), real(1));
    real e = gc_op_error([&](const Tensor& x) { return bias_add_rows(x, bias); }, {3, 4}, x0, w);
    e = std::max(e, gc_op_error([](const Tensor& x) { return gather_rows(x, {2, 0, 2}); }, {3, 4}, x0, w));
    return std::max(e, gc_op_error([](const Tensor& x) { return gather_labels(x, {1, 3, 0}); }, {3, 4}, x0, w));
  });
  run("dropout", [](Rng& rng, Rng& w) {
    auto x0 = gc_random(rng, 20, real(-1), real(1));
    const std::uint64_t mask_seed = rng.next_u64();
    return gc_op_error(
        [mask_seed](const Tensor& x) {
          Rng mask(mask_seed);
          return dropout(x, real(0.3), true, mask);
        },
        {20}, x0, w);
  });
  run("triplet_loss", [](Rng& rng, Rng& w) {
    Tensor p({5, 4}, gc_random(rng, 20, real(-1), real(1)));
    Tensor n({5, 4}, gc_random(rng, 20, real(-1), real(1)));
    return gc_op_error([&](const Tensor& a) { return triplet_loss(a, p, n, real(0.37)); }, {5, 4},
                       gc_random(rng, 20, real(-1), real(1)), w);
  });
  run("constrained_triplet_loss", [](Rng& rng, Rng& w) {
    Margins m;
    m.mu1 = real(0.37);
    m.mu2 = real(0.53);
    m.b = real(1.3);
    Tensor a({5, 4}, gc_random(rng, 20, real(-1), real(1)));
    Tensor n({5, 4}, gc_random(rng, 20, real(-1), real(1)));
    return gc_op_error([&](const Tensor& p) { return constrained_triplet_loss(a, p, n, m); }, {5, 4},
                       gc_random(rng, 20, real(-1), real(1)), w);
  });
  run("weighted_softmax_loss", [](Rng& rng, Rng& w) {
    SimilarityMatrix sm(3, real(0));
    std::vector<real> rows(9);
    for (int i = 0; i < 3; ++i) {
      real s = 0;
      for (int j = 0; j < 3; ++j) {
        rows[static_cast<std::size_t>(i * 3 + j)] = static_cast<real>(rng.uniform(0.05, 1.0));
        s += rows[static_cast<std::size_t>(i * 3 + j)];
      }
      for (int j = 0; j < 3; ++j) rows[static_cast<std::size_t>(i * 3 + j)] /= s;
    }
    sm = sm.updated(Tensor({3, 3}, rows), {0, 1, 2});
    const std::vector<int> labels{0, 2, 1, 1};
    return gc_op_error(
        [&](const Tensor& logits) { return weighted_softmax_loss(softmax(logits, 1), labels, sm); }, {4, 3},
        gc_random(rng, 12, real(-2), real(2)), w);
  });
  run("joint_loss", [](Rng& rng, Rng& w) {
    Tensor p({4, 3}, gc_random(rng, 12, real(-1), real(1)));
    Tensor n({4, 3}, gc_random(rng, 12, real(-1), real(1)));
    Margins m;
    return gc_op_error(
        [&](const Tensor& a) {
          Tensor lt = constrained_triplet_loss(a, p, n, m);
          Tensor ls = Tensor::scalar(real(0.7));
          return joint_loss(ls, lt, real(0.55));
        },
        {4, 3}, gc_random(rng, 12, real(-1), real(1)), w);
  });

  // full network: every parameter against central differences
  {
    GradCheckResult r;
    r.name = "full_network";
    BackboneConfig cfg;
    cfg.in_channels = 3;
    cfg.in_height = 8;
    cfg.in_width = 8;
    cfg.conv_blocks = {{3, 3, 1, 2}, {4, 3, 1, 1}};
    cfg.num_classes = 2;
    cfg.embedding_dim = 5;
    cfg.dropout_rate = real(0);
    for (int t = 0; t < std::max(1, trials / 10); ++t) {
      Network net = init_parameters(cfg, seed + t);
      Tensor images({2, 3, 8, 8}, detail::gc_random(rng, 2 * 3 * 8 * 8, real(0.05), real(1)));
      Rng wrng(rng.next_u64());
      std::vector<real> wp = detail::gc_random(wrng, 2 * cfg.num_classes, real(-1), real(1));
      std::vector<real> we = detail::gc_random(wrng, static_cast<std::size_t>(2) * cfg.embedding_dim, real(-1), real(1));
      Tensor wprobs({2, cfg.num_classes}, wp);
      Tensor wemb({2, cfg.embedding_dim}, we);

      GradTape tape;
      Network attached = attach_to_tape(net, tape);
      BatchOutputs out = forward_batch(attached, images);
      tape.backward(add(sum(mul(out.probs, wprobs)), sum(mul(out.embeddings, wemb))));
      std::vector<real> analytic;
      for (auto& [name, p] : attached.named_parameters()) {
        const auto g = tape.grad(*p).values();
        analytic.insert(analytic.end(), g.begin(), g.end());
      }

      std::vector<real> flat;
      for (auto& [name, p] : net.named_parameters()) flat.insert(flat.end(), p->values().begin(), p->values().end());
      auto f = [&](const std::vector<real>& v) {
        Network probe = net;
        std::size_t off = 0;
        for (auto& [name, p] : probe.named_parameters()) {
          std::vector<real> vals(v.begin() + static_cast<long>(off), v.begin() + static_cast<long>(off + static_cast<std::size_t>(p->size())));
          off += static_cast<std::size_t>(p->size());
          *p = Tensor(p->shape(), std::move(vals));
        }
        BatchOutputs o = forward_batch(probe, images);
        real s = 0;
        for (std::size_t i = 0; i < wp.size(); ++i) s += o.probs.values()[i] * wp[i];
        for (std::size_t i = 0; i < we.size(); ++i) s += o.embeddings.values()[i] * we[i];
        return s;
      };
      r.max_rel_error = std::max(r.max_rel_error, detail::gc_rel_error(analytic, detail::gc_central_diff(f, flat, real(1e-5))));
    }
    r.pass = r.max_rel_error < tolerance;
    results.push_back(r);
  }
  return results;
}

inline bool all_gradient_checks_passed(const std::vector<GradCheckResult>& results) {
  for (const auto& r : results) {
    if (!r.pass) return false;
  }
  return true;
}

}  // namespace btn
