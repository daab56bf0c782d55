#pragma once

// Bilinear pooling head: per-location outer products of two feature streams,
// pooled over locations, flattened, signed-sqrt transformed and L2-normalized.

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "btn/tensor.hpp"

namespace btn {

enum class BilinearPoolMode { kSum, kAverage };

// Pooled, transformed second-order feature of one image.
struct BilinearFeature {
  Tensor vector;  // [n*m], unit L2 norm
  int n = 0;      // stream-A channels
  int m = 0;      // stream-B channels
};

// Outer product of two per-location feature vectors: out[i][j] = fa[i]*fb[j].
inline Tensor bilinear_combine(const Tensor& fa, const Tensor& fb) {
  if (fa.rank() != 1 || fb.rank() != 1) {
    throw std::invalid_argument("bilinear_combine: expects 1-D feature vectors");
  }
  return matmul(reshape(fa, {fa.dim(0), 1}), reshape(fb, {1, fb.dim(0)}));
}

namespace detail {

// Per-coordinate addends are summed in ascending value order, which makes
// the pooled result exactly independent of the location order.
inline real canonical_sum(std::vector<real>& addends) {
  std::sort(addends.begin(), addends.end());
  real s = 0;
  for (real v : addends) s += v;
  return s;
}

}  // namespace detail

// Accumulates the outer products over all Y locations: Phi = A^T B for
// location-major maps A[Y,N], B[Y,M]. Order-less by construction.
inline Tensor bilinear_pool(const Tensor& map_a, const Tensor& map_b,
                            BilinearPoolMode mode = BilinearPoolMode::kSum) {
  if (map_a.rank() != 2 || map_b.rank() != 2) {
    throw std::invalid_argument("bilinear_pool: expects location-major 2-D maps");
  }
  if (map_a.dim(0) != map_b.dim(0)) {
    throw std::invalid_argument("bilinear_pool: location counts differ, " +
                                std::to_string(map_a.dim(0)) + " vs " + std::to_string(map_b.dim(0)));
  }
  const int y = map_a.dim(0), n = map_a.dim(1), m = map_b.dim(1);
  std::vector<real> out(static_cast<std::size_t>(n) * m);
  std::vector<real> addends(static_cast<std::size_t>(y));
  const real* pa = map_a.values().data();
  const real* pb = map_b.values().data();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      for (int l = 0; l < y; ++l) addends[static_cast<std::size_t>(l)] = pa[l * n + i] * pb[l * m + j];
      out[static_cast<std::size_t>(i) * m + j] = detail::canonical_sum(addends);
    }
  detail::check_finite(out, "bilinear_pool");
  Tensor result({n, m}, std::move(out));
  GradTape* g = detail::common_tape({&map_a, &map_b});
  if (g) {
    auto sa = map_a.storage();
    auto sb = map_b.storage();
    const int an = map_a.node(), bn = map_b.node();
    result = g->adopt(std::move(result), [sa, sb, an, bn, y, n, m](GradTape& t, const std::vector<real>& go) {
      if (an >= 0) {
        auto& ga = t.grad_ref(an, static_cast<long long>(y) * n);
        for (int l = 0; l < y; ++l)
          for (int i = 0; i < n; ++i) {
            real acc = 0;
            for (int j = 0; j < m; ++j) acc += go[static_cast<std::size_t>(i) * m + j] * (*sb)[static_cast<std::size_t>(l * m + j)];
            ga[static_cast<std::size_t>(l * n + i)] += acc;
          }
      }
      if (bn >= 0) {
        auto& gb = t.grad_ref(bn, static_cast<long long>(y) * m);
        for (int l = 0; l < y; ++l)
          for (int j = 0; j < m; ++j) {
            real acc = 0;
            for (int i = 0; i < n; ++i) acc += go[static_cast<std::size_t>(i) * m + j] * (*sa)[static_cast<std::size_t>(l * n + i)];
            gb[static_cast<std::size_t>(l * m + j)] += acc;
          }
      }
    });
  }
  if (mode == BilinearPoolMode::kAverage) {
    result = scale(result, real(1) / static_cast<real>(y));
  }
  return result;
}

// Batched pooling for maps [B,Y,N] x [B,Y,M] -> flattened features [B, N*M].
inline Tensor bilinear_pool_batch(const Tensor& map_a, const Tensor& map_b,
                                  BilinearPoolMode mode = BilinearPoolMode::kSum) {
  if (map_a.rank() != 3 || map_b.rank() != 3) {
    throw std::invalid_argument("bilinear_pool_batch: expects 3-D [B,Y,C] maps");
  }
  if (map_a.dim(0) != map_b.dim(0) || map_a.dim(1) != map_b.dim(1)) {
    throw std::invalid_argument("bilinear_pool_batch: batch or location counts differ");
  }
  const int batch = map_a.dim(0), y = map_a.dim(1), n = map_a.dim(2), m = map_b.dim(2);
  std::vector<real> out(static_cast<std::size_t>(batch) * n * m, real(0));
  std::vector<real> addends(static_cast<std::size_t>(y));
  const real* pa = map_a.values().data();
  const real* pb = map_b.values().data();
  for (int b = 0; b < batch; ++b) {
    const real* ab = pa + static_cast<long long>(b) * y * n;
    const real* bb = pb + static_cast<long long>(b) * y * m;
    real* ob = out.data() + static_cast<long long>(b) * n * m;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) {
        for (int l = 0; l < y; ++l) addends[static_cast<std::size_t>(l)] = ab[l * n + i] * bb[l * m + j];
        ob[i * m + j] = detail::canonical_sum(addends);
      }
  }
  detail::check_finite(out, "bilinear_pool_batch");
  Tensor result({batch, n * m}, std::move(out));
  GradTape* g = detail::common_tape({&map_a, &map_b});
  if (g) {
    auto sa = map_a.storage();
    auto sb = map_b.storage();
    const int an = map_a.node(), bn = map_b.node();
    result = g->adopt(std::move(result), [sa, sb, an, bn, batch, y, n, m](GradTape& t, const std::vector<real>& go) {
      // gA_b = B_b gPhi_b^T, gB_b = A_b gPhi_b
      for (int b = 0; b < batch; ++b) {
        const real* ab = sa->data() + static_cast<long long>(b) * y * n;
        const real* bb = sb->data() + static_cast<long long>(b) * y * m;
        const real* gp = go.data() + static_cast<long long>(b) * n * m;
        if (an >= 0) {
          auto& ga = t.grad_ref(an, static_cast<long long>(batch) * y * n);
          real* gab = ga.data() + static_cast<long long>(b) * y * n;
          for (int l = 0; l < y; ++l)
            for (int i = 0; i < n; ++i) {
              real acc = 0;
              for (int j = 0; j < m; ++j) acc += gp[i * m + j] * bb[l * m + j];
              gab[l * n + i] += acc;
            }
        }
        if (bn >= 0) {
          auto& gb = t.grad_ref(bn, static_cast<long long>(batch) * y * m);
          real* gbb = gb.data() + static_cast<long long>(b) * y * m;
          for (int l = 0; l < y; ++l)
            for (int j = 0; j < m; ++j) {
              real acc = 0;
              for (int i = 0; i < n; ++i) acc += gp[i * m + j] * ab[l * n + i];
              gbb[l * m + j] += acc;
            }
        }
      }
    });
  }
  if (mode == BilinearPoolMode::kAverage) {
    result = scale(result, real(1) / static_cast<real>(y));
  }
  return result;
}

// flatten -> signed sqrt -> L2 normalize, in exactly that order.
inline BilinearFeature bilinear_head(const Tensor& map_a, const Tensor& map_b,
                                     BilinearPoolMode mode = BilinearPoolMode::kSum) {
  const int n = map_a.dim(1), m = map_b.dim(1);
  Tensor pooled = bilinear_pool(map_a, map_b, mode);
  Tensor vec = l2_normalize(signed_sqrt(flatten(pooled)));
  return BilinearFeature{std::move(vec), n, m};
}

// Batched head: [B,Y,N] x [B,Y,M] -> [B, N*M] rows, each unit-normalized.
inline Tensor bilinear_head_batch(const Tensor& map_a, const Tensor& map_b,
                                  BilinearPoolMode mode = BilinearPoolMode::kSum) {
  return l2_normalize(signed_sqrt(bilinear_pool_batch(map_a, map_b, mode)), 1);
}

}  // namespace btn
