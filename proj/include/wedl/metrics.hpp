#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <vector>

#include "wedl/compressor.hpp"
#include "wedl/matrix.hpp"
#include "wedl/rng.hpp"

namespace wedl {

// Geometry the retrieval metrics operate on. A per-head ensemble source is
// folded into its weighted concatenation, whose plain squared Euclidean
// distance reproduces the weighted ensemble distance; that also gives k-means
// a coordinate space consistent with retrieval.
class DistanceSource {
 public:
  static DistanceSource from_embedding(Matrix emb) {
    DistanceSource src;
    src.points_ = std::move(emb);
    return src;
  }

  static DistanceSource from_ensemble(const std::vector<Matrix>& unit_embs,
                                      const std::vector<double>& weights) {
    DistanceSource src;
    src.points_ = concat_weighted(unit_embs, weights);
    return src;
  }

  std::size_t size() const { return points_.rows; }
  const Matrix& points() const { return points_; }
  double sqdist(std::size_t i, std::size_t j) const { return row_sqdist(points_, i, points_, j); }

 private:
  Matrix points_;
};

namespace detail {

// Indices of the k nearest non-self points, distance ties broken by index.
inline std::vector<int> k_nearest(const DistanceSource& src, std::size_t query, int k) {
  std::vector<std::pair<double, int>> order;
  order.reserve(src.size() - 1);
  for (std::size_t j = 0; j < src.size(); ++j)
    if (j != query) order.emplace_back(src.sqdist(query, j), int(j));
  std::sort(order.begin(), order.end());
  std::vector<int> out(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) out[std::size_t(i)] = order[std::size_t(i)].second;
  return out;
}

}  // namespace detail

// Fraction of queries whose k nearest non-self points contain at least one
// point of the query's class.
inline double recall_at_k(const DistanceSource& src, const std::vector<int>& labels, int k) {
  if (src.size() != labels.size()) throw std::invalid_argument("recall_at_k: size mismatch");
  if (k < 1 || std::size_t(k) >= src.size())
    throw std::invalid_argument("recall_at_k: k must be in [1, N)");
  std::size_t hits = 0;
  for (std::size_t q = 0; q < src.size(); ++q) {
    for (int j : detail::k_nearest(src, q, k))
      if (labels[std::size_t(j)] == labels[q]) {
        ++hits;
        break;
      }
  }
  return double(hits) / double(src.size());
}

// Leave-one-out majority vote: a query counts iff at least ceil(k/2) of its k
// nearest non-self points share its label.
inline double knn_accuracy(const DistanceSource& src, const std::vector<int>& labels, int k = 3) {
  if (src.size() != labels.size()) throw std::invalid_argument("knn_accuracy: size mismatch");
  if (k < 1 || std::size_t(k) >= src.size())
    throw std::invalid_argument("knn_accuracy: k must be in [1, N)");
  const int need = (k + 1) / 2;
  std::size_t correct = 0;
  for (std::size_t q = 0; q < src.size(); ++q) {
    int same = 0;
    for (int j : detail::k_nearest(src, q, k))
      if (labels[std::size_t(j)] == labels[q]) ++same;
    if (same >= need) ++correct;
  }
  return double(correct) / double(src.size());
}

// Deterministic k-means: k-means++ seeding from the given seed, Lloyd
// iterations to an assignment fixpoint (or max_iter), empty clusters re-seeded
// to the point currently farthest from its centroid. Ties break by index.
inline std::vector<int> kmeans(const Matrix& emb, int k, std::uint64_t seed, int max_iter = 100) {
  const std::size_t n = emb.rows;
  if (k < 1 || std::size_t(k) > n) throw std::invalid_argument("kmeans: k must be in [1, N]");
  Rng rng(seed);

  Matrix centroids(std::size_t(k), emb.cols);
  std::vector<double> min_d(n, std::numeric_limits<double>::infinity());
  {
    const std::size_t first = rng.uniform(n);
    for (std::size_t c = 0; c < emb.cols; ++c) centroids(0, c) = emb(first, c);
    for (int chosen = 1; chosen < k; ++chosen) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        min_d[i] = std::min(min_d[i], row_sqdist(emb, i, centroids, std::size_t(chosen - 1)));
        total += min_d[i];
      }
      std::size_t pick = 0;
      if (total > 0.0) {
        const double target = rng.uniform_real() * total;
        double acc = 0.0;
        pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
          acc += min_d[i];
          if (acc > target) {
            pick = i;
            break;
          }
        }
      } else {
        pick = rng.uniform(n);
      }
      for (std::size_t c = 0; c < emb.cols; ++c)
        centroids(std::size_t(chosen), c) = emb(pick, c);
    }
  }

  std::vector<int> assignment(n, -1);
  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = row_sqdist(emb, i, centroids, 0);
      for (int c = 1; c < k; ++c) {
        const double d = row_sqdist(emb, i, centroids, std::size_t(c));
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assignment[i] != best) {
        assignment[i] = best;
        changed = true;
      }
    }
    if (!changed) break;

    std::vector<std::size_t> counts(std::size_t(k), 0);
    centroids.set_zero();
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = std::size_t(assignment[i]);
      ++counts[c];
      for (std::size_t col = 0; col < emb.cols; ++col) centroids(c, col) += emb(i, col);
    }
    for (int c = 0; c < k; ++c) {
      if (counts[std::size_t(c)] == 0) continue;
      for (std::size_t col = 0; col < emb.cols; ++col)
        centroids(std::size_t(c), col) /= double(counts[std::size_t(c)]);
    }
    for (int c = 0; c < k; ++c) {
      if (counts[std::size_t(c)] > 0) continue;
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = row_sqdist(emb, i, centroids, std::size_t(assignment[i]));
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      for (std::size_t col = 0; col < emb.cols; ++col)
        centroids(std::size_t(c), col) = emb(far, col);
    }
  }
  return assignment;
}

// 2 I(Y;C) / (H(Y) + H(C)) with natural-log entropies over empirical counts;
// 0 when the denominator vanishes. Robust to arbitrary label values.
inline double nmi(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("nmi: size mismatch");
  if (pred.empty()) throw std::invalid_argument("nmi: empty input");
  const double n = double(pred.size());

  auto compact = [](const std::vector<int>& v) {
    std::map<int, int> remap;
    std::vector<int> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      auto it = remap.find(v[i]);
      if (it == remap.end()) it = remap.emplace(v[i], int(remap.size())).first;
      out[i] = it->second;
    }
    return std::pair(out, int(remap.size()));
  };
  const auto [p, np] = compact(pred);
  const auto [t, nt] = compact(truth);

  Matrix joint{std::size_t(np), std::size_t(nt)};
  std::vector<double> pc(std::size_t(np), 0.0), tc(std::size_t(nt), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    joint(std::size_t(p[i]), std::size_t(t[i])) += 1.0;
    pc[std::size_t(p[i])] += 1.0;
    tc[std::size_t(t[i])] += 1.0;
  }
  double h_pred = 0.0, h_truth = 0.0, mutual = 0.0;
  for (int a = 0; a < np; ++a)
    if (pc[std::size_t(a)] > 0.0) {
      const double q = pc[std::size_t(a)] / n;
      h_pred -= q * std::log(q);
    }
  for (int b = 0; b < nt; ++b)
    if (tc[std::size_t(b)] > 0.0) {
      const double q = tc[std::size_t(b)] / n;
      h_truth -= q * std::log(q);
    }
  for (int a = 0; a < np; ++a)
    for (int b = 0; b < nt; ++b) {
      const double c = joint(std::size_t(a), std::size_t(b));
      if (c <= 0.0) continue;
      const double pj = c / n;
      mutual += pj * std::log(pj / ((pc[std::size_t(a)] / n) * (tc[std::size_t(b)] / n)));
    }
  const double denom = h_pred + h_truth;
  if (denom <= 0.0) return 0.0;
  return 2.0 * mutual / denom;
}

struct MetricsReport {
  std::map<int, double> recall;  // k -> Recall@k
  double nmi_score = 0.0;
  double knn_acc = 0.0;
  int cluster_k = 0;
  std::uint64_t kmeans_seed = 0;
};

// Full metric suite: Recall@ks, NMI of a k-means clustering with k clusters,
// and leave-one-out 3-NN accuracy.
inline MetricsReport evaluate(const DistanceSource& src, const std::vector<int>& labels,
                              const std::vector<int>& ks, int cluster_k, std::uint64_t seed,
                              int kmeans_iters = 100) {
  MetricsReport report;
  for (int k : ks) report.recall[k] = recall_at_k(src, labels, k);
  report.cluster_k = cluster_k;
  report.kmeans_seed = seed;
  report.nmi_score = nmi(kmeans(src.points(), cluster_k, seed, kmeans_iters), labels);
  report.knn_acc = knn_accuracy(src, labels, 3);
  return report;
}

}  // namespace wedl
