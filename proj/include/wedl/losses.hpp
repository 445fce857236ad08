#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "wedl/matrix.hpp"
#include "wedl/numeric.hpp"
#include "wedl/param.hpp"
#include "wedl/rng.hpp"

namespace wedl {

struct Triplet {
  int anchor;
  int positive;
  int negative;
};
using TripletSet = std::vector<Triplet>;

struct LabeledPair {
  int i;
  int j;
  bool similar;
};
using PairSet = std::vector<LabeledPair>;

// All unordered within-batch pairs, labeled by class equality.
inline PairSet enumerate_pairs(const std::vector<int>& labels) {
  if (labels.size() < 2) throw std::invalid_argument("enumerate_pairs: need at least 2 samples");
  PairSet pairs;
  pairs.reserve(labels.size() * (labels.size() - 1) / 2);
  for (int i = 0; i < int(labels.size()); ++i)
    for (int j = i + 1; j < int(labels.size()); ++j)
      pairs.push_back({i, j, labels[i] == labels[j]});
  return pairs;
}

// Semi-hard mining over squared Euclidean distances: for each ordered
// (anchor, positive) pair, pick the closest negative inside the band
// (d+, d+ + margin); failing that, the closest negative strictly beyond d+;
// failing that, drop the pair. Ties break toward the lowest index.
inline TripletSet mine_semi_hard(const Matrix& emb, const std::vector<int>& labels,
                                 double margin) {
  if (emb.rows != labels.size()) throw std::invalid_argument("mine_semi_hard: shape mismatch");
  TripletSet triplets;
  bool any_pair = false;
  const int n = int(labels.size());
  for (int a = 0; a < n; ++a) {
    for (int p = 0; p < n; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      any_pair = true;
      const double dp = row_sqdist(emb, a, emb, p);
      int best_band = -1, best_beyond = -1;
      double best_band_d = std::numeric_limits<double>::infinity();
      double best_beyond_d = std::numeric_limits<double>::infinity();
      for (int neg = 0; neg < n; ++neg) {
        if (labels[neg] == labels[a]) continue;
        const double dn = row_sqdist(emb, a, emb, neg);
        if (dn <= dp) continue;
        if (dn < dp + margin && dn < best_band_d) {
          best_band_d = dn;
          best_band = neg;
        }
        if (dn < best_beyond_d) {
          best_beyond_d = dn;
          best_beyond = neg;
        }
      }
      const int chosen = best_band >= 0 ? best_band : best_beyond;
      if (chosen >= 0) triplets.push_back({a, p, chosen});
    }
  }
  if (!any_pair) throw std::runtime_error("mine_semi_hard: no anchor-positive pair in batch");
  return triplets;
}

struct TripletHingeResult {
  double loss = 0.0;
  Matrix grad_emb;
  bool degenerate = false;  // empty triplet set
};

// Mean over triplets of [margin - (d- - d+)]_+ with squared Euclidean
// distances; satisfied triplets contribute zero gradient.
inline TripletHingeResult triplet_hinge(const Matrix& emb, const TripletSet& triplets,
                                        double margin) {
  TripletHingeResult res;
  res.grad_emb = Matrix::zeros_like(emb);
  if (triplets.empty()) {
    res.degenerate = true;
    return res;
  }
  const double inv = 1.0 / double(triplets.size());
  double total = 0.0;
  for (const Triplet& t : triplets) {
    const double dp = row_sqdist(emb, t.anchor, emb, t.positive);
    const double dn = row_sqdist(emb, t.anchor, emb, t.negative);
    const double violation = margin - (dn - dp);
    if (violation <= 0.0) continue;
    total += violation;
    for (std::size_t k = 0; k < emb.cols; ++k) {
      const double a = emb(t.anchor, k);
      const double p = emb(t.positive, k);
      const double ng = emb(t.negative, k);
      res.grad_emb(t.anchor, k) += inv * 2.0 * (ng - p);
      res.grad_emb(t.positive, k) += inv * -2.0 * (a - p);
      res.grad_emb(t.negative, k) += inv * 2.0 * (a - ng);
    }
  }
  res.loss = total * inv;
  return res;
}

enum class BinomialCMode { exponent, multiplier };

inline BinomialCMode parse_binomial_c_mode(const std::string& s) {
  if (s == "exponent") return BinomialCMode::exponent;
  if (s == "multiplier") return BinomialCMode::multiplier;
  throw std::invalid_argument("unknown binomial_c_mode '" + s + "'");
}

struct BinomialResult {
  double loss = 0.0;
  Matrix grad_emb;
  bool degenerate = false;  // empty pair set
};

namespace detail {
inline double softplus(double u) { return std::max(u, 0.0) + std::log1p(std::exp(-std::abs(u))); }
inline double logistic(double u) {
  return u >= 0.0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u));
}
}  // namespace detail

// Binomial deviance on cosine similarities of unit embeddings. Positive pairs
// contribute ln(1+e^{-b1 (s-b2)}); negatives ln(1+e^{b1 (s-b2) c}) with the
// balance constant in the exponent, or c * ln(1+e^{b1 (s-b2)}) in multiplier
// mode. Loss is mean over positives plus mean over negatives.
inline BinomialResult binomial_deviance(const Matrix& emb, const PairSet& pairs, double beta1,
                                        double beta2, double c_neg,
                                        BinomialCMode mode = BinomialCMode::exponent) {
  BinomialResult res;
  res.grad_emb = Matrix::zeros_like(emb);
  if (pairs.empty()) {
    res.degenerate = true;
    return res;
  }
  std::size_t n_pos = 0, n_neg = 0;
  for (const LabeledPair& pr : pairs) (pr.similar ? n_pos : n_neg)++;
  double sum_pos = 0.0, sum_neg = 0.0;
  struct Contribution {
    int i, j;
    double dloss_ds;
    bool similar;
  };
  std::vector<Contribution> contribs;
  contribs.reserve(pairs.size());
  for (const LabeledPair& pr : pairs) {
    const double s = row_dot(emb, pr.i, emb, pr.j);
    double value, dds;
    if (pr.similar) {
      const double u = -beta1 * (s - beta2);
      value = detail::softplus(u);
      dds = detail::logistic(u) * -beta1;
    } else if (mode == BinomialCMode::exponent) {
      const double u = beta1 * (s - beta2) * c_neg;
      value = detail::softplus(u);
      dds = detail::logistic(u) * beta1 * c_neg;
    } else {
      const double u = beta1 * (s - beta2);
      value = c_neg * detail::softplus(u);
      dds = c_neg * detail::logistic(u) * beta1;
    }
    (pr.similar ? sum_pos : sum_neg) += value;
    contribs.push_back({pr.i, pr.j, dds, pr.similar});
  }
  res.loss = (n_pos ? sum_pos / double(n_pos) : 0.0) + (n_neg ? sum_neg / double(n_neg) : 0.0);
  for (const Contribution& c : contribs) {
    const double scale = c.dloss_ds / double(c.similar ? n_pos : n_neg);
    for (std::size_t k = 0; k < emb.cols; ++k) {
      res.grad_emb(c.i, k) += scale * emb(c.j, k);
      res.grad_emb(c.j, k) += scale * emb(c.i, k);
    }
  }
  return res;
}

// One learnable proxy per training class; rows are re-normalized to unit
// length after each optimizer step, and the loss additionally normalizes
// internally so gradients stay exact between renormalizations.
struct ProxyBank {
  Param proxies;  // C x e

  static ProxyBank init(int classes, int embed_dim, Rng& rng, double lr_scale = 1.0) {
    if (classes < 1 || embed_dim < 1)
      throw std::invalid_argument("ProxyBank: dimensions must be positive");
    Matrix p(classes, embed_dim);
    for (auto& x : p.data) x = rng.normal();
    ProxyBank bank{Param("proxies", std::move(p), lr_scale)};
    bank.renormalize();
    return bank;
  }

  int class_count() const { return int(proxies.value.rows); }

  void renormalize() { proxies.value = normalize_rows(proxies.value).unit; }
};

struct ProxyNcaResult {
  double loss = 0.0;
  Matrix grad_emb;
  Matrix grad_proxies;  // w.r.t. the raw (stored) proxy values
};

// Proxy-NCA with squared Euclidean distances to unit-normalized proxies:
// per sample, d(x, p_y) + ln sum_{z != y} exp(-d(x, p_z)), averaged over the
// batch. The denominator excludes the positive proxy, so the loss can be
// negative.
inline ProxyNcaResult proxy_nca(const Matrix& emb, const std::vector<int>& labels,
                                const ProxyBank& bank) {
  if (emb.rows != labels.size()) throw std::invalid_argument("proxy_nca: shape mismatch");
  const int classes = bank.class_count();
  if (classes < 2)
    throw std::runtime_error("proxy_nca: need at least 2 classes for the denominator");
  if (emb.cols != bank.proxies.value.cols)
    throw std::invalid_argument("proxy_nca: embedding dimension mismatch");
  for (int y : labels)
    if (y < 0 || y >= classes)
      throw std::invalid_argument("proxy_nca: label " + std::to_string(y) + " has no proxy");

  const RowNorm pn = normalize_rows(bank.proxies.value);
  ProxyNcaResult res;
  res.grad_emb = Matrix::zeros_like(emb);
  Matrix grad_unit_proxies = Matrix::zeros_like(bank.proxies.value);

  const std::size_t n = emb.rows;
  const double inv = 1.0 / double(n);
  std::vector<double> dist(classes), q(classes);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    double max_neg = -std::numeric_limits<double>::infinity();
    for (int z = 0; z < classes; ++z) {
      dist[z] = row_sqdist(emb, i, pn.unit, std::size_t(z));
      if (z != y) max_neg = std::max(max_neg, -dist[z]);
    }
    double denom = 0.0;
    for (int z = 0; z < classes; ++z)
      if (z != y) denom += std::exp(-dist[z] - max_neg);
    res.loss += inv * (dist[y] + max_neg + std::log(denom));
    for (int z = 0; z < classes; ++z)
      q[z] = (z == y) ? 0.0 : std::exp(-dist[z] - max_neg) / denom;

    // d dist_z / d x = 2(x - p_z); d dist_z / d p_z = -2(x - p_z)
    for (std::size_t k = 0; k < emb.cols; ++k) {
      const double xy = emb(i, k) - pn.unit(y, k);
      res.grad_emb(i, k) += inv * 2.0 * xy;
      grad_unit_proxies(y, k) += inv * -2.0 * xy;
      for (int z = 0; z < classes; ++z) {
        if (z == y || q[z] == 0.0) continue;
        const double xz = emb(i, k) - pn.unit(std::size_t(z), k);
        res.grad_emb(i, k) += inv * -q[z] * 2.0 * xz;
        grad_unit_proxies(std::size_t(z), k) += inv * q[z] * 2.0 * xz;
      }
    }
  }
  res.grad_proxies = normalize_rows_backward(pn, grad_unit_proxies);
  return res;
}

// Linear classifier head used by the label-smoothing loss.
struct SoftmaxLayer {
  Param weight;  // e x C
  Param bias;    // 1 x C

  static SoftmaxLayer init(int embed_dim, int classes, Rng& rng, double lr_scale = 1.0) {
    if (classes < 1 || embed_dim < 1)
      throw std::invalid_argument("SoftmaxLayer: dimensions must be positive");
    Matrix w(embed_dim, classes);
    const double bound = 1.0 / std::sqrt(double(embed_dim));
    for (auto& x : w.data) x = rng.uniform_real(-bound, bound);
    return {Param("classifier_weight", std::move(w), lr_scale),
            Param("classifier_bias", Matrix(1, classes), lr_scale)};
  }

  int class_count() const { return int(weight.value.cols); }
};

// Label-smoothed target: (1-gamma) one-hot + gamma/C.
inline std::vector<double> smoothed_targets(int label, int classes, double gamma) {
  if (label < 0 || label >= classes) throw std::invalid_argument("smoothed_targets: label out of range");
  std::vector<double> t(classes, gamma / double(classes));
  t[label] += 1.0 - gamma;
  return t;
}

struct SmoothedCeResult {
  double loss = 0.0;
  Matrix grad_emb;
  Matrix grad_weight;
  Matrix grad_bias;
};

// Cross-entropy against smoothed targets on raw (unnormalized) embeddings.
inline SmoothedCeResult smoothed_ce(const Matrix& emb, const std::vector<int>& labels,
                                    const SoftmaxLayer& layer, double gamma) {
  if (emb.rows != labels.size()) throw std::invalid_argument("smoothed_ce: shape mismatch");
  const int classes = layer.class_count();
  if (emb.cols != layer.weight.value.rows)
    throw std::invalid_argument("smoothed_ce: embedding dimension mismatch");
  for (int y : labels)
    if (y < 0 || y >= classes)
      throw std::invalid_argument("smoothed_ce: label " + std::to_string(y) + " out of range");

  Matrix logits = matmul(emb, layer.weight.value);
  for (std::size_t i = 0; i < logits.rows; ++i)
    for (int k = 0; k < classes; ++k) logits(i, k) += layer.bias.value(0, std::size_t(k));

  SmoothedCeResult res;
  res.grad_emb = Matrix::zeros_like(emb);
  res.grad_weight = Matrix::zeros_like(layer.weight.value);
  res.grad_bias = Matrix::zeros_like(layer.bias.value);

  const std::size_t n = emb.rows;
  const double inv = 1.0 / double(n);
  Matrix dlogits(n, classes);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = logits(i, 0);
    for (int k = 1; k < classes; ++k) mx = std::max(mx, logits(i, std::size_t(k)));
    double z = 0.0;
    for (int k = 0; k < classes; ++k) z += std::exp(logits(i, std::size_t(k)) - mx);
    const double logz = std::log(z) + mx;
    const auto targets = smoothed_targets(labels[i], classes, gamma);
    for (int k = 0; k < classes; ++k) {
      const double logp = logits(i, std::size_t(k)) - logz;
      res.loss += inv * -targets[k] * logp;
      dlogits(i, std::size_t(k)) = inv * (std::exp(logp) - targets[k]);
    }
  }
  matmul_tn_acc(emb, dlogits, res.grad_weight);
  for (std::size_t i = 0; i < n; ++i)
    for (int k = 0; k < classes; ++k) res.grad_bias(0, std::size_t(k)) += dlogits(i, std::size_t(k));
  res.grad_emb = matmul_nt(dlogits, layer.weight.value);
  return res;
}

}  // namespace wedl
