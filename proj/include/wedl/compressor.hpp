#pragma once

#include <cmath>
#include <functional>
#include <iostream>
#include <stdexcept>
#include <vector>

#include "wedl/dataset.hpp"
#include "wedl/ensemble.hpp"
#include "wedl/matrix.hpp"
#include "wedl/optimizer.hpp"
#include "wedl/param.hpp"
#include "wedl/rng.hpp"

namespace wedl {

// Affine-tanh regressor that distills the weighted concatenation of per-head
// embeddings into a single e-dimensional embedding.
struct CompressionRegressor {
  Param transform;  // (M*e) x e
  Param bias;       // 1 x e

  static CompressionRegressor init(int input_dim, int embed_dim, Rng& rng,
                                   double lr_scale = 1.0) {
    if (input_dim < 1 || embed_dim < 1)
      throw std::invalid_argument("CompressionRegressor: dimensions must be positive");
    Matrix a(input_dim, embed_dim);
    const double bound = 1.0 / std::sqrt(double(input_dim));
    for (auto& x : a.data) x = rng.uniform_real(-bound, bound);
    return {Param("regressor_transform", std::move(a), lr_scale),
            Param("regressor_bias", Matrix(1, embed_dim), lr_scale)};
  }

  int input_dim() const { return int(transform.value.rows); }
  int embed_dim() const { return int(transform.value.cols); }
};

// Blocks sqrt(w_j) * f_j side by side, so the plain squared Euclidean
// distance on the result equals the weighted ensemble distance.
inline Matrix concat_weighted(const std::vector<Matrix>& unit_embs,
                              const std::vector<double>& weights) {
  if (unit_embs.empty() || unit_embs.size() != weights.size())
    throw std::invalid_argument("concat_weighted: need one weight per head");
  const std::size_t n = unit_embs[0].rows;
  const std::size_t e = unit_embs[0].cols;
  for (const Matrix& m : unit_embs)
    if (m.rows != n || m.cols != e) throw std::invalid_argument("concat_weighted: shape mismatch");
  for (double w : weights)
    if (!(w > 0.0)) throw std::invalid_argument("concat_weighted: weights must be positive");
  Matrix out(n, unit_embs.size() * e);
  for (std::size_t j = 0; j < unit_embs.size(); ++j) {
    const double root = std::sqrt(weights[j]);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < e; ++k) out(i, j * e + k) = root * unit_embs[j](i, k);
  }
  return out;
}

// g = tanh(f_con * A + b), rows independent; every output lies in (-1, 1).
inline Matrix compress(const CompressionRegressor& reg, const Matrix& fcon) {
  if (int(fcon.cols) != reg.input_dim())
    throw std::invalid_argument("compress: input dimension mismatch");
  Matrix g = matmul(fcon, reg.transform.value);
  for (std::size_t i = 0; i < g.rows; ++i)
    for (std::size_t k = 0; k < g.cols; ++k)
      g(i, k) = std::tanh(g(i, k) + reg.bias.value(0, k));
  return g;
}

// Accumulates dA and db for upstream d(loss)/dg. output must be the value
// compress() returned for this fcon.
inline void compress_backward(CompressionRegressor& reg, const Matrix& fcon, const Matrix& output,
                              const Matrix& upstream) {
  check_same_shape(output, upstream, "compress_backward");
  if (int(fcon.cols) != reg.input_dim() || fcon.rows != output.rows)
    throw std::invalid_argument("compress_backward: shape mismatch");
  Matrix dpre(output.rows, output.cols);
  for (std::size_t n = 0; n < dpre.data.size(); ++n)
    dpre.data[n] = upstream.data[n] * (1.0 - output.data[n] * output.data[n]);
  matmul_tn_acc(fcon, dpre, reg.transform.grad);
  for (std::size_t i = 0; i < dpre.rows; ++i)
    for (std::size_t k = 0; k < dpre.cols; ++k) reg.bias.grad(0, k) += dpre(i, k);
}

// K = D / sum_{i,j} d_ij with the sum over all ordered pairs; symmetric,
// zero diagonal, entries summing to 1.
inline Matrix normalized_distance_matrix(
    std::size_t n, const std::function<double(std::size_t, std::size_t)>& sqdist) {
  if (n < 2) throw std::invalid_argument("normalized_distance_matrix: need at least 2 points");
  Matrix k(n, n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = sqdist(i, j);
      k(i, j) = d;
      k(j, i) = d;
      total += 2.0 * d;
    }
  if (total <= 0.0)
    throw std::runtime_error("normalized_distance_matrix: all points identical");
  for (auto& v : k.data) v /= total;
  return k;
}

inline Matrix normalized_distance_matrix(const Matrix& points) {
  return normalized_distance_matrix(
      points.rows, [&](std::size_t i, std::size_t j) { return row_sqdist(points, i, points, j); });
}

struct DistanceLossResult {
  double loss = 0.0;
  Matrix grad;  // d(loss)/dK'
};

// l_dist = ||K - K'||_F^2 / N^2; K is the frozen target.
inline DistanceLossResult distance_loss(const Matrix& k_target, const Matrix& k_model) {
  check_same_shape(k_target, k_model, "distance_loss");
  if (k_target.rows != k_target.cols) throw std::invalid_argument("distance_loss: non-square");
  DistanceLossResult res;
  res.grad = Matrix::zeros_like(k_model);
  const double inv_n2 = 1.0 / double(k_target.rows * k_target.rows);
  for (std::size_t n = 0; n < k_target.data.size(); ++n) {
    const double diff = k_model.data[n] - k_target.data[n];
    res.loss += inv_n2 * diff * diff;
    res.grad.data[n] = inv_n2 * 2.0 * diff;
  }
  return res;
}

// End-to-end l_dist of regressor outputs g against a fixed target matrix,
// with the gradient chained through the sum normalization and the pairwise
// distances back to g. Returns the loss and adds into grad_g.
inline double normalized_distance_loss_backward(const Matrix& k_target, const Matrix& g,
                                                Matrix& grad_g) {
  const std::size_t n = g.rows;
  if (k_target.rows != n || k_target.cols != n)
    throw std::invalid_argument("normalized_distance_loss_backward: shape mismatch");
  Matrix dmat(n, n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = row_sqdist(g, i, g, j);
      dmat(i, j) = d;
      dmat(j, i) = d;
      total += 2.0 * d;
    }
  if (total <= 0.0)
    throw std::runtime_error("normalized_distance_loss_backward: degenerate batch");
  Matrix k_model = dmat;
  for (auto& v : k_model.data) v /= total;
  const DistanceLossResult dl = distance_loss(k_target, k_model);

  // K' = D'/S: dl/dD'_ab = (G_ab - sum_ij G_ij K'_ij) / S with G = dl/dK'.
  // Both ordered entries (a,b) and (b,a) hold the same distance and both vary
  // with g_a, so the per-pair contribution carries a factor of two.
  double trace = 0.0;
  for (std::size_t idx = 0; idx < dl.grad.data.size(); ++idx)
    trace += dl.grad.data[idx] * k_model.data[idx];
  if (grad_g.rows != g.rows || grad_g.cols != g.cols) grad_g = Matrix::zeros_like(g);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double dd = 2.0 * (dl.grad(i, j) - trace) / total;
      for (std::size_t k = 0; k < g.cols; ++k)
        grad_g(i, k) += dd * 2.0 * (g(i, k) - g(j, k));
    }
  return dl.loss;
}

struct CompressorTrainConfig {
  int epochs = 30;
  int batch_classes = 8;
  int batch_per_class = 4;
  AdamConfig adam{.lr = 1e-3, .beta1 = 0.9, .beta2 = 0.999, .eps = 0.01, .weight_decay = 1e-4};
  int batches_per_epoch = 0;  // 0: floor(n / (P*K)), at least 1
  bool verbose = false;
};

struct CompressorEpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  int skipped_batches = 0;
};

// Post-hoc distillation: the ensemble is frozen; only the regressor trains.
// Targets come from the weighted ensemble distance on the frozen heads.
inline std::vector<CompressorEpochRecord> train_compressor(const EnsembleModel& model,
                                                           CompressionRegressor& reg,
                                                           const FeatureDataset& train_ds,
                                                           const CompressorTrainConfig& cfg,
                                                           Rng& rng) {
  if (cfg.epochs < 0) throw std::invalid_argument("train_compressor: negative epoch count");
  std::vector<CompressorEpochRecord> log;
  if (cfg.epochs == 0) return log;

  const std::vector<double> weights = model.loss_weights();
  const int batch_size = cfg.batch_classes * cfg.batch_per_class;
  const int batches = cfg.batches_per_epoch > 0
                          ? cfg.batches_per_epoch
                          : std::max(1, int(train_ds.size()) / batch_size);
  const long long horizon = (long long)(cfg.epochs) * batches;

  Adam optimizer({&reg.transform, &reg.bias}, cfg.adam);
  long long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    CompressorEpochRecord rec;
    rec.epoch = epoch;
    int counted = 0;
    for (int b = 0; b < batches; ++b) {
      MiniBatch batch = sample_batch(train_ds, cfg.batch_classes, cfg.batch_per_class, rng);
      const auto unit_embs = model.member_unit_embeddings(batch.features);
      const Matrix fcon = concat_weighted(unit_embs, weights);
      Matrix k_target;
      try {
        k_target = normalized_distance_matrix(fcon.rows, [&](std::size_t i, std::size_t j) {
          return ensemble_row_distance(unit_embs, i, j, weights,
                                       model.cfg.literal_printed_distance);
        });
      } catch (const std::runtime_error&) {
        ++rec.skipped_batches;
        if (cfg.verbose)
          std::cerr << "train_compressor: skipping degenerate batch (epoch " << epoch << ")\n";
        continue;
      }
      const Matrix g = compress(reg, fcon);
      Matrix grad_g = Matrix::zeros_like(g);
      double loss;
      try {
        loss = normalized_distance_loss_backward(k_target, g, grad_g);
      } catch (const std::runtime_error&) {
        ++rec.skipped_batches;
        reg.transform.zero_grad();
        reg.bias.zero_grad();
        if (cfg.verbose)
          std::cerr << "train_compressor: skipping degenerate batch (epoch " << epoch << ")\n";
        continue;
      }
      compress_backward(reg, fcon, g, grad_g);
      optimizer.step(cosine_anneal(1.0, std::min(step, horizon), horizon));
      ++step;
      rec.mean_loss += loss;
      ++counted;
    }
    if (counted > 0) rec.mean_loss /= double(counted);
    log.push_back(rec);
  }
  return log;
}

}  // namespace wedl
