#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wedl/compressor.hpp"
#include "wedl/embedding.hpp"
#include "wedl/ensemble.hpp"
#include "wedl/losses.hpp"
#include "wedl/numeric.hpp"
#include "wedl/rng.hpp"

namespace wedl {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  int instances = 0;
};

namespace gradcheck_detail {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (auto& v : m.data) v = rng.normal() * scale;
  return m;
}

// P blocks of K identical labels: every anchor has a positive and the batch
// holds at least two classes.
inline std::vector<int> block_labels(int classes, int per_class) {
  std::vector<int> labels;
  for (int c = 0; c < classes; ++c)
    for (int k = 0; k < per_class; ++k) labels.push_back(c);
  return labels;
}

struct Instance {
  Matrix features;          // N x d
  std::vector<int> labels;  // length N
  int classes = 0;
};

inline Instance random_instance(Rng& rng) {
  Instance inst;
  inst.classes = 2 + int(rng.uniform(3));          // 2..4
  const int per_class = 2 + int(rng.uniform(2));   // 2..3
  const int d = 2 + int(rng.uniform(7));           // 2..8
  inst.labels = block_labels(inst.classes, per_class);
  inst.features = random_matrix(inst.labels.size(), std::size_t(d), rng);
  return inst;
}

// Central differences are only valid where the objective is locally smooth
// and well scaled, so instances are redrawn until the probe point is at least
// this far from every hinge kink and every raw loss is at least this large
// (tiny or negative first losses blow up the EMA scale factors).
inline constexpr double kKinkMargin = 1e-3;
inline constexpr double kMinRawLoss = 1e-4;
inline constexpr int kMaxRedraws = 200;

inline double min_abs_violation(const Matrix& unit, const TripletSet& triplets, double margin) {
  double best = std::numeric_limits<double>::infinity();
  for (const Triplet& t : triplets) {
    const double dp = row_sqdist(unit, t.anchor, unit, t.positive);
    const double dn = row_sqdist(unit, t.anchor, unit, t.negative);
    best = std::min(best, std::abs(margin - (dn - dp)));
  }
  return best;
}

}  // namespace gradcheck_detail

// Gradient check of one single-loss path (features -> head -> loss), run over
// `instances` random desk-scale instances. Returns the worst relative error.
inline GradCheckResult gradcheck_loss(LossKind kind, std::uint64_t seed, int instances,
                                      double eps = 1e-5) {
  using namespace gradcheck_detail;
  GradCheckResult res{std::string("loss_") + loss_name(kind), 0.0, instances};
  Rng rng(seed);
  const LossHyper hyper;
  for (int it = 0; it < instances; ++it) {
    Instance inst;
    int e = 2;
    EmbeddingHead head;
    for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
      inst = random_instance(rng);
      e = 2 + int(rng.uniform(3));  // 2..4
      head = EmbeddingHead::init(inst.features.cols, std::size_t(e), rng, 1.0, "head");
      if (kind != LossKind::triplet) break;
      const RowNorm rn = normalize_rows(embed(head, inst.features));
      const TripletSet mined = mine_semi_hard(rn.unit, inst.labels, hyper.triplet_margin);
      if (!mined.empty() &&
          min_abs_violation(rn.unit, mined, hyper.triplet_margin) >= kKinkMargin)
        break;
    }
    ProxyBank bank = kind == LossKind::proxy_nca
                         ? ProxyBank::init(inst.classes, e, rng)
                         : ProxyBank{};
    SoftmaxLayer layer = kind == LossKind::smoothed_ce
                             ? SoftmaxLayer::init(e, inst.classes, rng)
                             : SoftmaxLayer{};
    TripletSet cache;

    std::vector<Param*> params{&head.weight};
    if (kind == LossKind::proxy_nca) params.push_back(&bank.proxies);
    if (kind == LossKind::smoothed_ce) {
      params.push_back(&layer.weight);
      params.push_back(&layer.bias);
    }

    const auto f = [&]() -> double {
      const Matrix emb = embed(head, inst.features);
      if (kind == LossKind::smoothed_ce) {
        auto r = smoothed_ce(emb, inst.labels, layer, hyper.ce_gamma);
        add_scaled(layer.weight.grad, r.grad_weight, 1.0);
        add_scaled(layer.bias.grad, r.grad_bias, 1.0);
        embed_backward(head, inst.features, r.grad_emb);
        return r.loss;
      }
      const RowNorm rn = normalize_rows(emb);
      Matrix grad_unit;
      double loss = 0.0;
      switch (kind) {
        case LossKind::triplet: {
          if (cache.empty()) cache = mine_semi_hard(rn.unit, inst.labels, hyper.triplet_margin);
          auto r = triplet_hinge(rn.unit, cache, hyper.triplet_margin);
          loss = r.loss;
          grad_unit = std::move(r.grad_emb);
          break;
        }
        case LossKind::binomial: {
          auto r = binomial_deviance(rn.unit, enumerate_pairs(inst.labels),
                                     hyper.binomial_beta1, hyper.binomial_beta2,
                                     hyper.binomial_c, hyper.binomial_c_mode);
          loss = r.loss;
          grad_unit = std::move(r.grad_emb);
          break;
        }
        case LossKind::proxy_nca: {
          auto r = proxy_nca(rn.unit, inst.labels, bank);
          loss = r.loss;
          grad_unit = std::move(r.grad_emb);
          add_scaled(bank.proxies.grad, r.grad_proxies, 1.0);
          break;
        }
        default:
          break;
      }
      embed_backward(head, inst.features, normalize_rows_backward(rn, grad_unit));
      return loss;
    };
    res.max_rel_error = std::max(res.max_rel_error, finite_diff_check(f, params, eps));
  }
  return res;
}

// Gradient check of the diversity term through correlated heads (correlated
// so that D sits clearly below the hinge threshold).
inline GradCheckResult gradcheck_diversity(std::uint64_t seed, int instances, double eps = 1e-5) {
  using namespace gradcheck_detail;
  GradCheckResult res{"diversity", 0.0, instances};
  Rng rng(seed);
  for (int it = 0; it < instances; ++it) {
    Instance inst = random_instance(rng);
    const int e = 2 + int(rng.uniform(3));
    const int m = 2 + int(rng.uniform(3));
    std::vector<EmbeddingHead> heads;
    const Matrix base = random_matrix(inst.features.cols, std::size_t(e), rng, 0.5);
    for (int j = 0; j < m; ++j) {
      EmbeddingHead h = EmbeddingHead::init(inst.features.cols, std::size_t(e), rng, 1.0,
                                            "head_" + std::to_string(j));
      for (std::size_t n = 0; n < h.weight.value.data.size(); ++n)
        h.weight.value.data[n] = base.data[n] + 0.1 * h.weight.value.data[n];
      heads.push_back(std::move(h));
    }
    std::vector<Param*> params;
    for (auto& h : heads) params.push_back(&h.weight);

    const auto f = [&]() -> double {
      std::vector<RowNorm> rns;
      std::vector<Matrix> units;
      for (auto& h : heads) {
        rns.push_back(normalize_rows(embed(h, inst.features)));
        units.push_back(rns.back().unit);
      }
      const DiversityResult div = diversity(units);
      for (int j = 0; j < m; ++j)
        embed_backward(heads[std::size_t(j)], inst.features,
                       normalize_rows_backward(rns[std::size_t(j)], div.grad_embs[std::size_t(j)]));
      return div.loss;
    };
    res.max_rel_error = std::max(res.max_rel_error, finite_diff_check(f, params, eps));
  }
  return res;
}

// Gradient check of the full combined objective over every trainable
// parameter, with the EMA factors and mined triplets frozen across probes.
inline GradCheckResult gradcheck_objective(EnsembleMode mode, std::uint64_t seed, int instances,
                                           double eps = 1e-5) {
  using namespace gradcheck_detail;
  GradCheckResult res{std::string("objective_") + mode_name(mode), 0.0, instances};
  Rng rng(seed);
  for (int it = 0; it < instances; ++it) {
    Instance inst;
    EnsembleModel model;
    TripletSet cache;
    for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
      inst = random_instance(rng);
      EnsembleConfig cfg;
      cfg.mode = mode;
      cfg.embed_dim = 2 + int(rng.uniform(3));
      cfg.head_lr_scale = 1.0;
      cfg.proxy_lr_scale = 1.0;
      cfg.classifier_lr_scale = 1.0;
      model = EnsembleModel::create(cfg, int(inst.features.cols), inst.classes, rng);
      if (model.heads.size() > 1) {
        // Correlate the heads so the diversity hinge is active and smooth.
        const Matrix& base = model.heads[0].weight.value;
        for (std::size_t h = 1; h < model.heads.size(); ++h)
          for (std::size_t n = 0; n < base.data.size(); ++n)
            model.heads[h].weight.value.data[n] =
                0.9 * base.data[n] + 0.1 * model.heads[h].weight.value.data[n];
      }
      for (auto& c : model.coeffs.value.data) c += 0.05 * rng.normal();

      // Fix the EMA statistics and the mined triplets before probing.
      cache.clear();
      ObjectiveOptions init_opts;
      init_opts.with_grads = false;
      init_opts.update_ema = true;
      init_opts.triplet_cache = &cache;
      const ObjectiveResult obj = model.objective(inst.features, inst.labels, init_opts);

      bool safe = true;
      for (double r : obj.raw) safe = safe && r >= kMinRawLoss;
      if (model.uses_diversity()) safe = safe && std::abs(obj.diversity_mean - 2.0) >= kKinkMargin;
      if (safe) {
        for (int j = 0; j < model.member_count(); ++j) {
          if (model.cfg.members[j] != LossKind::triplet) continue;
          const RowNorm rn =
              normalize_rows(embed(model.head_for(j), inst.features));
          safe = min_abs_violation(rn.unit, cache, model.cfg.hyper.triplet_margin) >= kKinkMargin;
        }
      }
      if (safe) break;
    }

    ObjectiveOptions opts;
    opts.update_ema = false;
    opts.triplet_cache = &cache;
    const auto params = model.trainable_params();
    const auto f = [&]() -> double {
      return model.objective(inst.features, inst.labels, opts).total;
    };
    res.max_rel_error = std::max(res.max_rel_error, finite_diff_check(f, params, eps));
  }
  return res;
}

// Gradient check of the compression stage: tanh regressor under the
// normalized distance loss against a fixed target matrix.
inline GradCheckResult gradcheck_compressor(std::uint64_t seed, int instances, double eps = 1e-5) {
  using namespace gradcheck_detail;
  GradCheckResult res{"compressor", 0.0, instances};
  Rng rng(seed);
  for (int it = 0; it < instances; ++it) {
    const int n = 4 + int(rng.uniform(9));  // 4..12
    const int e = 2 + int(rng.uniform(3));
    const int m = 2 + int(rng.uniform(3));
    const Matrix fcon = random_matrix(std::size_t(n), std::size_t(m * e), rng, 0.7);
    const Matrix target_points = random_matrix(std::size_t(n), std::size_t(e), rng);
    const Matrix k_target = normalized_distance_matrix(target_points);
    CompressionRegressor reg = CompressionRegressor::init(m * e, e, rng);
    std::vector<Param*> params{&reg.transform, &reg.bias};

    const auto f = [&]() -> double {
      const Matrix g = compress(reg, fcon);
      Matrix grad_g = Matrix::zeros_like(g);
      const double loss = normalized_distance_loss_backward(k_target, g, grad_g);
      compress_backward(reg, fcon, g, grad_g);
      return loss;
    };
    res.max_rel_error = std::max(res.max_rel_error, finite_diff_check(f, params, eps));
  }
  return res;
}

// The full battery used by the CLI and the acceptance suite.
inline std::vector<GradCheckResult> gradcheck_suite(std::uint64_t seed, int instances) {
  std::vector<GradCheckResult> out;
  out.push_back(gradcheck_loss(LossKind::triplet, Rng::derive(seed, 11), instances));
  out.push_back(gradcheck_loss(LossKind::binomial, Rng::derive(seed, 12), instances));
  out.push_back(gradcheck_loss(LossKind::proxy_nca, Rng::derive(seed, 13), instances));
  out.push_back(gradcheck_loss(LossKind::smoothed_ce, Rng::derive(seed, 14), instances));
  out.push_back(gradcheck_diversity(Rng::derive(seed, 15), instances));
  out.push_back(gradcheck_objective(EnsembleMode::wedl, Rng::derive(seed, 16), instances));
  out.push_back(gradcheck_objective(EnsembleMode::wel, Rng::derive(seed, 17), instances));
  out.push_back(gradcheck_objective(EnsembleMode::wel_equal, Rng::derive(seed, 18), instances));
  out.push_back(gradcheck_compressor(Rng::derive(seed, 19), instances));
  return out;
}

}  // namespace wedl
