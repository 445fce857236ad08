#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "wedl/dataset.hpp"
#include "wedl/embedding.hpp"
#include "wedl/losses.hpp"
#include "wedl/matrix.hpp"
#include "wedl/numeric.hpp"
#include "wedl/optimizer.hpp"
#include "wedl/rng.hpp"

namespace wedl {

// ---------------------------------------------------------------------------
// Loss-scale normalization via exponential moving averages.
// ---------------------------------------------------------------------------

struct EmaState {
  std::vector<double> means;  // running mean per loss, positive after init
  double smoothing = 2.0;     // s
  long long iteration = 0;    // k; >= 1 once initialized

  bool initialized() const { return iteration >= 1; }
};

inline EmaState init_ema(const std::vector<double>& first_raw, double smoothing = 2.0) {
  EmaState ema;
  ema.smoothing = smoothing;
  ema.iteration = 1;
  ema.means.resize(first_raw.size());
  for (std::size_t j = 0; j < first_raw.size(); ++j)
    ema.means[j] = std::max(first_raw[j], 1e-12);
  return ema;
}

// Scale factor per loss: grand mean of the running means over the loss's own
// running mean. The factors are statistics, not a differentiable path.
inline std::vector<double> normalize_factors(const EmaState& ema) {
  if (!ema.initialized()) throw std::runtime_error("normalize_factors: EMA not initialized");
  double grand = 0.0;
  for (double m : ema.means) grand += m;
  grand /= double(ema.means.size());
  std::vector<double> f(ema.means.size());
  for (std::size_t j = 0; j < f.size(); ++j) f[j] = grand / std::max(ema.means[j], 1e-12);
  return f;
}

inline std::vector<double> normalize_losses(const std::vector<double>& raw, const EmaState& ema) {
  if (raw.size() != ema.means.size())
    throw std::invalid_argument("normalize_losses: size mismatch");
  const auto f = normalize_factors(ema);
  std::vector<double> out(raw.size());
  for (std::size_t j = 0; j < raw.size(); ++j) out[j] = raw[j] * f[j];
  return out;
}

// means <- raw * w + means * (1 - w) with w = s/(1+k) clamped to (0, 1];
// the iteration counter advances afterwards.
inline void ema_update(EmaState& ema, const std::vector<double>& raw) {
  if (!ema.initialized()) throw std::runtime_error("ema_update: EMA not initialized");
  if (raw.size() != ema.means.size()) throw std::invalid_argument("ema_update: size mismatch");
  for (double r : raw)
    if (!std::isfinite(r)) throw std::runtime_error("ema_update: non-finite raw loss");
  const double w =
      std::clamp(ema.smoothing / double(1 + ema.iteration), std::numeric_limits<double>::min(), 1.0);
  for (std::size_t j = 0; j < raw.size(); ++j)
    ema.means[j] = raw[j] * w + ema.means[j] * (1.0 - w);
  ema.iteration += 1;
}

// ---------------------------------------------------------------------------
// Coefficient weights with a floor and a soft simplex constraint.
// ---------------------------------------------------------------------------

struct WeightPenalty {
  std::vector<double> weights;  // w_j = c_j^2 + alpha_w
  double sum = 0.0;
  double penalty = 0.0;  // eta * (sum - 1)^2
};

inline WeightPenalty effective_weights(const std::vector<double>& c, double alpha_w, double eta) {
  WeightPenalty wp;
  wp.weights.resize(c.size());
  for (std::size_t j = 0; j < c.size(); ++j) {
    wp.weights[j] = c[j] * c[j] + alpha_w;
    wp.sum += wp.weights[j];
  }
  wp.penalty = eta * (wp.sum - 1.0) * (wp.sum - 1.0);
  return wp;
}

// Gradient of (sum_j w_j lhat_j + penalty) w.r.t. c_j.
inline double coefficient_grad(double c, double lhat, double weight_sum, double eta) {
  return 2.0 * c * lhat + 4.0 * eta * c * (weight_sum - 1.0);
}

// ---------------------------------------------------------------------------
// Diversity term over per-loss embeddings of the same samples.
// ---------------------------------------------------------------------------

struct DiversityResult {
  double mean_distance = 0.0;       // D: mean over head pairs of batch-mean squared distance
  double loss = 0.0;                // max(0, 2 - D)
  std::vector<Matrix> grad_embs;    // d(loss)/d(unit embedding), one per head
};

// unit_embs: one N x e unit-row matrix per head. In the literal-formula mode
// the per-pair term is 2 - f_j.f_k as printed; by default the squared
// distance 2 - 2 f_j.f_k of unit vectors is used (per-pair maximum 4).
inline DiversityResult diversity(const std::vector<Matrix>& unit_embs,
                                 bool literal_formula = false) {
  const std::size_t m = unit_embs.size();
  if (m < 2) throw std::invalid_argument("diversity: need at least 2 heads");
  for (std::size_t j = 1; j < m; ++j)
    check_same_shape(unit_embs[0], unit_embs[j], "diversity");
  const std::size_t n = unit_embs[0].rows;
  if (n == 0) throw std::invalid_argument("diversity: empty batch");

  const double dot_coeff = literal_formula ? 1.0 : 2.0;
  const double pair_norm = 2.0 / double(m * (m - 1));
  DiversityResult res;
  for (std::size_t j = 0; j < m; ++j) res.grad_embs.push_back(Matrix::zeros_like(unit_embs[0]));

  double total = 0.0;
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t k = j + 1; k < m; ++k) {
      double pair_sum = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        pair_sum += 2.0 - dot_coeff * row_dot(unit_embs[j], i, unit_embs[k], i);
      total += pair_norm * (pair_sum / double(n));
    }
  res.mean_distance = total;
  res.loss = std::max(0.0, 2.0 - total);
  if (res.loss > 0.0) {
    // d(loss)/dD = -1; dD/df_j(x_i) = -pair_norm/n * dot_coeff * sum_{k != j} f_k(x_i)
    const double scale = pair_norm / double(n) * dot_coeff;
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t k = 0; k < m; ++k) {
        if (k == j) continue;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t col = 0; col < unit_embs[0].cols; ++col)
            res.grad_embs[j](i, col) += scale * unit_embs[k](i, col);
      }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Weighted ensemble distance (evaluation-time metric).
// ---------------------------------------------------------------------------

// x_heads, y_heads: M x e matrices whose row j is the unit embedding of the
// point under head j. Returns sum_j w_j * ||f_j(x) - f_j(y)||^2 computed as
// w_j * (2 - 2 f_j(x).f_j(y)); the literal mode drops the factor of 2 on the
// inner product to match the printed form.
inline double ensemble_distance(const Matrix& x_heads, const Matrix& y_heads,
                                const std::vector<double>& weights,
                                bool literal_formula = false) {
  if (!x_heads.same_shape(y_heads) || x_heads.rows != weights.size())
    throw std::invalid_argument("ensemble_distance: shape mismatch");
  const double dot_coeff = literal_formula ? 1.0 : 2.0;
  double total = 0.0;
  for (std::size_t j = 0; j < weights.size(); ++j)
    total += weights[j] * (2.0 - dot_coeff * row_dot(x_heads, j, y_heads, j));
  return total;
}

// Same distance between rows i and j of a per-head embedding batch.
inline double ensemble_row_distance(const std::vector<Matrix>& unit_embs, std::size_t i,
                                    std::size_t j, const std::vector<double>& weights,
                                    bool literal_formula = false) {
  if (unit_embs.size() != weights.size())
    throw std::invalid_argument("ensemble_row_distance: need one weight per head");
  const double dot_coeff = literal_formula ? 1.0 : 2.0;
  double total = 0.0;
  for (std::size_t h = 0; h < unit_embs.size(); ++h)
    total += weights[h] * (2.0 - dot_coeff * row_dot(unit_embs[h], i, unit_embs[h], j));
  return total;
}

// ---------------------------------------------------------------------------
// Ensemble model.
// ---------------------------------------------------------------------------

enum class LossKind { triplet, binomial, proxy_nca, smoothed_ce };

inline const char* loss_name(LossKind k) {
  switch (k) {
    case LossKind::triplet: return "triplet";
    case LossKind::binomial: return "binomial";
    case LossKind::proxy_nca: return "proxy_nca";
    case LossKind::smoothed_ce: return "smoothed_ce";
  }
  return "?";
}

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "triplet") return LossKind::triplet;
  if (s == "binomial") return LossKind::binomial;
  if (s == "proxy_nca") return LossKind::proxy_nca;
  if (s == "smoothed_ce") return LossKind::smoothed_ce;
  throw std::invalid_argument("unknown loss '" + s + "'");
}

struct LossHyper {
  double triplet_margin = 0.1;
  double binomial_beta1 = 2.0;
  double binomial_beta2 = 0.5;
  double binomial_c = 25.0;
  BinomialCMode binomial_c_mode = BinomialCMode::exponent;
  double ce_gamma = 0.15;
};

enum class EnsembleMode { wel, wel_equal, wedl };

inline const char* mode_name(EnsembleMode m) {
  switch (m) {
    case EnsembleMode::wel: return "WEL";
    case EnsembleMode::wel_equal: return "WEL-equal";
    case EnsembleMode::wedl: return "WEDL";
  }
  return "?";
}

struct EnsembleConfig {
  EnsembleMode mode = EnsembleMode::wedl;
  std::vector<LossKind> members = {LossKind::triplet, LossKind::binomial, LossKind::proxy_nca,
                                   LossKind::smoothed_ce};
  int embed_dim = 64;
  LossHyper hyper;
  double lambda = 0.01;         // diversity weight
  double eta = 100.0;           // simplex penalty strength
  double ema_smoothing = 2.0;   // s
  bool equal_weights = false;   // fixes w_j = 1/M (coefficient-learning ablation)
  bool literal_printed_distance = false;
  double head_lr_scale = 10.0;
  double proxy_lr_scale = 100.0;
  double classifier_lr_scale = 100.0;
  double coeff_lr_scale = 1.0;
};

struct ObjectiveOptions {
  bool with_grads = true;
  bool update_ema = true;
  // When set, mined triplets are cached on first use and reused afterwards so
  // finite-difference probes see a fixed sampling.
  TripletSet* triplet_cache = nullptr;
};

struct ObjectiveResult {
  std::vector<double> raw;         // per-member loss values
  std::vector<double> normalized;  // lhat
  std::vector<double> weights;     // effective w (or 1/M)
  double penalty = 0.0;
  double diversity_mean = 0.0;  // D
  double diversity_loss = 0.0;  // l_div
  double total = 0.0;
  bool any_degenerate = false;
};

inline double combine_total(const std::vector<double>& weights,
                            const std::vector<double>& normalized, double penalty, double lambda,
                            double diversity_loss) {
  double total = 0.0;
  for (std::size_t j = 0; j < weights.size(); ++j) total += weights[j] * normalized[j];
  return total + penalty + lambda * diversity_loss;
}

class EnsembleModel {
 public:
  EnsembleConfig cfg;
  int feature_dim = 0;
  int train_classes = 0;
  std::vector<EmbeddingHead> heads;  // one per member in WEDL, one shared otherwise
  std::optional<ProxyBank> proxies;
  std::optional<SoftmaxLayer> classifier;
  Param coeffs;  // 1 x M raw c_j
  EmaState ema;

  static EnsembleModel create(const EnsembleConfig& cfg, int feature_dim, int train_classes,
                              Rng& rng) {
    const int m = int(cfg.members.size());
    if (m == 0) throw std::invalid_argument("ensemble: no loss members");
    if (cfg.mode != EnsembleMode::wel_equal && m < 2)
      throw std::invalid_argument("ensemble: " + std::string(mode_name(cfg.mode)) +
                                  " requires at least 2 members");
    if (feature_dim < 1 || cfg.embed_dim < 1 || train_classes < 1)
      throw std::invalid_argument("ensemble: bad dimensions");

    EnsembleModel model;
    model.cfg = cfg;
    model.feature_dim = feature_dim;
    model.train_classes = train_classes;
    const int head_count = cfg.mode == EnsembleMode::wedl ? m : 1;
    for (int h = 0; h < head_count; ++h) {
      std::string name = head_count == 1 ? std::string("head")
                                         : "head_" + std::string(loss_name(cfg.members[h]));
      model.heads.push_back(
          EmbeddingHead::init(feature_dim, cfg.embed_dim, rng, cfg.head_lr_scale, name));
    }
    for (LossKind k : cfg.members) {
      if (k == LossKind::proxy_nca && !model.proxies)
        model.proxies = ProxyBank::init(train_classes, cfg.embed_dim, rng, cfg.proxy_lr_scale);
      if (k == LossKind::smoothed_ce && !model.classifier)
        model.classifier =
            SoftmaxLayer::init(cfg.embed_dim, train_classes, rng, cfg.classifier_lr_scale);
    }
    // Start on the constraint surface: w_j = c_j^2 + alpha_w = 1/M exactly.
    Matrix c(1, m);
    const double c0 = std::sqrt(std::max(1.0 / double(m) - model.alpha_w(), 0.0));
    for (auto& x : c.data) x = c0;
    model.coeffs = Param("coefficients", std::move(c), cfg.coeff_lr_scale);
    model.ema.smoothing = cfg.ema_smoothing;
    return model;
  }

  int member_count() const { return int(cfg.members.size()); }
  double alpha_w() const { return 1.0 / (4.0 * double(member_count())); }
  bool per_loss_heads() const { return cfg.mode == EnsembleMode::wedl; }
  bool learns_coefficients() const {
    return cfg.mode != EnsembleMode::wel_equal && !cfg.equal_weights;
  }
  bool uses_diversity() const { return cfg.mode == EnsembleMode::wedl && member_count() >= 2; }

  EmbeddingHead& head_for(int member) { return heads[per_loss_heads() ? member : 0]; }
  const EmbeddingHead& head_for(int member) const { return heads[per_loss_heads() ? member : 0]; }

  // Effective per-loss weights for both the objective and Eq.-15-style
  // evaluation: c_j^2 + alpha_w, or 1/M when coefficients are fixed.
  std::vector<double> loss_weights() const {
    const int m = member_count();
    if (!learns_coefficients()) return std::vector<double>(m, 1.0 / double(m));
    std::vector<double> c(coeffs.value.data.begin(), coeffs.value.data.end());
    return effective_weights(c, alpha_w(), cfg.eta).weights;
  }

  std::vector<Param*> trainable_params() {
    std::vector<Param*> ps;
    for (auto& h : heads) ps.push_back(&h.weight);
    if (proxies) ps.push_back(&proxies->proxies);
    if (classifier) {
      ps.push_back(&classifier->weight);
      ps.push_back(&classifier->bias);
    }
    if (learns_coefficients()) ps.push_back(&coeffs);
    return ps;
  }

  // Per-head unit-normalized embeddings of arbitrary feature rows (one matrix
  // per member; shared-head modes repeat the same embedding).
  std::vector<Matrix> member_unit_embeddings(const Matrix& features) const {
    std::vector<Matrix> out;
    if (!per_loss_heads()) {
      Matrix shared = normalize_rows(embed(heads[0], features)).unit;
      for (int j = 0; j < member_count(); ++j) out.push_back(shared);
      return out;
    }
    for (int j = 0; j < member_count(); ++j)
      out.push_back(normalize_rows(embed(heads[j], features)).unit);
    return out;
  }

  // Full forward/backward pass of the combined objective on one batch.
  ObjectiveResult objective(const Matrix& features, const std::vector<int>& labels,
                            const ObjectiveOptions& opts = {}) {
    const int m = member_count();
    ObjectiveResult res;
    res.raw.resize(m);

    // Forward all heads once; losses and the diversity term share them.
    std::vector<Matrix> raw_embs;        // per head
    std::vector<RowNorm> unit_embs;      // per head
    const int head_count = int(heads.size());
    raw_embs.reserve(head_count);
    unit_embs.reserve(head_count);
    for (int h = 0; h < head_count; ++h) {
      raw_embs.push_back(embed(heads[h], features));
      unit_embs.push_back(normalize_rows(raw_embs.back()));
    }
    auto head_index = [&](int member) { return per_loss_heads() ? member : 0; };

    // Member losses. Gradients are kept unscaled here and folded in after the
    // normalization factors are known.
    std::vector<Matrix> member_grad_unit(m);   // w.r.t. unit embedding
    std::vector<Matrix> member_grad_raw(m);    // w.r.t. raw embedding (classifier path)
    Matrix grad_proxies_raw, grad_cls_w, grad_cls_b;
    for (int j = 0; j < m; ++j) {
      const int h = head_index(j);
      switch (cfg.members[j]) {
        case LossKind::triplet: {
          TripletSet mined;
          const TripletSet* use = nullptr;
          if (opts.triplet_cache && !opts.triplet_cache->empty()) {
            use = opts.triplet_cache;
          } else {
            mined = mine_semi_hard(unit_embs[h].unit, labels, cfg.hyper.triplet_margin);
            if (opts.triplet_cache) *opts.triplet_cache = mined;
            use = &mined;
          }
          auto r = triplet_hinge(unit_embs[h].unit, *use, cfg.hyper.triplet_margin);
          res.raw[j] = r.loss;
          res.any_degenerate |= r.degenerate;
          member_grad_unit[j] = std::move(r.grad_emb);
          break;
        }
        case LossKind::binomial: {
          auto r = binomial_deviance(unit_embs[h].unit, enumerate_pairs(labels),
                                     cfg.hyper.binomial_beta1, cfg.hyper.binomial_beta2,
                                     cfg.hyper.binomial_c, cfg.hyper.binomial_c_mode);
          res.raw[j] = r.loss;
          res.any_degenerate |= r.degenerate;
          member_grad_unit[j] = std::move(r.grad_emb);
          break;
        }
        case LossKind::proxy_nca: {
          auto r = proxy_nca(unit_embs[h].unit, labels, *proxies);
          res.raw[j] = r.loss;
          member_grad_unit[j] = std::move(r.grad_emb);
          grad_proxies_raw = std::move(r.grad_proxies);
          break;
        }
        case LossKind::smoothed_ce: {
          auto r = smoothed_ce(raw_embs[h], labels, *classifier, cfg.hyper.ce_gamma);
          res.raw[j] = r.loss;
          member_grad_raw[j] = std::move(r.grad_emb);
          grad_cls_w = std::move(r.grad_weight);
          grad_cls_b = std::move(r.grad_bias);
          break;
        }
      }
    }

    if (!ema.initialized()) ema = init_ema(res.raw, cfg.ema_smoothing);
    const auto factors = normalize_factors(ema);
    res.normalized.resize(m);
    for (int j = 0; j < m; ++j) res.normalized[j] = res.raw[j] * factors[j];

    double weight_sum = 0.0;
    if (learns_coefficients()) {
      std::vector<double> c(coeffs.value.data.begin(), coeffs.value.data.end());
      auto wp = effective_weights(c, alpha_w(), cfg.eta);
      res.weights = std::move(wp.weights);
      res.penalty = wp.penalty;
      weight_sum = wp.sum;
    } else {
      res.weights.assign(m, 1.0 / double(m));
      weight_sum = 1.0;
      res.penalty = 0.0;
    }

    DiversityResult div;
    const bool with_div = uses_diversity();
    if (with_div) {
      std::vector<Matrix> units;
      for (int h = 0; h < head_count; ++h) units.push_back(unit_embs[h].unit);
      div = diversity(units, cfg.literal_printed_distance);
      res.diversity_mean = div.mean_distance;
      res.diversity_loss = div.loss;
    }

    res.total = combine_total(res.weights, res.normalized, res.penalty,
                              with_div ? cfg.lambda : 0.0, res.diversity_loss);

    if (opts.with_grads) {
      // Upstream gradient per head, first w.r.t. the unit embedding.
      std::vector<Matrix> up_unit(head_count);
      std::vector<Matrix> up_raw(head_count);
      for (int h = 0; h < head_count; ++h) {
        up_unit[h] = Matrix::zeros_like(raw_embs[h]);
        up_raw[h] = Matrix::zeros_like(raw_embs[h]);
      }
      for (int j = 0; j < m; ++j) {
        const int h = head_index(j);
        const double scale = res.weights[j] * factors[j];
        if (member_grad_unit[j].size()) add_scaled(up_unit[h], member_grad_unit[j], scale);
        if (member_grad_raw[j].size()) add_scaled(up_raw[h], member_grad_raw[j], scale);
      }
      if (with_div)
        for (int h = 0; h < head_count; ++h)
          add_scaled(up_unit[h], div.grad_embs[h], cfg.lambda);
      for (int h = 0; h < head_count; ++h) {
        Matrix through_norm = normalize_rows_backward(unit_embs[h], up_unit[h]);
        add_scaled(up_raw[h], through_norm, 1.0);
        embed_backward(heads[h], features, up_raw[h]);
      }
      for (int j = 0; j < m; ++j) {
        const double scale = res.weights[j] * factors[j];
        if (cfg.members[j] == LossKind::proxy_nca)
          add_scaled(proxies->proxies.grad, grad_proxies_raw, scale);
        if (cfg.members[j] == LossKind::smoothed_ce) {
          add_scaled(classifier->weight.grad, grad_cls_w, scale);
          add_scaled(classifier->bias.grad, grad_cls_b, scale);
        }
      }
      if (learns_coefficients())
        for (int j = 0; j < m; ++j)
          coeffs.grad(0, std::size_t(j)) += coefficient_grad(
              coeffs.value(0, std::size_t(j)), res.normalized[j], weight_sum, cfg.eta);
    }

    if (opts.update_ema) ema_update(ema, res.raw);
    return res;
  }
};

// ---------------------------------------------------------------------------
// Training loop.
// ---------------------------------------------------------------------------

struct TrainConfig {
  int epochs = 20;
  int batch_classes = 8;    // P
  int batch_per_class = 4;  // K
  AdamConfig adam;
  long long anneal_horizon = 0;  // 0: total planned steps
  int batches_per_epoch = 0;     // 0: floor(n / (P*K)), at least 1
};

struct EpochRecord {
  int epoch = 0;
  std::vector<double> raw;         // batch means
  std::vector<double> normalized;  // batch means
  std::vector<double> weights;     // at epoch end
  double diversity = 0.0;          // batch mean of D
  double total = 0.0;              // batch mean
  double lr = 0.0;                 // last effective base lr of the epoch
};

using EpochCallback = std::function<void(int epoch, EnsembleModel&)>;
using StepCallback = std::function<void(long long step, const EnsembleModel&, const ObjectiveResult&)>;

inline std::vector<EpochRecord> train(EnsembleModel& model, const FeatureDataset& train_ds,
                                      const TrainConfig& cfg, Rng& rng,
                                      const EpochCallback& on_epoch = {},
                                      const StepCallback& on_step = {}) {
  if (cfg.epochs < 0) throw std::invalid_argument("train: negative epoch count");
  std::vector<EpochRecord> log;
  if (cfg.epochs == 0) return log;

  const int batch_size = cfg.batch_classes * cfg.batch_per_class;
  const int batches = cfg.batches_per_epoch > 0
                          ? cfg.batches_per_epoch
                          : std::max(1, int(train_ds.size()) / batch_size);
  const long long horizon = cfg.anneal_horizon > 0
                                ? cfg.anneal_horizon
                                : (long long)(cfg.epochs) * batches;

  Adam optimizer(model.trainable_params(), cfg.adam);
  long long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.raw.assign(model.member_count(), 0.0);
    rec.normalized.assign(model.member_count(), 0.0);
    for (int b = 0; b < batches; ++b) {
      MiniBatch batch = sample_batch(train_ds, cfg.batch_classes, cfg.batch_per_class, rng);
      ObjectiveResult obj;
      double factor = 0.0;
      try {
        obj = model.objective(batch.features, batch.labels);
        if (!std::isfinite(obj.total)) throw std::runtime_error("non-finite loss");
        factor = cosine_anneal(1.0, std::min(step, horizon), horizon);
        optimizer.step(factor);
      } catch (const std::exception& ex) {
        throw std::runtime_error("train: diverged at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(b + 1) + ": " + ex.what());
      }
      if (model.proxies) model.proxies->renormalize();
      ++step;
      for (int j = 0; j < model.member_count(); ++j) {
        rec.raw[j] += obj.raw[j] / double(batches);
        rec.normalized[j] += obj.normalized[j] / double(batches);
      }
      rec.diversity += obj.diversity_mean / double(batches);
      rec.total += obj.total / double(batches);
      rec.lr = cfg.adam.lr * factor;
      if (on_step) on_step(step, model, obj);
    }
    rec.weights = model.loss_weights();
    log.push_back(std::move(rec));
    if (on_epoch) on_epoch(epoch, model);
  }
  return log;
}

}  // namespace wedl
