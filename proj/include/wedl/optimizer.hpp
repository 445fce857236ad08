#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "wedl/param.hpp"

namespace wedl {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 0.01;
  double weight_decay = 1e-4;
};

// Cosine annealing factor: lr0 * (1 + cos(pi*t/T)) / 2.
inline double cosine_anneal(double lr0, long long t, long long horizon) {
  if (horizon < 1) throw std::invalid_argument("cosine_anneal: horizon must be >= 1");
  if (t < 0 || t > horizon) throw std::invalid_argument("cosine_anneal: step outside [0, horizon]");
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * double(t) / double(horizon)));
}

// Adam with bias correction and decoupled weight decay (decay is applied to
// the value directly, never through the moment accumulators). Per-parameter
// effective lr = lr * param.lr_scale * lr_factor.
class Adam {
 public:
  explicit Adam(std::vector<Param*> params, AdamConfig cfg = {})
      : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Param* p : params_) {
      m_.push_back(Matrix::zeros_like(p->value));
      v_.push_back(Matrix::zeros_like(p->value));
    }
  }

  // Applies one update and zeroes all gradients. A non-finite gradient aborts
  // the step before any parameter is touched.
  void step(double lr_factor = 1.0) {
    for (const Param* p : params_)
      if (!p->grad.all_finite())
        throw std::runtime_error("adam: non-finite gradient in parameter '" + p->name + "'");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Param& p = *params_[i];
      Matrix& m = m_[i];
      Matrix& v = v_[i];
      const double lr_eff = cfg_.lr * p.lr_scale * lr_factor;
      for (std::size_t n = 0; n < p.value.data.size(); ++n) {
        const double g = p.grad.data[n];
        m.data[n] = cfg_.beta1 * m.data[n] + (1.0 - cfg_.beta1) * g;
        v.data[n] = cfg_.beta2 * v.data[n] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m.data[n] / bc1;
        const double vhat = v.data[n] / bc2;
        p.value.data[n] -=
            lr_eff * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p.value.data[n]);
      }
      p.zero_grad();
      if (!p.value.all_finite())
        throw std::runtime_error("adam: non-finite value in parameter '" + p.name +
                                 "' after update");
    }
  }

  long long step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Param*> params_;
  AdamConfig cfg_;
  long long t_ = 0;
  std::vector<Matrix> m_, v_;
};

}  // namespace wedl
