#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "wedl/matrix.hpp"
#include "wedl/param.hpp"
#include "wedl/rng.hpp"

namespace wedl {

// Linear embedding head: a bias-free d x e map from extracted features to the
// embedding space. Callers normalize the output where their loss requires it.
struct EmbeddingHead {
  Param weight;  // d x e

  static EmbeddingHead init(std::size_t feature_dim, std::size_t embed_dim, Rng& rng,
                            double lr_scale = 10.0, std::string name = "head") {
    if (feature_dim == 0 || embed_dim == 0)
      throw std::invalid_argument("EmbeddingHead: dimensions must be positive");
    Matrix w(feature_dim, embed_dim);
    const double bound = 1.0 / std::sqrt(double(feature_dim));
    for (auto& x : w.data) x = rng.uniform_real(-bound, bound);
    return {Param(std::move(name), std::move(w), lr_scale)};
  }

  std::size_t feature_dim() const { return weight.value.rows; }
  std::size_t embed_dim() const { return weight.value.cols; }
};

inline Matrix embed(const EmbeddingHead& head, const Matrix& x) {
  if (x.cols != head.feature_dim())
    throw std::invalid_argument("embed: feature dimension mismatch");
  return matmul(x, head.weight.value);
}

// grad_W += X^T * upstream (accumulated into the head's grad buffer);
// grad_input = upstream * W^T when requested.
inline void embed_backward(EmbeddingHead& head, const Matrix& x, const Matrix& upstream,
                           Matrix* grad_input = nullptr) {
  if (x.cols != head.feature_dim() || upstream.cols != head.embed_dim() ||
      upstream.rows != x.rows)
    throw std::invalid_argument("embed_backward: shape mismatch");
  matmul_tn_acc(x, upstream, head.weight.grad);
  if (grad_input) *grad_input = matmul_nt(upstream, head.weight.value);
}

}  // namespace wedl
