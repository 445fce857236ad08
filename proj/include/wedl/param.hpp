#pragma once

#include <string>
#include <utility>

#include "wedl/matrix.hpp"

namespace wedl {

// A trainable tensor with its gradient buffer. lr_scale multiplies the
// optimizer's base learning rate for this parameter only.
struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
  double lr_scale = 1.0;

  Param() = default;
  Param(std::string n, Matrix v, double scale = 1.0)
      : name(std::move(n)), value(std::move(v)), grad(Matrix::zeros_like(value)), lr_scale(scale) {}

  void zero_grad() { grad.set_zero(); }
};

}  // namespace wedl
