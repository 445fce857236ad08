#include <catch2/catch_amalgamated.hpp>

#include "wedl/embedding.hpp"
#include "wedl/numeric.hpp"
#include "wedl/rng.hpp"

using namespace wedl;

namespace {

// Independent naive triple-loop product used as the forward oracle.
Matrix naive_product(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.cols; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (auto& v : m.data) v = rng.normal();
  return m;
}

}  // namespace

TEST_CASE("embed with an identity map echoes the input") {
  Rng rng(1);
  EmbeddingHead head = EmbeddingHead::init(3, 3, rng);
  head.weight.value.set_zero();
  for (int i = 0; i < 3; ++i) head.weight.value(std::size_t(i), std::size_t(i)) = 1.0;
  const Matrix x = random_matrix(5, 3, rng);
  const Matrix out = embed(head, x);
  CHECK(out.data == x.data);
}

TEST_CASE("embed of zeros is zero and dimensions are checked") {
  Rng rng(2);
  EmbeddingHead head = EmbeddingHead::init(4, 2, rng);
  const Matrix out = embed(head, Matrix(6, 4));
  for (double v : out.data) CHECK(v == 0.0);
  CHECK_THROWS(embed(head, Matrix(6, 5)));
}

TEST_CASE("embed matches the naive product oracle") {
  Rng rng(3);
  for (int it = 0; it < 10; ++it) {
    EmbeddingHead head = EmbeddingHead::init(1 + rng.uniform(8), 1 + rng.uniform(6), rng);
    const Matrix x = random_matrix(1 + rng.uniform(10), head.feature_dim(), rng);
    const Matrix got = embed(head, x);
    const Matrix want = naive_product(x, head.weight.value);
    for (std::size_t n = 0; n < got.data.size(); ++n)
      CHECK_THAT(got.data[n], Catch::Matchers::WithinAbs(want.data[n], 1e-12));
  }
}

TEST_CASE("embed is linear") {
  Rng rng(4);
  EmbeddingHead head = EmbeddingHead::init(5, 3, rng);
  const Matrix x = random_matrix(4, 5, rng);
  const Matrix y = random_matrix(4, 5, rng);
  const double a = 1.7, b = -0.3;
  Matrix combo(4, 5);
  for (std::size_t n = 0; n < combo.data.size(); ++n)
    combo.data[n] = a * x.data[n] + b * y.data[n];
  const Matrix lhs = embed(head, combo);
  const Matrix ex = embed(head, x);
  const Matrix ey = embed(head, y);
  for (std::size_t n = 0; n < lhs.data.size(); ++n)
    CHECK_THAT(lhs.data[n], Catch::Matchers::WithinAbs(a * ex.data[n] + b * ey.data[n], 1e-10));
}

TEST_CASE("embed_backward scalar chain rule") {
  Rng rng(5);
  EmbeddingHead head = EmbeddingHead::init(1, 1, rng);
  head.weight.value(0, 0) = 3.0;
  Matrix x(1, 1);
  x(0, 0) = 2.0;
  Matrix upstream(1, 1);
  upstream(0, 0) = 5.0;
  Matrix grad_x;
  embed_backward(head, x, upstream, &grad_x);
  CHECK(head.weight.grad(0, 0) == 10.0);
  CHECK(grad_x(0, 0) == 15.0);
}

TEST_CASE("embed_backward of zero upstream is zero and accumulates") {
  Rng rng(6);
  EmbeddingHead head = EmbeddingHead::init(3, 2, rng);
  const Matrix x = random_matrix(4, 3, rng);
  Matrix grad_x;
  embed_backward(head, x, Matrix(4, 2), &grad_x);
  for (double v : head.weight.grad.data) CHECK(v == 0.0);
  for (double v : grad_x.data) CHECK(v == 0.0);

  Matrix upstream = random_matrix(4, 2, rng);
  embed_backward(head, x, upstream);
  const Matrix once = head.weight.grad;
  embed_backward(head, x, upstream);
  for (std::size_t n = 0; n < once.data.size(); ++n)
    CHECK_THAT(head.weight.grad.data[n], Catch::Matchers::WithinAbs(2.0 * once.data[n], 1e-12));
}

TEST_CASE("embed_backward matches finite differences") {
  Rng rng(7);
  for (int it = 0; it < 5; ++it) {
    EmbeddingHead head = EmbeddingHead::init(2 + rng.uniform(5), 1 + rng.uniform(4), rng);
    const Matrix x = random_matrix(3, head.feature_dim(), rng);
    const Matrix w = random_matrix(3, head.embed_dim(), rng);  // fixed projection
    const auto f = [&]() {
      const Matrix out = embed(head, x);
      double s = 0.0;
      for (std::size_t n = 0; n < out.data.size(); ++n) s += w.data[n] * out.data[n];
      embed_backward(head, x, w);
      return s;
    };
    CHECK(finite_diff_check(f, {&head.weight}, 1e-5) <= 1e-6);
  }
}

TEST_CASE("head initialization is seeded and bounded") {
  Rng a(99), b(99);
  const EmbeddingHead h1 = EmbeddingHead::init(16, 8, a);
  const EmbeddingHead h2 = EmbeddingHead::init(16, 8, b);
  CHECK(h1.weight.value.data == h2.weight.value.data);
  const double bound = 1.0 / 4.0;
  for (double v : h1.weight.value.data) {
    CHECK(v >= -bound);
    CHECK(v <= bound);
  }
}
