#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "wedl/gradcheck.hpp"
#include "wedl/losses.hpp"
#include "wedl/numeric.hpp"
#include "wedl/rng.hpp"

using namespace wedl;

namespace {

// Unit vector in 2-D whose squared distance to (1, 0) is sq (sq in [0, 4]).
std::vector<double> unit_at_sqdist(double sq) {
  const double c = 1.0 - sq / 2.0;
  return {c, std::sqrt(std::max(0.0, 1.0 - c * c))};
}

Matrix rows(const std::vector<std::vector<double>>& rs) {
  Matrix m(rs.size(), rs[0].size());
  for (std::size_t i = 0; i < rs.size(); ++i)
    for (std::size_t j = 0; j < rs[i].size(); ++j) m(i, j) = rs[i][j];
  return m;
}

Matrix random_unit_rows(std::size_t n, std::size_t e, Rng& rng) {
  Matrix m(n, e);
  for (auto& v : m.data) v = rng.normal();
  return normalize_rows(m).unit;
}

// Literal two-stage restatement of the semi-hard rule, kept separate from the
// production code path.
TripletSet mine_oracle(const Matrix& emb, const std::vector<int>& labels, double margin) {
  TripletSet out;
  const int n = int(labels.size());
  for (int a = 0; a < n; ++a)
    for (int p = 0; p < n; ++p) {
      if (a == p || labels[a] != labels[p]) continue;
      const double dp = row_sqdist(emb, a, emb, p);
      int pick = -1;
      double best = std::numeric_limits<double>::infinity();
      for (int neg = 0; neg < n; ++neg)
        if (labels[neg] != labels[a]) {
          const double dn = row_sqdist(emb, a, emb, neg);
          if (dn > dp && dn < dp + margin && dn < best) {
            best = dn;
            pick = neg;
          }
        }
      if (pick < 0) {
        for (int neg = 0; neg < n; ++neg)
          if (labels[neg] != labels[a]) {
            const double dn = row_sqdist(emb, a, emb, neg);
            if (dn > dp && dn < best) {
              best = dn;
              pick = neg;
            }
          }
      }
      if (pick >= 0) out.push_back({a, p, pick});
    }
  return out;
}

// Random orthogonal matrix by Gram-Schmidt on a Gaussian draw.
Matrix random_rotation(std::size_t e, Rng& rng) {
  Matrix q(e, e);
  for (std::size_t i = 0; i < e; ++i) {
    std::vector<double> v(e);
    for (auto& x : v) x = rng.normal();
    for (std::size_t j = 0; j < i; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < e; ++k) dot += v[k] * q(j, k);
      for (std::size_t k = 0; k < e; ++k) v[k] -= dot * q(j, k);
    }
    const auto u = l2_normalize(v);
    for (std::size_t k = 0; k < e; ++k) q(i, k) = u[k];
  }
  return q;
}

}  // namespace

TEST_CASE("enumerate_pairs lists every unordered pair with its polarity") {
  const PairSet p1 = enumerate_pairs({7, 7, 9});
  REQUIRE(p1.size() == 3);
  CHECK((p1[0].i == 0 && p1[0].j == 1 && p1[0].similar));
  CHECK((p1[1].i == 0 && p1[1].j == 2 && !p1[1].similar));
  CHECK((p1[2].i == 1 && p1[2].j == 2 && !p1[2].similar));

  const PairSet p2 = enumerate_pairs({3, 3, 3});
  for (const auto& p : p2) CHECK(p.similar);

  const PairSet p3 = enumerate_pairs({0, 1});
  REQUIRE(p3.size() == 1);
  CHECK_FALSE(p3[0].similar);

  CHECK_THROWS(enumerate_pairs({0}));
}

TEST_CASE("semi-hard miner picks within the band before falling back") {
  // anchor 0, positive 1 at d+ = 0.3; negatives at d+ + margin/2 and d+ + 2*margin
  const double margin = 0.2;
  const Matrix emb = rows({{1.0, 0.0},
                           unit_at_sqdist(0.3),
                           unit_at_sqdist(0.3 + margin / 2.0),
                           unit_at_sqdist(0.3 + 2.0 * margin)});
  const std::vector<int> labels{0, 0, 1, 1};
  const TripletSet mined = mine_semi_hard(emb, labels, margin);
  REQUIRE_FALSE(mined.empty());
  for (const Triplet& t : mined)
    if (t.anchor == 0 && t.positive == 1) CHECK(t.negative == 2);
}

TEST_CASE("semi-hard miner omits pairs whose negatives are all closer") {
  // both negatives closer to the anchor than the positive
  const Matrix emb = rows({{1.0, 0.0},
                           unit_at_sqdist(1.0),
                           unit_at_sqdist(0.2),
                           unit_at_sqdist(0.4)});
  const std::vector<int> labels{0, 0, 1, 1};
  const TripletSet mined = mine_semi_hard(emb, labels, 0.1);
  for (const Triplet& t : mined) CHECK_FALSE((t.anchor == 0 && t.positive == 1));
  // the reverse pair (anchor 1) still has valid negatives, so the set is non-empty
  CHECK_FALSE(mined.empty());
}

TEST_CASE("semi-hard miner equals the brute-force oracle on random batches") {
  Rng rng(31);
  for (int it = 0; it < 20; ++it) {
    const std::vector<int> labels{0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3};
    const Matrix emb = random_unit_rows(labels.size(), 3, rng);
    const TripletSet got = mine_semi_hard(emb, labels, 0.1);
    const TripletSet want = mine_oracle(emb, labels, 0.1);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].anchor == want[i].anchor);
      CHECK(got[i].positive == want[i].positive);
      CHECK(got[i].negative == want[i].negative);
    }
  }
}

TEST_CASE("semi-hard miner requires an anchor-positive pair") {
  Rng rng(1);
  const Matrix emb = random_unit_rows(3, 2, rng);
  CHECK_THROWS(mine_semi_hard(emb, {0, 1, 2}, 0.1));
}

TEST_CASE("triplet hinge spot values") {
  SECTION("satisfied triplet contributes zero") {
    const Matrix emb = rows({{1.0, 0.0}, unit_at_sqdist(0.2), unit_at_sqdist(0.5)});
    const auto r = triplet_hinge(emb, {{0, 1, 2}}, 0.1);
    CHECK(r.loss == 0.0);
    for (double v : r.grad_emb.data) CHECK(v == 0.0);
  }
  SECTION("violated triplet evaluates the hinge") {
    const Matrix emb = rows({{1.0, 0.0}, unit_at_sqdist(0.3), unit_at_sqdist(0.2)});
    const auto r = triplet_hinge(emb, {{0, 1, 2}}, 0.1);
    CHECK_THAT(r.loss, Catch::Matchers::WithinAbs(0.2, 1e-12));
  }
  SECTION("empty triplet set is flagged") {
    Rng rng(2);
    const Matrix emb = random_unit_rows(4, 2, rng);
    const auto r = triplet_hinge(emb, {}, 0.1);
    CHECK(r.loss == 0.0);
    CHECK(r.degenerate);
  }
}

TEST_CASE("triplet hinge is rotation invariant") {
  Rng rng(33);
  const std::vector<int> labels{0, 0, 1, 1, 2, 2};
  const Matrix emb = random_unit_rows(labels.size(), 4, rng);
  const TripletSet triplets = mine_semi_hard(emb, labels, 0.1);
  const Matrix rot = random_rotation(4, rng);
  const Matrix rotated = matmul(emb, rot);
  const double a = triplet_hinge(emb, triplets, 0.1).loss;
  const double b = triplet_hinge(rotated, triplets, 0.1).loss;
  CHECK_THAT(a, Catch::Matchers::WithinAbs(b, 1e-9));
}

TEST_CASE("binomial deviance spot values") {
  SECTION("positive pair at s = beta2 gives ln 2 regardless of c") {
    const Matrix emb = rows({{1.0, 0.0}, unit_at_sqdist(2.0 - 2.0 * 0.5)});  // s = 0.5
    for (double c : {1.0, 25.0, 100.0}) {
      const auto r = binomial_deviance(emb, {{0, 1, true}}, 2.0, 0.5, c);
      CHECK_THAT(r.loss, Catch::Matchers::WithinAbs(std::log(2.0), 1e-9));
    }
  }
  SECTION("negative pair with the balance constant in the exponent") {
    const Matrix emb = rows({{1.0, 0.0}, unit_at_sqdist(2.0 - 2.0 * 0.54)});  // s = 0.54
    const auto r = binomial_deviance(emb, {{0, 1, false}}, 2.0, 0.5, 25.0);
    CHECK_THAT(r.loss, Catch::Matchers::WithinAbs(std::log(1.0 + std::exp(2.0)), 1e-6));
  }
  SECTION("multiplier mode scales the negative branch instead") {
    const Matrix emb = rows({{1.0, 0.0}, unit_at_sqdist(2.0 - 2.0 * 0.54)});
    const auto r = binomial_deviance(emb, {{0, 1, false}}, 2.0, 0.5, 25.0,
                                     BinomialCMode::multiplier);
    CHECK_THAT(r.loss, Catch::Matchers::WithinAbs(
                           25.0 * std::log(1.0 + std::exp(2.0 * 0.04)), 1e-9));
  }
  SECTION("empty pair set is flagged") {
    const auto r = binomial_deviance(Matrix(2, 2), {}, 2.0, 0.5, 25.0);
    CHECK(r.degenerate);
  }
}

TEST_CASE("binomial deviance averages positives and negatives separately") {
  Rng rng(35);
  const std::vector<int> labels{0, 0, 1, 1};
  const Matrix emb = random_unit_rows(4, 3, rng);
  const PairSet pairs = enumerate_pairs(labels);
  const auto whole = binomial_deviance(emb, pairs, 2.0, 0.5, 25.0);
  PairSet pos, neg;
  for (const auto& p : pairs) (p.similar ? pos : neg).push_back(p);
  const auto rp = binomial_deviance(emb, pos, 2.0, 0.5, 25.0);
  const auto rn = binomial_deviance(emb, neg, 2.0, 0.5, 25.0);
  CHECK_THAT(whole.loss, Catch::Matchers::WithinAbs(rp.loss + rn.loss, 1e-12));
}

TEST_CASE("proxy-nca spot values") {
  SECTION("equal positive and negative distances give zero") {
    ProxyBank bank;
    bank.proxies = Param("proxies", rows({{0.0, 1.0}, {0.0, -1.0}}));
    const Matrix emb = rows({{1.0, 0.0}});
    const auto r = proxy_nca(emb, {0}, bank);
    CHECK_THAT(r.loss, Catch::Matchers::WithinAbs(0.0, 1e-12));
  }
  SECTION("perfect hit against one negative at squared distance 2 gives -2") {
    ProxyBank bank;
    bank.proxies = Param("proxies", rows({{1.0, 0.0}, {0.0, 1.0}}));
    const Matrix emb = rows({{1.0, 0.0}});
    const auto r = proxy_nca(emb, {0}, bank);
    CHECK_THAT(r.loss, Catch::Matchers::WithinAbs(-2.0, 1e-9));
  }
  SECTION("a single class has no denominator") {
    ProxyBank bank;
    bank.proxies = Param("proxies", rows({{1.0, 0.0}}));
    CHECK_THROWS(proxy_nca(rows({{1.0, 0.0}}), {0}, bank));
  }
  SECTION("labels must have a proxy") {
    ProxyBank bank;
    bank.proxies = Param("proxies", rows({{1.0, 0.0}, {0.0, 1.0}}));
    CHECK_THROWS(proxy_nca(rows({{1.0, 0.0}}), {2}, bank));
  }
}

TEST_CASE("proxy-nca decreases strictly as the positive proxy approaches") {
  // p_y rotates toward x in the xy-plane; the negative stays orthogonal, so
  // only d(x, p_y) changes.
  const Matrix emb = rows({{1.0, 0.0, 0.0}});
  double prev = std::numeric_limits<double>::infinity();
  for (double theta : {1.5, 1.0, 0.5, 0.25, 0.0}) {
    ProxyBank bank;
    bank.proxies = Param(
        "proxies", rows({{std::cos(theta), std::sin(theta), 0.0}, {0.0, 0.0, 1.0}}));
    const double loss = proxy_nca(emb, {0}, bank).loss;
    CHECK(loss < prev);
    prev = loss;
  }
}

TEST_CASE("smoothed targets and cross entropy spot values") {
  SECTION("gamma 0.15 with two classes") {
    const auto t = smoothed_targets(0, 2, 0.15);
    CHECK(t[0] == 0.925);
    CHECK(t[1] == 0.075);
  }
  SECTION("gamma 0 with a confident prediction is lossless") {
    SoftmaxLayer layer;
    layer.weight = Param("w", rows({{60.0, 0.0}}));
    layer.bias = Param("b", Matrix(1, 2));
    const Matrix emb = rows({{1.0}});
    const auto r = smoothed_ce(emb, {0}, layer, 0.0);
    CHECK_THAT(r.loss, Catch::Matchers::WithinAbs(0.0, 1e-9));
  }
  SECTION("softmax output equal to the targets gives the target entropy") {
    SoftmaxLayer layer;
    layer.weight = Param("w", rows({{std::log(0.925), std::log(0.075)}}));
    layer.bias = Param("b", Matrix(1, 2));
    const Matrix emb = rows({{1.0}});
    const auto r = smoothed_ce(emb, {0}, layer, 0.15);
    const double entropy = -(0.925 * std::log(0.925) + 0.075 * std::log(0.075));
    CHECK_THAT(r.loss, Catch::Matchers::WithinAbs(entropy, 1e-9));
    CHECK_THAT(r.loss, Catch::Matchers::WithinAbs(0.2664, 2e-4));
  }
  SECTION("labels are range checked") {
    Rng rng(1);
    SoftmaxLayer layer = SoftmaxLayer::init(2, 3, rng);
    CHECK_THROWS(smoothed_ce(Matrix(1, 2), {3}, layer, 0.15));
    CHECK_THROWS(smoothed_targets(5, 3, 0.15));
  }
}

TEST_CASE("smoothed cross entropy is bounded below by the target entropy") {
  Rng rng(37);
  const double gamma = 0.15;
  for (int it = 0; it < 20; ++it) {
    const int classes = 2 + int(rng.uniform(4));
    const int e = 2 + int(rng.uniform(3));
    SoftmaxLayer layer = SoftmaxLayer::init(e, classes, rng);
    for (auto& v : layer.weight.value.data) v = rng.normal();
    Matrix emb(3, std::size_t(e));
    for (auto& v : emb.data) v = rng.normal();
    std::vector<int> labels{0, int(rng.uniform(std::uint64_t(classes))), classes - 1};
    const auto targets = smoothed_targets(0, classes, gamma);
    double entropy = 0.0;
    for (double t : targets) entropy -= t * std::log(t);
    CHECK(smoothed_ce(emb, labels, layer, gamma).loss >= entropy - 1e-12);
  }
}

TEST_CASE("every loss matches finite differences through its head") {
  CHECK(gradcheck_loss(LossKind::triplet, 101, 20).max_rel_error <= 1e-4);
  CHECK(gradcheck_loss(LossKind::binomial, 102, 20).max_rel_error <= 1e-4);
  CHECK(gradcheck_loss(LossKind::proxy_nca, 103, 20).max_rel_error <= 1e-4);
  CHECK(gradcheck_loss(LossKind::smoothed_ce, 104, 20).max_rel_error <= 1e-4);
}
