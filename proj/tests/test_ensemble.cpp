#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "wedl/ensemble.hpp"
#include "wedl/gradcheck.hpp"

using namespace wedl;

namespace {

Matrix rows(const std::vector<std::vector<double>>& rs) {
  Matrix m(rs.size(), rs[0].size());
  for (std::size_t i = 0; i < rs.size(); ++i)
    for (std::size_t j = 0; j < rs[i].size(); ++j) m(i, j) = rs[i][j];
  return m;
}

EnsembleModel small_model(EnsembleMode mode, int feature_dim, int classes, std::uint64_t seed) {
  EnsembleConfig cfg;
  cfg.mode = mode;
  cfg.embed_dim = 4;
  Rng rng(seed);
  return EnsembleModel::create(cfg, feature_dim, classes, rng);
}

}  // namespace

TEST_CASE("loss normalization maps each loss through its mean ratio") {
  SECTION("losses at their own means land on the grand mean") {
    EmaState ema{{2.0, 4.0}, 2.0, 1};
    const auto lhat = normalize_losses({2.0, 4.0}, ema);
    CHECK_THAT(lhat[0], Catch::Matchers::WithinAbs(3.0, 1e-12));
    CHECK_THAT(lhat[1], Catch::Matchers::WithinAbs(3.0, 1e-12));
  }
  SECTION("direct evaluation") {
    EmaState ema{{2.0, 4.0}, 2.0, 1};
    const auto lhat = normalize_losses({4.0, 4.0}, ema);
    CHECK_THAT(lhat[0], Catch::Matchers::WithinAbs(6.0, 1e-12));
    CHECK_THAT(lhat[1], Catch::Matchers::WithinAbs(3.0, 1e-12));
  }
  SECTION("a single member passes through unchanged") {
    EmaState ema{{0.7}, 2.0, 1};
    CHECK(normalize_losses({0.33}, ema)[0] == 0.33);
  }
  SECTION("uninitialized state is rejected") {
    EmaState ema;
    CHECK_THROWS(normalize_losses({1.0}, ema));
  }
}

TEST_CASE("ema update follows the clamped smoothing schedule") {
  SECTION("weight 1 at the first update replaces the mean") {
    EmaState ema{{5.0}, 2.0, 1};
    ema_update(ema, {9.0});
    CHECK(ema.means[0] == 9.0);
    CHECK(ema.iteration == 2);
  }
  SECTION("weight 0.5 at k=3 interpolates") {
    EmaState ema{{5.0}, 2.0, 3};
    ema_update(ema, {9.0});
    CHECK_THAT(ema.means[0], Catch::Matchers::WithinAbs(7.0, 1e-12));
  }
  SECTION("raw equal to the mean is a fixed point") {
    EmaState ema{{5.0, 0.25}, 2.0, 7};
    ema_update(ema, {5.0, 0.25});
    CHECK(ema.means[0] == 5.0);
    CHECK(ema.means[1] == 0.25);
  }
}

TEST_CASE("ema initialization echoes the first raw losses with a floor") {
  const EmaState a = init_ema({3.0, 6.0});
  CHECK(a.means == std::vector<double>{3.0, 6.0});
  CHECK(a.iteration == 1);

  const EmaState b = init_ema({0.0, 2.0});
  CHECK(b.means[0] == 1e-12);

  Rng rng(3);
  std::vector<double> raw(4);
  for (auto& r : raw) r = 0.1 + rng.uniform_real();
  CHECK(init_ema(raw).means == raw);
}

TEST_CASE("after initialization, normalization is exact at the means") {
  const std::vector<double> raw{0.8, 2.5, 0.02, 7.0};
  const EmaState ema = init_ema(raw);
  const auto lhat = normalize_losses(raw, ema);
  double grand = 0.0;
  for (double m : ema.means) grand += m;
  grand /= double(ema.means.size());
  for (double v : lhat) CHECK_THAT(v, Catch::Matchers::WithinAbs(grand, 1e-12));
}

TEST_CASE("constant raw streams equalize within 1 percent after 100 cycles") {
  const std::vector<double> raw{10.0, 0.1};
  EmaState ema = init_ema(raw);
  std::vector<double> lhat;
  for (int step = 0; step < 100; ++step) {
    lhat = normalize_losses(raw, ema);
    ema_update(ema, raw);
  }
  const double mean = 0.5 * (lhat[0] + lhat[1]);
  CHECK(std::abs(lhat[0] - lhat[1]) / mean <= 1e-2);
}

TEST_CASE("uniform scaling of raw losses leaves normalized ratios unchanged") {
  const std::vector<double> raw{3.0, 0.4, 1.1};
  std::vector<double> scaled(raw);
  for (auto& r : scaled) r *= 17.0;
  EmaState a = init_ema(raw), b = init_ema(scaled);
  std::vector<double> la, lb;
  for (int step = 0; step < 50; ++step) {
    la = normalize_losses(raw, a);
    lb = normalize_losses(scaled, b);
    ema_update(a, raw);
    ema_update(b, scaled);
  }
  for (std::size_t j = 1; j < raw.size(); ++j)
    CHECK_THAT(la[j] / la[0], Catch::Matchers::WithinAbs(lb[j] / lb[0], 1e-9));
}

TEST_CASE("effective weights and the simplex penalty") {
  SECTION("all-zero coefficients sit on the floor") {
    const auto wp = effective_weights({0.0, 0.0, 0.0, 0.0}, 1.0 / 16.0, 100.0);
    for (double w : wp.weights) CHECK(w == 0.0625);
    CHECK_THAT(wp.sum, Catch::Matchers::WithinAbs(0.25, 1e-12));
    CHECK_THAT(wp.penalty, Catch::Matchers::WithinAbs(56.25, 1e-9));
  }
  SECTION("the symmetric constraint point has zero penalty") {
    const double c = std::sqrt(0.1875);
    const auto wp = effective_weights({c, c, c, c}, 1.0 / 16.0, 100.0);
    CHECK_THAT(wp.sum, Catch::Matchers::WithinAbs(1.0, 1e-12));
    CHECK_THAT(wp.penalty, Catch::Matchers::WithinAbs(0.0, 1e-12));
  }
  SECTION("direct evaluation at M=2") {
    const auto wp = effective_weights({1.0, 0.0}, 0.125, 100.0);
    CHECK(wp.weights[0] == 1.125);
    CHECK(wp.weights[1] == 0.125);
    CHECK_THAT(wp.penalty, Catch::Matchers::WithinAbs(6.25, 1e-9));
  }
  SECTION("weights never drop below the floor") {
    Rng rng(5);
    for (int it = 0; it < 50; ++it) {
      std::vector<double> c(4);
      for (auto& x : c) x = rng.normal() * 3.0;
      const auto wp = effective_weights(c, 1.0 / 16.0, 100.0);
      for (double w : wp.weights) CHECK(w >= 1.0 / 16.0);
    }
  }
}

TEST_CASE("diversity boundary cases") {
  Rng rng(7);
  Matrix base(6, 4);
  for (auto& v : base.data) v = rng.normal();
  const Matrix unit = normalize_rows(base).unit;

  SECTION("identical heads give the full hinge") {
    const DiversityResult r = diversity({unit, unit, unit});
    CHECK_THAT(r.mean_distance, Catch::Matchers::WithinAbs(0.0, 1e-12));
    CHECK(r.loss == 2.0);
  }
  SECTION("pairwise orthogonal heads sit exactly on the hinge") {
    const Matrix a = rows({{1.0, 0.0, 0.0}, {1.0, 0.0, 0.0}});
    const Matrix b = rows({{0.0, 1.0, 0.0}, {0.0, 1.0, 0.0}});
    const Matrix c = rows({{0.0, 0.0, 1.0}, {0.0, 0.0, 1.0}});
    const DiversityResult r = diversity({a, b, c});
    CHECK_THAT(r.mean_distance, Catch::Matchers::WithinAbs(2.0, 1e-12));
    CHECK(r.loss == 0.0);
    for (const Matrix& g : r.grad_embs)
      for (double v : g.data) CHECK(v == 0.0);
  }
  SECTION("antipodal heads reach the maximum squared distance 4") {
    Matrix neg = unit;
    for (auto& v : neg.data) v = -v;
    const DiversityResult r = diversity({unit, neg});
    CHECK_THAT(r.mean_distance, Catch::Matchers::WithinAbs(4.0, 1e-12));
    CHECK(r.loss == 0.0);
  }
  SECTION("fewer than two heads is rejected") { CHECK_THROWS(diversity({unit})); }
}

TEST_CASE("diversity loss stays in [0, 2]") {
  Rng rng(9);
  for (int it = 0; it < 20; ++it) {
    std::vector<Matrix> units;
    const int m = 2 + int(rng.uniform(3));
    for (int j = 0; j < m; ++j) {
      Matrix e(5, 3);
      for (auto& v : e.data) v = rng.normal();
      units.push_back(normalize_rows(e).unit);
    }
    const DiversityResult r = diversity(units);
    CHECK(r.loss >= 0.0);
    CHECK(r.loss <= 2.0);
  }
}

TEST_CASE("combined objective spot values") {
  CHECK_THAT(combine_total({0.5, 0.5}, {3.0, 3.0}, 0.0, 0.0, 0.0),
             Catch::Matchers::WithinAbs(3.0, 1e-12));
  CHECK_THAT(combine_total({0.5, 0.5}, {6.0, 3.0}, 0.0, 0.01, 2.0),
             Catch::Matchers::WithinAbs(4.52, 1e-12));
}

TEST_CASE("ensemble distance spot values") {
  SECTION("identical points have zero distance") {
    const Matrix x = rows({{1.0, 0.0}, {0.6, 0.8}});
    CHECK_THAT(ensemble_distance(x, x, {0.3, 0.7}), Catch::Matchers::WithinAbs(0.0, 1e-12));
  }
  SECTION("orthogonal unit vectors at weight 1 give 2") {
    const Matrix x = rows({{1.0, 0.0}});
    const Matrix y = rows({{0.0, 1.0}});
    CHECK_THAT(ensemble_distance(x, y, {1.0}), Catch::Matchers::WithinAbs(2.0, 1e-12));
  }
  SECTION("mixed heads average their squared distances") {
    const Matrix x = rows({{1.0, 0.0}, {0.6, 0.8}});
    const Matrix y = rows({{0.0, 1.0}, {0.6, 0.8}});
    CHECK_THAT(ensemble_distance(x, y, {0.5, 0.5}), Catch::Matchers::WithinAbs(1.0, 1e-12));
  }
  SECTION("literal printed form drops the factor of two") {
    const Matrix x = rows({{1.0, 0.0}});
    const Matrix y = rows({{0.0, 1.0}});
    CHECK_THAT(ensemble_distance(x, y, {1.0}, true), Catch::Matchers::WithinAbs(2.0, 1e-12));
    const Matrix same = rows({{1.0, 0.0}});
    CHECK_THAT(ensemble_distance(x, same, {1.0}, true), Catch::Matchers::WithinAbs(1.0, 1e-12));
  }
}

TEST_CASE("ensemble distance is symmetric and vanishes only on agreement") {
  Rng rng(11);
  for (int it = 0; it < 10; ++it) {
    Matrix x(3, 4), y(3, 4);
    for (auto& v : x.data) v = rng.normal();
    for (auto& v : y.data) v = rng.normal();
    const Matrix xu = normalize_rows(x).unit;
    const Matrix yu = normalize_rows(y).unit;
    const std::vector<double> w{0.2, 0.5, 0.3};
    const double dxy = ensemble_distance(xu, yu, w);
    const double dyx = ensemble_distance(yu, xu, w);
    CHECK_THAT(dxy, Catch::Matchers::WithinAbs(dyx, 1e-12));
    CHECK(dxy >= -1e-12);
    CHECK(ensemble_distance(xu, xu, w) <= 1e-12);
  }
}

TEST_CASE("full objective matches finite differences in every mode") {
  CHECK(gradcheck_objective(EnsembleMode::wedl, 201, 8).max_rel_error <= 1e-4);
  CHECK(gradcheck_objective(EnsembleMode::wel, 202, 8).max_rel_error <= 1e-4);
  CHECK(gradcheck_objective(EnsembleMode::wel_equal, 203, 8).max_rel_error <= 1e-4);
}

TEST_CASE("training for zero epochs leaves the model untouched") {
  Rng data_rng(13);
  const FeatureDataset ds = synth_gaussians(6, 6, 5, 3.0, Warp::none, data_rng);
  EnsembleModel model = small_model(EnsembleMode::wedl, 5, 6, 17);
  const Matrix before = model.heads[0].weight.value;
  TrainConfig tc;
  tc.epochs = 0;
  Rng train_rng(1);
  const auto log = train(model, ds, tc, train_rng);
  CHECK(log.empty());
  CHECK(model.heads[0].weight.value.data == before.data);
}

TEST_CASE("training is deterministic for a fixed seed") {
  Rng data_rng(15);
  const FeatureDataset ds = synth_gaussians(6, 8, 5, 3.0, Warp::tanh_mix, data_rng);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_classes = 3;
  tc.batch_per_class = 2;

  auto run_once = [&]() {
    EnsembleModel model = small_model(EnsembleMode::wedl, 5, 6, 19);
    Rng train_rng(23);
    return std::pair(train(model, ds, tc, train_rng), model.heads[0].weight.value.data);
  };
  const auto [log_a, head_a] = run_once();
  const auto [log_b, head_b] = run_once();
  REQUIRE(log_a.size() == log_b.size());
  for (std::size_t i = 0; i < log_a.size(); ++i) {
    CHECK(log_a[i].raw == log_b[i].raw);
    CHECK(log_a[i].normalized == log_b[i].normalized);
    CHECK(log_a[i].weights == log_b[i].weights);
    CHECK(log_a[i].total == log_b[i].total);
  }
  CHECK(head_a == head_b);
}

TEST_CASE("training reduces the combined loss on an easy synthetic task") {
  Rng data_rng(29);
  const FeatureDataset full = synth_gaussians(10, 12, 8, 4.0, Warp::none, data_rng);
  EnsembleModel model = small_model(EnsembleMode::wedl, 8, 10, 31);
  TrainConfig tc;
  tc.epochs = 20;
  tc.batch_classes = 4;
  tc.batch_per_class = 3;
  Rng train_rng(37);
  const auto log = train(model, full, tc, train_rng);
  REQUIRE(log.size() == 20);
  CHECK(log.back().total < log.front().total);
}

TEST_CASE("wedl holds one head per loss, shared modes hold one") {
  CHECK(small_model(EnsembleMode::wedl, 5, 4, 1).heads.size() == 4);
  CHECK(small_model(EnsembleMode::wel, 5, 4, 1).heads.size() == 1);
  CHECK(small_model(EnsembleMode::wel_equal, 5, 4, 1).heads.size() == 1);
}

TEST_CASE("equal-weight modes fix the weights at 1/M") {
  EnsembleModel model = small_model(EnsembleMode::wel_equal, 5, 4, 1);
  const auto w = model.loss_weights();
  for (double v : w) CHECK(v == 0.25);
  CHECK_FALSE(model.learns_coefficients());

  EnsembleConfig cfg;
  cfg.mode = EnsembleMode::wedl;
  cfg.equal_weights = true;
  cfg.embed_dim = 4;
  Rng rng(2);
  EnsembleModel ablated = EnsembleModel::create(cfg, 5, 4, rng);
  CHECK_FALSE(ablated.learns_coefficients());
  CHECK(ablated.uses_diversity());
  for (double v : ablated.loss_weights()) CHECK(v == 0.25);
}

TEST_CASE("coefficients start exactly on the constraint surface") {
  EnsembleModel model = small_model(EnsembleMode::wedl, 5, 4, 3);
  const auto wp = effective_weights(
      std::vector<double>(model.coeffs.value.data.begin(), model.coeffs.value.data.end()),
      model.alpha_w(), model.cfg.eta);
  CHECK_THAT(wp.sum, Catch::Matchers::WithinAbs(1.0, 1e-12));
  for (double w : wp.weights) CHECK_THAT(w, Catch::Matchers::WithinAbs(0.25, 1e-12));
}

TEST_CASE("training diverges loudly on a poisoned model") {
  Rng data_rng(41);
  const FeatureDataset ds = synth_gaussians(4, 6, 5, 3.0, Warp::none, data_rng);
  EnsembleModel model = small_model(EnsembleMode::wedl, 5, 4, 43);
  model.heads[0].weight.value(0, 0) = std::numeric_limits<double>::infinity();
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_classes = 2;
  tc.batch_per_class = 2;
  Rng train_rng(1);
  CHECK_THROWS_WITH(train(model, ds, tc, train_rng),
                    Catch::Matchers::ContainsSubstring("epoch 1"));
}
