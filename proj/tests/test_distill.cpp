// Backbone distillation: feature alignment, cosine loss, attention-map KL
// loss, and their weighted combination, with analytic gradients.

#include <cmath>
#include <cstdint>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "disdop/core.hpp"
#include "disdop/distill.hpp"
#include "disdop/errors.hpp"
#include "disdop/harness.hpp"
#include "disdop/matrix.hpp"

namespace {

using namespace disdop;
using distill::BackboneLossConfig;

Matrix random_matrix(harness::SplitMix64& rng, std::size_t r, std::size_t c) {
  Matrix m(r, c);
  for (double& x : m.storage()) x = rng.next_gaussian();
  return m;
}

Matrix identity_matrix(std::size_t n) {
  Matrix m(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

// Independent extended-precision evaluation of the attention loss value.
double attention_loss_reference(const Matrix& ft, const Matrix& fs,
                                double tau_t, double tau_s) {
  const std::size_t n = ft.rows();
  const auto softmax_rows = [n](const Matrix& f, double tau) {
    std::vector<std::vector<long double>> p(n, std::vector<long double>(n));
    for (std::size_t i = 0; i < n; ++i) {
      long double sum = 0.0L;
      for (std::size_t j = 0; j < n; ++j) {
        long double z = 0.0L;
        for (std::size_t k = 0; k < f.cols(); ++k)
          z += static_cast<long double>(f(i, k)) *
               static_cast<long double>(f(j, k));
        p[i][j] = expl(z / tau);
        sum += p[i][j];
      }
      for (std::size_t j = 0; j < n; ++j) p[i][j] /= sum;
    }
    return p;
  };
  const auto pt = softmax_rows(ft, tau_t);
  const auto ps = softmax_rows(fs, tau_s);
  long double acc = 0.0L;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j)
      acc += pt[i][j] * (logl(pt[i][j]) - logl(ps[i][j]));
  }
  return static_cast<double>(acc / static_cast<long double>(n));
}

}  // namespace

TEST_CASE("alignment with identity projection and equal grids is a no-op") {
  FeatureMap f{Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0},
                                  {7.0, 8.0}}),
               Grid{2, 2}};
  const auto out = distill::align_student(f, Grid{2, 2}, 2,
                                          identity_matrix(2));
  CHECK(out.data == f.data);
  REQUIRE(out.grid.has_value());
  CHECK(*out.grid == Grid{2, 2});
}

TEST_CASE("alignment of a constant field stays constant") {
  FeatureMap f{Matrix(4, 3, 2.5), Grid{2, 2}};
  const auto out = distill::align_student(f, Grid{4, 4}, 3,
                                          identity_matrix(3));
  REQUIRE(out.patches() == 16);
  for (double x : out.data.storage())
    CHECK(x == Catch::Approx(2.5).margin(1e-12));
}

TEST_CASE("alignment interpolates between cell centers") {
  // A 2x2 field alternating 0,1 along x, doubled to 4x4. With sample
  // centers at (i + 0.5) / H, the output columns hit 0, 0.25, 0.75, 1 and
  // the rows stay constant.
  FeatureMap f{Matrix::from_rows({{0.0}, {1.0}, {0.0}, {1.0}}), Grid{2, 2}};
  const auto out = distill::align_student(f, Grid{4, 4}, 1,
                                          identity_matrix(1));
  const double expected[4] = {0.0, 0.25, 0.75, 1.0};
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c)
      CHECK(out.data(r * 4 + c, 0) ==
            Catch::Approx(expected[c]).margin(1e-12));
  }
}

TEST_CASE("alignment applies the channel projection") {
  FeatureMap f{Matrix::from_rows({{1.0, 2.0}}), Grid{1, 1}};
  const Matrix proj = Matrix::from_rows({{1.0, 0.0, 1.0}, {0.0, 1.0, 1.0}});
  const auto out = distill::align_student(f, Grid{1, 1}, 3, proj);
  CHECK(out.data == Matrix::from_rows({{1.0, 2.0, 3.0}}));
}

TEST_CASE("alignment rejects malformed requests") {
  FeatureMap no_grid{Matrix(4, 2, 1.0), {}};
  CHECK_THROWS_AS(
      distill::align_student(no_grid, Grid{2, 2}, 2, identity_matrix(2)),
      MissingGrid);

  FeatureMap bad_grid{Matrix(4, 2, 1.0), Grid{3, 2}};
  CHECK_THROWS_AS(
      distill::align_student(bad_grid, Grid{2, 2}, 2, identity_matrix(2)),
      DimensionMismatch);

  FeatureMap ok{Matrix(4, 2, 1.0), Grid{2, 2}};
  CHECK_THROWS_AS(distill::align_student(ok, Grid{0, 2}, 2, identity_matrix(2)),
                  DimensionMismatch);
  CHECK_THROWS_AS(distill::align_student(ok, Grid{2, 2}, 2, Matrix(3, 2, 1.0)),
                  DimensionMismatch);
  CHECK_THROWS_AS(distill::align_student(ok, Grid{2, 2}, 3, identity_matrix(2)),
                  DimensionMismatch);
}

TEST_CASE("cosine loss at perfect alignment") {
  harness::SplitMix64 rng(8);
  const FeatureMap t{random_matrix(rng, 5, 3), {}};
  const auto res = distill::cosine_distill_loss(t, t);
  CHECK(std::abs(res.value) <= 1e-15);
  for (double g : res.grad_student.storage()) CHECK(std::abs(g) <= 1e-12);

  // Cosine ignores positive rescaling of the student.
  FeatureMap doubled = t;
  for (double& x : doubled.data.storage()) x *= 2.0;
  const auto scaled = distill::cosine_distill_loss(t, doubled);
  CHECK(std::abs(scaled.value) <= 1e-15);
}

TEST_CASE("cosine loss extremes and scale invariance") {
  const FeatureMap t{Matrix::from_rows({{1.0, 0.0}, {0.0, 2.0}}), {}};
  FeatureMap opposite = t;
  for (double& x : opposite.data.storage()) x = -x;
  const auto anti = distill::cosine_distill_loss(t, opposite);
  CHECK(anti.value == Catch::Approx(2.0).margin(1e-15));

  harness::SplitMix64 rng(12);
  const FeatureMap teacher{random_matrix(rng, 6, 4), {}};
  FeatureMap student{random_matrix(rng, 6, 4), {}};
  const double base = distill::cosine_distill_loss(teacher, student).value;
  CHECK(base >= 0.0);
  CHECK(base <= 2.0);
  student.data.row(2)[0] *= 3.0;  // not a row rescale: value changes
  const double moved = distill::cosine_distill_loss(teacher, student).value;
  CHECK(moved != Catch::Approx(base).margin(1e-12));
  for (double& x : student.data.row(2)) x *= 0.0625;  // row rescale: no change
  const double rescaled = distill::cosine_distill_loss(teacher, student).value;
  CHECK(rescaled == Catch::Approx(moved).margin(1e-12));
}

TEST_CASE("cosine loss gradient matches finite differences") {
  harness::SplitMix64 rng(77);
  const FeatureMap t{random_matrix(rng, 4, 3), {}};
  const FeatureMap s{random_matrix(rng, 4, 3), {}};
  const auto res = distill::cosine_distill_loss(t, s);
  const auto loss = [&](const Vector& params) {
    FeatureMap probe{Matrix(4, 3), {}};
    probe.data.storage() = params;
    return distill::cosine_distill_loss(t, probe).value;
  };
  const Vector numeric =
      harness::finite_difference_gradient(loss, s.data.storage(), 1e-6);
  const auto check =
      harness::gradient_check(res.grad_student.storage(), numeric, 1e-4);
  CHECK(check.pass);
}

TEST_CASE("cosine loss failure modes") {
  const FeatureMap t{Matrix(2, 2, 1.0), {}};
  CHECK_THROWS_AS(
      distill::cosine_distill_loss(t, FeatureMap{Matrix(3, 2, 1.0), {}}),
      DimensionMismatch);
  CHECK_THROWS_AS(
      distill::cosine_distill_loss(t, FeatureMap{Matrix(2, 3, 1.0), {}}),
      DimensionMismatch);
  FeatureMap zero{Matrix(2, 2, 1.0), {}};
  zero.data(1, 0) = 0.0;
  zero.data(1, 1) = 0.0;
  CHECK_THROWS_AS(distill::cosine_distill_loss(t, zero), ZeroRow);
  CHECK_THROWS_AS(distill::cosine_distill_loss(zero, t), ZeroRow);
}

TEST_CASE("attention loss vanishes for identical maps at equal temperature") {
  harness::SplitMix64 rng(15);
  const FeatureMap f{random_matrix(rng, 6, 3), {}};
  const auto res = distill::attention_distill_loss(f, f, 0.5, 0.5);
  CHECK(res.value == 0.0);  // identical softmaxes term-by-term
  for (double g : res.grad_student.storage()) CHECK(g == 0.0);
}

TEST_CASE("attention loss with mismatched temperatures is positive") {
  harness::SplitMix64 rng(16);
  const FeatureMap f{random_matrix(rng, 5, 3), {}};
  const auto res = distill::attention_distill_loss(f, f, 0.1, 1.0);
  CHECK(res.value > 0.0);
  const double want = attention_loss_reference(f.data, f.data, 0.1, 1.0);
  CHECK(res.value == Catch::Approx(want).epsilon(1e-10).margin(1e-12));
}

TEST_CASE("attention loss value matches the extended-precision reference") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    harness::SplitMix64 rng(seed);
    const std::size_t n = 2 + seed % 5;
    const FeatureMap t{random_matrix(rng, n, 3), {}};
    const FeatureMap s{random_matrix(rng, n, 4), {}};
    const auto res = distill::attention_distill_loss(t, s, 0.1, 1.0);
    const double want = attention_loss_reference(t.data, s.data, 0.1, 1.0);
    CHECK(res.value >= -1e-12);  // relative-entropy nonnegativity
    CHECK(res.value == Catch::Approx(want).epsilon(1e-9).margin(1e-12));
  }
}

TEST_CASE("attention loss gradient matches finite differences") {
  harness::SplitMix64 rng(99);
  const FeatureMap t{random_matrix(rng, 5, 3), {}};
  const FeatureMap s{random_matrix(rng, 5, 4), {}};
  const auto res = distill::attention_distill_loss(t, s, 0.1, 1.0);
  const auto loss = [&](const Vector& params) {
    FeatureMap probe{Matrix(5, 4), {}};
    probe.data.storage() = params;
    return distill::attention_distill_loss(t, probe, 0.1, 1.0).value;
  };
  const Vector numeric =
      harness::finite_difference_gradient(loss, s.data.storage(), 1e-6);
  const auto check =
      harness::gradient_check(res.grad_student.storage(), numeric, 1e-4);
  CHECK(check.pass);
}

TEST_CASE("attention loss failure modes") {
  const FeatureMap t{Matrix(3, 2, 1.0), {}};
  CHECK_THROWS_AS(
      distill::attention_distill_loss(t, FeatureMap{Matrix(2, 2, 1.0), {}},
                                      0.1, 1.0),
      DimensionMismatch);
  const FeatureMap one{Matrix(1, 2, 1.0), {}};
  CHECK_THROWS_AS(distill::attention_distill_loss(one, one, 0.1, 1.0),
                  DimensionMismatch);
  CHECK_THROWS_AS(distill::attention_distill_loss(t, t, 0.0, 1.0),
                  InvalidConfig);
  CHECK_THROWS_AS(distill::attention_distill_loss(t, t, 0.1, -1.0),
                  InvalidConfig);
}

TEST_CASE("losses are permutation equivariant") {
  harness::SplitMix64 rng(31);
  const std::size_t n = 6;
  const FeatureMap t{random_matrix(rng, n, 3), {}};
  const FeatureMap s{random_matrix(rng, n, 3), {}};

  std::vector<std::size_t> pi(n);
  for (std::size_t i = 0; i < n; ++i) pi[i] = (5 * i + 3) % n;
  FeatureMap tp{Matrix(n, 3), {}};
  FeatureMap sp{Matrix(n, 3), {}};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < 3; ++k) {
      tp.data(pi[i], k) = t.data(i, k);
      sp.data(pi[i], k) = s.data(i, k);
    }
  }

  const auto base_cos = distill::cosine_distill_loss(t, s);
  const auto perm_cos = distill::cosine_distill_loss(tp, sp);
  CHECK(perm_cos.value == Catch::Approx(base_cos.value).margin(1e-12));

  const auto base_att = distill::attention_distill_loss(t, s, 0.1, 1.0);
  const auto perm_att = distill::attention_distill_loss(tp, sp, 0.1, 1.0);
  CHECK(perm_att.value == Catch::Approx(base_att.value).margin(1e-12));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(perm_cos.grad_student(pi[i], k) ==
            Catch::Approx(base_cos.grad_student(i, k)).margin(1e-12));
      CHECK(perm_att.grad_student(pi[i], k) ==
            Catch::Approx(base_att.grad_student(i, k)).margin(1e-12));
    }
  }
}

TEST_CASE("combined loss reduces to its single active component") {
  harness::SplitMix64 rng(44);
  const FeatureMap t{random_matrix(rng, 4, 3), {}};
  const FeatureMap s{random_matrix(rng, 4, 3), {}};

  BackboneLossConfig only_cos;
  only_cos.lambda_attn = 0.0;
  const auto combined = distill::backbone_loss(t, s, only_cos);
  const auto direct = distill::cosine_distill_loss(t, s);
  CHECK(combined.value == direct.value);  // bit-identical
  CHECK(combined.grad_student == direct.grad_student);

  BackboneLossConfig only_att;
  only_att.lambda_cosine = 0.0;
  only_att.tau_t = 0.5;
  only_att.tau_s = 0.5;
  const auto att_only = distill::backbone_loss(t, t, only_att);
  CHECK(att_only.value == 0.0);
}

TEST_CASE("combined loss is the weighted sum of its parts") {
  harness::SplitMix64 rng(45);
  const FeatureMap t{random_matrix(rng, 4, 3), {}};
  const FeatureMap s{random_matrix(rng, 4, 3), {}};

  BackboneLossConfig cfg;  // both weights 1
  const auto both = distill::backbone_loss(t, s, cfg);
  const auto lc = distill::cosine_distill_loss(t, s);
  const auto la = distill::attention_distill_loss(t, s, cfg.tau_t, cfg.tau_s);
  CHECK(both.value == 1.0 * lc.value + 1.0 * la.value);
  for (std::size_t k = 0; k < both.grad_student.storage().size(); ++k)
    CHECK(both.grad_student.storage()[k] ==
          1.0 * lc.grad_student.storage()[k] +
              1.0 * la.grad_student.storage()[k]);

  BackboneLossConfig weighted;
  weighted.lambda_cosine = 0.3;
  weighted.lambda_attn = 0.7;
  const auto mix = distill::backbone_loss(t, s, weighted);
  CHECK(mix.value == 0.3 * lc.value + 0.7 * la.value);
}

TEST_CASE("combined loss configuration guards") {
  BackboneLossConfig cfg;
  CHECK(cfg.tau_t == 0.1);
  CHECK(cfg.tau_s == 1.0);
  CHECK_NOTHROW(cfg.validate());
  BackboneLossConfig bad = cfg;
  bad.tau_t = 0.0;
  CHECK_THROWS_AS(bad.validate(), InvalidConfig);
  bad = cfg;
  bad.tau_s = -1.0;
  CHECK_THROWS_AS(bad.validate(), InvalidConfig);
  bad = cfg;
  bad.lambda_cosine = -0.1;
  CHECK_THROWS_AS(bad.validate(), InvalidConfig);
  bad = cfg;
  bad.lambda_cosine = 0.0;
  bad.lambda_attn = 0.0;
  CHECK_THROWS_AS(bad.validate(), InvalidConfig);
}

TEST_CASE("combined loss gradient matches finite differences") {
  harness::SplitMix64 rng(46);
  const FeatureMap t{random_matrix(rng, 4, 3), {}};
  const FeatureMap s{random_matrix(rng, 4, 3), {}};
  BackboneLossConfig cfg;
  const auto res = distill::backbone_loss(t, s, cfg);
  const auto loss = [&](const Vector& params) {
    FeatureMap probe{Matrix(4, 3), {}};
    probe.data.storage() = params;
    return distill::backbone_loss(t, probe, cfg).value;
  };
  const Vector numeric =
      harness::finite_difference_gradient(loss, s.data.storage(), 1e-6);
  const auto check =
      harness::gradient_check(res.grad_student.storage(), numeric, 1e-4);
  CHECK(check.pass);
}

TEST_CASE("descent on the combined loss converges on the small fixture") {
  auto [teacher, student] = harness::backbone_descent_fixture();
  const BackboneLossConfig cfg;
  const std::size_t n = student.patches();
  const std::size_t d = student.dim();

  const auto loss_and_grad = [&](const Vector& params, Vector& grad) {
    FeatureMap probe{Matrix(n, d), {}};
    probe.data.storage() = params;
    const auto res = distill::backbone_loss(teacher, probe, cfg);
    grad = res.grad_student.storage();
    return res.value;
  };

  harness::DescentConfig dc;
  dc.learning_rate = 0.5;  // reaches ~1% of the initial value in 500 steps
  const auto trace =
      harness::toy_descent(loss_and_grad, student.data.storage(), dc);
  const double initial = trace.trajectory.front().second;
  CHECK(trace.final_value <= 0.05 * initial);
  // Monotone decline once past the first few steps.
  for (std::size_t k = 1; k + 1 < trace.trajectory.size(); ++k) {
    CHECK(trace.trajectory[k + 1].second <=
          trace.trajectory[k].second + 1e-12);
  }
}
