#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <set>

#include "support.hpp"

using namespace spatialvb;

namespace {

SelectionModel example_selection(const Matrix& x_star) {
  SelectionModel sel;
  sel.psi_x = Vector(2);
  sel.psi_x << 1.5, 0.5;
  sel.psi_y = -0.1;
  sel.x_star = x_star;
  return sel;
}

// Direct Bernoulli-logit sum, written without softplus.
double naive_selection(const MissingPattern& pattern, const Vector& y, const SelectionModel& sel) {
  double acc = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    const double t = sel.x_star.row(i).dot(sel.psi_x) + sel.psi_y * y(i);
    const double p = 1.0 / (1.0 + std::exp(-t));
    acc += pattern.missing(i) ? std::log(p) : std::log1p(-p);
  }
  return acc;
}

}  // namespace

TEST_CASE("missing pattern bookkeeping") {
  const MissingPattern p = MissingPattern::from_indicator({0, 1, 1, 0, 1});
  CHECK(p.n() == 5);
  CHECK(p.n_o() == 2);
  CHECK(p.n_u() == 3);
  CHECK(p.observed() == IndexList{0, 3});
  CHECK(p.unobserved() == IndexList{1, 2, 4});
  CHECK(p.position_in_missing(2) == 1);
  CHECK(p.position_in_missing(3) == -1);

  Vector y_obs(5);
  y_obs << 1.0, 0.0, 0.0, 4.0, 0.0;
  Vector y_u(3);
  y_u << 2.0, 3.0, 5.0;
  const Vector full = p.assemble(y_obs, y_u);
  Vector expect(5);
  expect << 1, 2, 3, 4, 5;
  CHECK(full == expect);

  CHECK(MissingPattern::all_observed(4).n_u() == 0);
  CHECK_THROWS_AS(MissingPattern::from_indicator({0, 2}), InvalidArgument);
  CHECK_THROWS_AS(p.assemble(y_obs, Vector::Zero(2)), InvalidArgument);
}

TEST_CASE("softplus and logistic are stable") {
  for (double t : {-800.0, -40.0, -1.0, 0.0, 2.5, 40.0, 800.0}) {
    const double sp = softplus(t);
    CHECK(std::isfinite(sp));
    CHECK(sp >= 0.0);
    if (std::abs(t) < 30) CHECK(sp == doctest::Approx(std::log1p(std::exp(t))).epsilon(1e-14));
    const double l = logistic(t);
    CHECK(l >= 0.0);
    CHECK(l <= 1.0);
  }
  CHECK(softplus(800.0) == doctest::Approx(800.0));
  CHECK(logistic(0.0) == 0.5);
}

TEST_CASE("selection log-probability and gradients") {
  Rng rng(17);
  const oracle::Instance inst = oracle::random_instance(4, 5, rng);
  const SelectionModel sel = example_selection(inst.x_star);
  const double lp = selection_log_prob(inst.pattern, inst.y, sel);
  CHECK(lp == doctest::Approx(naive_selection(inst.pattern, inst.y, sel)).epsilon(1e-12));
  CHECK(lp < 0.0);

  // The restricted sum over a set and its complement adds up.
  IndexList a, b;
  for (Index i = 0; i < inst.y.size(); ++i) (i % 3 == 0 ? a : b).push_back(i);
  CHECK(selection_log_prob(inst.pattern, inst.y, sel, a) +
            selection_log_prob(inst.pattern, inst.y, sel, b) ==
        doctest::Approx(lp).epsilon(1e-12));

  // Finite differences for the psi gradient.
  const Vector g = selection_grad_psi(inst.pattern, inst.y, sel);
  REQUIRE(g.size() == 3);
  const double h = 1e-6;
  for (Index j = 0; j < 3; ++j) {
    SelectionModel plus = sel, minus = sel;
    if (j < 2) {
      plus.psi_x(j) += h;
      minus.psi_x(j) -= h;
    } else {
      plus.psi_y += h;
      minus.psi_y -= h;
    }
    const double fd = (selection_log_prob(inst.pattern, inst.y, plus) -
                       selection_log_prob(inst.pattern, inst.y, minus)) /
                      (2 * h);
    CHECK(g(j) == doctest::Approx(fd).epsilon(1e-6));
  }

  // Finite differences for the y_u gradient.
  const Vector gy = selection_grad_yu(inst.pattern, inst.y, sel);
  REQUIRE(gy.size() == inst.pattern.n_u());
  for (Index k = 0; k < inst.pattern.n_u(); ++k) {
    Vector yp = inst.y, ym = inst.y;
    yp(inst.pattern.unobserved()[k]) += h;
    ym(inst.pattern.unobserved()[k]) -= h;
    const double fd = (selection_log_prob(inst.pattern, yp, sel) -
                       selection_log_prob(inst.pattern, ym, sel)) /
                      (2 * h);
    CHECK(gy(k) == doctest::Approx(fd).epsilon(1e-6));
  }

  SelectionModel bad = sel;
  bad.x_star.col(0).setZero();
  CHECK_THROWS_AS(bad.validate(inst.y.size()), InvalidArgument);
}

TEST_CASE("SEM simulation") {
  SimConfig cfg;
  cfg.side = 10;
  cfg.r = 3;
  cfg.seed = 5;
  const SimulatedSem a = simulate_sem(cfg);
  const SimulatedSem b = simulate_sem(cfg);
  CHECK(a.y == b.y);
  CHECK(a.x == b.x);
  CHECK(a.y.size() == 100);
  CHECK(a.x.cols() == 4);
  CHECK((a.x.col(0).array() == 1.0).all());
  for (Index j = 0; j < a.truth.beta.size(); ++j) {
    const double bj = a.truth.beta(j);
    CHECK(bj == std::floor(bj));
    CHECK(bj >= 1.0);
    CHECK(bj <= 5.0);
  }
  cfg.seed = 6;
  CHECK(simulate_sem(cfg).y != a.y);

  cfg.rho_true = 1.0;
  CHECK_THROWS_AS(simulate_sem(cfg), InvalidArgument);
}

TEST_CASE("simulated errors have the SEM covariance") {
  // Moments of v = y - X beta across replicates against sigma2 M^{-1}.
  SimConfig cfg;
  cfg.side = 3;
  cfg.r = 1;
  cfg.rho_true = 0.6;
  cfg.sigma2_true = 2.0;
  const int reps = 40000;
  Matrix acc = Matrix::Zero(9, 9);
  Matrix cov_true;
  for (int k = 0; k < reps; ++k) {
    cfg.seed = 1000 + static_cast<std::uint64_t>(k);
    const SimulatedSem s = simulate_sem(cfg);
    const Vector v = s.y - s.x * s.truth.beta;
    acc += v * v.transpose();
    if (k == 0) cov_true = cfg.sigma2_true * oracle::dense_precision(cfg.rho_true, s.w).inverse();
  }
  acc /= reps;
  for (Index i = 0; i < 9; ++i) {
    for (Index j = 0; j < 9; ++j) {
      const double se = std::sqrt((cov_true(i, i) * cov_true(j, j) + cov_true(i, j) * cov_true(i, j)) /
                                  reps);
      CHECK(std::abs(acc(i, j) - cov_true(i, j)) < 5 * se);
    }
  }
}

TEST_CASE("MAR pattern generation") {
  const Vector y = Vector::Zero(625);
  const MissingPattern p = generate_mar(y, 0.75, 3);
  CHECK(p.n_u() == 469);
  CHECK(generate_mar(y, 0.75, 3).m() == p.m());
  CHECK(generate_mar(y, 0.75, 4).m() != p.m());
  CHECK(generate_mar(Vector::Zero(100), 0.25, 1).n_u() == 25);
  // Half-way cases round to even.
  CHECK(generate_mar(Vector::Zero(10), 0.25, 1).n_u() == 2);
  CHECK_THROWS_AS(generate_mar(y, 0.0, 1), InvalidArgument);
  CHECK_THROWS_AS(generate_mar(y, 1.0, 1), InvalidArgument);
}

TEST_CASE("MNAR pattern generation follows the selection probabilities") {
  SimConfig cfg;
  cfg.seed = 9;
  cfg.mechanism = MnarMechanism{};
  const SimulatedSem s = simulate_sem(cfg);
  const Matrix xs = selection_design(s.x, 0);
  CHECK(xs.cols() == 2);
  CHECK(xs.col(1) == s.x.col(1));
  const SelectionModel sel = example_selection(xs);
  const MissingPattern p = generate_mnar(s.y, sel, 10);
  const Vector t = sel.linear_predictor(s.y);
  double expected = 0.0, var = 0.0;
  for (Index i = 0; i < t.size(); ++i) {
    const double q = logistic(t(i));
    expected += q;
    var += q * (1 - q);
  }
  CHECK(std::abs(static_cast<double>(p.n_u()) - expected) < 4 * std::sqrt(var));
  const double frac = static_cast<double>(p.n_u()) / 625.0;
  CHECK(frac > 0.6);
  CHECK(frac < 0.9);
  CHECK(generate_mnar(s.y, sel, 10).m() == p.m());
  CHECK_THROWS_AS(selection_design(s.x, 10), InvalidArgument);
}

TEST_CASE("block partitions") {
  Rng rng(2);
  const MissingPattern p = oracle::random_pattern(50, 23, rng);
  const BlockPartition part = make_blocks(p, 5, 1);
  CHECK(part.k() == 5);
  CHECK(part.blocks.back().size() == 3u);
  std::set<Index> seen;
  for (const auto& blk : part.blocks) {
    for (Index u : blk) {
      CHECK(p.missing(u));
      CHECK(seen.insert(u).second);
    }
  }
  CHECK(seen.size() == 23u);
  CHECK(make_blocks(p, 5, 1).blocks == part.blocks);
  CHECK(make_blocks(p, 23, 1).k() == 1);
  CHECK(make_blocks(p, 1, 1).k() == 23);
  CHECK_THROWS_AS(make_blocks(p, 0, 1), InvalidArgument);
  CHECK_THROWS_AS(make_blocks(p, 24, 1), InvalidArgument);

  CHECK(default_block_size_mnar(469) == 118);
  CHECK(default_block_size_mnar(2000) == 200);
  CHECK(default_block_size_mnar(1) == 1);
  CHECK(default_block_size_mar(469) == 469);
  CHECK(default_block_size_mar(5000) == 500);
}

TEST_CASE("shuffle is a deterministic permutation") {
  IndexList idx(20);
  for (Index i = 0; i < 20; ++i) idx[i] = i;
  IndexList a = idx, b = idx;
  Rng r1(4), r2(4);
  shuffle_indices(a, r1);
  shuffle_indices(b, r2);
  CHECK(a == b);
  CHECK(a != idx);
  std::sort(a.begin(), a.end());
  CHECK(a == idx);
}
