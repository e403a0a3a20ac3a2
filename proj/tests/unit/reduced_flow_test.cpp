#include <cmath>
#include <numbers>

#include "doctest.h"
#include "helpers.hpp"
#include "mfflow/errors.hpp"
#include "mfflow/reduced_flow.hpp"

using namespace mfflow;

namespace {

constexpr double kPi = std::numbers::pi;

ReducedCloud atoms(const SplitDims& dims, std::vector<double> c, std::vector<double> theta, double weight = 1.0) {
  ReducedCloud out{dims, Eigen::Map<Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size())),
                   Eigen::Map<Eigen::VectorXd>(theta.data(), static_cast<Eigen::Index>(theta.size())),
                   std::vector<int>(c.size()), weight};
  for (std::size_t j = 0; j < c.size(); ++j) out.eps[j] = c[j] >= 0 ? 1 : -1;
  return out;
}

McBatch fixed_batch(std::vector<double> phi, std::vector<double> r, std::vector<double> rp, std::vector<double> s,
                    std::vector<double> sp) {
  auto vec = [](std::vector<double>& v) { return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())); };
  McBatch b;
  b.phi = vec(phi);
  b.r = vec(r);
  b.rp = vec(rp);
  b.s = vec(s);
  b.sp = vec(sp);
  return b;
}

// Scalar reference: one sum per sample, one inner sum per atom.
std::pair<std::vector<double>, std::vector<double>> brute_force_g_v(const ReducedCloud& cloud, const McBatch& b) {
  const int m = cloud.size(), n = b.size();
  std::vector<double> g(m, 0.0), v(m, 0.0);
  for (int j = 0; j < m; ++j) {
    for (int i = 0; i < n; ++i) {
      double fhat = 0.0;
      for (int l = 0; l < m; ++l) fhat += cloud.c[l] * kernel_psi(b.rp[i], b.sp[i], cloud.theta[l], b.phi[i]);
      const double resid = std::cos(b.phi[i]) - cloud.atom_weight * fhat;
      g[j] += kernel_psi(b.r[i], b.s[i], cloud.theta[j], b.phi[i]) * resid;
      v[j] += kernel_chi(b.r[i], b.s[i], cloud.theta[j], b.phi[i]) * resid;
    }
    g[j] /= n;
    v[j] /= n;
  }
  return {g, v};
}

}  // namespace

TEST_SUITE("reduced_flow") {
  TEST_CASE("init_reduced") {
    const SplitDims dims(5, 25);
    RandomSource rng(1);
    const ReducedCloud c = init_reduced(dims, 100'000, rng);
    const SideMasses ms = masses(c);
    CHECK(ms.plus + ms.minus == doctest::Approx(1.0).epsilon(1e-12));
    std::vector<double> c2(static_cast<std::size_t>(c.size()));
    for (int j = 0; j < c.size(); ++j) {
      CHECK(std::abs(c.c[j]) == 1.0);
      CHECK(c.eps[static_cast<std::size_t>(j)] == (c.c[j] > 0 ? 1 : -1));
      c2[static_cast<std::size_t>(j)] = std::cos(c.theta[j]) * std::cos(c.theta[j]);
    }
    CHECK(testing::within_se(mean_and_error(c2), 1.0 / 6.0));
    const ReducedCloud forced = atoms(dims, {1, 1, -1, -1}, {0.1, 0.2, 0.3, 0.4}, 0.25);
    CHECK(masses(forced).plus == 0.5);
    CHECK(masses(forced).minus == 0.5);
    CHECK_THROWS_AS(init_reduced(dims, 0, rng), InvalidArgument);
  }

  TEST_CASE("kernels") {
    CHECK(kernel_psi(1, 0, 0, 0) == 1.0);
    CHECK(kernel_psi(-1, 0, 0, 0) == 0.0);
    CHECK(kernel_psi(0.5, 0.5, kPi / 4, kPi / 4) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(kernel_psi(0.7, -0.3, kPi / 2, 0.0) <= 1e-16);
    CHECK(kernel_chi(1, 0.4, 0, 0) == 0.0);
    CHECK(kernel_chi(-1, 0.0, 0.3, 0.2) == 0.0);
    RandomSource rng(2);
    for (int k = 0; k < 20; ++k) {
      const double r = rng.uniform(-1, 1), s = rng.uniform(-1, 1);
      const double th = rng.uniform(0, kPi / 2), ph = rng.uniform(0, kPi / 2);
      if (std::abs(r * std::cos(ph) * std::cos(th) + s * std::sin(ph) * std::sin(th)) < 1e-3) continue;
      const double h = 1e-6;
      const double fd = (kernel_psi(r, s, th + h, ph) - kernel_psi(r, s, th - h, ph)) / (2 * h);
      CHECK(std::abs(kernel_chi(r, s, th, ph) - fd) < 1e-7);
    }
  }

  TEST_CASE("estimator: hand cases") {
    const SplitDims dims(3, 4);
    const ReducedCloud zero = atoms(dims, {0.0, 0.0}, {0.3, 1.1}, 0.5);
    const McBatch unit_r = fixed_batch({0, 0, 0}, {1, 1, 1}, {1, 1, 1}, {0.2, -0.4, 0.9}, {0.1, 0.1, 0.1});
    const GVEstimate e = estimate_g_v(zero, unit_r);
    CHECK(e.g[0] == doctest::Approx(std::cos(0.3)).epsilon(1e-15));
    CHECK(e.g[1] == doctest::Approx(std::cos(1.1)).epsilon(1e-15));

    const ReducedCloud one = atoms(dims, {1.0, -1.0}, {0.0, 0.0}, 0.5);
    const McBatch dead = fixed_batch({0.1, 0.2}, {-0.5, -0.1}, {0.3, 0.2}, {0.4, 0.4}, {0.1, 0.2});
    const GVEstimate z = estimate_g_v(one, dead);
    CHECK(z.g.isZero(0.0));
    CHECK(z.v.isZero(0.0));
  }

  TEST_CASE("estimator equals the triple loop") {
    const SplitDims dims(2, 3);
    const ReducedCloud c = atoms(dims, {0.8, -1.3}, {0.4, 1.2}, 0.5);
    const McBatch b = fixed_batch({0.3, 0.9, 1.4}, {0.7, -0.2, 0.5}, {0.6, 0.1, -0.9}, {0.2, 0.8, -0.3},
                                  {-0.5, 0.4, 0.7});
    const auto [g, v] = brute_force_g_v(c, b);
    const GVEstimate e = estimate_g_v(c, b);
    const GVEstimate ew = estimate_g_v(c, b, PrefactorMode::OneOverN, true);
    for (int j = 0; j < 2; ++j) {
      CHECK(std::abs(e.g[j] - g[j]) <= 1e-14);
      CHECK(std::abs(e.v[j] - v[j]) <= 1e-14);
      CHECK(std::abs(ew.g[j] - g[j]) <= 1e-14);
      CHECK(std::abs(ew.v[j] - v[j]) <= 1e-14);
    }
    const GVEstimate ed = estimate_g_v(c, b, PrefactorMode::DimensionOverN);
    CHECK(ed.g[0] == doctest::Approx(dims.d() * g[0]).epsilon(1e-13));
  }

  TEST_CASE("estimator is unbiased for the quadrature value") {
    const SplitDims dims(3, 5);
    const auto table = PhiTildeTable::cached(dims);
    const ReducedCloud c = atoms(dims, {1.5, -0.7, 0.9}, {0.2, 1.0, 0.6}, 1.0);
    RandomSource rng(3);
    const GVEstimate e = estimate_g_v(c, McBatch::sample(dims, 400'000, rng), PrefactorMode::OneOverN, true);
    for (int j = 0; j < 3; ++j) {
      const double want = g_quadrature(c, c.theta[j], *table);
      CHECK(std::abs(e.g[j] - want) <= 3.0 * e.g_stderr[j] + 1e-4);
    }
  }

  TEST_CASE("V is the angle derivative of G") {
    const SplitDims dims(3, 5);
    RandomSource rng(4);
    const McBatch b = McBatch::sample(dims, 100'000, rng);
    for (int k = 0; k < 10; ++k) {
      const double th = 0.1 + 0.13 * k;
      const double h = 1e-4;
      // A zero-mass probe atom leaves the residual untouched.
      auto at = [&](double t) { return atoms(dims, {1.2, -0.6, 0.0}, {0.3, 1.2, t}, 1.0); };
      const GVEstimate mid = estimate_g_v(at(th), b);
      const double fd = (estimate_g_v(at(th + h), b).g[2] - estimate_g_v(at(th - h), b).g[2]) / (2 * h);
      CHECK(std::abs(mid.v[2] - fd) < 1e-3);
    }
  }

  TEST_CASE("step_reduced") {
    const SplitDims dims(5, 25);
    RandomSource rng(5);
    const ReducedCloud c = init_reduced(dims, 32, rng);
    const McBatch b = McBatch::sample(dims, 200, rng);
    const ReducedCloud same = step_reduced(c, b, 0.0);
    CHECK(same.c == c.c);
    CHECK(same.theta == c.theta);

    // G = V = 0 when every kernel vanishes
    const ReducedCloud pinned = atoms(SplitDims(3, 4), {1.0}, {0.0}, 1.0);
    const McBatch dead = fixed_batch({0.1}, {-0.5}, {0.3}, {0.4}, {0.1});
    const ReducedCloud moved = step_reduced(pinned, dead, 0.3);
    CHECK(moved.c == pinned.c);
    CHECK(moved.theta == pinned.theta);

    // A step long enough to push 1 + 2 eta eps G below zero for some atom.
    const GVEstimate gv = estimate_g_v(c, b);
    double largest = 0.0;
    for (int j = 0; j < c.size(); ++j)
      if (c.eps[static_cast<std::size_t>(j)] < 0) largest = std::max(largest, gv.g[j]);
    REQUIRE(largest > 0.0);
    const ReducedCloud flip = step_reduced(c, b, 1.0 / largest);
    CHECK(flip.sign_flip_events > 0);
    CHECK(step_reduced(c, b, 0.1 / largest).sign_flip_events == 0);

    ReducedCloud pos = atoms(dims, std::vector<double>(16, 1.0), std::vector<double>(16, 0.7), 1.0 / 16);
    for (int k = 0; k < 20; ++k) {
      pos = step_reduced(std::move(pos), McBatch::sample(dims, 200, rng), 5e-3);
      CHECK(masses(pos).minus == 0.0);
    }

    ReducedCloud blown = c;
    blown.c[0] = std::nan("");
    CHECK_THROWS_AS(step_reduced(blown, b, 0.1, {}, 3), NumericalBlowup);
  }

  TEST_CASE("lifted step agrees with Euler to first order") {
    const SplitDims dims(3, 5);
    RandomSource rng(6);
    const ReducedCloud c = init_reduced(dims, 16, rng);
    const McBatch b = McBatch::sample(dims, 500, rng);
    ReducedStepOptions lifted;
    lifted.scheme = ReducedScheme::Lifted;
    for (double eta : {1e-2, 1e-3}) {
      const ReducedCloud e = step_reduced(c, b, eta);
      const ReducedCloud l = step_reduced(c, b, eta, lifted);
      const double gap = std::max((e.c - l.c).cwiseAbs().maxCoeff(), (e.theta - l.theta).cwiseAbs().maxCoeff());
      CHECK(gap < 10 * eta * eta);
    }
  }

  TEST_CASE("phi_tilde closed form and table") {
    CHECK(phi_tilde(SplitDims(2, 3), 0.0, 0.0, QuadratureSpec::gauss(64)) ==
          doctest::Approx(1.0 / kPi).epsilon(1e-4));
    CHECK(phi_tilde(SplitDims(2, 3), kPi / 2, 0.0, QuadratureSpec::gauss(64)) == doctest::Approx(0.0).scale(1.0));
    const SplitDims dims(5, 25);
    const double k5 = std::tgamma(2.5) / (2 * std::sqrt(kPi) * std::tgamma(3.0));
    const auto table = PhiTildeTable::cached(dims);
    for (double phi : {0.0, 0.5, 1.3}) {
      const double want = std::cos(phi) * k5;
      CHECK(std::abs(phi_tilde(dims, 0.0, phi, QuadratureSpec::gauss(64)) - want) < 1e-4);
      CHECK(std::abs((*table)(0.0, phi) - want) < 1e-4);
    }
    for (double th : {0.2, 0.9}) {
      for (double phi : {0.3, 1.1}) {
        const double exact = phi_tilde(dims, th, phi, QuadratureSpec::gauss(64));
        CHECK(std::abs((*table)(th, phi) - exact) < 1e-4);
      }
    }
  }

  TEST_CASE("reduced predictor") {
    const SplitDims dims(5, 25);
    const auto table = PhiTildeTable::cached(dims);
    CHECK(reduced_predict(atoms(dims, {}, {}), 0.4, *table) == 0.0);
    const double alpha = alpha_expected(5);
    const ReducedCloud best = atoms(dims, {alpha}, {0.0});
    CHECK(reduced_predict(best, 0.0, QuadratureSpec::gauss(64)) == doctest::Approx(1.0).epsilon(1e-4));
    const ReducedCloud cancel = atoms(dims, {0.7, -0.7}, {0.5, 0.5});
    CHECK(reduced_predict(cancel, 0.8, *table) == 0.0);
  }

  TEST_CASE("objective A") {
    const SplitDims dims(5, 25);
    const auto table = PhiTildeTable::cached(dims);
    const ReducedCloud best = atoms(dims, {alpha_expected(5)}, {0.0});
    CHECK(objective_a_quadrature(best, *table) < 1e-8);
    RandomSource rng(7);
    const MeanAndError mc = objective_a(best, 100'000, rng, *table);
    CHECK(std::abs(mc.mean) <= 3.0 * mc.stderr_ + 1e-8);

    const SplitDims even(3, 3);
    const ReducedCloud empty = atoms(even, {0.0}, {0.4});
    const MeanAndError half = objective_a(empty, 200'000, rng, *PhiTildeTable::cached(even));
    CHECK(testing::within_se(half, 0.25));
    CHECK(objective_a_quadrature(empty, *PhiTildeTable::cached(even)) == doctest::Approx(0.25).epsilon(1e-10));
  }

  TEST_CASE("exact quadrature of G, V and A") {
    const SplitDims dims(3, 5);
    const auto table = PhiTildeTable::cached(dims);
    const auto quad = AngleLawQuadrature::cached(dims, 128, 257);
    const ReducedCloud c = atoms(dims, {1.5, -0.7, 0.9}, {0.2, 1.0, 0.6}, 1.0);
    const GVEstimate gv = quad->g_v(c);
    for (int j = 0; j < 3; ++j) CHECK(gv.g[j] == doctest::Approx(g_quadrature(c, c.theta[j], *table)).epsilon(1e-5));
    CHECK(quad->objective(c) == doctest::Approx(objective_a_quadrature(c, *table)).epsilon(1e-6));

    RandomSource rng(31);
    const GVEstimate mc = estimate_g_v(c, McBatch::sample(dims, 400'000, rng), PrefactorMode::OneOverN, true);
    for (int j = 0; j < 3; ++j) {
      CHECK(std::abs(mc.g[j] - gv.g[j]) <= 3.0 * mc.g_stderr[j]);
      CHECK(std::abs(mc.v[j] - gv.v[j]) <= 3.0 * mc.v_stderr[j]);
    }

    // V against a difference quotient of G through a zero-mass probe atom.
    for (double th : {0.15, 0.7, 1.3}) {
      auto at = [&](double t) { return atoms(dims, {1.2, -0.6, 0.0}, {0.3, 1.2, t}, 1.0); };
      const double h = 1e-5;
      const double fd = (quad->g_v(at(th + h)).g[2] - quad->g_v(at(th - h)).g[2]) / (2 * h);
      CHECK(quad->g_v(at(th)).v[2] == doctest::Approx(fd).epsilon(1e-6).scale(1e-3));
    }

    // The optimum single atom is stationary.
    const SplitDims big(5, 25);
    const auto q5 = AngleLawQuadrature::cached(big, 128, 257);
    const ReducedCloud best = atoms(big, {alpha_expected(5)}, {0.0});
    const GVEstimate still = q5->g_v(best);
    CHECK(std::abs(still.g[0]) < 1e-6);
    CHECK(std::abs(still.v[0]) < 1e-6);
    CHECK(q5->objective(best) < 1e-8);
    CHECK_THROWS_AS(step_reduced(best, *quad, 0.1), InvalidArgument);
    const ReducedCloud moved = step_reduced(best, *q5, 0.1);
    CHECK(moved.c[0] == doctest::Approx(best.c[0]).epsilon(1e-5));
  }

  TEST_CASE("alpha") {
    CHECK(alpha_expected(1) == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(alpha_expected(2) == doctest::Approx(kPi).epsilon(1e-14));
    CHECK(alpha_expected(5) == doctest::Approx(16.0 / 3.0).epsilon(1e-14));
  }

  TEST_CASE("side masses and distances") {
    const SplitDims dims(5, 25);
    const ReducedCloud allpos = atoms(dims, {0.4, 0.6}, {0.0, 0.0});
    CHECK(masses(allpos).minus == 0.0);
    CHECK(w2_to_dirac(allpos, Side::Plus, 0.0) == 0.0);
    CHECK_THROWS_AS(w2_to_dirac(allpos, Side::Minus, kPi / 2), UndefinedDistance);
    const ReducedCloud ends = atoms(dims, {1.0, 1.0}, {0.0, kPi / 2});
    CHECK(w2_to_dirac(ends, Side::Plus, 0.0) == doctest::Approx(kPi / (2 * std::sqrt(2.0))).epsilon(1e-14));
    const ReducedCloud mid = atoms(dims, {1.0}, {kPi / 4});
    CHECK(w2_to_dirac(mid, Side::Plus, 0.0) == doctest::Approx(kPi / 4).epsilon(1e-14));
    CHECK(w2_to_dirac(mid, Side::Plus, kPi / 2) == doctest::Approx(kPi / 4).epsilon(1e-14));
  }

  TEST_CASE("angle histogram") {
    const SplitDims dims(5, 25);
    const auto at_zero = angle_histogram(atoms(dims, {2.0}, {0.0}), Side::Plus, 10);
    CHECK(at_zero[0] == 2.0);
    const auto past = angle_histogram(atoms(dims, {-1.0}, {kPi / 2 + 0.01}), Side::Minus, 10);
    CHECK(past.back() == 1.0);
    RandomSource rng(8);
    const ReducedCloud c = init_reduced(dims, 500, rng);
    for (Side side : {Side::Plus, Side::Minus}) {
      const auto h = angle_histogram(c, side, 50);
      double total = 0.0;
      for (double x : h) total += x;
      const SideMasses ms = masses(c);
      CHECK(std::abs(total - (side == Side::Plus ? ms.plus : ms.minus)) <= 1e-12);
    }
  }
}
