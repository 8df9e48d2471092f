#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>

#include "oracles.hpp"
#include "spinrelax/perturbation.hpp"

using namespace spinrelax;
using Catch::Approx;

namespace {
const CellGeometry kGeom(0.2, 50, 48);
const SpinParams kSpin(0.2, 1.0, 20.0, 1.0);
constexpr double kGradient = 1000.0;  // gamma g = 1e3 s^-1/cm with gamma = 1

double closed_form_rate2(int m, double gg, double L, double D) {
  const double pi4 = std::pow(kPi, 4);
  double coeff = 0.0;
  switch (m) {
    case 1: coeff = (15.0 - kPi * kPi) / (48.0 * pi4); break;
    case 2: coeff = (15.0 - 4.0 * kPi * kPi) / (768.0 * pi4); break;
    case 3: coeff = -(3.0 * kPi * kPi - 5.0) / (1296.0 * pi4); break;
    default: throw std::runtime_error("no closed form");
  }
  return gg * gg * L * L * L * L / D * coeff;
}
}  // namespace

TEST_CASE("perturbation parameter reproduces the reported validity value", "[perturbation]") {
  const double p = perturbation_parameter(kGeom, kSpin, kGradient);
  // Exact arithmetic value of 16 gamma g L^3 / (27 pi^4 D); reported rounded
  // to two decimals as 0.24.
  CHECK(p == Approx(0.2433418015925177).epsilon(1e-12));
  CHECK(std::round(p * 100.0) / 100.0 == Approx(0.24).margin(1e-12));

  CHECK(perturbation_parameter(kGeom, kSpin, 0.0) == 0.0);

  const CellGeometry doubled(0.4, 50, 48);
  CHECK(perturbation_parameter(doubled, kSpin, kGradient) ==
        Approx(8.0 * p).epsilon(1e-12));

  CHECK_FALSE(perturbation_regime_marginal(kGeom, kSpin, kGradient));
  CHECK(perturbation_regime_marginal(kGeom, kSpin, 2.0 * kGradient));
}

TEST_CASE("effective frequency equals the diagonal gradient matrix element", "[perturbation]") {
  CHECK(effective_frequency(kGeom, kSpin, kGradient) == Approx(100.0).epsilon(1e-13));
  CHECK(effective_frequency(kGeom, kSpin, 0.0) == 0.0);

  // Same value through the diagonal matrix element for different modes.
  for (int m : {1, 3}) {
    const double diag = gradient_matrix_element(kGeom, Axis::X, {m, 1, 1}, {m, 1, 1});
    CHECK(kSpin.gyro * kGradient * diag == Approx(100.0).epsilon(1e-13));
  }
}

TEST_CASE("second-order rate converges to the closed forms", "[perturbation][oracle]") {
  for (int m : {1, 2, 3}) {
    const double summed = second_order_rate(kGeom, kSpin, kGradient, {m, 1, 1});
    const double closed = closed_form_rate2(m, kGradient, 0.2, 0.2);
    CHECK(summed == Approx(closed).epsilon(1e-6));
  }
  // Signs as in the closed forms: positive for m = 1, negative for m = 2, 3.
  CHECK(second_order_rate(kGeom, kSpin, kGradient, {1, 1, 1}) > 0.0);
  CHECK(second_order_rate(kGeom, kSpin, kGradient, {2, 1, 1}) < 0.0);
  CHECK(second_order_rate(kGeom, kSpin, kGradient, {3, 1, 1}) < 0.0);

  // Frozen reference values for gamma g = 1e3, L = 0.2, D = 0.2.
  CHECK(second_order_rate(kGeom, kSpin, kGradient, {1, 1, 1}) ==
        Approx(8.778091696321214).epsilon(1e-6));
  CHECK(second_order_rate(kGeom, kSpin, kGradient, {3, 1, 1}) ==
        Approx(-1.559466911441924).epsilon(1e-6));
}

TEST_CASE("second-order rate scaling laws hold exactly", "[perturbation]") {
  const double base = second_order_rate(kGeom, kSpin, kGradient, {1, 1, 1});

  CHECK(second_order_rate(kGeom, kSpin, 2.0 * kGradient, {1, 1, 1}) ==
        Approx(4.0 * base).epsilon(1e-14));
  CHECK(second_order_rate(kGeom, kSpin, 0.0, {1, 1, 1}) == 0.0);
  CHECK(second_order_rate(kGeom, kSpin, 0.0, {2, 1, 1}) == 0.0);

  // Motional narrowing: proportional to 1/D at fixed gamma g and L.
  const SpinParams faster(0.4, 1.0, 20.0, 1.0);
  CHECK(second_order_rate(kGeom, faster, kGradient, {1, 1, 1}) ==
        Approx(0.5 * base).epsilon(1e-12));

  // Independent of n, l for a gradient along x.
  CHECK(second_order_rate(kGeom, kSpin, kGradient, {1, 3, 5}) == Approx(base).epsilon(1e-14));
}

TEST_CASE("second-order rate is converged in the truncation", "[perturbation]") {
  const CellGeometry coarse(0.2, 50, 48);
  const CellGeometry fine(0.2, 100, 48);
  for (int m : {1, 2, 3}) {
    const double a = second_order_rate(coarse, kSpin, kGradient, {m, 1, 1});
    const double b = second_order_rate(fine, kSpin, kGradient, {m, 1, 1});
    CHECK(a == Approx(b).epsilon(1e-6));
  }
}

TEST_CASE("mode weights: normalization, limits, frozen values", "[perturbation]") {
  double sum = 0.0;
  for (int m = 1; m <= 3; m += 2)
    for (int n = 1; n <= 3; n += 2)
      for (int l = 1; l <= 3; l += 2) sum += mode_weight(kGeom, kSpin, {m, n, l});
  CHECK(sum == Approx(1.0).epsilon(1e-12));

  // Gamma0-dominated limit: weights approach 1/(mnl)^2 ratios.
  const SpinParams huge(0.2, 1.0, 2.0e6, 1.0);
  CHECK(mode_weight(kGeom, huge, {1, 1, 1}) / mode_weight(kGeom, huge, {3, 1, 1}) ==
        Approx(9.0).epsilon(1e-3));

  // Direct-evaluation values for L = 0.2, D = 0.2.
  CHECK(mode_weight(kGeom, kSpin, {1, 1, 1}) == Approx(0.9040010655951402).epsilon(1e-12));
  CHECK(mode_weight(kGeom, kSpin, {3, 1, 1}) == Approx(0.029989811257066765).epsilon(1e-12));
  const SpinParams spin200(0.2, 1.0, 200.0, 1.0);
  CHECK(mode_weight(kGeom, spin200, {1, 1, 1}) == Approx(0.8562945451939916).epsilon(1e-12));

  // The weight spread across modes shrinks as Gamma0 grows.
  const double spread20 =
      mode_weight(kGeom, kSpin, {1, 1, 1}) - mode_weight(kGeom, kSpin, {3, 3, 3});
  const double spread200 =
      mode_weight(kGeom, spin200, {1, 1, 1}) - mode_weight(kGeom, spin200, {3, 3, 3});
  CHECK(spread20 > spread200);

  // Non-increasing as any index grows.
  CHECK(mode_weight(kGeom, kSpin, {1, 1, 1}) >= mode_weight(kGeom, kSpin, {3, 1, 1}));
  CHECK(mode_weight(kGeom, kSpin, {3, 1, 1}) >= mode_weight(kGeom, kSpin, {3, 3, 1}));
  CHECK(mode_weight(kGeom, kSpin, {3, 3, 1}) >= mode_weight(kGeom, kSpin, {3, 3, 3}));

  CHECK_THROWS_AS(mode_weight(kGeom, kSpin, {2, 1, 1}), InvalidParameter);
  CHECK_THROWS_AS(mode_weight(kGeom, kSpin, {5, 1, 1}, 3), InvalidParameter);
}

TEST_CASE("perturbative spectrum invariants", "[perturbation]") {
  const auto spec = perturbative_spectrum(kGeom, kSpin, kGradient);
  double sum = 0.0;
  for (const auto& e : spec.entries) {
    sum += e.weight;
    CHECK(e.weight > 0.0);
    CHECK(e.omega1 == Approx(100.0));
  }
  CHECK(sum == Approx(1.0).epsilon(1e-12));
  CHECK_FALSE(spec.beyond_recommended);
  CHECK(perturbative_spectrum(kGeom, kSpin, 2000.0).beyond_recommended);
}

TEST_CASE("perturbative FID: normalization, decay, phase", "[perturbation]") {
  std::vector<double> times;
  for (int i = 0; i <= 400; ++i) times.push_back(i * 1e-4);

  const auto fid = perturbative_fid(kGeom, kSpin, kGradient, times);
  CHECK(std::abs(fid[0] - Complex{1.0, 0.0}) < 1e-14);
  for (std::size_t i = 1; i < fid.size(); ++i) CHECK(std::abs(fid[i]) <= std::abs(fid[i - 1]));

  // Phase advances at omega_1 (clockwise): arg of successive samples drops.
  const double dphi = std::arg(fid[1]) - std::arg(fid[0]);
  CHECK(dphi == Approx(-100.0 * 1e-4).epsilon(1e-6));

  // g = 0 is the weighted multi-exponential with zero phase.
  const auto flat = perturbative_fid(kGeom, kSpin, 0.0, times);
  for (std::size_t i = 0; i < flat.size(); ++i) {
    CHECK(flat[i].imag() == 0.0);
    double expected = 0.0;
    for (int m = 1; m <= 3; m += 2)
      for (int n = 1; n <= 3; n += 2)
        for (int l = 1; l <= 3; l += 2)
          expected += mode_weight(kGeom, kSpin, {m, n, l}) *
                      std::exp(-mode_decay_rate(kGeom, kSpin, {m, n, l}) * times[i]);
    CHECK(flat[i].real() == Approx(expected).epsilon(1e-12));
  }

  // The gradient visibly accelerates the modulus decay at these parameters.
  const std::size_t mid = times.size() / 2;
  CHECK(std::abs(fid[mid]) < std::abs(flat[mid]));

  CHECK_THROWS_AS(perturbative_fid(kGeom, kSpin, kGradient, {}), InvalidParameter);
}
