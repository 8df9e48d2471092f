// Eigenmodes of the diffusion operator on the cube with zero boundary
// values, their decay rates, the steady-state expansion coefficients, and
// matrix elements of linear gradient fields in that basis.

#pragma once

#include <algorithm>
#include <cmath>

#include "spinrelax/types.hpp"

namespace spinrelax {

// 1-D eigenfunction phi_m(x) = sqrt(2/L) sin(m pi x / L) on [0, L].
inline double mode_function_1d(int m, double x, double L) {
  return std::sqrt(2.0 / L) * std::sin(m * kPi * x / L);
}

// psi_mnl(x,y,z) = phi_m(x) phi_n(y) phi_l(z); vanishes on all six faces.
inline double mode_function(const ModeIndex& idx, double x, double y, double z, double L) {
  return mode_function_1d(idx.m, x, L) * mode_function_1d(idx.n, y, L) *
         mode_function_1d(idx.l, z, L);
}

// Overlap of phi_m with the uniform function: int_0^L phi_m dx.
// Equals 2 sqrt(2L) / (m pi) for odd m and 0 for even m.
inline double uniform_overlap_1d(int m, double L) {
  if (m % 2 == 0) return 0.0;
  return 2.0 * std::sqrt(2.0 * L) / (m * kPi);
}

// Decay rate of mode psi_mnl without field inhomogeneity:
//   Gamma0 + D (pi/L)^2 (m^2 + n^2 + l^2).
inline double mode_decay_rate(const CellGeometry& geom, const SpinParams& spin,
                              const ModeIndex& idx) {
  idx.check(geom);
  const double k = kPi / geom.edge_length;
  return spin.base_rate + spin.diffusion * k * k * idx.square_sum();
}

// Steady-state expansion coefficient C_mnl(0) = 64 R / (m n l pi^3 Gamma_mnl^(0))
// for all-odd indices; zero otherwise (uniform pumping has even symmetry
// about the cell center).
inline double initial_coefficient(const CellGeometry& geom, const SpinParams& spin,
                                  const ModeIndex& idx) {
  idx.check(geom);
  if (!idx.all_odd()) return 0.0;
  const double rate = mode_decay_rate(geom, spin, idx);
  if (rate <= 0.0)
    throw DegenerateParameters("initial_coefficient: vanishing mode decay rate");
  return 64.0 * spin.pump_rate / (idx.m * idx.n * idx.l * kPi * kPi * kPi * rate);
}

// 1-D position matrix element X_{m m'} = int_0^L phi_m(x) x phi_{m'}(x) dx.
// Diagonal entries are L/2. Off-diagonal entries vanish for equal-parity
// index pairs and are -8 L m m' / (pi^2 (m^2 - m'^2)^2) otherwise; the sign
// is fixed by the quadrature oracle in the test suite.
inline double position_overlap_1d(int m, int mp, double L) {
  if (m == mp) return 0.5 * L;
  if ((m + mp) % 2 == 0) return 0.0;
  // Canonical argument order keeps X_{mm'} == X_{m'm} bitwise exact.
  const int lo = std::min(m, mp), hi = std::max(m, mp);
  const double diff = static_cast<double>(hi) * hi - static_cast<double>(lo) * lo;
  return -8.0 * L * lo * hi / (kPi * kPi * diff * diff);
}

// Full 3-D matrix element of the (unit-gradient, no offset) position field
// along `axis` between modes a and b. Factorizes as X on the chosen axis
// times Kronecker deltas on the other two.
inline double gradient_matrix_element(const CellGeometry& geom, Axis axis,
                                      const ModeIndex& a, const ModeIndex& b) {
  a.check(geom);
  b.check(geom);
  const double L = geom.edge_length;
  switch (axis) {
    case Axis::X:
      return (a.n == b.n && a.l == b.l) ? position_overlap_1d(a.m, b.m, L) : 0.0;
    case Axis::Y:
      return (a.m == b.m && a.l == b.l) ? position_overlap_1d(a.n, b.n, L) : 0.0;
    default:
      return (a.m == b.m && a.n == b.n) ? position_overlap_1d(a.l, b.l, L) : 0.0;
  }
}

// Gradient-induced transverse rate for nondepolarizing (nuclear-spin)
// boundaries, gamma^2 g^2 L^4 / (120 D). Exposed as a comparison constant
// only; g is the longitudinal linear gradient magnitude in G/cm.
inline double nuclear_comparison_rate(const CellGeometry& geom, const SpinParams& spin,
                                      double g) {
  if (spin.diffusion <= 0.0)
    throw DegenerateParameters("nuclear_comparison_rate: diffusion must be > 0");
  const double gg = spin.gyro * g;
  const double L = geom.edge_length;
  return gg * gg * L * L * L * L / (120.0 * spin.diffusion);
}

// Volume average of the field represented by a ScalarModeVector:
//   (1/L^3) int P dV  with  P = (L/2)^{3/2} sum C_mnl psi_mnl.
inline Complex volume_average(const CellGeometry& geom, const ScalarModeVector& vec) {
  const int M = vec.truncation;
  const double L = geom.edge_length;
  Complex sum{0.0, 0.0};
  for (int m = 1; m <= M; m += 2) {
    const double um = uniform_overlap_1d(m, L);
    for (int n = 1; n <= M; n += 2) {
      const double un = uniform_overlap_1d(n, L);
      for (int l = 1; l <= M; l += 2) {
        sum += vec.at({m, n, l}) * (um * un * uniform_overlap_1d(l, L));
      }
    }
  }
  const double prefactor = std::pow(0.5 * L, 1.5) / (L * L * L);
  return prefactor * sum;
}

// Point evaluation of the represented field.
inline Complex evaluate_mode_series(const CellGeometry& geom, const ScalarModeVector& vec,
                                    double x, double y, double z) {
  const int M = vec.truncation;
  const double L = geom.edge_length;
  Complex sum{0.0, 0.0};
  for (int m = 1; m <= M; ++m)
    for (int n = 1; n <= M; ++n)
      for (int l = 1; l <= M; ++l) {
        const Complex c = vec.at({m, n, l});
        if (c == Complex{0.0, 0.0}) continue;
        sum += c * mode_function({m, n, l}, x, y, z, L);
      }
  return std::pow(0.5 * L, 1.5) * sum;
}

}  // namespace spinrelax
