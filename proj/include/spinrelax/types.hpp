// Core domain types for diffusing atomic spins in a cubic vapor cell with
// fully depolarizing (zero-value) walls.
//
// Unit conventions used throughout the library:
//   lengths      cm
//   diffusion    cm^2/s
//   rates        s^-1   (decay rates and gamma*B precession rates alike)
//   gyro ratio   s^-1 G^-1
//   gradients    G/cm
// The library never inserts factors of 2*pi; gamma*B products are used
// directly as precession rates. Callers working in cyclic-frequency units
// convert on input (the CLI exposes a flag for that).

#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace spinrelax {

inline constexpr double kPi = 3.14159265358979323846;

using Complex = std::complex<double>;

// ---------------------------------------------------------------------------
// Error taxonomy
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A constructor or operation precondition was violated.
class InvalidParameter : public Error {
 public:
  using Error::Error;
};

// Parameter combination makes the requested quantity undefined
// (e.g. a vanishing mode decay rate in a denominator).
class DegenerateParameters : public Error {
 public:
  using Error::Error;
};

// Nonzero coupling detected between (numerically) degenerate modes.
class DegeneracyError : public Error {
 public:
  using Error::Error;
};

// The signal did not reach the 1/e level within the simulated horizon.
class InsufficientHorizon : public Error {
 public:
  InsufficientHorizon(const std::string& what, double t_end)
      : Error(what), t_end_(t_end) {}
  double horizon() const { return t_end_; }

 private:
  double t_end_;
};

// A linear solve failed or did not meet its residual target.
class SolverError : public Error {
 public:
  SolverError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

// A sweep extremum stayed at the grid edge after the allowed extensions.
class RangeError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Geometry and spin parameters
// ---------------------------------------------------------------------------

// Cubic cell [0,L]^3 with polarization pinned to zero on all six faces,
// plus the discretization sizes used by the two solver families.
struct CellGeometry {
  double edge_length;   // L, cm
  int mode_truncation;  // M: max sine-mode index per axis (spectral basis)
  int grid_points;      // N: interior finite-difference points per axis

  CellGeometry(double L, int M, int N = 48)
      : edge_length(L), mode_truncation(M), grid_points(N) {
    if (!(L > 0.0) || !std::isfinite(L))
      throw InvalidParameter("CellGeometry: edge_length must be > 0");
    if (M < 1) throw InvalidParameter("CellGeometry: mode_truncation must be >= 1");
    if (N < 3) throw InvalidParameter("CellGeometry: grid_points must be >= 3");
  }
};

struct SpinParams {
  double diffusion;  // D, cm^2/s
  double gyro;       // gamma, s^-1 G^-1 (precession-rate convention)
  double base_rate;  // Gamma0, s^-1: relaxation without field inhomogeneity
  double pump_rate;  // R, s^-1
  double slow_down;  // q, dimensionless (enters the SERF solver only)

  SpinParams(double D, double gamma, double Gamma0, double R, double q = 1.0)
      : diffusion(D), gyro(gamma), base_rate(Gamma0), pump_rate(R), slow_down(q) {
    if (!(D > 0.0) || !std::isfinite(D))
      throw InvalidParameter("SpinParams: diffusion must be > 0");
    if (!std::isfinite(gamma)) throw InvalidParameter("SpinParams: gyro must be finite");
    if (!(Gamma0 >= 0.0)) throw InvalidParameter("SpinParams: base_rate must be >= 0");
    if (!(R >= 0.0)) throw InvalidParameter("SpinParams: pump_rate must be >= 0");
    if (!(q >= 1.0)) throw InvalidParameter("SpinParams: slow_down must be >= 1");
  }
};

// Mean thermal velocity bound for the diffusion description, cm/s.
inline constexpr double kDefaultVelocityBound = 1.0e4;

// The diffusion picture requires 3 D / L below the mean thermal velocity.
inline void check_diffusion_regime(const CellGeometry& geom, const SpinParams& spin,
                                   double velocity_bound = kDefaultVelocityBound) {
  const double v = 3.0 * spin.diffusion / geom.edge_length;
  if (!(v < velocity_bound))
    throw InvalidParameter("diffusion regime violated: 3*D/L = " + std::to_string(v) +
                           " cm/s exceeds bound " + std::to_string(velocity_bound));
}

// ---------------------------------------------------------------------------
// Mode indices and gradients
// ---------------------------------------------------------------------------

struct ModeIndex {
  int m, n, l;

  bool all_odd() const { return (m % 2) && (n % 2) && (l % 2); }
  int square_sum() const { return m * m + n * n + l * l; }

  void check(const CellGeometry& geom) const {
    const int M = geom.mode_truncation;
    if (m < 1 || n < 1 || l < 1 || m > M || n > M || l > M)
      throw InvalidParameter("ModeIndex (" + std::to_string(m) + "," + std::to_string(n) +
                             "," + std::to_string(l) + ") outside 1.." + std::to_string(M));
  }

  friend bool operator==(const ModeIndex&, const ModeIndex&) = default;
};

enum class Axis { X = 0, Y = 1, Z = 2 };

// Linear gradient triple: component alpha of the field is
//   B_alpha(r) = g_alpha * alpha            (subtract_offset = false)
//   B_alpha(r) = g_alpha * (alpha - L/2)    (subtract_offset = true)
// i.e. each component varies along its own axis.
struct GradientField {
  double gx = 0.0, gy = 0.0, gz = 0.0;  // G/cm
  bool subtract_offset = true;

  double component(Axis axis) const {
    switch (axis) {
      case Axis::X: return gx;
      case Axis::Y: return gy;
      default: return gz;
    }
  }

  bool is_divergence_free(double rel_tol = 1e-12) const {
    const double sum = gx + gy + gz;
    const double scale = std::abs(gx) + std::abs(gy) + std::abs(gz);
    return std::abs(sum) <= rel_tol * std::max(scale, 1e-300);
  }

  void require_divergence_free() const {
    if (!is_divergence_free())
      throw InvalidParameter("gradient triple is not divergence-free: gx+gy+gz != 0");
  }

  // Field value of component `axis` at coordinate `coord` along its own axis.
  double value(Axis axis, double coord, double L) const {
    const double g = component(axis);
    return subtract_offset ? g * (coord - 0.5 * L) : g * coord;
  }
};

// ---------------------------------------------------------------------------
// Spectral coefficient vector
// ---------------------------------------------------------------------------

// Coefficients C_mnl of the expansion
//   P(r) = (L/2)^{3/2} sum_mnl C_mnl psi_mnl(r),
// flattened in (m,n,l) order with l fastest.
struct ScalarModeVector {
  int truncation = 0;
  std::vector<Complex> coeffs;

  ScalarModeVector() = default;
  explicit ScalarModeVector(int M)
      : truncation(M), coeffs(static_cast<std::size_t>(M) * M * M, Complex{0.0, 0.0}) {
    if (M < 1) throw InvalidParameter("ScalarModeVector: truncation must be >= 1");
  }

  std::size_t index(const ModeIndex& idx) const {
    const int M = truncation;
    return (static_cast<std::size_t>(idx.m - 1) * M + (idx.n - 1)) * M + (idx.l - 1);
  }

  Complex& at(const ModeIndex& idx) { return coeffs[index(idx)]; }
  const Complex& at(const ModeIndex& idx) const { return coeffs[index(idx)]; }

  void check_finite() const {
    for (const auto& c : coeffs)
      if (!std::isfinite(c.real()) || !std::isfinite(c.imag()))
        throw InvalidParameter("ScalarModeVector: non-finite coefficient");
  }
};

}  // namespace spinrelax
