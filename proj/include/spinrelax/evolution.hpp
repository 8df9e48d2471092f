// Time-domain solution of the Bloch-Torrey equation
//   dP/dt = D lap P - i gamma B_z(r) P - Gamma0 P,   P|_walls = 0,
// from the pumped steady state, with two independent discretizations
// (spectral Galerkin and Crank-Nicolson finite differences) and extraction
// of T2, Gamma2 and the gradient-induced excess rate.

#pragma once

#include <Eigen/Dense>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <optional>
#include <vector>

#include "spinrelax/modes.hpp"
#include "spinrelax/types.hpp"

namespace spinrelax {

// ---------------------------------------------------------------------------
// Result types
// ---------------------------------------------------------------------------

// Normalized volume-averaged transverse polarization over a uniform time grid.
struct FidTrace {
  std::vector<double> times;    // s, starting at 0
  std::vector<Complex> values;  // values[0] == 1 after normalization
  bool truncation_warning = false;
  double truncation_margin = 0.0;  // resolved bandwidth over required bandwidth

  void validate() const {
    if (times.empty() || times.size() != values.size())
      throw InvalidParameter("FidTrace: empty or mismatched grids");
    if (std::abs(values[0] - Complex{1.0, 0.0}) > 1e-9)
      throw InvalidParameter("FidTrace: values[0] != 1");
    for (std::size_t k = 0; k < values.size(); ++k)
      if (std::abs(values[k]) > 1.0 + 1e-9)
        throw InvalidParameter("FidTrace: modulus exceeds 1");
  }
};

struct RelaxationResult {
  double t2 = 0.0;          // s, first crossing of 1/e
  double gamma2 = 0.0;      // s^-1, 1/T2
  double phase_rate = 0.0;  // s^-1, fitted precession rate (positive for e^{-i w t})
  std::optional<double> delta_gamma2;  // set when paired against a g = 0 run
};

// ---------------------------------------------------------------------------
// Steady state
// ---------------------------------------------------------------------------

// Series solution of D lap P - Gamma0 P + R = 0 with zero walls; the
// coefficients coincide with initial_coefficient mode by mode.
inline ScalarModeVector steady_state_longitudinal(const CellGeometry& geom,
                                                  const SpinParams& spin) {
  ScalarModeVector vec(geom.mode_truncation);
  for (int m = 1; m <= geom.mode_truncation; m += 2)
    for (int n = 1; n <= geom.mode_truncation; n += 2)
      for (int l = 1; l <= geom.mode_truncation; l += 2)
        vec.at({m, n, l}) = initial_coefficient(geom, spin, {m, n, l});
  return vec;
}

// ---------------------------------------------------------------------------
// Spectral FID solver
// ---------------------------------------------------------------------------

// Smallest per-axis mode truncation that resolves the gradient coupling
// bandwidth with a factor-2 margin over the warning threshold.
inline int suggest_mode_truncation(const CellGeometry& geom, const SpinParams& spin,
                                   double g, int floor_truncation = 15) {
  const double k2 = (kPi / geom.edge_length) * (kPi / geom.edge_length);
  const double dk2 = spin.diffusion * k2;
  const double scale = std::abs(spin.gyro * g) * geom.edge_length / 2.0 + spin.base_rate +
                       3.0 * dk2;
  const int M = static_cast<int>(std::ceil(std::sqrt(20.0 * scale / dk2)));
  return std::max(floor_truncation, M);
}

// Integrates the coupled mode system
//   dC_mnl/dt = -(Gamma0 + D k^2 (m^2+n^2+l^2)) C_mnl
//               - i gamma g sum_m' X_{m m'} C_m'nl   (+ i gamma g L/2 C_mnl if offset)
// exactly: a gradient along x leaves (n,l) diagonal, so each (n,l) block is
// an M x M linear system sharing one matrix exponential, and the average
// signal only needs the adjoint propagation of the uniform-overlap vector.
inline FidTrace evolve_fid_spectral(const CellGeometry& geom, const SpinParams& spin,
                                    double g, double t_end, int n_steps,
                                    bool subtract_offset = false) {
  check_diffusion_regime(geom, spin);
  if (!(t_end > 0.0)) throw InvalidParameter("evolve_fid_spectral: t_end must be > 0");
  if (n_steps < 1) throw InvalidParameter("evolve_fid_spectral: n_steps must be >= 1");

  const int M = geom.mode_truncation;
  const double L = geom.edge_length;
  const double k2 = (kPi / L) * (kPi / L);
  const double gg = spin.gyro * g;
  const double dt = t_end / n_steps;

  // m-block generator; the diagonal gradient element X_mm = L/2 drops out
  // when the constant offset is compensated.
  Eigen::MatrixXcd A = Eigen::MatrixXcd::Zero(M, M);
  for (int m = 1; m <= M; ++m) {
    A(m - 1, m - 1) = Complex{-(spin.base_rate + spin.diffusion * k2 * m * m),
                              subtract_offset ? 0.0 : -gg * L / 2.0};
    for (int mp = 1; mp <= M; ++mp) {
      if (mp == m) continue;
      const double x = position_overlap_1d(m, mp, L);
      if (x != 0.0) A(m - 1, mp - 1) += Complex{0.0, -gg * x};
    }
  }
  const Eigen::MatrixXcd propagator = (A * dt).exp().transpose();

  Eigen::VectorXcd w(M);
  for (int m = 1; m <= M; ++m) w(m - 1) = uniform_overlap_1d(m, L);

  // Per-(n,l) blocks: transverse decay factor, uniform overlap, initial data.
  struct Block {
    double step_factor;  // e^{-D k^2 (n^2+l^2) dt}
    double decay = 1.0;
    double overlap;      // u_n u_l
    Eigen::VectorXcd c0;
  };
  std::vector<Block> blocks;
  for (int n = 1; n <= M; n += 2)
    for (int l = 1; l <= M; l += 2) {
      Block b;
      b.step_factor = std::exp(-spin.diffusion * k2 * (n * n + l * l) * dt);
      b.overlap = uniform_overlap_1d(n, L) * uniform_overlap_1d(l, L);
      b.c0 = Eigen::VectorXcd::Zero(M);
      for (int m = 1; m <= M; m += 2)
        b.c0(m - 1) = initial_coefficient(geom, spin, {m, n, l});
      blocks.push_back(std::move(b));
    }

  FidTrace trace;
  trace.times.resize(n_steps + 1);
  trace.values.resize(n_steps + 1);
  std::vector<Complex> raw(n_steps + 1);
  for (int step = 0; step <= n_steps; ++step) {
    trace.times[step] = step * dt;
    Complex signal{0.0, 0.0};
    for (auto& b : blocks) {
      signal += b.decay * b.overlap * (w.array() * b.c0.array()).sum();
      b.decay *= b.step_factor;
    }
    raw[step] = signal;
    if (step < n_steps) w = propagator * w;
  }
  const Complex p0 = raw[0];
  if (std::abs(p0) == 0.0)
    throw DegenerateParameters("evolve_fid_spectral: vanishing initial polarization");
  for (int step = 0; step <= n_steps; ++step) trace.values[step] = raw[step] / p0;

  // Truncation check: the resolved band D k^2 M^2 must dominate the coupling
  // bandwidth; below a factor 10 the trace can leak past the cutoff at a
  // level relevant to the acceptance tolerances.
  const double required = std::abs(gg) * L / 2.0 + spin.base_rate + 3.0 * spin.diffusion * k2;
  trace.truncation_margin = spin.diffusion * k2 * M * M / required;
  trace.truncation_warning = trace.truncation_margin < 10.0;
  return trace;
}

// ---------------------------------------------------------------------------
// Finite-difference FID solver (Crank-Nicolson, dimension split)
// ---------------------------------------------------------------------------

namespace detail {

// Complex Thomas solve for a constant-coefficient tridiagonal system with
// sub/super diagonal `off` and per-row diagonal diag[i]; rhs is overwritten.
inline void tridiag_solve(const std::vector<Complex>& diag, Complex off,
                          std::vector<Complex>& rhs, std::vector<Complex>& scratch) {
  const std::size_t n = diag.size();
  scratch.resize(n);
  Complex piv = diag[0];
  if (std::abs(piv) < 1e-300) throw SolverError("tridiagonal pivot underflow", 0.0);
  rhs[0] /= piv;
  for (std::size_t i = 1; i < n; ++i) {
    scratch[i] = off / piv;
    piv = diag[i] - off * scratch[i];
    if (std::abs(piv) < 1e-300) throw SolverError("tridiagonal pivot underflow", 0.0);
    rhs[i] = (rhs[i] - off * rhs[i - 1]) / piv;
  }
  for (std::size_t i = n - 1; i-- > 0;) rhs[i] -= scratch[i + 1] * rhs[i + 1];
}

}  // namespace detail

// Interior-grid steady state of D lap P - Gamma0 P + R = 0, second-order
// central differences, solved by conjugate gradients. Exposed so tests can
// compare it against the series solution.
inline std::vector<double> fd_steady_state(const CellGeometry& geom, const SpinParams& spin,
                                           double cg_tolerance = 1e-12) {
  const int N = geom.grid_points;
  const double h = geom.edge_length / (N + 1);
  const double w_off = -spin.diffusion / (h * h);
  const double w_diag = spin.base_rate + 6.0 * spin.diffusion / (h * h);
  const auto id = [N](int i, int j, int k) { return (k * N + j) * N + i; };

  Eigen::SparseMatrix<double> mat(N * N * N, N * N * N);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(7) * N * N * N);
  for (int k = 0; k < N; ++k)
    for (int j = 0; j < N; ++j)
      for (int i = 0; i < N; ++i) {
        const int row = id(i, j, k);
        trips.emplace_back(row, row, w_diag);
        if (i > 0) trips.emplace_back(row, id(i - 1, j, k), w_off);
        if (i < N - 1) trips.emplace_back(row, id(i + 1, j, k), w_off);
        if (j > 0) trips.emplace_back(row, id(i, j - 1, k), w_off);
        if (j < N - 1) trips.emplace_back(row, id(i, j + 1, k), w_off);
        if (k > 0) trips.emplace_back(row, id(i, j, k - 1), w_off);
        if (k < N - 1) trips.emplace_back(row, id(i, j, k + 1), w_off);
      }
  mat.setFromTriplets(trips.begin(), trips.end());

  Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper> cg;
  cg.setTolerance(cg_tolerance);
  cg.setMaxIterations(4000);
  cg.compute(mat);
  Eigen::VectorXd rhs = Eigen::VectorXd::Constant(N * N * N, spin.pump_rate);
  Eigen::VectorXd sol = cg.solve(rhs);
  if (cg.info() != Eigen::Success)
    throw SolverError("fd_steady_state: conjugate gradient did not converge", cg.error());
  return {sol.data(), sol.data() + sol.size()};
}

// Crank-Nicolson time stepping on the interior grid. The operator splits
// exactly into commuting one-dimensional factors (the potential depends on
// x only), so each step applies one tridiagonal CN solve per axis; the
// scheme is second order in space and time and unconditionally stable.
inline FidTrace evolve_fid_fd(const CellGeometry& geom, const SpinParams& spin, double g,
                              double t_end, int n_steps, bool subtract_offset = false,
                              const std::vector<double>* initial_override = nullptr,
                              std::vector<Complex>* final_field = nullptr) {
  check_diffusion_regime(geom, spin);
  if (!(t_end > 0.0)) throw InvalidParameter("evolve_fid_fd: t_end must be > 0");
  if (n_steps < 1) throw InvalidParameter("evolve_fid_fd: n_steps must be >= 1");

  const int N = geom.grid_points;
  const double L = geom.edge_length;
  const double h = L / (N + 1);
  const double dt = t_end / n_steps;
  const double lam = spin.diffusion * dt / (2.0 * h * h);
  const double gg = spin.gyro * g;

  std::vector<Complex> field;
  if (initial_override) {
    if (initial_override->size() != static_cast<std::size_t>(N) * N * N)
      throw InvalidParameter("evolve_fid_fd: initial field size mismatch");
    field.assign(initial_override->begin(), initial_override->end());
  } else {
    const std::vector<double> p0 = fd_steady_state(geom, spin);
    field.assign(p0.begin(), p0.end());
  }

  // Per-row x diagonal carries Gamma0 and the gradient potential.
  std::vector<Complex> lhs_x(N), rhs_x(N);
  for (int i = 0; i < N; ++i) {
    const double x = (i + 1) * h;
    const double b = subtract_offset ? gg * (x - 0.5 * L) : gg * x;
    const Complex zhalf{0.5 * dt * spin.base_rate, 0.5 * dt * b};
    lhs_x[i] = Complex{1.0 + 2.0 * lam, 0.0} + zhalf;
    rhs_x[i] = Complex{1.0 - 2.0 * lam, 0.0} - zhalf;
  }
  const std::vector<Complex> lhs_yz(N, Complex{1.0 + 2.0 * lam, 0.0});
  const Complex off{-lam, 0.0};

  std::vector<Complex> line(N), scratch(N);
  const auto sweep = [&](int axis) {
    const int s1 = axis == 0 ? 1 : (axis == 1 ? N : N * N);
    // Iterate over all lines orthogonal to `axis`.
    for (int a = 0; a < N; ++a)
      for (int b = 0; b < N; ++b) {
        int base;
        if (axis == 0) base = (b * N + a) * N;        // vary i
        else if (axis == 1) base = (b * N) * N + a;   // vary j
        else base = a + b * N;                        // vary k  (i=a, j=b)
        // RHS = (I + (dt/2) T) field along the line.
        for (int t = 0; t < N; ++t) {
          const int p = base + t * s1;
          Complex r = (axis == 0 ? rhs_x[t] : Complex{1.0 - 2.0 * lam, 0.0}) * field[p];
          if (t > 0) r += lam * field[p - s1];
          if (t < N - 1) r += lam * field[p + s1];
          line[t] = r;
        }
        detail::tridiag_solve(axis == 0 ? lhs_x : lhs_yz, off, line, scratch);
        for (int t = 0; t < N; ++t) field[base + t * s1] = line[t];
      }
  };

  const double cell_weight = h * h * h / (L * L * L);
  const auto average = [&]() {
    Complex s{0.0, 0.0};
    for (const Complex& v : field) s += v;
    return cell_weight * s;
  };

  FidTrace trace;
  trace.times.resize(n_steps + 1);
  trace.values.resize(n_steps + 1);
  std::vector<Complex> raw(n_steps + 1);
  raw[0] = average();
  trace.times[0] = 0.0;
  for (int step = 1; step <= n_steps; ++step) {
    sweep(0);
    sweep(1);
    sweep(2);
    trace.times[step] = step * dt;
    raw[step] = average();
  }
  if (std::abs(raw[0]) == 0.0)
    throw DegenerateParameters("evolve_fid_fd: vanishing initial polarization");
  for (int step = 0; step <= n_steps; ++step) trace.values[step] = raw[step] / raw[0];
  if (final_field) *final_field = std::move(field);
  return trace;
}

// ---------------------------------------------------------------------------
// T2 extraction
// ---------------------------------------------------------------------------

namespace detail {

// Monotone (PCHIP) slope for log-modulus interpolation.
inline double pchip_slope(double h0, double h1, double d0, double d1) {
  if (d0 * d1 <= 0.0) return 0.0;
  const double w0 = 2.0 * h1 + h0;
  const double w1 = h1 + 2.0 * h0;
  return (w0 + w1) / (w0 / d0 + w1 / d1);
}

}  // namespace detail

// T2 is the first time the modulus crosses |P(0)|/e, located by monotone
// cubic interpolation of the log-modulus between the bracketing samples;
// the phase rate comes from a least-squares fit of the unwrapped phase.
inline RelaxationResult extract_t2(const FidTrace& trace) {
  const auto& ts = trace.times;
  const auto& vs = trace.values;
  if (ts.size() < 2 || ts.size() != vs.size())
    throw InvalidParameter("extract_t2: degenerate trace");

  const double target = std::abs(vs[0]) * std::exp(-1.0);
  std::size_t k = ts.size();
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
    if (std::abs(vs[i]) >= target && std::abs(vs[i + 1]) < target) {
      k = i;
      break;
    }
  }
  if (k == ts.size())
    throw InsufficientHorizon("extract_t2: modulus never crosses 1/e within the grid",
                              ts.back());

  // Monotone cubic on y = log|v| over the bracketing interval.
  const auto logmod = [&](std::size_t i) { return std::log(std::abs(vs[i])); };
  const double t0 = ts[k], t1 = ts[k + 1];
  const double y0 = logmod(k), y1 = logmod(k + 1);
  const double hseg = t1 - t0;
  const double dsec = (y1 - y0) / hseg;
  double m0 = dsec, m1 = dsec;
  if (k > 0) {
    const double hm = t0 - ts[k - 1];
    m0 = detail::pchip_slope(hm, hseg, (y0 - logmod(k - 1)) / hm, dsec);
  }
  if (k + 2 < ts.size()) {
    const double hp = ts[k + 2] - t1;
    m1 = detail::pchip_slope(hseg, hp, dsec, (logmod(k + 2) - y1) / hp);
  }
  const double ytarget = std::log(target);
  const auto hermite = [&](double t) {
    const double s = (t - t0) / hseg;
    const double h00 = (1 + 2 * s) * (1 - s) * (1 - s);
    const double h10 = s * (1 - s) * (1 - s);
    const double h01 = s * s * (3 - 2 * s);
    const double h11 = s * s * (s - 1);
    return h00 * y0 + h10 * hseg * m0 + h01 * y1 + h11 * hseg * m1 - ytarget;
  };
  double lo = t0, hi = t1;
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    (hermite(mid) >= 0.0 ? lo : hi) = mid;
  }
  RelaxationResult res;
  res.t2 = 0.5 * (lo + hi);
  res.gamma2 = 1.0 / res.t2;

  // Phase-rate fit over the usable window (modulus above e^-2).
  const double floor = std::abs(vs[0]) * std::exp(-2.0);
  std::vector<double> tt, ph;
  double prev = std::arg(vs[0]);
  double unwrapped = prev;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (std::abs(vs[i]) < floor) break;
    const double a = std::arg(vs[i]);
    double d = a - prev;
    while (d > kPi) d -= 2.0 * kPi;
    while (d < -kPi) d += 2.0 * kPi;
    unwrapped += (i == 0) ? 0.0 : d;
    prev = a;
    tt.push_back(ts[i]);
    ph.push_back(unwrapped);
  }
  if (tt.size() >= 2) {
    double tbar = 0.0, pbar = 0.0;
    for (std::size_t i = 0; i < tt.size(); ++i) {
      tbar += tt[i];
      pbar += ph[i];
    }
    tbar /= tt.size();
    pbar /= tt.size();
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < tt.size(); ++i) {
      num += (tt[i] - tbar) * (ph[i] - pbar);
      den += (tt[i] - tbar) * (tt[i] - tbar);
    }
    res.phase_rate = den > 0.0 ? -num / den : 0.0;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Gradient-induced excess rate
// ---------------------------------------------------------------------------

struct DeltaGamma2Options {
  int n_steps = 2400;
  bool subtract_offset = false;
};

struct DeltaGamma2Result {
  RelaxationResult with_gradient;
  RelaxationResult zero_gradient;
  double delta = 0.0;  // s^-1
  double horizon = 0.0;
};

// Gamma2(g) - Gamma2(0), both runs on identical grids and truncations. The
// horizon starts at 5 / Gamma_111^(0) (the slowest surviving mode bounds T2
// from above under depolarizing walls) and doubles on a missed crossing up
// to 64 / Gamma0.
inline DeltaGamma2Result delta_gamma2_detail(const CellGeometry& geom, const SpinParams& spin,
                                             double g, DeltaGamma2Options opts = {}) {
  const double rate111 = mode_decay_rate(geom, spin, {1, 1, 1});
  double t_end = 5.0 / rate111;
  const double cap =
      spin.base_rate > 0.0 ? 64.0 / spin.base_rate : 4096.0 / rate111;

  for (;;) {
    const FidTrace with_g =
        evolve_fid_spectral(geom, spin, g, t_end, opts.n_steps, opts.subtract_offset);
    const FidTrace zero_g =
        evolve_fid_spectral(geom, spin, 0.0, t_end, opts.n_steps, opts.subtract_offset);
    try {
      DeltaGamma2Result res;
      res.with_gradient = extract_t2(with_g);
      res.zero_gradient = extract_t2(zero_g);
      res.delta = res.with_gradient.gamma2 - res.zero_gradient.gamma2;
      res.with_gradient.delta_gamma2 = res.delta;
      res.horizon = t_end;
      return res;
    } catch (const InsufficientHorizon&) {
      if (t_end >= cap) throw;
      t_end = std::min(2.0 * t_end, cap);
    }
  }
}

inline double delta_gamma2(const CellGeometry& geom, const SpinParams& spin, double g,
                           DeltaGamma2Options opts = {}) {
  return delta_gamma2_detail(geom, spin, g, opts).delta;
}

}  // namespace spinrelax
