// Second-order perturbation theory for the transverse relaxation spectrum
// under a linear longitudinal gradient B_z(r) = g x: validity parameter,
// effective precession frequency, gradient-induced rates, mode weights and
// the perturbative normalized free-induction-decay signal.

#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "spinrelax/modes.hpp"
#include "spinrelax/types.hpp"

namespace spinrelax {

// Validity parameter 16 gamma g L^3 / (27 pi^4 D). Values well below 1
// indicate the perturbative regime; above ~0.3 results degrade.
inline double perturbation_parameter(const CellGeometry& geom, const SpinParams& spin,
                                     double g) {
  if (spin.diffusion <= 0.0)
    throw DegenerateParameters("perturbation_parameter: diffusion must be > 0");
  const double L = geom.edge_length;
  const double pi4 = kPi * kPi * kPi * kPi;
  return 16.0 * std::abs(spin.gyro * g) * L * L * L / (27.0 * pi4 * spin.diffusion);
}

inline bool perturbation_regime_marginal(const CellGeometry& geom, const SpinParams& spin,
                                         double g) {
  return perturbation_parameter(geom, spin, g) >= 0.3;
}

// Effective precession frequency omega_1 = gamma g L / 2, the mode-diagonal
// matrix element of the (non-offset) gradient field; independent of mnl.
inline double effective_frequency(const CellGeometry& geom, const SpinParams& spin,
                                  double g) {
  return spin.gyro * g * geom.edge_length / 2.0;
}

// Gradient-induced second-order rate for mode (m,n,l):
//   Gamma^(2) = (gamma g)^2 sum_{m' != m} X_{mm'}^2 / (Gamma^(0)_{m'nl} - Gamma^(0)_{mnl}).
// The gradient along x only couples modes differing in m (opposite parity),
// so the result depends on m alone. The denominator sign convention is fixed
// by the closed forms: positive for m = 1, negative for m = 2, 3.
inline double second_order_rate(const CellGeometry& geom, const SpinParams& spin, double g,
                                const ModeIndex& idx) {
  idx.check(geom);
  const double L = geom.edge_length;
  const double k2 = (kPi / L) * (kPi / L);
  const double gg = spin.gyro * g;
  const int M = geom.mode_truncation;
  const double rate_m = mode_decay_rate(geom, spin, idx);

  double sum = 0.0;
  for (int mp = 1; mp <= M; ++mp) {
    if (mp == idx.m) continue;
    const double coupling = position_overlap_1d(idx.m, mp, L);
    const double denom = spin.diffusion * k2 *
                         (static_cast<double>(mp) * mp - static_cast<double>(idx.m) * idx.m);
    if (std::abs(denom) < 1e-9 * rate_m) {
      // Linear gradients never couple exactly degenerate modes; the guard
      // documents that assumption.
      if (coupling != 0.0)
        throw DegeneracyError("second_order_rate: nonzero coupling between degenerate modes");
      continue;
    }
    sum += gg * gg * coupling * coupling / denom;
  }
  return sum;
}

// Weight of mode (m,n,l) in the normalized average FID over the included
// odd-index cube {1,3,...,max_odd}^3:
//   w_mnl = [ (mnl)^2 Gamma^(0)_mnl * sum_set 1/((mnl)^2 Gamma^(0)) ]^-1.
inline double mode_weight(const CellGeometry& geom, const SpinParams& spin,
                          const ModeIndex& idx, int max_odd = 3) {
  if (max_odd < 1 || max_odd % 2 == 0)
    throw InvalidParameter("mode_weight: included set bound must be a positive odd index");
  if (!idx.all_odd() || idx.m > max_odd || idx.n > max_odd || idx.l > max_odd)
    throw InvalidParameter("mode_weight: index not in the included odd-mode set");
  idx.check(geom);

  double norm = 0.0;
  for (int m = 1; m <= max_odd; m += 2)
    for (int n = 1; n <= max_odd; n += 2)
      for (int l = 1; l <= max_odd; l += 2) {
        const double mnl = static_cast<double>(m) * n * l;
        norm += 1.0 / (mnl * mnl * mode_decay_rate(geom, spin, {m, n, l}));
      }
  const double mnl = static_cast<double>(idx.m) * idx.n * idx.l;
  return 1.0 / (mnl * mnl * mode_decay_rate(geom, spin, idx) * norm);
}

// Per-mode perturbative data over the included odd-mode set.
struct PerturbativeSpectrum {
  struct Entry {
    ModeIndex idx;
    double omega1;        // s^-1, identical across entries
    double rate0;         // Gamma^(0)_mnl, s^-1
    double rate2;         // Gamma^(2)_mnl, s^-1
    double weight;        // dimensionless, sums to 1 over the set
  };
  std::vector<Entry> entries;
  double validity_parameter = 0.0;
  bool beyond_recommended = false;  // validity parameter in [0.3, 1)
};

inline PerturbativeSpectrum perturbative_spectrum(const CellGeometry& geom,
                                                  const SpinParams& spin, double g,
                                                  int max_odd = 3) {
  PerturbativeSpectrum spec;
  spec.validity_parameter = perturbation_parameter(geom, spin, g);
  spec.beyond_recommended = spec.validity_parameter >= 0.3;
  const double omega1 = effective_frequency(geom, spin, g);
  for (int m = 1; m <= max_odd; m += 2)
    for (int n = 1; n <= max_odd; n += 2)
      for (int l = 1; l <= max_odd; l += 2) {
        const ModeIndex idx{m, n, l};
        spec.entries.push_back({idx, omega1, mode_decay_rate(geom, spin, idx),
                                second_order_rate(geom, spin, g, idx),
                                mode_weight(geom, spin, idx, max_odd)});
      }
  return spec;
}

// Normalized perturbative FID,
//   P(t) = e^{-i omega_1 t} sum_set w_mnl e^{-(Gamma^(0)+Gamma^(2)) t}.
// |P(0)| = 1 by weight normalization.
inline std::vector<Complex> perturbative_fid(const CellGeometry& geom, const SpinParams& spin,
                                             double g, const std::vector<double>& times,
                                             int max_odd = 3) {
  if (times.empty()) throw InvalidParameter("perturbative_fid: empty time grid");
  const PerturbativeSpectrum spec = perturbative_spectrum(geom, spin, g, max_odd);
  std::vector<Complex> out;
  out.reserve(times.size());
  for (double t : times) {
    double mag = 0.0;
    for (const auto& e : spec.entries) mag += e.weight * std::exp(-(e.rate0 + e.rate2) * t);
    const double phase = -spec.entries.front().omega1 * t;
    out.push_back(mag * Complex{std::cos(phase), std::sin(phase)});
  }
  return out;
}

}  // namespace spinrelax
