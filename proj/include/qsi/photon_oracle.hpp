#pragma once

// Brute-force reference for pn_indistinguishable: integrates the
// Glauber-Sudarshan P-function of the combined sources directly,
//
//   p(n) = ∫ P(γ) e^{-|γ|²} |γ|^{2n} / n! d²γ,
//   P(γ) = exp(-|γ - α_tot|² / m_tot) / (π m_tot),
//
// i.e. the thermal Gaussian P-function displaced by the coherent delta
// function. It shares no code with the closed-form path (no gamma or
// hypergeometric functions) and is meant for tests.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "qsi/errors.hpp"
#include "qsi/photon_stats.hpp"

namespace qsi {

struct QuadratureGrid {
  std::size_t radial = 2000;
  std::size_t angular = 512;
  /// Radial cells extend max(|α_tot|, 1) + sigmas·√m_tot from α_tot.
  double sigmas = 8.0;
};

/// p(0..n_max) by polar quadrature centred on α_tot. Angular cells use the
/// midpoint rule (spectrally accurate for the periodic integrand); each
/// radial cell uses two-point Gauss-Legendre nodes.
inline std::vector<double> oracle_distribution(const ModeSpec& mode, std::size_t n_max,
                                               const QuadratureGrid& grid = {}) {
  mode.validate();
  const double m = mode.m_tot();
  if (!(m > 0.0)) {
    throw DomainError("oracle_pn: thermal P-function is a delta function for m_tot = 0");
  }
  const double ar = mode.alpha_re;
  const double ai = mode.alpha_im;
  const double radius = std::max(std::hypot(ar, ai), 1.0) + grid.sigmas * std::sqrt(m);
  const double dr = radius / static_cast<double>(grid.radial);
  const double dtheta = 2.0 * std::numbers::pi / static_cast<double>(grid.angular);
  const double gauss_offset = 0.5 / std::sqrt(3.0);

  std::vector<double> cos_t(grid.angular), sin_t(grid.angular);
  for (std::size_t j = 0; j < grid.angular; ++j) {
    const double theta = (static_cast<double>(j) + 0.5) * dtheta;
    cos_t[j] = std::cos(theta);
    sin_t[j] = std::sin(theta);
  }

  std::vector<double> acc(n_max + 1, 0.0);
  std::vector<double> ring(n_max + 1);
  for (std::size_t i = 0; i < grid.radial; ++i) {
    for (double node : {-gauss_offset, gauss_offset}) {
      const double r = (static_cast<double>(i) + 0.5 + node) * dr;
      const double p_weight = std::exp(-r * r / m) / (std::numbers::pi * m);
      std::fill(ring.begin(), ring.end(), 0.0);
      for (std::size_t j = 0; j < grid.angular; ++j) {
        const double gx = ar + r * cos_t[j];
        const double gy = ai + r * sin_t[j];
        const double g2 = gx * gx + gy * gy;
        // e^{-|γ|²} |γ|^{2n} / n! built up term by term.
        double term = std::exp(-g2);
        ring[0] += term;
        for (std::size_t n = 1; n <= n_max; ++n) {
          term *= g2 / static_cast<double>(n);
          ring[n] += term;
        }
      }
      const double w = p_weight * r * 0.5 * dr * dtheta;
      for (std::size_t n = 0; n <= n_max; ++n) acc[n] += w * ring[n];
    }
  }
  return acc;
}

inline double oracle_pn(const ModeSpec& mode, std::size_t n, const QuadratureGrid& grid = {}) {
  return oracle_distribution(mode, n, grid)[n];
}

}  // namespace qsi
