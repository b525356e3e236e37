#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "qsi/errors.hpp"
#include "qsi/special_functions.hpp"

namespace qsi {

/// Below this, m_tot or |α_tot|² is treated as exactly zero and the
/// closed-form Poisson / Bose-Einstein / vacuum limits are used.
inline constexpr double kDegenerateEps = 1e-12;
/// Default truncation: photon numbers 0..20, the classifier's feature width.
inline constexpr std::size_t kDefaultNMax = 20;
/// Moment calls extend the truncation until the tail is below this.
inline constexpr double kMomentTailTol = 1e-9;
inline constexpr std::size_t kMaxAutoNMax = 512;
/// stats() refuses distributions whose truncated tail exceeds this.
inline constexpr double kStatsTailLimit = 1e-6;

/// One indistinguishable group of light sources: the coherent amplitudes
/// already summed into α_tot plus the mean photon numbers of each thermal
/// source (they combine as m_tot = Σ m̄_l).
struct ModeSpec {
  double alpha_re = 0.0;
  double alpha_im = 0.0;
  std::vector<double> m_thermal;

  static ModeSpec vacuum() { return {}; }
  /// Coherent source with |α|² = mean and phase 0.
  static ModeSpec coherent(double mean) { return {std::sqrt(std::max(mean, 0.0)), 0.0, {}}; }
  static ModeSpec thermal(double mean) { return {0.0, 0.0, {mean}}; }
  static ModeSpec displaced_thermal(double coherent_mean, double thermal_mean) {
    return {std::sqrt(std::max(coherent_mean, 0.0)), 0.0, {thermal_mean}};
  }

  double m_tot() const { return std::accumulate(m_thermal.begin(), m_thermal.end(), 0.0); }
  double alpha_sq() const { return alpha_re * alpha_re + alpha_im * alpha_im; }
  double mean() const { return alpha_sq() + m_tot(); }

  void validate() const {
    if (!std::isfinite(alpha_re) || !std::isfinite(alpha_im)) {
      throw DomainError("ModeSpec: coherent amplitude must be finite");
    }
    for (double m : m_thermal) {
      if (!(m >= 0.0) || !std::isfinite(m)) {
        throw DomainError("ModeSpec: thermal mean photon numbers must be finite and >= 0");
      }
    }
  }
};

/// Distinguishable modes; their photon counts add (discrete convolution).
struct DistinguishableMix {
  std::vector<ModeSpec> modes;

  double mean() const {
    double total = 0.0;
    for (const auto& m : modes) total += m.mean();
    return total;
  }

  void validate() const {
    if (modes.empty()) throw DomainError("DistinguishableMix: needs at least one mode");
    for (const auto& m : modes) m.validate();
  }
};

/// Truncated photon-number distribution p(0..n_max).
struct PhotonDistribution {
  std::vector<double> probs;
  /// 1 - Σ probs: probability mass above n_max.
  double tail_mass = 0.0;

  std::size_t n_max() const { return probs.empty() ? 0 : probs.size() - 1; }

  static PhotonDistribution from_probs(std::vector<double> p) {
    PhotonDistribution d;
    d.probs = std::move(p);
    d.tail_mass = 1.0 - std::accumulate(d.probs.begin(), d.probs.end(), 0.0);
    return d;
  }

  static PhotonDistribution delta(std::size_t n, std::size_t n_max) {
    std::vector<double> p(std::max(n, n_max) + 1, 0.0);
    p[n] = 1.0;
    return from_probs(std::move(p));
  }

  void validate() const {
    if (probs.empty()) throw DomainError("PhotonDistribution: empty probability vector");
    double total = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0) || !std::isfinite(p)) {
        throw DomainError("PhotonDistribution: probabilities must be finite and >= 0");
      }
      total += p;
    }
    if (total > 1.0 + 1e-12) throw DomainError("PhotonDistribution: probabilities sum above 1");
  }
};

struct DistributionStats {
  double mean = 0.0;
  double variance = 0.0;
  double g2 = 0.0;
};

inline double poisson_pmf(double mean, std::size_t n) {
  if (mean <= 0.0) return n == 0 ? 1.0 : 0.0;
  return std::exp(static_cast<double>(n) * std::log(mean) - mean - log_factorial(n));
}

inline double bose_einstein_pmf(double mean, std::size_t n) {
  if (mean <= 0.0) return n == 0 ? 1.0 : 0.0;
  const double nn = static_cast<double>(n);
  return std::exp(nn * std::log(mean) - (nn + 1.0) * std::log1p(mean));
}

/// p(n) for an indistinguishable coherent + thermal combination.
///
/// The general case evaluates
///   m^n e^{-|α|²/m} / (π (m+1)^{n+1})
///     Σ_k Γ(1/2+n-k) Γ(1/2+k) / (k! (n-k)!)
///         1F1(1/2+n-k; 1/2; Re(α)²/(m(m+1))) 1F1(1/2+k; 1/2; Im(α)²/(m(m+1)))
/// with every summand kept in log space. The e^{x} growth of each 1F1 is
/// pulled out analytically: -|α|²/m + (Re² + Im²)/(m(m+1)) = -|α|²/(m+1),
/// so the exponent never forms a difference of two large numbers as m -> 0.
inline double pn_indistinguishable(const ModeSpec& mode, std::size_t n) {
  mode.validate();
  const double m = mode.m_tot();
  const double a2 = mode.alpha_sq();
  if (m < kDegenerateEps && a2 < kDegenerateEps) return n == 0 ? 1.0 : 0.0;
  if (m < kDegenerateEps) return poisson_pmf(a2, n);
  if (a2 < kDegenerateEps) return bose_einstein_pmf(m, n);

  const double nn = static_cast<double>(n);
  const double denom = m * (m + 1.0);
  const double x_re = mode.alpha_re * mode.alpha_re / denom;
  const double x_im = mode.alpha_im * mode.alpha_im / denom;
  const double log_prefactor =
      nn * std::log(m) - (nn + 1.0) * std::log1p(m) - a2 / (m + 1.0) - std::log(std::numbers::pi);

  std::vector<double> log_terms(n + 1);
  for (std::size_t k = 0; k <= n; ++k) {
    const double a_re = 0.5 + static_cast<double>(n - k);
    const double a_im = 0.5 + static_cast<double>(k);
    double t = log_gamma(a_re) + log_gamma(a_im) - log_factorial(k) - log_factorial(n - k);
    if (x_re > 0.0) t += log_kummer_half_scaled(a_re, x_re);
    if (x_im > 0.0) t += log_kummer_half_scaled(a_im, x_im);
    log_terms[k] = t;
  }
  const double p = std::exp(log_prefactor + log_sum_exp(log_terms));
  return std::max(p, 0.0);
}

inline PhotonDistribution distribution_indistinguishable(const ModeSpec& mode,
                                                         std::size_t n_max = kDefaultNMax) {
  mode.validate();
  std::vector<double> p(n_max + 1);
  for (std::size_t n = 0; n <= n_max; ++n) p[n] = pn_indistinguishable(mode, n);
  return PhotonDistribution::from_probs(std::move(p));
}

/// Photon-count distribution of independent distinguishable modes.
/// The result is truncated at the smallest input n_max.
inline PhotonDistribution convolve(std::span<const PhotonDistribution> dists) {
  if (dists.empty()) throw EmptyInput("convolve: needs at least one distribution");
  std::size_t n_max = dists.front().n_max();
  for (const auto& d : dists) {
    if (d.probs.empty()) throw DomainError("convolve: empty distribution");
    n_max = std::min(n_max, d.n_max());
  }
  std::vector<double> acc(dists.front().probs.begin(), dists.front().probs.begin() + n_max + 1);
  std::vector<double> next(n_max + 1);
  for (std::size_t i = 1; i < dists.size(); ++i) {
    const auto& q = dists[i].probs;
    for (std::size_t n = 0; n <= n_max; ++n) {
      double s = 0.0;
      for (std::size_t k = 0; k <= n; ++k) s += acc[k] * q[n - k];
      next[n] = s;
    }
    acc.swap(next);
  }
  return PhotonDistribution::from_probs(std::move(acc));
}

inline PhotonDistribution convolve(std::initializer_list<PhotonDistribution> dists) {
  return convolve(std::span<const PhotonDistribution>(dists.begin(), dists.size()));
}

inline PhotonDistribution distribution_mix(const DistinguishableMix& mix,
                                           std::size_t n_max = kDefaultNMax) {
  mix.validate();
  std::vector<PhotonDistribution> parts;
  parts.reserve(mix.modes.size());
  for (const auto& mode : mix.modes) parts.push_back(distribution_indistinguishable(mode, n_max));
  return convolve(parts);
}

/// distribution_mix with the truncation grown (doubling from 20) until the
/// tail mass falls below `tail_tol` or n_max reaches 512.
inline PhotonDistribution distribution_mix_converged(const DistinguishableMix& mix,
                                                     double tail_tol = kMomentTailTol) {
  std::size_t n_max = kDefaultNMax;
  for (;;) {
    auto d = distribution_mix(mix, n_max);
    if (d.tail_mass < tail_tol || n_max >= kMaxAutoNMax) return d;
    n_max = std::min(2 * n_max, kMaxAutoNMax);
  }
}

/// Mean, variance and g2 = 1 + (Var - mean) / mean² of a truncated distribution.
inline DistributionStats stats(const PhotonDistribution& dist) {
  dist.validate();
  if (dist.tail_mass > kStatsTailLimit) {
    throw TailTooHeavy("stats: tail mass " + std::to_string(dist.tail_mass) +
                       " above n_max would bias the moments; raise n_max");
  }
  double mean = 0.0;
  for (std::size_t n = 0; n < dist.probs.size(); ++n) mean += static_cast<double>(n) * dist.probs[n];
  double var = 0.0;
  for (std::size_t n = 0; n < dist.probs.size(); ++n) {
    const double d = static_cast<double>(n) - mean;
    var += d * d * dist.probs[n];
  }
  if (!(mean > 0.0)) throw UndefinedG2("stats: g2 is undefined for zero mean photon number");
  return {mean, std::max(var, 0.0), 1.0 + (var - mean) / (mean * mean)};
}

inline DistributionStats stats(const DistinguishableMix& mix) {
  return stats(distribution_mix_converged(mix));
}

/// CSV with header `n,p`, 17 significant digits.
inline void write_distribution_csv(std::ostream& os, const PhotonDistribution& dist) {
  os << "n,p\n";
  const auto old = os.precision(17);
  for (std::size_t n = 0; n < dist.probs.size(); ++n) os << n << ',' << dist.probs[n] << '\n';
  os.precision(old);
}

/// Reads `n,p` (or `n,count`, normalized by the total) rows. Lines starting
/// with '#' are comments. Returns the distribution indexed from n = 0.
inline PhotonDistribution read_distribution_csv(std::istream& is) {
  std::string line;
  std::vector<double> values;
  bool counts = false;
  bool header_seen = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      if (line == "n,p") continue;
      if (line == "n,count") {
        counts = true;
        continue;
      }
      throw SchemaError("distribution CSV: expected header 'n,p' or 'n,count', got '" + line + "'");
    }
    std::istringstream row(line);
    std::string n_field, v_field;
    if (!std::getline(row, n_field, ',') || !std::getline(row, v_field)) {
      throw SchemaError("distribution CSV: malformed row '" + line + "'");
    }
    std::size_t n = 0;
    double v = 0.0;
    try {
      n = std::stoul(n_field);
      v = std::stod(v_field);
    } catch (const std::exception&) {
      throw SchemaError("distribution CSV: malformed row '" + line + "'");
    }
    if (n != values.size()) throw SchemaError("distribution CSV: rows must list n = 0, 1, 2, ... in order");
    values.push_back(v);
  }
  if (values.empty()) throw SchemaError("distribution CSV: no rows");
  if (counts) {
    const double total = std::accumulate(values.begin(), values.end(), 0.0);
    if (!(total > 0.0)) throw EmptyHistogram("distribution CSV: histogram has no counts");
    for (double& v : values) v /= total;
  }
  auto d = PhotonDistribution::from_probs(std::move(values));
  d.validate();
  return d;
}

}  // namespace qsi
