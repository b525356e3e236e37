#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qsi/errors.hpp"
#include "qsi/io_util.hpp"
#include "qsi/photon_stats.hpp"

namespace qsi {

/// Mean photon numbers held by one distinguishable mode: a coherent source
/// and up to two thermal sources. Within a mode the thermal sources add to a
/// single thermal mean, so fits report the sum in thermal1 (thermal1 >= thermal2).
struct ModeAllocation {
  double coherent = 0.0;
  double thermal1 = 0.0;
  double thermal2 = 0.0;

  double total() const { return coherent + thermal1 + thermal2; }
  ModeSpec to_mode() const { return ModeSpec::displaced_thermal(coherent, thermal1 + thermal2); }
};

struct AllocationCandidate {
  std::vector<ModeAllocation> modes;

  double total() const {
    double t = 0.0;
    for (const auto& m : modes) t += m.total();
    return t;
  }

  std::size_t active_sources() const {
    std::size_t n = 0;
    for (const auto& m : modes) n += (m.coherent > 0.0) + (m.thermal1 > 0.0) + (m.thermal2 > 0.0);
    return n;
  }

  DistinguishableMix to_mix() const {
    DistinguishableMix mix;
    for (const auto& m : modes) mix.modes.push_back(m.to_mode());
    return mix;
  }
};

struct FitConfig {
  double grid_step = 0.05;
  std::size_t n_fit_max = 6;
  std::size_t max_modes = 3;

  void validate() const {
    if (!(grid_step > 0.0)) throw DomainError("FitConfig: grid_step must be positive");
    if (max_modes == 0) throw DomainError("FitConfig: max_modes must be at least 1");
  }
};

struct FitResult {
  AllocationCandidate best;
  /// Root-sum-square residual over n = 0..n_fit_max.
  double objective = 0.0;
  PhotonDistribution theory_distribution;
  double measured_mean = 0.0;
  std::size_t candidates = 0;
};

/// Σ n p(n) over the available support.
inline double measured_mean(std::span<const double> p) {
  double mean = 0.0;
  for (std::size_t n = 0; n < p.size(); ++n) mean += static_cast<double>(n) * p[n];
  return mean;
}

inline double fit_objective(std::span<const double> p_exp, std::span<const double> p_th, std::size_t n_fit_max) {
  double acc = 0.0;
  for (std::size_t n = 0; n <= n_fit_max; ++n) {
    const double d = p_exp[n] - p_th[n];
    acc += d * d;
  }
  return std::sqrt(acc);
}

namespace detail {

/// Grid units held by one mode: coherent units and total thermal units.
using ModeUnits = std::pair<std::size_t, std::size_t>;

/// Non-increasing sequences (by index into `pairs`) of 1..max_modes non-vacuum
/// modes whose units add up to `units`. Each multiset of modes appears once.
inline void enumerate_multisets(const std::vector<ModeUnits>& pairs, std::size_t units, std::size_t max_modes,
                                std::vector<std::size_t>& current, std::size_t max_index,
                                std::vector<std::vector<std::size_t>>& out) {
  if (units == 0) {
    if (!current.empty()) out.push_back(current);
    return;
  }
  if (current.size() == max_modes) return;
  for (std::size_t k = 0; k <= max_index && k < pairs.size(); ++k) {
    const std::size_t u = pairs[k].first + pairs[k].second;
    if (u > units) continue;
    current.push_back(k);
    enumerate_multisets(pairs, units - u, max_modes, current, k, out);
    current.pop_back();
  }
}

}  // namespace detail

/// Exhaustive search over allocations of round(mean / grid_step) grid units to
/// up to `max_modes` distinguishable modes. The reported objective is the
/// exact minimum; exact ties go to the candidate with fewer active sources,
/// then to the earlier candidate.
///
/// Some allocations are exactly equivalent: pure-coherent modes merge into
/// one Poisson mode, and coherent amplitude can move freely between modes
/// that share the same thermal mean. Which representative wins is decided by
/// rounding, so callers comparing allocations should compare those classes.
inline FitResult fit_distribution(std::span<const double> p_exp, const FitConfig& cfg = {}) {
  cfg.validate();
  if (p_exp.size() < cfg.n_fit_max + 1) {
    throw InsufficientSupport("fit_distribution: input stops at n = " + std::to_string(p_exp.size()) +
                              "; fitting needs entries through n = " + std::to_string(cfg.n_fit_max));
  }
  const double mean = measured_mean(p_exp);
  if (!(mean > 0.0)) throw ZeroMean("fit_distribution: measured mean photon number is zero");
  const auto units = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(mean / cfg.grid_step)));

  std::vector<detail::ModeUnits> pairs;
  for (std::size_t c = units + 1; c-- > 0;) {
    for (std::size_t t = units - c + 1; t-- > 0;) {
      if (c + t > 0) pairs.emplace_back(c, t);
    }
  }
  std::vector<std::vector<std::size_t>> multisets;
  std::vector<std::size_t> current;
  detail::enumerate_multisets(pairs, units, cfg.max_modes, current, pairs.size(), multisets);

  std::map<std::size_t, PhotonDistribution> cache;
  auto mode_dist = [&](std::size_t k) -> const PhotonDistribution& {
    auto it = cache.find(k);
    if (it == cache.end()) {
      const ModeSpec mode = ModeSpec::displaced_thermal(static_cast<double>(pairs[k].first) * cfg.grid_step,
                                                        static_cast<double>(pairs[k].second) * cfg.grid_step);
      it = cache.emplace(k, distribution_indistinguishable(mode, cfg.n_fit_max)).first;
    }
    return it->second;
  };
  auto sources = [&](const std::vector<std::size_t>& ms) {
    std::size_t n = 0;
    for (std::size_t k : ms) n += (pairs[k].first > 0) + (pairs[k].second > 0);
    return n;
  };

  std::size_t best = 0;
  double best_obj = std::numeric_limits<double>::infinity();
  std::vector<PhotonDistribution> parts;
  for (std::size_t idx = 0; idx < multisets.size(); ++idx) {
    parts.clear();
    for (std::size_t k : multisets[idx]) parts.push_back(mode_dist(k));
    const auto th = convolve(parts);
    const double obj = fit_objective(p_exp, th.probs, cfg.n_fit_max);
    const bool better = obj < best_obj || (obj == best_obj && sources(multisets[idx]) < sources(multisets[best]));
    if (better) {
      best = idx;
      best_obj = obj;
    }
  }

  FitResult result;
  for (std::size_t k : multisets[best]) {
    result.best.modes.push_back({static_cast<double>(pairs[k].first) * cfg.grid_step,
                                 static_cast<double>(pairs[k].second) * cfg.grid_step, 0.0});
  }
  result.objective = best_obj;
  result.theory_distribution = distribution_mix(result.best.to_mix(), std::max<std::size_t>(p_exp.size() - 1, cfg.n_fit_max));
  result.measured_mean = mean;
  result.candidates = multisets.size();
  return result;
}

/// Allocation table followed by the measured-vs-theory distribution.
inline void write_fit_report(std::ostream& os, const FitResult& fit, std::span<const double> p_exp) {
  os << "# objective=" << fmt17(fit.objective) << " measured_mean=" << fmt17(fit.measured_mean)
     << " candidates=" << fit.candidates << '\n';
  os << "mode,coherent,thermal1,thermal2\n";
  for (std::size_t k = 0; k < fit.best.modes.size(); ++k) {
    const auto& m = fit.best.modes[k];
    os << k << ',' << fmt17(m.coherent) << ',' << fmt17(m.thermal1) << ',' << fmt17(m.thermal2) << '\n';
  }
  os << "\nn,p_measured,p_theory\n";
  for (std::size_t n = 0; n < fit.theory_distribution.probs.size(); ++n) {
    os << n << ',' << fmt17(n < p_exp.size() ? p_exp[n] : 0.0) << ',' << fmt17(fit.theory_distribution.probs[n])
       << '\n';
  }
}

}  // namespace qsi
