#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <sstream>

#include "qsi/fitting.hpp"

using qsi::AllocationCandidate;
using qsi::FitConfig;
using qsi::ModeAllocation;

namespace {

std::vector<double> model_distribution(const AllocationCandidate& a, std::size_t n_max = 20) {
  return qsi::distribution_mix(a.to_mix(), n_max).probs;
}

using Units = std::pair<std::size_t, std::size_t>;

// Exhaustive oracle: every ordered assignment of grid units to three modes
// (coherent, thermal) slots, vacuum modes dropped, modes evaluated in
// ascending (coherent, thermal) order.
double exhaustive_minimum(const std::vector<double>& p, double step, std::size_t units) {
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> slot(6, 0);
  std::map<Units, qsi::PhotonDistribution> cache;
  const std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t i, std::size_t left) {
    if (i == 5) {
      slot[5] = left;
      std::vector<Units> modes;
      for (std::size_t m = 0; m < 3; ++m) {
        if (slot[2 * m] + slot[2 * m + 1] > 0) modes.emplace_back(slot[2 * m], slot[2 * m + 1]);
      }
      std::sort(modes.begin(), modes.end());
      std::vector<qsi::PhotonDistribution> parts;
      for (const auto& u : modes) {
        auto it = cache.find(u);
        if (it == cache.end()) {
          const auto mode = qsi::ModeSpec::displaced_thermal(static_cast<double>(u.first) * step,
                                                             static_cast<double>(u.second) * step);
          it = cache.emplace(u, qsi::distribution_indistinguishable(mode, 6)).first;
        }
        parts.push_back(it->second);
      }
      best = std::min(best, qsi::fit_objective(p, qsi::convolve(parts).probs, 6));
      return;
    }
    for (std::size_t u = 0; u <= left; ++u) {
      slot[i] = u;
      rec(i + 1, left - u);
    }
  };
  rec(0, units);
  return best;
}

}  // namespace

TEST(MeasuredMean, Examples) {
  EXPECT_DOUBLE_EQ(qsi::measured_mean(std::vector{0.0, 0.0, 1.0}), 2.0);
  EXPECT_DOUBLE_EQ(qsi::measured_mean(std::vector{0.5, 0.5}), 0.5);
  // Thermal m = 1 truncated at 20 loses Σ_{n>20} n 2^{-(n+1)} = 22 / 2^21.
  const auto th = qsi::distribution_indistinguishable(qsi::ModeSpec::thermal(1.0), 20);
  EXPECT_NEAR(qsi::measured_mean(th.probs), 1.0 - 22.0 / std::pow(2.0, 21), 1e-14);
}

TEST(FitDistribution, PoissonInputIsOneCoherentSource) {
  const auto fit = qsi::fit_distribution(qsi::distribution_indistinguishable(qsi::ModeSpec::coherent(1.0), 20).probs);
  ASSERT_EQ(fit.best.modes.size(), 1u);
  EXPECT_NEAR(fit.best.modes[0].coherent, 1.0, 1e-12);
  EXPECT_EQ(fit.best.modes[0].thermal1, 0.0);
  EXPECT_LT(fit.objective, 1e-10);
}

TEST(FitDistribution, ThermalInputIsOneThermalSource) {
  const auto fit = qsi::fit_distribution(qsi::distribution_indistinguishable(qsi::ModeSpec::thermal(1.0), 20).probs);
  ASSERT_EQ(fit.best.modes.size(), 1u);
  EXPECT_EQ(fit.best.modes[0].coherent, 0.0);
  EXPECT_NEAR(fit.best.modes[0].thermal1, 1.0, 1e-12);
  EXPECT_LT(fit.objective, 1e-10);
}

TEST(FitDistribution, RecoversThreeModeAllocation) {
  AllocationCandidate truth;
  truth.modes = {{0.4, 0.0, 0.0}, {0.0, 0.4, 0.0}, {0.0, 0.4, 0.0}};
  const auto fit = qsi::fit_distribution(model_distribution(truth));
  ASSERT_EQ(fit.best.modes.size(), 3u);
  auto got = fit.best.modes;
  std::sort(got.begin(), got.end(), [](const auto& a, const auto& b) { return a.coherent > b.coherent; });
  EXPECT_NEAR(got[0].coherent, 0.4, 0.05);
  EXPECT_NEAR(got[1].thermal1, 0.4, 0.05);
  EXPECT_NEAR(got[2].thermal1, 0.4, 0.05);
  EXPECT_LT(fit.objective, 1e-10);
}

TEST(FitDistribution, ConstraintAndOracleOptimality) {
  AllocationCandidate truth;
  truth.modes = {{0.3, 0.2, 0.0}, {0.0, 0.35, 0.0}};
  auto p = model_distribution(truth);
  // Perturb so the optimum is not an exact match.
  p[1] += 0.003, p[2] -= 0.003;
  const FitConfig cfg;
  const auto fit = qsi::fit_distribution(p, cfg);
  EXPECT_NEAR(fit.best.total(), fit.measured_mean, cfg.grid_step);
  const auto units = static_cast<std::size_t>(std::llround(fit.measured_mean / cfg.grid_step));
  EXPECT_EQ(fit.objective, exhaustive_minimum(p, cfg.grid_step, units));
  for (const auto& m : fit.best.modes) EXPECT_GE(m.thermal1, m.thermal2);
}

TEST(FitDistribution, EquivalentAllocationsReproduceTheInput) {
  // Coherent mean moves freely between modes sharing a thermal mean, so the
  // fit may return any split of the 0.55 total; the distribution is the same.
  AllocationCandidate truth;
  truth.modes = {{0.35, 0.25, 0.0}, {0.2, 0.25, 0.0}};
  const auto p = model_distribution(truth);
  const auto fit = qsi::fit_distribution(p);
  ASSERT_EQ(fit.best.modes.size(), 2u);
  EXPECT_NEAR(fit.best.modes[0].coherent + fit.best.modes[1].coherent, 0.55, 1e-12);
  EXPECT_NEAR(fit.best.modes[0].thermal1, 0.25, 1e-12);
  EXPECT_NEAR(fit.best.modes[1].thermal1, 0.25, 1e-12);
  EXPECT_LT(fit.objective, 1e-15);
  for (std::size_t n = 0; n <= 6; ++n) EXPECT_NEAR(fit.theory_distribution.probs[n], p[n], 1e-15);
}

TEST(FitDistribution, Errors) {
  EXPECT_THROW(qsi::fit_distribution(std::vector{0.5, 0.2, 0.1, 0.1, 0.1}), qsi::InsufficientSupport);
  EXPECT_THROW(qsi::fit_distribution(std::vector{1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0}), qsi::ZeroMean);
  FitConfig bad;
  bad.grid_step = 0.0;
  EXPECT_THROW(qsi::fit_distribution(std::vector(7, 0.1), bad), qsi::DomainError);
}

TEST(FitDistribution, ReportListsAllocationAndBars) {
  const auto p = qsi::distribution_indistinguishable(qsi::ModeSpec::coherent(0.5), 10).probs;
  const auto fit = qsi::fit_distribution(p);
  std::stringstream ss;
  qsi::write_fit_report(ss, fit, p);
  const auto text = ss.str();
  EXPECT_NE(text.find("mode,coherent,thermal1,thermal2\n0,0.5,0,0\n"), std::string::npos);
  EXPECT_NE(text.find("n,p_measured,p_theory\n"), std::string::npos);
}
