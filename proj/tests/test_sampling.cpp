#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <numeric>
#include <sstream>

#include "qsi/photon_stats.hpp"
#include "qsi/sampling.hpp"

namespace {

qsi::PhotonDistribution mixed() {
  return qsi::distribution_mix_converged(
      qsi::DistinguishableMix{{qsi::ModeSpec::coherent(0.5), qsi::ModeSpec::thermal(0.7)}}, 1e-12);
}

}  // namespace

TEST(Sampling, CountsAddUpToShots) {
  const auto h = qsi::sample_counts(mixed(), 12345, 1);
  EXPECT_EQ(std::accumulate(h.counts.begin(), h.counts.end(), std::uint64_t{0}), 12345u);
  EXPECT_EQ(h.shots, 12345u);
}

TEST(Sampling, ChiSquareGoodnessOfFit) {
  const auto dist = mixed();
  const std::uint64_t shots = 200000;
  const auto h = qsi::sample_counts(dist, shots, 11);
  // Pool bins with expected count < 5 into the last cell.
  double chi2 = 0.0, pooled_obs = 0.0, pooled_exp = 0.0;
  int cells = 0;
  for (std::size_t n = 0; n < dist.probs.size(); ++n) {
    const double expected = dist.probs[n] * static_cast<double>(shots);
    if (expected >= 5.0) {
      const double d = static_cast<double>(h.counts[n]) - expected;
      chi2 += d * d / expected;
      ++cells;
    } else {
      pooled_obs += static_cast<double>(h.counts[n]);
      pooled_exp += expected + (n + 1 == dist.probs.size() ? dist.tail_mass * static_cast<double>(shots) : 0.0);
    }
  }
  if (pooled_exp > 0.0) {
    chi2 += (pooled_obs - pooled_exp) * (pooled_obs - pooled_exp) / pooled_exp;
    ++cells;
  }
  const boost::math::chi_squared_distribution<double> ref(cells - 1);
  EXPECT_GT(boost::math::cdf(boost::math::complement(ref, chi2)), 1e-3) << "chi2 = " << chi2;
}

TEST(Sampling, TailMassLandsOnLastBin) {
  // Support truncated at n = 2 leaves most thermal mass above it.
  const auto dist = qsi::distribution_indistinguishable(qsi::ModeSpec::thermal(3.0), 2);
  const auto h = qsi::sample_counts(dist, 10000, 5);
  ASSERT_EQ(h.counts.size(), 3u);
  EXPECT_NEAR(static_cast<double>(h.counts[2]) / 10000.0, 1.0 - dist.probs[0] - dist.probs[1], 0.02);
}

TEST(Sampling, DeterministicPerSeedAndStream) {
  const auto d = mixed();
  EXPECT_EQ(qsi::sample_counts(d, 1000, 3, 9).counts, qsi::sample_counts(d, 1000, 3, 9).counts);
  EXPECT_NE(qsi::sample_counts(d, 1000, 3, 9).counts, qsi::sample_counts(d, 1000, 3, 10).counts);
}

TEST(Sampling, EmpiricalMeanWithinThreeSigma) {
  const auto d = mixed();
  const auto st = qsi::stats(d);
  const std::uint64_t shots = 10000;
  const auto h = qsi::sample_counts(d, shots, 21);
  EXPECT_NEAR(h.empirical_mean(), st.mean, 3.0 * std::sqrt(st.variance / static_cast<double>(shots)));
}

TEST(Features, EmpiricalFrequenciesWithoutRenormalization) {
  qsi::PhotonHistogram h;
  h.counts.assign(25, 0);
  h.counts[0] = 6, h.counts[1] = 2, h.counts[24] = 2;
  h.shots = 10;
  const auto f = qsi::to_features(h);
  EXPECT_DOUBLE_EQ(f.probs[0], 0.6);
  EXPECT_DOUBLE_EQ(f.probs[1], 0.2);
  EXPECT_DOUBLE_EQ(std::accumulate(f.probs.begin(), f.probs.end(), 0.0), 0.8);
  const auto proj = qsi::feature_projection(f);
  EXPECT_EQ(proj[0], 0.6);
  EXPECT_EQ(proj[2], 0.0);
}

TEST(Features, ZeroShotsIsAnError) {
  const auto h = qsi::sample_counts(mixed(), 0, 1);
  EXPECT_THROW(qsi::to_features(h), qsi::EmptyHistogram);
}

TEST(Features, ExactFeaturesTruncateTheDistribution) {
  const auto d = mixed();
  const auto f = qsi::exact_features(d);
  for (std::size_t n = 0; n < qsi::kNumFeatures; ++n) EXPECT_EQ(f.probs[n], d.probs[n]);
}

TEST(HistogramCsv, RoundTrip) {
  const auto h = qsi::sample_counts(mixed(), 500, 4);
  std::stringstream ss;
  qsi::write_histogram_csv(ss, h, 4);
  const auto back = qsi::read_histogram_csv(ss);
  EXPECT_EQ(back.counts, h.counts);
  EXPECT_EQ(back.shots, h.shots);
  std::stringstream bad("n,count\n0,x\n");
  EXPECT_THROW(qsi::read_histogram_csv(bad), qsi::SchemaError);
}
