#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "qsi/errors.hpp"
#include "qsi/photon_stats.hpp"
#include "qsi/rng.hpp"

namespace qsi {

inline constexpr std::size_t kNumFeatures = 21;

/// Photon-number-resolved counts from `shots` measurements.
struct PhotonHistogram {
  std::vector<std::uint64_t> counts;
  std::uint64_t shots = 0;

  double empirical_mean() const {
    if (shots == 0) return 0.0;
    double acc = 0.0;
    for (std::size_t n = 0; n < counts.size(); ++n) acc += static_cast<double>(n) * static_cast<double>(counts[n]);
    return acc / static_cast<double>(shots);
  }

  bool operator==(const PhotonHistogram&) const = default;
};

/// Empirical p(0..20). Mass above n = 20 is dropped, not renormalized.
struct FeatureVector {
  std::array<double, kNumFeatures> probs{};
};

/// Draws `shots` photon numbers from `dist` by inverse CDF. Residual tail
/// mass is assigned to n_max, so Σ counts == shots always holds.
inline PhotonHistogram sample_counts(const PhotonDistribution& dist, std::uint64_t shots, std::uint64_t seed,
                                     std::uint64_t stream = 0) {
  dist.validate();
  PhotonHistogram hist;
  hist.counts.assign(dist.probs.size(), 0);
  hist.shots = shots;
  if (shots == 0) return hist;

  std::vector<double> cdf(dist.probs.size());
  std::partial_sum(dist.probs.begin(), dist.probs.end(), cdf.begin());
  const auto last = cdf.end() - 1;

  StreamRng rng(seed, stream);
  for (std::uint64_t s = 0; s < shots; ++s) {
    const double u = rng.uniform();
    const auto it = std::upper_bound(cdf.begin(), last, u);
    ++hist.counts[static_cast<std::size_t>(it - cdf.begin())];
  }
  return hist;
}

inline FeatureVector to_features(const PhotonHistogram& hist) {
  if (hist.shots == 0) throw EmptyHistogram("to_features: histogram has zero shots");
  FeatureVector f;
  const auto shots = static_cast<double>(hist.shots);
  const std::size_t limit = std::min(hist.counts.size(), kNumFeatures);
  for (std::size_t n = 0; n < limit; ++n) f.probs[n] = static_cast<double>(hist.counts[n]) / shots;
  return f;
}

/// Infinite-shot features: the exact distribution truncated to n <= 20.
inline FeatureVector exact_features(const PhotonDistribution& dist) {
  FeatureVector f;
  const std::size_t limit = std::min(dist.probs.size(), kNumFeatures);
  for (std::size_t n = 0; n < limit; ++n) f.probs[n] = dist.probs[n];
  return f;
}

/// (p0, p1, p2): the plane used to visualise class clouds.
inline std::array<double, 3> feature_projection(const FeatureVector& f) {
  return {f.probs[0], f.probs[1], f.probs[2]};
}

/// CSV `n,count` preceded by a `# shots=D seed=S` comment line.
inline void write_histogram_csv(std::ostream& os, const PhotonHistogram& hist, std::uint64_t seed) {
  os << "# shots=" << hist.shots << " seed=" << seed << '\n';
  os << "n,count\n";
  for (std::size_t n = 0; n < hist.counts.size(); ++n) os << n << ',' << hist.counts[n] << '\n';
}

inline PhotonHistogram read_histogram_csv(std::istream& is) {
  PhotonHistogram hist;
  std::string line;
  bool header_seen = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != "n,count") throw SchemaError("histogram CSV: expected header 'n,count'");
      header_seen = true;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw SchemaError("histogram CSV: malformed row '" + line + "'");
    std::uint64_t n = 0, c = 0;
    try {
      n = std::stoull(line.substr(0, comma));
      c = std::stoull(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw SchemaError("histogram CSV: malformed row '" + line + "'");
    }
    if (n != hist.counts.size()) throw SchemaError("histogram CSV: rows must be n = 0, 1, 2, ... in order");
    hist.counts.push_back(c);
    hist.shots += c;
  }
  return hist;
}

}  // namespace qsi
