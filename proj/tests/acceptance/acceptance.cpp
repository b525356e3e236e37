// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (0 when everything passes).

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "qsi/classifier.hpp"
#include "qsi/fitting.hpp"
#include "qsi/imaging.hpp"
#include "qsi/photon_oracle.hpp"
#include "qsi/photon_stats.hpp"
#include "qsi/sampling.hpp"

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

std::string num(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
  Outcome o;
  const auto t0 = Clock::now();
  double worst = 0.0, worst_norm = 0.0;
  for (double m : {0.1, 0.5, 1.0, 2.0}) {
    for (double a2 : {0.0, 0.5, 1.0, 2.0}) {
      const auto mode = qsi::ModeSpec::displaced_thermal(a2, m);
      const auto oracle = qsi::oracle_distribution(mode, 10);
      for (std::size_t n = 0; n <= 10; ++n) {
        worst = std::max(worst, std::abs(qsi::pn_indistinguishable(mode, n) - oracle[n]));
      }
      const auto d = qsi::distribution_indistinguishable(mode, 80);
      const double total = std::accumulate(d.probs.begin(), d.probs.end(), 0.0);
      worst_norm = std::max(worst_norm, std::abs(1.0 - total));
      o.require(total >= 1.0 - 1e-8 && total <= 1.0 + 1e-12,
                "sum p(n<=80) = " + num(total, 17) + " at m=" + num(m) + " a2=" + num(a2));
    }
  }
  const double elapsed = seconds_since(t0);
  o.require(worst <= 1e-6, "max |p - oracle| = " + num(worst));
  o.require(elapsed < 60.0, "runtime " + num(elapsed) + " s");
  o.detail += (o.detail.empty() ? "" : " | ") + std::string("max |p - oracle| = ") + num(worst) +
              ", max |1 - sum| = " + num(worst_norm) + ", " + num(elapsed, 3) + " s";
  return o;
}

Outcome criterion2() {
  Outcome o;
  double poisson_err = 0.0, be_err = 0.0, g2_err = 0.0;
  for (double b : {0.1, 0.5, 1.0, 1.5, 2.0}) {
    const auto near_poisson = qsi::ModeSpec::displaced_thermal(b, 1e-9);
    const auto near_be = qsi::ModeSpec::displaced_thermal(1e-10, b);
    for (std::size_t n = 0; n <= 20; ++n) {
      poisson_err = std::max(poisson_err, std::abs(qsi::pn_indistinguishable(near_poisson, n) - qsi::poisson_pmf(b, n)));
      be_err = std::max(be_err, std::abs(qsi::pn_indistinguishable(near_be, n) - qsi::bose_einstein_pmf(b, n)));
    }
    const double g_coh = qsi::stats(qsi::DistinguishableMix{{qsi::ModeSpec::coherent(b)}}).g2;
    const double g_th = qsi::stats(qsi::DistinguishableMix{{qsi::ModeSpec::thermal(b)}}).g2;
    g2_err = std::max({g2_err, std::abs(g_coh - 1.0), std::abs(g_th - 2.0)});
  }
  const double g_two =
      qsi::stats(qsi::DistinguishableMix{{qsi::ModeSpec::thermal(0.7), qsi::ModeSpec::thermal(0.7)}}).g2;
  o.require(poisson_err <= 1e-6, "Poisson limit error " + num(poisson_err));
  o.require(be_err <= 1e-6, "Bose-Einstein limit error " + num(be_err));
  o.require(g2_err <= 1e-6, "single-mode g2 error " + num(g2_err));
  o.require(std::abs(g_two - 1.5) <= 1e-6, "two thermal modes g2 = " + num(g_two, 12));
  o.detail += (o.detail.empty() ? "" : " | ") + std::string("Poisson ") + num(poisson_err) + ", BE " + num(be_err) +
              ", g2 " + num(g2_err) + ", two-thermal g2 " + num(g_two, 12);
  return o;
}

Outcome criterion3() {
  Outcome o;
  double worst = 0.0;
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    const auto model = qsi::MLPModel::random_uniform(qsi::derive_seed(300, trial), 1.0);
    qsi::StreamRng rng(qsi::derive_seed(301, trial), 0);
    std::vector<qsi::LabeledItem> batch(5 + rng.below(20));
    for (auto& it : batch) {
      double s = 0.0;
      for (double& p : it.features.probs) s += (p = rng.uniform());
      for (double& p : it.features.probs) p /= s;
      it.label = qsi::kAllLabels[rng.below(qsi::kNumClasses)];
    }
    const Eigen::VectorXd g = qsi::gradient(model, batch).flatten();
    const Eigen::VectorXd w = model.flatten();
    Eigen::VectorXd fd(w.size());
    const double h = 1e-5;
    for (Eigen::Index k = 0; k < w.size(); ++k) {
      qsi::MLPModel plus, minus;
      Eigen::VectorXd wp = w, wm = w;
      wp[k] += h;
      wm[k] -= h;
      plus.assign(wp);
      minus.assign(wm);
      fd[k] = (qsi::kl_loss(plus, batch) - qsi::kl_loss(minus, batch)) / (2.0 * h);
    }
    worst = std::max(worst, (g - fd).norm() / g.norm());
  }
  o.require(worst <= 1e-5, "relative error " + num(worst));
  o.detail += (o.detail.empty() ? "" : " | ") + std::string("max relative error ") + num(worst) + " over 20 pairs";
  return o;
}

Outcome criterion4() {
  Outcome o;
  const auto t0 = Clock::now();
  const std::vector<std::uint64_t> shots{100, 500, 1000, 3500, 10000};
  std::vector<double> acc;
  for (auto d : shots) {
    double sum = 0.0;
    for (std::uint64_t r = 0; r < 5; ++r) {
      const std::uint64_t seed = qsi::derive_seed(2024, r);
      const auto data = qsi::generate_dataset(qsi::default_class_definitions(), d, 1000, seed);
      qsi::TrainConfig cfg;
      cfg.seed = seed;
      sum += qsi::evaluate(qsi::train_scg(data, cfg).model, data.test).accuracy;
    }
    acc.push_back(sum / 5.0);
  }
  const double elapsed = seconds_since(t0);
  o.require(acc[0] >= 0.72, "accuracy at D=100 is " + num(acc[0]));
  o.require(acc[3] >= 0.90, "accuracy at D=3500 is " + num(acc[3]));
  for (std::size_t k = 0; k + 1 < acc.size(); ++k) {
    o.require(acc[k + 1] >= acc[k] - 0.02, "drop from D=" + std::to_string(shots[k]) + " to D=" +
                                               std::to_string(shots[k + 1]));
  }
  o.require(elapsed < 600.0, "runtime " + num(elapsed) + " s");
  std::string curve;
  for (std::size_t k = 0; k < acc.size(); ++k) curve += (k ? ", " : "") + std::to_string(shots[k]) + ":" + num(acc[k]);
  o.detail += (o.detail.empty() ? "" : " | ") + std::string("mean accuracy ") + curve + ", " + num(elapsed, 3) + " s";
  return o;
}

using Point3 = std::array<double, 3>;

std::vector<Point3> feature_cloud(const qsi::PhotonDistribution& dist, std::uint64_t shots, std::size_t points,
                                  std::uint64_t seed, std::uint64_t stream_base) {
  std::vector<Point3> cloud;
  for (std::size_t k = 0; k < points; ++k) {
    const auto h = qsi::sample_counts(dist, shots, seed, qsi::stream_id(qsi::StreamPurpose::kHistogram, stream_base + k));
    cloud.push_back(qsi::feature_projection(qsi::to_features(h)));
  }
  return cloud;
}

double mean_radius(const std::vector<Point3>& cloud) {
  Point3 c{};
  for (const auto& p : cloud) {
    for (int a = 0; a < 3; ++a) c[a] += p[a] / static_cast<double>(cloud.size());
  }
  double r = 0.0;
  for (const auto& p : cloud) r += std::hypot(p[0] - c[0], p[1] - c[1], p[2] - c[2]);
  return r / static_cast<double>(cloud.size());
}

// Multiclass perceptron with averaged weights on standardized features.
class Perceptron {
 public:
  void fit(const std::vector<Point3>& x, const std::vector<std::size_t>& y, std::size_t epochs) {
    for (int a = 0; a < 3; ++a) {
      double m = 0.0, v = 0.0;
      for (const auto& p : x) m += p[a];
      m /= static_cast<double>(x.size());
      for (const auto& p : x) v += (p[a] - m) * (p[a] - m);
      mean_[a] = m;
      scale_[a] = std::sqrt(v / static_cast<double>(x.size()));
    }
    std::array<std::array<double, 4>, qsi::kNumClasses> w{}, sum{};
    std::size_t steps = 0;
    for (std::size_t e = 0; e < epochs; ++e) {
      for (std::size_t i = 0; i < x.size(); ++i) {
        const auto z = standardize(x[i]);
        const auto pred = argmax(w, z);
        if (pred != y[i]) {
          for (int a = 0; a < 4; ++a) w[y[i]][a] += z[a], w[pred][a] -= z[a];
        }
        for (std::size_t c = 0; c < qsi::kNumClasses; ++c) {
          for (int a = 0; a < 4; ++a) sum[c][a] += w[c][a];
        }
        ++steps;
      }
    }
    for (std::size_t c = 0; c < qsi::kNumClasses; ++c) {
      for (int a = 0; a < 4; ++a) w_[c][a] = sum[c][a] / static_cast<double>(steps);
    }
  }

  std::size_t predict(const Point3& p) const { return argmax(w_, standardize(p)); }

 private:
  std::array<double, 4> standardize(const Point3& p) const {
    return {(p[0] - mean_[0]) / scale_[0], (p[1] - mean_[1]) / scale_[1], (p[2] - mean_[2]) / scale_[2], 1.0};
  }

  static std::size_t argmax(const std::array<std::array<double, 4>, qsi::kNumClasses>& w,
                            const std::array<double, 4>& z) {
    std::size_t best = 0;
    double best_score = -INFINITY;
    for (std::size_t c = 0; c < qsi::kNumClasses; ++c) {
      double s = 0.0;
      for (int a = 0; a < 4; ++a) s += w[c][a] * z[a];
      if (s > best_score) best_score = s, best = c;
    }
    return best;
  }

  Point3 mean_{}, scale_{};
  std::array<std::array<double, 4>, qsi::kNumClasses> w_{};
};

Outcome criterion5() {
  Outcome o;
  const auto defs = qsi::default_class_definitions();
  const std::vector<std::uint64_t> shots{10, 100, 1000, 10000};
  std::string radii;
  for (std::size_t c = 0; c < qsi::kNumClasses; ++c) {
    const auto dist = qsi::distribution_mix_converged(defs[c], 1e-12);
    double prev = INFINITY;
    radii += (c ? "; " : "") + std::string(qsi::to_string(qsi::kAllLabels[c])) + ":";
    for (std::size_t k = 0; k < shots.size(); ++k) {
      const double r = mean_radius(feature_cloud(dist, shots[k], 200, 55, (c * 4 + k) * 200));
      radii += " " + num(r, 3);
      o.require(r < prev, std::string(qsi::to_string(qsi::kAllLabels[c])) + " radius not decreasing at D=" +
                              std::to_string(shots[k]));
      prev = r;
    }
  }
  std::vector<Point3> train_x, test_x;
  std::vector<std::size_t> train_y, test_y;
  for (std::size_t c = 0; c < qsi::kNumClasses; ++c) {
    const auto dist = qsi::distribution_mix_converged(defs[c], 1e-12);
    for (const auto& p : feature_cloud(dist, 10000, 200, 56, c * 200)) train_x.push_back(p), train_y.push_back(c);
    for (const auto& p : feature_cloud(dist, 10000, 200, 57, c * 200)) test_x.push_back(p), test_y.push_back(c);
  }
  Perceptron perceptron;
  perceptron.fit(train_x, train_y, 200);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test_x.size(); ++i) correct += perceptron.predict(test_x[i]) == test_y[i];
  const double acc = static_cast<double>(correct) / static_cast<double>(test_x.size());
  o.require(acc >= 0.98, "perceptron accuracy " + num(acc));
  o.detail += (o.detail.empty() ? "" : " | ") + std::string("radii [") + radii + "], perceptron accuracy " + num(acc);
  return o;
}

Outcome criterion6() {
  Outcome o;
  const auto t0 = Clock::now();
  qsi::SweepConfig cfg;
  cfg.separations = qsi::SweepConfig::default_separations();
  cfg.seed = 6;
  const auto rows = qsi::separation_sweep(cfg);
  const double elapsed = seconds_since(t0);
  double worst_classified = 0.0, worst_direct_far = 0.0;
  for (const auto& r : rows) {
    const double s = r.true_separation;
    const double ec = std::abs(r.classified_estimate - s) / s;
    worst_classified = std::max(worst_classified, ec);
    o.require(ec <= 0.20, "classified estimate " + num(r.classified_estimate) + " at s=" + num(s));
    if (s < 0.5 - 1e-9) o.require(r.plateau, "no plateau at s=" + num(s));
    if (s >= 1.5 - 1e-9) {
      const double ed = std::abs(r.direct_estimate - s) / s;
      worst_direct_far = std::max(worst_direct_far, r.plateau ? INFINITY : ed);
      o.require(!r.plateau && ed <= 0.10, "direct estimate " + num(r.direct_estimate) + " at s=" + num(s));
      o.require(ec <= 0.10, "classified estimate " + num(r.classified_estimate) + " at s=" + num(s) + " (>10%)");
    }
  }
  o.require(elapsed < 1800.0, "runtime " + num(elapsed) + " s");
  o.detail += (o.detail.empty() ? "" : " | ") + std::string("worst classified error ") + num(worst_classified) +
              ", worst direct error for s>=1.5 " + num(worst_direct_far) + ", " + num(elapsed, 3) + " s";
  return o;
}

using Units = std::pair<std::size_t, std::size_t>;

// Equivalence class of an allocation. Pure-coherent modes combine into one
// Poisson mode, and modes sharing a thermal mean t only depend on the sum of
// their coherent means (their generating functions multiply to
// exp(C (s-1) / (1 - t (s-1))) / (1 - t (s-1))^k). So the class is the
// merged pure-coherent mean plus, per distinct thermal mean, the mode count
// and the coherent total.
struct AllocationClass {
  double pure_coherent = 0.0;
  // (thermal mean, mode count, coherent total), sorted by thermal mean.
  std::vector<std::tuple<double, std::size_t, double>> thermal_groups;
};

AllocationClass canonical(const qsi::AllocationCandidate& a) {
  AllocationClass out;
  std::map<long long, std::tuple<double, std::size_t, double>> groups;
  for (const auto& m : a.modes) {
    const double t = m.thermal1 + m.thermal2;
    if (t == 0.0) {
      out.pure_coherent += m.coherent;
      continue;
    }
    auto& g = groups[std::llround(t * 1e6)];
    std::get<0>(g) = t;
    ++std::get<1>(g);
    std::get<2>(g) += m.coherent;
  }
  for (const auto& [key, g] : groups) out.thermal_groups.push_back(g);
  return out;
}

bool same_class(const AllocationClass& a, const AllocationClass& b, double tol) {
  if (std::abs(a.pure_coherent - b.pure_coherent) > tol) return false;
  if (a.thermal_groups.size() != b.thermal_groups.size()) return false;
  for (std::size_t k = 0; k < a.thermal_groups.size(); ++k) {
    const auto& [ta, na, ca] = a.thermal_groups[k];
    const auto& [tb, nb, cb] = b.thermal_groups[k];
    if (na != nb || std::abs(ta - tb) > tol || std::abs(ca - cb) > tol) return false;
  }
  return true;
}

// Exhaustive minimum over every ordered assignment of grid units to three
// (coherent, thermal) mode slots; modes evaluated in ascending order.
double exhaustive_minimum(const std::vector<double>& p, double step, std::size_t units, std::size_t n_fit_max,
                          std::map<Units, qsi::PhotonDistribution>& cache) {
  double best = INFINITY;
  std::array<std::size_t, 6> slot{};
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
          it = cache.emplace(u, qsi::distribution_indistinguishable(mode, n_fit_max)).first;
        }
        parts.push_back(it->second);
      }
      best = std::min(best, qsi::fit_objective(p, qsi::convolve(parts).probs, n_fit_max));
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

Outcome criterion7() {
  Outcome o;
  const qsi::FitConfig cfg;
  qsi::StreamRng rng(7, 0);
  std::map<Units, qsi::PhotonDistribution> cache;
  std::size_t matched = 0, exact = 0;
  for (int trial = 0; trial < 50; ++trial) {
    qsi::AllocationCandidate truth;
    const std::size_t n_modes = 1 + rng.below(3);
    std::size_t total = 0;
    while (truth.modes.size() < n_modes) {
      const std::size_t c = rng.below(11), t = rng.below(11);
      if (c + t == 0 || total + c + t > 30) continue;
      total += c + t;
      truth.modes.push_back({static_cast<double>(c) * cfg.grid_step, static_cast<double>(t) * cfg.grid_step, 0.0});
    }
    const auto p = qsi::distribution_mix(truth.to_mix(), 20).probs;
    const auto fit = qsi::fit_distribution(p, cfg);

    const bool ok = same_class(canonical(truth), canonical(fit.best), cfg.grid_step + 1e-9);
    matched += ok;
    if (!ok) o.require(false, "trial " + std::to_string(trial) + " allocation mismatch");

    const auto units = static_cast<std::size_t>(std::max(1LL, std::llround(fit.measured_mean / cfg.grid_step)));
    const double oracle = exhaustive_minimum(p, cfg.grid_step, units, cfg.n_fit_max, cache);
    exact += fit.objective == oracle;
    if (fit.objective != oracle) {
      o.require(false, "trial " + std::to_string(trial) + " objective " + num(fit.objective, 17) + " vs exhaustive " +
                           num(oracle, 17));
    }
  }
  o.detail += (o.detail.empty() ? "" : " | ") + std::to_string(matched) + "/50 allocations recovered, " +
              std::to_string(exact) + "/50 objectives equal the exhaustive minimum";
  return o;
}

int run_cli(const fs::path& dir, const std::string& args) {
  const std::string cmd =
      "cd '" + dir.string() + "' && '" + std::string(QSI_CLI_PATH) + "' " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome criterion8() {
  Outcome o;
  const std::vector<std::string> stages{
      "gen-data --shots 500 --per-class 60 --seed 8 --out out/data",
      "train --data out/data --max-epochs 200 --patience 50 --seed 8 --out out/model",
      "eval --model out/model/model.json --data out/data --out out/eval",
      "eval-curve --shots 100,300 --per-class 30 --seeds 2 --max-epochs 60 --seed 8 --out out/curve",
      "simulate --scene scene.json --seed 8 --out out/sim",
      "classify --model out/model/model.json --raster out/sim/raster.csv --out out/classify",
      "classify --model out/model/model.json --scene scene.json --seed 8 --out out/classify_scene",
      "sweep --separations 0.6,1.6 --repeats 2 --grid 32 --shots 2000 --seed 8 --out out/sweep",
      "fit-dist --input dist.csv --out out/fit",
      "features --shots 10,1000 --points 20 --seed 8 --out out/features"};
  std::array<fs::path, 2> dirs;
  for (int k = 0; k < 2; ++k) {
    dirs[k] = fs::temp_directory_path() / ("qsi_acceptance_determinism_" + std::to_string(k));
    fs::remove_all(dirs[k]);
    fs::create_directories(dirs[k]);
    std::ofstream(dirs[k] / "scene.json")
        << R"({"grid": {"width": 16, "height": 16, "extent": 4.5}, "shots": 1000, "background_threshold": 0.3,
  "emitters": [{"x": -0.5, "y": 0.2, "kind": "C"}, {"x": 0.6, "y": -0.1, "kind": "T", "peak_mean": 1.3}]})";
    std::ofstream(dirs[k] / "dist.csv") << "n,count\n0,4100\n1,3300\n2,1600\n3,650\n4,230\n5,80\n6,30\n7,10\n";
    for (const auto& s : stages) {
      const int rc = run_cli(dirs[k], s);
      if (rc != 0) o.require(false, "exit " + std::to_string(rc) + " from '" + s + "'");
    }
  }
  std::size_t files = 0, same = 0;
  for (const auto& entry : fs::recursive_directory_iterator(dirs[0] / "out")) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), dirs[0]);
    ++files;
    const bool eq = slurp(entry.path()) == slurp(dirs[1] / rel);
    same += eq;
    if (!eq) o.require(false, rel.string() + " differs");
  }
  o.require(files >= 20, "only " + std::to_string(files) + " output files");
  o.detail += (o.detail.empty() ? "" : " | ") + std::to_string(same) + "/" + std::to_string(files) +
              " files byte-identical across reruns of " + std::to_string(stages.size()) + " stages";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4},
      {5, criterion5}, {6, criterion6}, {7, criterion7}, {8, criterion8}};
  // Optional arguments select a subset of criteria by number.
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& [id, fn] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome out;
    try {
      out = fn();
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail = std::string("exception: ") + e.what();
    }
    failures += !out.pass;
    std::printf("criterion %d: %s %s\n", id, out.pass ? "PASS" : "FAIL", out.detail.c_str());
    std::fflush(stdout);
  }
  return failures;
}
