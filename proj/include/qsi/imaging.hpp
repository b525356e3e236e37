#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/LevenbergMarquardt>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "qsi/classifier.hpp"
#include "qsi/errors.hpp"
#include "qsi/io_util.hpp"
#include "qsi/photon_stats.hpp"
#include "qsi/rng.hpp"
#include "qsi/sampling.hpp"

namespace qsi {

// ---------------------------------------------------------------------------
// Scenes

enum class EmitterKind : std::uint8_t { C, T };

inline std::string_view to_string(EmitterKind k) { return k == EmitterKind::C ? "C" : "T"; }

inline EmitterKind parse_emitter_kind(std::string_view text) {
  if (text == "C") return EmitterKind::C;
  if (text == "T") return EmitterKind::T;
  throw SchemaError("emitter kind must be C or T, got '" + std::string(text) + "'");
}

/// Point emitter with a Gaussian PSF. Positions and waist are in units of w0.
struct EmitterSpec {
  double x = 0.0;
  double y = 0.0;
  double waist = 1.0;
  EmitterKind kind = EmitterKind::C;
  double peak_mean = 1.2;

  void validate() const {
    if (!(waist > 0.0) || !std::isfinite(waist)) throw DomainError("EmitterSpec: waist must be positive");
    if (!(peak_mean > 0.0) || !std::isfinite(peak_mean)) throw DomainError("EmitterSpec: peak_mean must be positive");
    if (!std::isfinite(x) || !std::isfinite(y)) throw DomainError("EmitterSpec: position must be finite");
  }

  double mean_at(double px, double py) const {
    const double r2 = (px - x) * (px - x) + (py - y) * (py - y);
    return peak_mean * std::exp(-2.0 * r2 / (waist * waist));
  }
};

/// Pixel grid centred on the origin with square pixels; `extent` is the
/// horizontal span in w0 units.
struct PixelGeometry {
  std::size_t width = 128;
  std::size_t height = 128;
  double extent = 4.5;

  void validate() const {
    if (width < 8 || height < 8) throw DomainError("PixelGeometry: grid dimensions must be at least 8");
    if (!(extent > 0.0)) throw DomainError("PixelGeometry: extent must be positive");
  }

  double pixel_size() const { return extent / static_cast<double>(width); }
  double x_of(std::size_t i) const { return (static_cast<double>(i) + 0.5) * pixel_size() - 0.5 * extent; }
  double y_of(std::size_t j) const {
    return (static_cast<double>(j) + 0.5) * pixel_size() - 0.5 * pixel_size() * static_cast<double>(height);
  }
  std::size_t pixel_count() const { return width * height; }
};

struct Scene {
  std::vector<EmitterSpec> emitters;
  PixelGeometry grid;
  std::uint64_t shots = 10000;
  double background_threshold = 0.05;

  void validate() const {
    if (emitters.empty()) throw DomainError("Scene: at least one emitter is required");
    for (const auto& e : emitters) e.validate();
    grid.validate();
  }
};

/// Row-major 2-D array; cell (i, j) is column i, row j.
template <typename T>
struct Grid2D {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<T> cells;

  Grid2D() = default;
  Grid2D(std::size_t w, std::size_t h, T fill = T{}) : width(w), height(h), cells(w * h, fill) {}

  T& at(std::size_t i, std::size_t j) { return cells[j * width + i]; }
  const T& at(std::size_t i, std::size_t j) const { return cells[j * width + i]; }
  bool operator==(const Grid2D&) const = default;
};

using Image = Grid2D<double>;
/// std::nullopt marks Background.
using ClassMap = Grid2D<std::optional<ClassLabel>>;
using Raster = Grid2D<PhotonHistogram>;

/// One distinguishable mode per emitter; coherent phase is 0.
inline DistinguishableMix pixel_mix(const Scene& scene, std::size_t i, std::size_t j) {
  if (i >= scene.grid.width || j >= scene.grid.height) throw DomainError("pixel_mix: pixel outside grid");
  const double px = scene.grid.x_of(i);
  const double py = scene.grid.y_of(j);
  DistinguishableMix mix;
  for (const auto& e : scene.emitters) {
    const double mean = e.mean_at(px, py);
    mix.modes.push_back(e.kind == EmitterKind::C ? ModeSpec::coherent(mean) : ModeSpec::thermal(mean));
  }
  return mix;
}

/// Mean photon number per pixel (sum of emitter means), unnormalized.
inline Image render_intensity_raw(const Scene& scene) {
  scene.validate();
  Image img(scene.grid.width, scene.grid.height);
  for (std::size_t j = 0; j < img.height; ++j) {
    for (std::size_t i = 0; i < img.width; ++i) {
      double acc = 0.0;
      for (const auto& e : scene.emitters) acc += e.mean_at(scene.grid.x_of(i), scene.grid.y_of(j));
      img.at(i, j) = acc;
    }
  }
  return img;
}

inline Image normalized(Image img) {
  const double peak = *std::max_element(img.cells.begin(), img.cells.end());
  if (peak > 0.0) {
    for (double& v : img.cells) v /= peak;
  }
  return img;
}

/// Intensity normalized to a maximum of 1.
inline Image render_intensity(const Scene& scene) { return normalized(render_intensity_raw(scene)); }

/// Per-pixel histograms of `shots` draws; pixel (i, j) uses stream j*width+i.
inline Raster simulate_raster(const Scene& scene, std::uint64_t shots, std::uint64_t seed) {
  scene.validate();
  if (shots == 0) throw EmptyHistogram("simulate_raster: shots per pixel must be at least 1");
  Raster raster(scene.grid.width, scene.grid.height);
  for (std::size_t j = 0; j < raster.height; ++j) {
    for (std::size_t i = 0; i < raster.width; ++i) {
      const auto dist = distribution_mix_converged(pixel_mix(scene, i, j), 1e-12);
      raster.at(i, j) = sample_counts(dist, shots, seed, stream_id(StreamPurpose::kPixel, j * raster.width + i));
    }
  }
  return raster;
}

/// Per-pixel empirical mean photon number.
inline Image raster_intensity(const Raster& raster) {
  Image img(raster.width, raster.height);
  for (std::size_t k = 0; k < raster.cells.size(); ++k) img.cells[k] = raster.cells[k].empirical_mean();
  return img;
}

// ---------------------------------------------------------------------------
// Classes of composite pixels

/// Class of light made of the given emitter kinds in separate modes. Two or
/// more coherent modes still give Poissonian light, so C saturates at one;
/// the class set stops at two thermal sources.
inline ClassLabel composite_class(std::span<const EmitterKind> kinds) {
  std::size_t n_c = 0, n_t = 0;
  for (EmitterKind k : kinds) (k == EmitterKind::C ? n_c : n_t)++;
  const std::size_t c = std::min<std::size_t>(n_c, 1);
  const std::size_t t = std::min<std::size_t>(n_t, 2);
  if (c == 1 && t == 0) return ClassLabel::C;
  if (c == 0 && t == 1) return ClassLabel::T;
  if (c == 1 && t == 1) return ClassLabel::CT;
  if (c == 0 && t == 2) return ClassLabel::TT;
  if (c == 1 && t == 2) return ClassLabel::CTT;
  throw DomainError("composite_class: no emitters");
}

/// Reference label for a pixel whose per-emitter means are `means`: an emitter
/// counts as present when its mean reaches `tau`. Pixels whose total is below
/// `tau` are Background; foreground pixels with no emitter present take the
/// kind of the brightest emitter.
inline std::optional<ClassLabel> presence_class(std::span<const double> means, std::span<const EmitterKind> kinds,
                                                double tau) {
  const double total = std::accumulate(means.begin(), means.end(), 0.0);
  if (total < tau) return std::nullopt;
  std::vector<EmitterKind> present;
  std::size_t brightest = 0;
  for (std::size_t k = 0; k < means.size(); ++k) {
    if (means[k] >= tau) present.push_back(kinds[k]);
    if (means[k] > means[brightest]) brightest = k;
  }
  if (present.empty()) present.push_back(kinds[brightest]);
  return composite_class(present);
}

inline ClassMap ground_truth_map(const Scene& scene, double tau) {
  scene.validate();
  ClassMap map(scene.grid.width, scene.grid.height);
  std::vector<EmitterKind> kinds;
  for (const auto& e : scene.emitters) kinds.push_back(e.kind);
  std::vector<double> means(kinds.size());
  for (std::size_t j = 0; j < map.height; ++j) {
    for (std::size_t i = 0; i < map.width; ++i) {
      for (std::size_t k = 0; k < kinds.size(); ++k) {
        means[k] = scene.emitters[k].mean_at(scene.grid.x_of(i), scene.grid.y_of(j));
      }
      map.at(i, j) = presence_class(means, kinds, tau);
    }
  }
  return map;
}

/// Pixels with empirical mean below `background_threshold` are Background;
/// the rest get the classifier's argmax.
inline ClassMap classify_image(const MLPModel& model, const Raster& raster, double background_threshold) {
  if (raster.cells.empty()) throw EmptyInput("classify_image: empty raster");
  ClassMap map(raster.width, raster.height);
  for (std::size_t k = 0; k < raster.cells.size(); ++k) {
    const auto& hist = raster.cells[k];
    if (hist.shots == 0) throw EmptyHistogram("classify_image: pixel with zero shots");
    if (hist.empirical_mean() < background_threshold) continue;
    map.cells[k] = predict(model, to_features(hist));
  }
  return map;
}

/// Same as classify_image but on exact (infinite-shot) pixel distributions.
inline ClassMap classify_exact(const MLPModel& model, const Scene& scene, double background_threshold) {
  scene.validate();
  ClassMap map(scene.grid.width, scene.grid.height);
  for (std::size_t j = 0; j < map.height; ++j) {
    for (std::size_t i = 0; i < map.width; ++i) {
      const auto mix = pixel_mix(scene, i, j);
      if (mix.mean() < background_threshold) continue;
      map.at(i, j) = predict(model, exact_features(distribution_mix_converged(mix, 1e-12)));
    }
  }
  return map;
}

// ---------------------------------------------------------------------------
// Pixel-classifier training data

struct PixelDatasetConfig {
  std::vector<EmitterKind> kinds{EmitterKind::C, EmitterKind::T};
  std::size_t items = 3000;
  double max_mean = 1.6;
  std::uint64_t shots = 10000;
  double tau = 0.3;
};

/// Labelled histograms of random per-emitter means (each uniform in
/// [0, max_mean]) labelled with presence_class. Draws below tau in total are
/// redrawn. Split 70/15/15 after a deterministic shuffle.
inline LabeledDataset generate_pixel_dataset(const PixelDatasetConfig& cfg, std::uint64_t seed) {
  if (cfg.kinds.empty()) throw DomainError("generate_pixel_dataset: no emitter kinds");
  if (cfg.shots == 0) throw EmptyHistogram("generate_pixel_dataset: shots must be positive");
  if (!(cfg.max_mean > 0.0) || cfg.tau > cfg.max_mean * static_cast<double>(cfg.kinds.size())) {
    throw DomainError("generate_pixel_dataset: max_mean too small for the presence threshold");
  }
  StreamRng draw(seed, stream_id(StreamPurpose::kMixDraw, 0));
  std::vector<LabeledItem> items;
  items.reserve(cfg.items);
  std::vector<double> means(cfg.kinds.size());
  while (items.size() < cfg.items) {
    for (double& m : means) m = cfg.max_mean * draw.uniform();
    const auto label = presence_class(means, cfg.kinds, cfg.tau);
    if (!label) continue;
    DistinguishableMix mix;
    for (std::size_t k = 0; k < means.size(); ++k) {
      mix.modes.push_back(cfg.kinds[k] == EmitterKind::C ? ModeSpec::coherent(means[k]) : ModeSpec::thermal(means[k]));
    }
    const auto hist = sample_counts(distribution_mix_converged(mix, 1e-12), cfg.shots, seed,
                                    stream_id(StreamPurpose::kHistogram, items.size()));
    items.push_back({to_features(hist), *label});
  }
  StreamRng rng(seed, stream_id(StreamPurpose::kShuffle, 0));
  shuffle_in_place(items, rng);
  LabeledDataset data;
  const auto n_train = static_cast<std::size_t>(std::llround(0.70 * static_cast<double>(items.size())));
  const auto n_val = static_cast<std::size_t>(std::llround(0.15 * static_cast<double>(items.size())));
  for (std::size_t k = 0; k < items.size(); ++k) {
    auto& dst = k < n_train ? data.train : (k < n_train + n_val ? data.validation : data.test);
    dst.push_back(items[k]);
  }
  return data;
}

/// Classes a pixel classifier can meet for a scene made of `kinds`.
inline std::vector<ClassLabel> reachable_classes(std::span<const EmitterKind> kinds) {
  std::vector<ClassLabel> out;
  const std::size_t n = kinds.size();
  for (std::uint32_t subset = 1; subset < (1u << n); ++subset) {
    std::vector<EmitterKind> chosen;
    for (std::size_t k = 0; k < n; ++k) {
      if (subset & (1u << k)) chosen.push_back(kinds[k]);
    }
    const ClassLabel c = composite_class(chosen);
    if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline MLPModel train_pixel_classifier(const PixelDatasetConfig& cfg, std::uint64_t seed, TrainConfig train = {}) {
  const auto data = generate_pixel_dataset(cfg, seed);
  train.seed = derive_seed(seed, 1);
  train.required_classes = reachable_classes(cfg.kinds);
  return train_scg(data, train).model;
}

// ---------------------------------------------------------------------------
// Classified-image fit: disks whose overlaps carry composite classes

struct Disk {
  double x = 0.0;
  double y = 0.0;
  double radius = 1.0;
  EmitterKind kind = EmitterKind::C;
};

struct ClassifiedFitOptions {
  /// PSF waist assumed when modelling the foreground fringe outside the disks.
  double waist = 1.0;
  double min_radius = 0.5;
  double max_radius = 2.0;
  /// Pure disks: pixels outside every disk are Background.
  bool pure_disks = false;
  /// Genetic search instead of the coarse grid (followed by the same refinement).
  bool genetic = false;
  std::uint64_t genetic_seed = 0;
  std::size_t genetic_population = 40;
  std::size_t genetic_generations = 60;
  double coarse_span = 1.0;
  double coarse_step = 0.1;
  double refine_step = 0.2;
  double refine_min_step = 0.005;
};

struct ClassifiedFit {
  std::vector<Disk> disks;
  std::size_t agreement = 0;
};

/// Class pattern implied by a disk configuration. Each disk of radius r marks
/// where its emitter is present; outside the disks a pixel stays foreground
/// while Σ exp(-2(d² - r²)/w²) ≥ 1 and takes the kind of the largest term.
inline ClassMap render_disk_map(std::span<const Disk> disks, const PixelGeometry& grid,
                                const ClassifiedFitOptions& opt = {}) {
  ClassMap map(grid.width, grid.height);
  std::vector<EmitterKind> inside;
  for (std::size_t j = 0; j < grid.height; ++j) {
    const double py = grid.y_of(j);
    for (std::size_t i = 0; i < grid.width; ++i) {
      const double px = grid.x_of(i);
      inside.clear();
      double total = 0.0, best_term = -1.0;
      EmitterKind best_kind = EmitterKind::C;
      for (const auto& d : disks) {
        const double d2 = (px - d.x) * (px - d.x) + (py - d.y) * (py - d.y);
        if (d2 <= d.radius * d.radius) inside.push_back(d.kind);
        if (!opt.pure_disks) {
          const double term = std::exp(-2.0 * (d2 - d.radius * d.radius) / (opt.waist * opt.waist));
          total += term;
          if (term > best_term) {
            best_term = term;
            best_kind = d.kind;
          }
        }
      }
      if (!inside.empty()) {
        map.at(i, j) = composite_class(inside);
      } else if (!opt.pure_disks && total >= 1.0) {
        map.at(i, j) = best_kind == EmitterKind::C ? ClassLabel::C : ClassLabel::T;
      }
    }
  }
  return map;
}

namespace detail {

inline std::size_t agreement(const ClassMap& a, const ClassMap& b) {
  std::size_t count = 0;
  for (std::size_t k = 0; k < a.cells.size(); ++k) count += a.cells[k] == b.cells[k] ? 1 : 0;
  return count;
}

inline bool class_has_kind(ClassLabel c, EmitterKind k) {
  if (k == EmitterKind::C) return c == ClassLabel::C || c == ClassLabel::CT || c == ClassLabel::CTT;
  return c != ClassLabel::C;
}

/// Centroid, principal axis and equivalent-disk radius of a pixel set.
struct RegionMoments {
  double cx = 0.0, cy = 0.0, radius = 0.0;
  double ux = 1.0, uy = 0.0, spread = 0.0;
  std::size_t count = 0;
};

template <typename Pred>
RegionMoments region_moments(const ClassMap& map, const PixelGeometry& grid, Pred&& member) {
  RegionMoments m;
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t j = 0; j < map.height; ++j) {
    for (std::size_t i = 0; i < map.width; ++i) {
      if (!member(map.at(i, j))) continue;
      const double x = grid.x_of(i), y = grid.y_of(j);
      sx += x, sy += y, sxx += x * x, syy += y * y, sxy += x * y;
      ++m.count;
    }
  }
  if (m.count == 0) return m;
  const double n = static_cast<double>(m.count);
  m.cx = sx / n;
  m.cy = sy / n;
  const double vxx = sxx / n - m.cx * m.cx, vyy = syy / n - m.cy * m.cy, vxy = sxy / n - m.cx * m.cy;
  const double half_trace = 0.5 * (vxx + vyy);
  const double disc = std::sqrt(std::max(0.0, 0.25 * (vxx - vyy) * (vxx - vyy) + vxy * vxy));
  const double major = half_trace + disc, minor = half_trace - disc;
  const double angle = 0.5 * std::atan2(2.0 * vxy, vxx - vyy);
  m.ux = std::cos(angle);
  m.uy = std::sin(angle);
  m.spread = std::sqrt(std::max(0.0, major - minor));
  m.radius = std::sqrt(n * grid.pixel_size() * grid.pixel_size() / std::numbers::pi);
  return m;
}

class DiskObjective {
 public:
  DiskObjective(const ClassMap& observed, const PixelGeometry& grid, std::vector<EmitterKind> kinds,
                const ClassifiedFitOptions& opt)
      : observed_(observed), grid_(grid), kinds_(std::move(kinds)), opt_(opt) {}

  std::vector<Disk> disks(const std::vector<double>& p) const {
    std::vector<Disk> out(kinds_.size());
    for (std::size_t k = 0; k < kinds_.size(); ++k) {
      out[k] = {p[3 * k], p[3 * k + 1], std::clamp(p[3 * k + 2], opt_.min_radius, opt_.max_radius), kinds_[k]};
    }
    return out;
  }

  std::size_t score(const std::vector<double>& p) const {
    return agreement(render_disk_map(disks(p), grid_, opt_), observed_);
  }

  void clamp(std::vector<double>& p) const {
    for (std::size_t k = 0; k < kinds_.size(); ++k) p[3 * k + 2] = std::clamp(p[3 * k + 2], opt_.min_radius, opt_.max_radius);
  }

 private:
  const ClassMap& observed_;
  const PixelGeometry& grid_;
  std::vector<EmitterKind> kinds_;
  const ClassifiedFitOptions& opt_;
};

/// One coordinate at a time over [-span, span] around the current value.
inline std::size_t coarse_search(const DiskObjective& f, std::vector<double>& p, std::size_t best,
                                 const ClassifiedFitOptions& opt) {
  const int steps = static_cast<int>(std::lround(opt.coarse_span / opt.coarse_step));
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t c = 0; c < p.size(); ++c) {
      const double origin = p[c];
      double best_value = origin;
      for (int s = -steps; s <= steps; ++s) {
        if (s == 0) continue;
        std::vector<double> q = p;
        q[c] = origin + s * opt.coarse_step;
        f.clamp(q);
        const std::size_t sc = f.score(q);
        if (sc > best) {
          best = sc;
          best_value = q[c];
        }
      }
      p[c] = best_value;
    }
  }
  return best;
}

/// Compass search: accept strict improvements, halve the step when stuck.
inline std::size_t pattern_search(const DiskObjective& f, std::vector<double>& p, std::size_t best,
                                  const ClassifiedFitOptions& opt) {
  double step = opt.refine_step;
  while (step >= opt.refine_min_step) {
    bool improved = false;
    for (std::size_t c = 0; c < p.size(); ++c) {
      for (double sign : {1.0, -1.0}) {
        std::vector<double> q = p;
        q[c] += sign * step;
        f.clamp(q);
        const std::size_t sc = f.score(q);
        if (sc > best) {
          best = sc;
          p = q;
          improved = true;
        }
      }
    }
    if (!improved) step *= 0.5;
  }
  return best;
}

inline std::size_t genetic_search(const DiskObjective& f, std::vector<double>& p, std::size_t best,
                                  const ClassifiedFitOptions& opt) {
  StreamRng rng(opt.genetic_seed, stream_id(StreamPurpose::kGenetic, 0));
  auto gauss = [&rng] {
    const double u1 = 1.0 - rng.uniform(), u2 = rng.uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  };
  const std::size_t pop_size = std::max<std::size_t>(opt.genetic_population, 4);
  std::vector<std::vector<double>> pop(pop_size, p);
  std::vector<std::size_t> fitness(pop_size);
  for (std::size_t k = 1; k < pop_size; ++k) {
    for (double& v : pop[k]) v += 0.5 * opt.coarse_span * gauss();
    f.clamp(pop[k]);
  }
  for (std::size_t k = 0; k < pop_size; ++k) fitness[k] = f.score(pop[k]);
  for (std::size_t gen = 0; gen < opt.genetic_generations; ++gen) {
    auto tournament = [&] {
      const auto a = static_cast<std::size_t>(rng.below(pop_size)), b = static_cast<std::size_t>(rng.below(pop_size));
      return fitness[a] >= fitness[b] ? a : b;
    };
    const auto elite = static_cast<std::size_t>(std::max_element(fitness.begin(), fitness.end()) - fitness.begin());
    std::vector<std::vector<double>> next{pop[elite]};
    std::vector<std::size_t> next_fit{fitness[elite]};
    const double sigma = 0.2 * opt.coarse_span * (1.0 - static_cast<double>(gen) / static_cast<double>(opt.genetic_generations)) + 0.01;
    while (next.size() < pop_size) {
      const auto& a = pop[tournament()];
      const auto& b = pop[tournament()];
      std::vector<double> child(a.size());
      for (std::size_t c = 0; c < child.size(); ++c) {
        child[c] = (rng.uniform() < 0.5 ? a[c] : b[c]) + sigma * gauss();
      }
      f.clamp(child);
      next_fit.push_back(f.score(child));
      next.push_back(std::move(child));
    }
    pop = std::move(next);
    fitness = std::move(next_fit);
  }
  const auto elite = static_cast<std::size_t>(std::max_element(fitness.begin(), fitness.end()) - fitness.begin());
  if (fitness[elite] > best) {
    p = pop[elite];
    best = fitness[elite];
  }
  return best;
}

}  // namespace detail

/// Fits `n_emitters` disks to a class map, trying every C/T kind assignment
/// (C emitters first) and keeping the best pixelwise agreement; ties go to
/// the assignment with more coherent emitters, i.e. the first tried.
inline ClassifiedFit fit_classified(const ClassMap& map, const PixelGeometry& grid, std::size_t n_emitters,
                                    const ClassifiedFitOptions& opt = {}) {
  grid.validate();
  if (n_emitters == 0) throw DomainError("fit_classified: n_emitters must be at least 1");
  if (map.width != grid.width || map.height != grid.height) throw DomainError("fit_classified: map/grid size mismatch");
  if (std::none_of(map.cells.begin(), map.cells.end(), [](const auto& c) { return c.has_value(); })) {
    throw NoForeground("fit_classified: class map is all Background");
  }
  const auto all_fg = detail::region_moments(map, grid, [](const auto& c) { return c.has_value(); });

  ClassifiedFit best;
  bool have_best = false;
  for (std::size_t n_c = n_emitters + 1; n_c-- > 0;) {
    std::vector<EmitterKind> kinds(n_emitters, EmitterKind::T);
    std::fill_n(kinds.begin(), n_c, EmitterKind::C);

    // Initial centres: centroid of the pixels whose class contains the kind,
    // spread along that region's principal axis when the kind repeats.
    std::vector<double> p;
    for (EmitterKind kind : {EmitterKind::C, EmitterKind::T}) {
      const std::size_t count = static_cast<std::size_t>(std::count(kinds.begin(), kinds.end(), kind));
      if (count == 0) continue;
      auto region = detail::region_moments(
          map, grid, [kind](const auto& c) { return c.has_value() && detail::class_has_kind(*c, kind); });
      if (region.count == 0) region = all_fg;
      for (std::size_t r = 0; r < count; ++r) {
        const double offset =
            count == 1 ? 0.0 : region.spread * (2.0 * static_cast<double>(r) / static_cast<double>(count - 1) - 1.0);
        p.push_back(region.cx + offset * region.ux);
        p.push_back(region.cy + offset * region.uy);
        p.push_back(count == 1 ? region.radius : region.radius / std::sqrt(static_cast<double>(count)));
      }
    }
    const detail::DiskObjective f(map, grid, kinds, opt);
    f.clamp(p);
    std::size_t score = f.score(p);
    score = opt.genetic ? detail::genetic_search(f, p, score, opt) : detail::coarse_search(f, p, score, opt);
    score = detail::pattern_search(f, p, score, opt);
    if (!have_best || score > best.agreement) {
      best = {f.disks(p), score};
      have_best = true;
    }
  }
  return best;
}

inline double separation(const Disk& a, const Disk& b) { return std::hypot(a.x - b.x, a.y - b.y); }

// ---------------------------------------------------------------------------
// Direct-imaging baseline: sums of circular Gaussians

struct GaussianComponent {
  double amplitude = 1.0;
  double x = 0.0;
  double y = 0.0;
  double waist = 1.0;
};

struct DirectFitOptions {
  std::size_t max_components = 2;
  /// A model with one more component must lower the RSS by at least this fraction.
  double min_rss_improvement = 0.05;
  /// Components count as resolved only if the fitted profile dips between them.
  bool require_dip = true;
  int max_function_evaluations = 4000;
};

struct DirectFit {
  std::vector<GaussianComponent> components;
  double rss = 0.0;
  /// RSS of the best fit for 1..max_components components.
  std::vector<double> rss_by_count;
};

namespace detail {

inline double gaussian_sum(std::span<const GaussianComponent> comps, double x, double y) {
  double v = 0.0;
  for (const auto& c : comps) {
    v += c.amplitude * std::exp(-2.0 * ((x - c.x) * (x - c.x) + (y - c.y) * (y - c.y)) / (c.waist * c.waist));
  }
  return v;
}

struct GaussianResidual : Eigen::DenseFunctor<double> {
  GaussianResidual(const Image& img, const PixelGeometry& grid, int components)
      : Eigen::DenseFunctor<double>(4 * components, static_cast<int>(img.cells.size())), img_(img), grid_(grid) {}

  int operator()(const InputType& p, ValueType& r) const {
    for (std::size_t j = 0; j < img_.height; ++j) {
      for (std::size_t i = 0; i < img_.width; ++i) {
        const double x = grid_.x_of(i), y = grid_.y_of(j);
        double v = 0.0;
        for (Eigen::Index c = 0; c < p.size(); c += 4) {
          const double d2 = (x - p[c + 1]) * (x - p[c + 1]) + (y - p[c + 2]) * (y - p[c + 2]);
          v += p[c] * std::exp(-2.0 * d2 / (p[c + 3] * p[c + 3]));
        }
        r[static_cast<Eigen::Index>(j * img_.width + i)] = v - img_.at(i, j);
      }
    }
    return 0;
  }

  int df(const InputType& p, JacobianType& jac) const {
    for (std::size_t j = 0; j < img_.height; ++j) {
      for (std::size_t i = 0; i < img_.width; ++i) {
        const double x = grid_.x_of(i), y = grid_.y_of(j);
        const auto row = static_cast<Eigen::Index>(j * img_.width + i);
        for (Eigen::Index c = 0; c < p.size(); c += 4) {
          const double a = p[c], dx = x - p[c + 1], dy = y - p[c + 2], w = p[c + 3];
          const double d2 = dx * dx + dy * dy;
          const double e = std::exp(-2.0 * d2 / (w * w));
          jac(row, c) = e;
          jac(row, c + 1) = a * e * 4.0 * dx / (w * w);
          jac(row, c + 2) = a * e * 4.0 * dy / (w * w);
          jac(row, c + 3) = a * e * 4.0 * d2 / (w * w * w);
        }
      }
    }
    return 0;
  }

 private:
  const Image& img_;
  const PixelGeometry& grid_;
};

inline std::vector<GaussianComponent> unpack(const Eigen::VectorXd& p) {
  std::vector<GaussianComponent> out;
  for (Eigen::Index c = 0; c < p.size(); c += 4) out.push_back({p[c], p[c + 1], p[c + 2], std::abs(p[c + 3])});
  return out;
}

inline Eigen::VectorXd pack(std::span<const GaussianComponent> comps) {
  Eigen::VectorXd p(static_cast<Eigen::Index>(4 * comps.size()));
  for (std::size_t k = 0; k < comps.size(); ++k) {
    p.segment(static_cast<Eigen::Index>(4 * k), 4) << comps[k].amplitude, comps[k].x, comps[k].y, comps[k].waist;
  }
  return p;
}

inline double image_rss(const Image& img, const PixelGeometry& grid, std::span<const GaussianComponent> comps) {
  double rss = 0.0;
  for (std::size_t j = 0; j < img.height; ++j) {
    for (std::size_t i = 0; i < img.width; ++i) {
      const double r = gaussian_sum(comps, grid.x_of(i), grid.y_of(j)) - img.at(i, j);
      rss += r * r;
    }
  }
  return rss;
}

inline std::vector<GaussianComponent> levenberg_marquardt(const Image& img, const PixelGeometry& grid,
                                                          std::vector<GaussianComponent> init, int max_fev) {
  GaussianResidual f(img, grid, static_cast<int>(init.size()));
  Eigen::LevenbergMarquardt<GaussianResidual> lm(f);
  lm.setMaxfev(max_fev);
  Eigen::VectorXd p = pack(init);
  lm.minimize(p);
  return unpack(p);
}

/// True when the summed profile along the segment joining two centres has an
/// interior minimum below both end values.
inline bool has_dip(std::span<const GaussianComponent> comps, const GaussianComponent& a, const GaussianComponent& b) {
  constexpr int kSamples = 200;
  const double f0 = gaussian_sum(comps, a.x, a.y);
  const double f1 = gaussian_sum(comps, b.x, b.y);
  double lowest = std::min(f0, f1);
  for (int s = 1; s < kSamples; ++s) {
    const double t = static_cast<double>(s) / kSamples;
    lowest = std::min(lowest, gaussian_sum(comps, a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)));
  }
  return lowest < std::min(f0, f1) * (1.0 - 1e-9);
}

inline bool resolved(std::span<const GaussianComponent> comps) {
  for (const auto& c : comps) {
    if (!(c.amplitude > 0.0)) return false;
  }
  for (std::size_t a = 0; a < comps.size(); ++a) {
    std::size_t nearest = a;
    double nearest_d = std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < comps.size(); ++b) {
      const double d = std::hypot(comps[a].x - comps[b].x, comps[a].y - comps[b].y);
      if (b != a && d < nearest_d) {
        nearest = b;
        nearest_d = d;
      }
    }
    if (nearest != a && !has_dip(comps, comps[a], comps[nearest])) return false;
  }
  return true;
}

}  // namespace detail

/// Least-squares fits with 1..max_components Gaussians. A larger model is
/// kept only if it lowers the RSS by min_rss_improvement and (optionally) its
/// components are resolved by an intensity dip between neighbours.
inline DirectFit fit_direct(const Image& img, const PixelGeometry& grid, const DirectFitOptions& opt = {}) {
  grid.validate();
  if (img.width != grid.width || img.height != grid.height) throw DomainError("fit_direct: image/grid size mismatch");
  if (opt.max_components == 0) throw DomainError("fit_direct: max_components must be at least 1");
  for (double v : img.cells) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw DomainError("fit_direct: image must be nonnegative and finite");
  }
  const double total = std::accumulate(img.cells.begin(), img.cells.end(), 0.0);
  if (!(total > 0.0)) throw DomainError("fit_direct: image is zero");

  // Moments of the image seed the one-component fit.
  double cx = 0, cy = 0;
  for (std::size_t j = 0; j < img.height; ++j)
    for (std::size_t i = 0; i < img.width; ++i) cx += img.at(i, j) * grid.x_of(i), cy += img.at(i, j) * grid.y_of(j);
  cx /= total, cy /= total;
  double vxx = 0, vyy = 0, vxy = 0;
  for (std::size_t j = 0; j < img.height; ++j) {
    for (std::size_t i = 0; i < img.width; ++i) {
      const double dx = grid.x_of(i) - cx, dy = grid.y_of(j) - cy;
      vxx += img.at(i, j) * dx * dx, vyy += img.at(i, j) * dy * dy, vxy += img.at(i, j) * dx * dy;
    }
  }
  vxx /= total, vyy /= total, vxy /= total;
  const double half_trace = 0.5 * (vxx + vyy);
  const double disc = std::sqrt(0.25 * (vxx - vyy) * (vxx - vyy) + vxy * vxy);
  const double angle = 0.5 * std::atan2(2.0 * vxy, vxx - vyy);
  const double ux = std::cos(angle), uy = std::sin(angle);
  const double peak = *std::max_element(img.cells.begin(), img.cells.end());

  DirectFit fit;
  auto one = detail::levenberg_marquardt(img, grid, {{peak, cx, cy, 2.0 * std::sqrt(std::max(half_trace, 1e-6))}},
                                         opt.max_function_evaluations);
  double rss = detail::image_rss(img, grid, one);
  if (!std::isfinite(rss)) throw FitDiverged("fit_direct: single-Gaussian fit did not converge");
  fit.components = one;
  fit.rss = rss;
  fit.rss_by_count.push_back(rss);

  std::vector<GaussianComponent> prev = one;
  for (std::size_t k = 2; k <= opt.max_components; ++k) {
    std::vector<GaussianComponent> init;
    if (k == 2) {
      // Split along the major axis by the excess variance over the minor axis.
      const double half_sep = std::max(std::sqrt(2.0 * disc), 0.15);
      const auto& c = one.front();
      init = {{0.5 * c.amplitude, c.x - half_sep * ux, c.y - half_sep * uy, 0.9 * c.waist},
              {0.5 * c.amplitude, c.x + half_sep * ux, c.y + half_sep * uy, 0.9 * c.waist}};
    } else {
      // Add a component at the largest positive residual.
      init = prev;
      std::size_t bi = 0, bj = 0;
      double worst = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < img.height; ++j) {
        for (std::size_t i = 0; i < img.width; ++i) {
          const double r = img.at(i, j) - detail::gaussian_sum(prev, grid.x_of(i), grid.y_of(j));
          if (r > worst) worst = r, bi = i, bj = j;
        }
      }
      init.push_back({std::max(worst, 1e-3), grid.x_of(bi), grid.y_of(bj), one.front().waist * 0.5});
    }
    auto comps = detail::levenberg_marquardt(img, grid, init, opt.max_function_evaluations);
    const double rss_k = detail::image_rss(img, grid, comps);
    fit.rss_by_count.push_back(rss_k);
    prev = comps;
    if (!std::isfinite(rss_k) || rss_k > fit.rss * (1.0 - opt.min_rss_improvement)) break;
    if (opt.require_dip && !detail::resolved(comps)) break;
    fit.components = comps;
    fit.rss = rss_k;
  }
  if (fit.rss > fit.rss_by_count.front()) throw FitDiverged("fit_direct: residual exceeds the single-Gaussian fit");
  return fit;
}

// ---------------------------------------------------------------------------
// Separation sweep

struct SweepConfig {
  std::vector<double> separations;
  std::size_t repeats = 10;
  std::uint64_t shots = 10000;
  std::uint64_t seed = 0;
  PixelGeometry grid{64, 64, 4.5};
  double peak_coherent = 1.2;
  double peak_thermal = 1.2;
  double waist = 1.0;
  /// Presence threshold, also used as the Background threshold.
  double tau = 0.3;
  /// Direct estimate reported when most repeats resolve one Gaussian.
  double plateau_value = 1.0;
  /// Use the exact reference class map instead of the trained classifier.
  bool perfect_classification = false;
  ClassifiedFitOptions classified{};
  DirectFitOptions direct{};
  PixelDatasetConfig pixel_data{};
  TrainConfig train{};

  static std::vector<double> default_separations() {
    std::vector<double> s;
    for (int k = 3; k <= 20; ++k) s.push_back(k / 10.0);
    return s;
  }

  void validate() const {
    if (separations.empty()) throw DomainError("SweepConfig: no separations");
    for (double s : separations) {
      if (!(s > 0.0)) throw DomainError("SweepConfig: separations must be positive");
    }
    if (repeats == 0) throw DomainError("SweepConfig: repeats must be at least 1");
    if (shots == 0) throw EmptyHistogram("SweepConfig: shots must be at least 1");
    grid.validate();
  }
};

struct SeparationEstimate {
  double true_separation = 0.0;
  double direct_estimate = 0.0;
  bool plateau = false;
  double classified_estimate = 0.0;
  /// Per repeat: fitted separation, or NaN in direct_repeats when one Gaussian was returned.
  std::vector<double> direct_repeats;
  std::vector<double> classified_repeats;
};

/// Coherent emitter at (-s/2, 0), thermal emitter at (+s/2, 0).
inline Scene two_emitter_scene(const SweepConfig& cfg, double s) {
  Scene scene;
  scene.grid = cfg.grid;
  scene.shots = cfg.shots;
  scene.background_threshold = cfg.tau;
  scene.emitters = {{-0.5 * s, 0.0, cfg.waist, EmitterKind::C, cfg.peak_coherent},
                    {0.5 * s, 0.0, cfg.waist, EmitterKind::T, cfg.peak_thermal}};
  return scene;
}

inline SeparationEstimate estimate_separation(const SweepConfig& cfg, const MLPModel& model, std::size_t s_index) {
  const double s = cfg.separations[s_index];
  const Scene scene = two_emitter_scene(cfg, s);
  SeparationEstimate est;
  est.true_separation = s;
  ClassifiedFitOptions copt = cfg.classified;
  copt.waist = cfg.waist;
  std::size_t singles = 0;
  for (std::size_t r = 0; r < cfg.repeats; ++r) {
    const std::uint64_t seed = derive_seed(cfg.seed, stream_id(StreamPurpose::kSweep, s_index * 1000 + r));
    const Raster raster = simulate_raster(scene, cfg.shots, seed);
    const ClassMap map =
        cfg.perfect_classification ? ground_truth_map(scene, cfg.tau) : classify_image(model, raster, cfg.tau);
    copt.genetic_seed = seed;
    const auto cfit = fit_classified(map, cfg.grid, 2, copt);
    est.classified_repeats.push_back(separation(cfit.disks[0], cfit.disks[1]));

    const auto dfit = fit_direct(normalized(raster_intensity(raster)), cfg.grid, cfg.direct);
    if (dfit.components.size() >= 2) {
      est.direct_repeats.push_back(
          std::hypot(dfit.components[0].x - dfit.components[1].x, dfit.components[0].y - dfit.components[1].y));
    } else {
      est.direct_repeats.push_back(std::numeric_limits<double>::quiet_NaN());
      ++singles;
    }
  }
  est.classified_estimate =
      std::accumulate(est.classified_repeats.begin(), est.classified_repeats.end(), 0.0) / static_cast<double>(cfg.repeats);
  est.plateau = 2 * singles > cfg.repeats;
  if (est.plateau) {
    est.direct_estimate = cfg.plateau_value;
  } else {
    double acc = 0.0;
    std::size_t n = 0;
    for (double d : est.direct_repeats) {
      if (!std::isnan(d)) acc += d, ++n;
    }
    est.direct_estimate = acc / static_cast<double>(n);
  }
  return est;
}

/// Trains the C/T pixel classifier (unless perfect classification is
/// requested) and estimates every separation.
inline std::vector<SeparationEstimate> separation_sweep(const SweepConfig& cfg) {
  cfg.validate();
  MLPModel model;
  if (!cfg.perfect_classification) {
    PixelDatasetConfig pd = cfg.pixel_data;
    pd.kinds = {EmitterKind::C, EmitterKind::T};
    pd.shots = cfg.shots;
    pd.tau = cfg.tau;
    model = train_pixel_classifier(pd, derive_seed(cfg.seed, stream_id(StreamPurpose::kSweep, ~std::uint64_t{0} >> 8)),
                                   cfg.train);
  }
  std::vector<SeparationEstimate> out;
  for (std::size_t k = 0; k < cfg.separations.size(); ++k) out.push_back(estimate_separation(cfg, model, k));
  return out;
}

// ---------------------------------------------------------------------------
// Export

inline void write_sweep_csv(std::ostream& os, std::span<const SeparationEstimate> rows) {
  os << "s_true,s_direct,plateau_flag,s_classified\n";
  for (const auto& r : rows) {
    os << fmt17(r.true_separation) << ',' << fmt17(r.direct_estimate) << ',' << (r.plateau ? 1 : 0) << ','
       << fmt17(r.classified_estimate) << '\n';
  }
}

inline constexpr int kBackgroundGray = 0;

inline int class_gray(const std::optional<ClassLabel>& c) {
  return c ? 51 * (static_cast<int>(index_of(*c)) + 1) : kBackgroundGray;
}

/// Plain PGM (P2, maxval 255). `comments` go on '#' lines after the magic.
inline void write_pgm(std::ostream& os, const Grid2D<int>& gray, std::span<const std::string> comments = {}) {
  os << "P2\n";
  for (const auto& c : comments) os << "# " << c << '\n';
  os << gray.width << ' ' << gray.height << "\n255\n";
  for (std::size_t j = 0; j < gray.height; ++j) {
    for (std::size_t i = 0; i < gray.width; ++i) os << gray.at(i, j) << (i + 1 < gray.width ? ' ' : '\n');
  }
}

inline Grid2D<int> image_to_gray(const Image& img) {
  const Image n = normalized(img);
  Grid2D<int> g(n.width, n.height);
  for (std::size_t k = 0; k < n.cells.size(); ++k) {
    g.cells[k] = static_cast<int>(std::lround(std::clamp(n.cells[k], 0.0, 1.0) * 255.0));
  }
  return g;
}

inline Grid2D<int> class_map_to_gray(const ClassMap& map) {
  Grid2D<int> g(map.width, map.height);
  for (std::size_t k = 0; k < map.cells.size(); ++k) g.cells[k] = class_gray(map.cells[k]);
  return g;
}

inline void write_class_legend(std::ostream& os) {
  os << "gray,class\n" << kBackgroundGray << ",Background\n";
  for (ClassLabel l : kAllLabels) os << class_gray(l) << ',' << to_string(l) << '\n';
}

inline void write_image_csv(std::ostream& os, const Image& img) {
  for (std::size_t j = 0; j < img.height; ++j) {
    for (std::size_t i = 0; i < img.width; ++i) os << fmt17(img.at(i, j)) << (i + 1 < img.width ? ',' : '\n');
  }
}

inline void write_class_map_csv(std::ostream& os, const ClassMap& map) {
  for (std::size_t j = 0; j < map.height; ++j) {
    for (std::size_t i = 0; i < map.width; ++i) {
      const auto& c = map.at(i, j);
      os << (c ? to_string(*c) : std::string_view("BG")) << (i + 1 < map.width ? ',' : '\n');
    }
  }
}

/// Raster archive: one row per pixel, `i,j,c0..cK` with K the largest photon
/// number seen anywhere on the grid.
inline void write_raster_csv(std::ostream& os, const Raster& raster) {
  std::size_t width = 1;
  for (const auto& h : raster.cells) {
    for (std::size_t n = h.counts.size(); n > 0; --n) {
      if (h.counts[n - 1] != 0) {
        width = std::max(width, n);
        break;
      }
    }
  }
  os << "# grid " << raster.width << ' ' << raster.height << '\n';
  os << "i,j";
  for (std::size_t n = 0; n < width; ++n) os << ",c" << n;
  os << '\n';
  for (std::size_t j = 0; j < raster.height; ++j) {
    for (std::size_t i = 0; i < raster.width; ++i) {
      const auto& h = raster.at(i, j);
      os << i << ',' << j;
      for (std::size_t n = 0; n < width; ++n) os << ',' << (n < h.counts.size() ? h.counts[n] : 0);
      os << '\n';
    }
  }
}

inline Raster read_raster_csv(std::istream& is) {
  std::string line;
  std::size_t width = 0, height = 0;
  Raster raster;
  bool header_seen = false;
  std::size_t columns = 0;
  while (std::getline(is, line)) {
    if (line.rfind("# grid ", 0) == 0) {
      std::istringstream dims(line.substr(7));
      if (!(dims >> width >> height) || width == 0 || height == 0) throw SchemaError("raster CSV: bad grid line");
      raster = Raster(width, height);
      continue;
    }
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_csv_line(line);
    if (!header_seen) {
      if (width == 0) throw SchemaError("raster CSV: missing '# grid W H' line");
      if (fields.size() < 3 || fields[0] != "i" || fields[1] != "j") throw SchemaError("raster CSV: bad header");
      columns = fields.size();
      header_seen = true;
      continue;
    }
    if (fields.size() != columns) throw SchemaError("raster CSV: inconsistent column count");
    try {
      const auto i = std::stoull(fields[0]), j = std::stoull(fields[1]);
      if (i >= width || j >= height) throw SchemaError("raster CSV: pixel outside grid");
      PhotonHistogram h;
      for (std::size_t c = 2; c < columns; ++c) {
        h.counts.push_back(std::stoull(fields[c]));
        h.shots += h.counts.back();
      }
      raster.at(i, j) = std::move(h);
    } catch (const std::logic_error&) {
      throw SchemaError("raster CSV: malformed row '" + line + "'");
    }
  }
  if (!header_seen) throw SchemaError("raster CSV: no data");
  return raster;
}

inline Scene read_scene_json(std::istream& is) {
  try {
    const auto doc = nlohmann::json::parse(is);
    Scene scene;
    if (doc.contains("grid")) {
      const auto& g = doc.at("grid");
      scene.grid.width = g.value("width", scene.grid.width);
      scene.grid.height = g.value("height", scene.grid.height);
      scene.grid.extent = g.value("extent", scene.grid.extent);
    }
    scene.shots = doc.value("shots", scene.shots);
    scene.background_threshold = doc.value("background_threshold", scene.background_threshold);
    for (const auto& e : doc.at("emitters")) {
      EmitterSpec em;
      em.x = e.at("x").get<double>();
      em.y = e.at("y").get<double>();
      em.waist = e.value("waist", 1.0);
      em.kind = parse_emitter_kind(e.at("kind").get<std::string>());
      em.peak_mean = e.value("peak_mean", em.peak_mean);
      scene.emitters.push_back(em);
    }
    return scene;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("scene JSON: ") + e.what());
  }
}

inline void write_scene_json(std::ostream& os, const Scene& scene) {
  nlohmann::ordered_json doc;
  doc["grid"] = {{"width", scene.grid.width}, {"height", scene.grid.height}, {"extent", scene.grid.extent}};
  doc["shots"] = scene.shots;
  doc["background_threshold"] = scene.background_threshold;
  doc["emitters"] = nlohmann::ordered_json::array();
  for (const auto& e : scene.emitters) {
    doc["emitters"].push_back({{"x", e.x}, {"y", e.y}, {"waist", e.waist}, {"kind", std::string(to_string(e.kind))},
                               {"peak_mean", e.peak_mean}});
  }
  os << doc.dump(2) << '\n';
}

}  // namespace qsi
