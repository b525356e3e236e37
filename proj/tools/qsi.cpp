// qsi: command-line driver for dataset generation, training, imaging
// simulation, separation sweeps and photon-number fits.
//
// Exit codes: 0 success, 2 usage, 3 I/O, 4 domain error.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "qsi/classifier.hpp"
#include "qsi/errors.hpp"
#include "qsi/fitting.hpp"
#include "qsi/imaging.hpp"
#include "qsi/io_util.hpp"
#include "qsi/photon_stats.hpp"
#include "qsi/sampling.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitDomain = 4;

/// Bad flag combinations detected after parsing.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunContext {
  std::string command_line;
  std::uint64_t seed = 0;
  std::string out_dir = ".";

  std::vector<std::string> header_lines() const {
    return {"qsi " QSI_VERSION, "command: " + command_line, "seed: " + std::to_string(seed)};
  }

  std::string header() const {
    std::string h;
    for (const auto& line : header_lines()) h += "# " + line + "\n";
    return h;
  }

  std::string provenance() const { return "qsi " QSI_VERSION "; command: " + command_line + "; seed: " + std::to_string(seed); }

  fs::path path(const std::string& name) const {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw qsi::IoError("cannot create output directory '" + out_dir + "': " + ec.message());
    return fs::path(out_dir) / name;
  }

  std::ofstream open(const std::string& name) const { return qsi::open_output(path(name).string()); }
};

std::string join_args(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

void require_positive(std::uint64_t v, const char* flag) {
  if (v == 0) throw UsageError(std::string(flag) + " must be at least 1");
}

void finish(std::ofstream& out, const fs::path& p) {
  out.flush();
  if (!out) throw qsi::IoError("write failed for '" + p.string() + "'");
}

// ---------------------------------------------------------------------------

struct GenDataOptions {
  std::uint64_t shots = 3500;
  std::size_t per_class = 1000;
};

void cmd_gen_data(const RunContext& ctx, const GenDataOptions& o) {
  require_positive(o.shots, "--shots");
  require_positive(o.per_class, "--per-class");
  const auto data = qsi::generate_dataset(qsi::default_class_definitions(), o.shots, o.per_class, ctx.seed);
  const std::pair<const char*, const std::vector<qsi::LabeledItem>*> splits[] = {
      {"train.csv", &data.train}, {"validation.csv", &data.validation}, {"test.csv", &data.test}};
  for (const auto& [name, items] : splits) {
    auto out = ctx.open(name);
    out << ctx.header();
    qsi::write_dataset_csv(out, *items);
    finish(out, ctx.path(name));
  }
  nlohmann::ordered_json manifest;
  manifest["provenance"] = ctx.provenance();
  manifest["seed"] = ctx.seed;
  manifest["shots"] = o.shots;
  manifest["per_class"] = o.per_class;
  manifest["split"] = {{"train", data.split.train}, {"validation", data.split.validation}, {"test", data.split.test}};
  manifest["files"] = {{"train", "train.csv"}, {"validation", "validation.csv"}, {"test", "test.csv"}};
  manifest["counts"] = {{"train", data.train.size()}, {"validation", data.validation.size()}, {"test", data.test.size()}};
  auto out = ctx.open("manifest.json");
  out << manifest.dump(2) << '\n';
  finish(out, ctx.path("manifest.json"));
  std::cout << "wrote " << data.size() << " histograms to " << ctx.out_dir << '\n';
}

std::vector<qsi::LabeledItem> load_dataset(const std::string& path) {
  auto in = qsi::open_input(path);
  return qsi::read_dataset_csv(in);
}

struct TrainOptions {
  std::string data_dir;
  std::size_t max_epochs = 5000;
  std::size_t patience = 1000;
  std::string model_name = "model.json";
};

void cmd_train(const RunContext& ctx, const TrainOptions& o) {
  qsi::LabeledDataset data;
  data.train = load_dataset((fs::path(o.data_dir) / "train.csv").string());
  data.validation = load_dataset((fs::path(o.data_dir) / "validation.csv").string());
  qsi::TrainConfig cfg;
  cfg.seed = ctx.seed;
  cfg.max_epochs = o.max_epochs;
  cfg.patience_epochs = std::min(o.patience, o.max_epochs);
  const auto result = qsi::train_scg(data, cfg);

  auto out = ctx.open(o.model_name);
  qsi::write_model_json(out, result.model, ctx.provenance());
  finish(out, ctx.path(o.model_name));

  auto hist = ctx.open("train_history.csv");
  hist << ctx.header() << "epoch,train_loss,validation_loss\n";
  for (const auto& e : result.history) {
    hist << e.epoch << ',' << qsi::fmt17(e.train_loss) << ',' << qsi::fmt17(e.validation_loss) << '\n';
  }
  finish(hist, ctx.path("train_history.csv"));
  std::cout << "best epoch " << result.best_epoch << ", validation loss " << result.best_validation_loss << '\n';
}

struct EvalOptions {
  std::string model_path;
  std::string test_path;
};

void write_evaluation(std::ostream& os, const qsi::Evaluation& ev) {
  os << "accuracy," << qsi::fmt17(ev.accuracy) << "\ntotal," << ev.total << "\n\ntrue\\predicted";
  for (auto l : qsi::kAllLabels) os << ',' << qsi::to_string(l);
  os << '\n';
  for (std::size_t t = 0; t < qsi::kNumClasses; ++t) {
    os << qsi::to_string(qsi::kAllLabels[t]);
    for (std::size_t p = 0; p < qsi::kNumClasses; ++p) os << ',' << ev.confusion[t][p];
    os << '\n';
  }
}

void cmd_eval(const RunContext& ctx, const EvalOptions& o) {
  auto min = qsi::open_input(o.model_path);
  const auto model = qsi::read_model_json(min);
  std::string test_path = o.test_path;
  if (fs::is_directory(test_path)) test_path = (fs::path(test_path) / "test.csv").string();
  const auto test = load_dataset(test_path);
  const auto ev = qsi::evaluate(model, test);
  auto out = ctx.open("eval_metrics.csv");
  out << ctx.header();
  write_evaluation(out, ev);
  finish(out, ctx.path("eval_metrics.csv"));
  std::cout << "accuracy " << ev.accuracy << " (" << ev.total << " histograms)\n";
}

struct EvalCurveOptions {
  std::vector<std::uint64_t> shots{100, 500, 1000, 3500, 10000};
  std::size_t per_class = 1000;
  std::size_t seeds = 5;
  std::size_t max_epochs = 5000;
};

void cmd_eval_curve(const RunContext& ctx, const EvalCurveOptions& o) {
  require_positive(o.per_class, "--per-class");
  require_positive(o.seeds, "--seeds");
  for (auto d : o.shots) require_positive(d, "--shots");
  auto runs = ctx.open("eval_curve_runs.csv");
  runs << ctx.header() << "shots,run,seed,accuracy\n";
  auto curve = ctx.open("eval_curve.csv");
  curve << ctx.header() << "shots,mean_accuracy,min_accuracy,max_accuracy\n";
  for (auto d : o.shots) {
    double sum = 0.0, lo = 1.0, hi = 0.0;
    for (std::size_t r = 0; r < o.seeds; ++r) {
      const std::uint64_t seed = qsi::derive_seed(ctx.seed, r);
      const auto data = qsi::generate_dataset(qsi::default_class_definitions(), d, o.per_class, seed);
      qsi::TrainConfig cfg;
      cfg.seed = seed;
      cfg.max_epochs = o.max_epochs;
      cfg.patience_epochs = std::min(cfg.patience_epochs, o.max_epochs);
      const double acc = qsi::evaluate(qsi::train_scg(data, cfg).model, data.test).accuracy;
      runs << d << ',' << r << ',' << seed << ',' << qsi::fmt17(acc) << '\n';
      sum += acc, lo = std::min(lo, acc), hi = std::max(hi, acc);
    }
    const double mean = sum / static_cast<double>(o.seeds);
    curve << d << ',' << qsi::fmt17(mean) << ',' << qsi::fmt17(lo) << ',' << qsi::fmt17(hi) << '\n';
    std::cout << "D=" << d << " mean accuracy " << mean << '\n';
  }
  finish(runs, ctx.path("eval_curve_runs.csv"));
  finish(curve, ctx.path("eval_curve.csv"));
}

qsi::Scene load_scene(const std::string& path) {
  auto in = qsi::open_input(path);
  auto scene = qsi::read_scene_json(in);
  if (scene.emitters.empty()) throw UsageError("scene '" + path + "' lists no emitters");
  scene.validate();
  return scene;
}

void write_pgm_file(const RunContext& ctx, const std::string& name, const qsi::Grid2D<int>& gray) {
  auto out = ctx.open(name);
  qsi::write_pgm(out, gray, ctx.header_lines());
  finish(out, ctx.path(name));
}

struct SimulateOptions {
  std::string scene_path;
  std::uint64_t shots = 0;
};

qsi::Raster simulate(const RunContext& ctx, const qsi::Scene& scene, std::uint64_t shots_flag) {
  const std::uint64_t shots = shots_flag ? shots_flag : scene.shots;
  require_positive(shots, "--shots");
  return qsi::simulate_raster(scene, shots, ctx.seed);
}

void cmd_simulate(const RunContext& ctx, const SimulateOptions& o) {
  const auto scene = load_scene(o.scene_path);
  const auto raster = simulate(ctx, scene, o.shots);
  auto out = ctx.open("raster.csv");
  out << ctx.header();
  qsi::write_raster_csv(out, raster);
  finish(out, ctx.path("raster.csv"));
  const auto intensity = qsi::raster_intensity(raster);
  write_pgm_file(ctx, "intensity.pgm", qsi::image_to_gray(intensity));
  auto csv = ctx.open("intensity.csv");
  csv << ctx.header();
  qsi::write_image_csv(csv, intensity);
  finish(csv, ctx.path("intensity.csv"));
  write_pgm_file(ctx, "intensity_model.pgm", qsi::image_to_gray(qsi::render_intensity(scene)));
  std::cout << "simulated " << raster.width << "x" << raster.height << " pixels\n";
}

struct ClassifyOptions {
  std::string scene_path;
  std::string model_path;
  std::string raster_path;
  std::uint64_t shots = 0;
  double threshold = -1.0;
};

void cmd_classify(const RunContext& ctx, const ClassifyOptions& o) {
  if (o.scene_path.empty() && o.raster_path.empty()) throw UsageError("classify needs --scene or --raster");
  auto min = qsi::open_input(o.model_path);
  const auto model = qsi::read_model_json(min);
  qsi::Raster raster;
  double threshold = o.threshold;
  if (!o.raster_path.empty()) {
    auto in = qsi::open_input(o.raster_path);
    raster = qsi::read_raster_csv(in);
  }
  if (!o.scene_path.empty()) {
    const auto scene = load_scene(o.scene_path);
    if (threshold < 0.0) threshold = scene.background_threshold;
    if (o.raster_path.empty()) raster = simulate(ctx, scene, o.shots);
  }
  if (threshold < 0.0) threshold = 0.05;
  const auto map = qsi::classify_image(model, raster, threshold);
  write_pgm_file(ctx, "class_map.pgm", qsi::class_map_to_gray(map));
  write_pgm_file(ctx, "intensity.pgm", qsi::image_to_gray(qsi::raster_intensity(raster)));
  auto csv = ctx.open("class_map.csv");
  csv << ctx.header();
  qsi::write_class_map_csv(csv, map);
  finish(csv, ctx.path("class_map.csv"));
  auto legend = ctx.open("class_map_legend.csv");
  legend << ctx.header();
  qsi::write_class_legend(legend);
  finish(legend, ctx.path("class_map_legend.csv"));

  std::array<std::size_t, qsi::kNumClasses + 1> counts{};
  for (const auto& c : map.cells) ++counts[c ? qsi::index_of(*c) + 1 : 0];
  std::cout << "Background " << counts[0];
  for (auto l : qsi::kAllLabels) std::cout << ", " << qsi::to_string(l) << ' ' << counts[qsi::index_of(l) + 1];
  std::cout << '\n';
}

struct SweepOptions {
  std::vector<double> separations = qsi::SweepConfig::default_separations();
  std::size_t repeats = 10;
  std::uint64_t shots = 10000;
  std::size_t grid = 64;
  double extent = 4.5;
  double peak_coherent = 1.2;
  double peak_thermal = 1.2;
  double tau = 0.3;
  double plateau = 1.0;
  bool perfect = false;
  bool genetic = false;
};

void cmd_sweep(const RunContext& ctx, const SweepOptions& o) {
  require_positive(o.repeats, "--repeats");
  require_positive(o.shots, "--shots");
  qsi::SweepConfig cfg;
  cfg.separations = o.separations;
  cfg.repeats = o.repeats;
  cfg.shots = o.shots;
  cfg.seed = ctx.seed;
  cfg.grid = {o.grid, o.grid, o.extent};
  cfg.peak_coherent = o.peak_coherent;
  cfg.peak_thermal = o.peak_thermal;
  cfg.tau = o.tau;
  cfg.plateau_value = o.plateau;
  cfg.perfect_classification = o.perfect;
  cfg.classified.genetic = o.genetic;
  const auto rows = qsi::separation_sweep(cfg);
  auto out = ctx.open("sweep.csv");
  out << ctx.header();
  qsi::write_sweep_csv(out, rows);
  finish(out, ctx.path("sweep.csv"));
  auto rep = ctx.open("sweep_repeats.csv");
  rep << ctx.header() << "s_true,repeat,s_direct,s_classified\n";
  for (const auto& r : rows) {
    for (std::size_t k = 0; k < r.classified_repeats.size(); ++k) {
      rep << qsi::fmt17(r.true_separation) << ',' << k << ','
          << (std::isnan(r.direct_repeats[k]) ? std::string("single") : qsi::fmt17(r.direct_repeats[k])) << ','
          << qsi::fmt17(r.classified_repeats[k]) << '\n';
    }
  }
  finish(rep, ctx.path("sweep_repeats.csv"));
  std::cout << "wrote " << rows.size() << " rows\n";
}

struct FitDistOptions {
  std::string input;
  double grid_step = 0.05;
  std::size_t n_fit_max = 6;
  std::size_t max_modes = 3;
};

void cmd_fit_dist(const RunContext& ctx, const FitDistOptions& o) {
  auto in = qsi::open_input(o.input);
  const auto dist = qsi::read_distribution_csv(in);
  qsi::FitConfig cfg;
  cfg.grid_step = o.grid_step;
  cfg.n_fit_max = o.n_fit_max;
  cfg.max_modes = o.max_modes;
  const auto fit = qsi::fit_distribution(dist.probs, cfg);
  auto out = ctx.open("fit_report.csv");
  out << ctx.header();
  qsi::write_fit_report(out, fit, dist.probs);
  finish(out, ctx.path("fit_report.csv"));
  for (std::size_t k = 0; k < fit.best.modes.size(); ++k) {
    const auto& m = fit.best.modes[k];
    std::cout << "mode " << k << ": coherent " << m.coherent << ", thermal " << m.thermal1 << " + " << m.thermal2
              << '\n';
  }
  std::cout << "objective " << fit.objective << '\n';
}

struct FeaturesOptions {
  std::vector<std::uint64_t> shots{10, 100, 1000, 10000};
  std::size_t points = 200;
};

void cmd_features(const RunContext& ctx, const FeaturesOptions& o) {
  require_positive(o.points, "--points");
  for (auto d : o.shots) require_positive(d, "--shots");
  const auto defs = qsi::default_class_definitions();
  auto out = ctx.open("features.csv");
  out << ctx.header() << "class,source,shots,p0,p1,p2\n";
  for (std::size_t c = 0; c < qsi::kNumClasses; ++c) {
    const auto dist = qsi::distribution_mix_converged(defs[c], 1e-12);
    const auto label = qsi::to_string(qsi::kAllLabels[c]);
    const auto anchor = qsi::feature_projection(qsi::exact_features(dist));
    out << label << ",exact,0," << qsi::fmt17(anchor[0]) << ',' << qsi::fmt17(anchor[1]) << ','
        << qsi::fmt17(anchor[2]) << '\n';
    for (std::size_t di = 0; di < o.shots.size(); ++di) {
      for (std::size_t k = 0; k < o.points; ++k) {
        const auto stream = qsi::stream_id(qsi::StreamPurpose::kHistogram, (c * o.shots.size() + di) * o.points + k);
        const auto f = qsi::to_features(qsi::sample_counts(dist, o.shots[di], ctx.seed, stream));
        const auto p = qsi::feature_projection(f);
        out << label << ",sample," << o.shots[di] << ',' << qsi::fmt17(p[0]) << ',' << qsi::fmt17(p[1]) << ','
            << qsi::fmt17(p[2]) << '\n';
      }
    }
  }
  finish(out, ctx.path("features.csv"));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Photon-statistics classification and superresolution imaging toolkit"};
  app.set_version_flag("--version", "qsi " QSI_VERSION);
  app.set_config("--config", "", "TOML config file; flags override its values");
  app.require_subcommand(1);

  RunContext ctx;
  ctx.command_line = join_args(argc, argv);
  if (const char* env = std::getenv("QSI_OUT_DIR"); env != nullptr && *env != '\0') ctx.out_dir = env;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", ctx.seed, "Random seed (echoed into every output)")->capture_default_str();
    sub->add_option("--out", ctx.out_dir, "Output directory (default: $QSI_OUT_DIR or .)");
  };

  GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Sample labelled histograms for the five classes");
  gen_cmd->add_option("--shots", gen.shots, "Measurements per histogram")->capture_default_str();
  gen_cmd->add_option("--per-class", gen.per_class, "Histograms per class")->capture_default_str();
  add_common(gen_cmd);

  TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "Train the classifier with scaled conjugate gradient");
  train_cmd->add_option("--data", train.data_dir, "Directory with train.csv and validation.csv")->required();
  train_cmd->add_option("--max-epochs", train.max_epochs)->capture_default_str();
  train_cmd->add_option("--patience", train.patience, "Epochs without validation improvement")->capture_default_str();
  train_cmd->add_option("--model", train.model_name, "Model file name inside --out")->capture_default_str();
  add_common(train_cmd);

  EvalOptions eval;
  auto* eval_cmd = app.add_subcommand("eval", "Accuracy and confusion matrix on a test set");
  eval_cmd->add_option("--model", eval.model_path)->required();
  eval_cmd->add_option("--data", eval.test_path, "Test CSV or a directory holding test.csv")->required();
  add_common(eval_cmd);

  EvalCurveOptions curve;
  auto* curve_cmd = app.add_subcommand("eval-curve", "Test accuracy as a function of shots per histogram");
  curve_cmd->add_option("--shots", curve.shots)->delimiter(',')->capture_default_str();
  curve_cmd->add_option("--per-class", curve.per_class)->capture_default_str();
  curve_cmd->add_option("--seeds", curve.seeds, "Independent runs averaged per point")->capture_default_str();
  curve_cmd->add_option("--max-epochs", curve.max_epochs)->capture_default_str();
  add_common(curve_cmd);

  SimulateOptions sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Raster-scan a scene into per-pixel histograms");
  sim_cmd->add_option("--scene", sim.scene_path)->required();
  sim_cmd->add_option("--shots", sim.shots, "Override the scene's shots per pixel");
  add_common(sim_cmd);

  ClassifyOptions cls;
  auto* cls_cmd = app.add_subcommand("classify", "Per-pixel class map of a simulated or saved raster");
  cls_cmd->add_option("--model", cls.model_path)->required();
  cls_cmd->add_option("--scene", cls.scene_path);
  cls_cmd->add_option("--raster", cls.raster_path, "raster.csv written by simulate");
  cls_cmd->add_option("--shots", cls.shots, "Override the scene's shots per pixel");
  cls_cmd->add_option("--threshold", cls.threshold, "Background threshold (mean photons)");
  add_common(cls_cmd);

  SweepOptions sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "Two-emitter separation sweep, classified vs direct imaging");
  sweep_cmd->add_option("--separations", sweep.separations, "Separations in waist units")->delimiter(',');
  sweep_cmd->add_option("--repeats", sweep.repeats)->capture_default_str();
  sweep_cmd->add_option("--shots", sweep.shots)->capture_default_str();
  sweep_cmd->add_option("--grid", sweep.grid, "Pixels per side")->capture_default_str();
  sweep_cmd->add_option("--extent", sweep.extent, "Field of view in waist units")->capture_default_str();
  sweep_cmd->add_option("--peak-coherent", sweep.peak_coherent)->capture_default_str();
  sweep_cmd->add_option("--peak-thermal", sweep.peak_thermal)->capture_default_str();
  sweep_cmd->add_option("--tau", sweep.tau, "Presence and background threshold")->capture_default_str();
  sweep_cmd->add_option("--plateau", sweep.plateau, "Direct estimate reported when unresolved")->capture_default_str();
  sweep_cmd->add_flag("--perfect", sweep.perfect, "Use exact reference class maps");
  sweep_cmd->add_flag("--genetic", sweep.genetic, "Genetic search for the disk fit");
  add_common(sweep_cmd);

  FitDistOptions fit;
  auto* fit_cmd = app.add_subcommand("fit-dist", "Decompose a photon-number distribution into sources");
  fit_cmd->add_option("--input", fit.input, "CSV with n,p or n,count rows")->required();
  fit_cmd->add_option("--grid-step", fit.grid_step)->capture_default_str();
  fit_cmd->add_option("--n-fit-max", fit.n_fit_max)->capture_default_str();
  fit_cmd->add_option("--max-modes", fit.max_modes)->capture_default_str();
  add_common(fit_cmd);

  FeaturesOptions feat;
  auto* feat_cmd = app.add_subcommand("features", "(p0, p1, p2) projections of sampled histograms");
  feat_cmd->add_option("--shots", feat.shots)->delimiter(',')->capture_default_str();
  feat_cmd->add_option("--points", feat.points, "Histograms per class and shot count")->capture_default_str();
  add_common(feat_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen_cmd) cmd_gen_data(ctx, gen);
    else if (*train_cmd) cmd_train(ctx, train);
    else if (*eval_cmd) cmd_eval(ctx, eval);
    else if (*curve_cmd) cmd_eval_curve(ctx, curve);
    else if (*sim_cmd) cmd_simulate(ctx, sim);
    else if (*cls_cmd) cmd_classify(ctx, cls);
    else if (*sweep_cmd) cmd_sweep(ctx, sweep);
    else if (*fit_cmd) cmd_fit_dist(ctx, fit);
    else if (*feat_cmd) cmd_features(ctx, feat);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const qsi::IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const qsi::DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDomain;
  }
  return 0;
}
