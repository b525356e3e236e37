#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "qsi/errors.hpp"
#include "qsi/io_util.hpp"
#include "qsi/photon_stats.hpp"
#include "qsi/rng.hpp"
#include "qsi/sampling.hpp"

namespace qsi {

// ---------------------------------------------------------------------------
// Labels

/// Five classes of light. The numeric order is part of every file format.
enum class ClassLabel : std::uint8_t { C = 0, T = 1, CT = 2, TT = 3, CTT = 4 };

inline constexpr std::size_t kNumClasses = 5;
inline constexpr std::size_t kNumHidden = 10;
inline constexpr std::array<ClassLabel, kNumClasses> kAllLabels{ClassLabel::C, ClassLabel::T, ClassLabel::CT,
                                                              ClassLabel::TT, ClassLabel::CTT};

inline std::size_t index_of(ClassLabel label) { return static_cast<std::size_t>(label); }

inline std::string_view to_string(ClassLabel label) {
  constexpr std::array<std::string_view, kNumClasses> names{"C", "T", "CT", "TT", "CTT"};
  return names[index_of(label)];
}

inline ClassLabel parse_label(std::string_view text) {
  for (ClassLabel l : kAllLabels) {
    if (to_string(l) == text) return l;
  }
  throw SchemaError("unknown class label '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Model

/// 21 -> 10 sigmoid -> 5 softmax feedforward network.
struct MLPModel {
  Eigen::MatrixXd w1 = Eigen::MatrixXd::Zero(kNumHidden, kNumFeatures);
  Eigen::VectorXd b1 = Eigen::VectorXd::Zero(kNumHidden);
  Eigen::MatrixXd w2 = Eigen::MatrixXd::Zero(kNumClasses, kNumHidden);
  Eigen::VectorXd b2 = Eigen::VectorXd::Zero(kNumClasses);
  std::array<ClassLabel, kNumClasses> labels = kAllLabels;

  static constexpr Eigen::Index kNumParams =
      kNumHidden * kNumFeatures + kNumHidden + kNumClasses * kNumHidden + kNumClasses;

  /// Weights and biases drawn uniformly from [-half_width, half_width].
  static MLPModel random_uniform(std::uint64_t seed, double half_width = 0.5) {
    StreamRng rng(seed, stream_id(StreamPurpose::kInit, 0));
    Eigen::VectorXd flat(kNumParams);
    for (Eigen::Index i = 0; i < kNumParams; ++i) flat[i] = (2.0 * rng.uniform() - 1.0) * half_width;
    MLPModel m;
    m.assign(flat);
    return m;
  }

  /// Parameter vector layout: w1 row-major, b1, w2 row-major, b2.
  Eigen::VectorXd flatten() const {
    Eigen::VectorXd flat(kNumParams);
    Eigen::Index k = 0;
    for (Eigen::Index r = 0; r < w1.rows(); ++r)
      for (Eigen::Index c = 0; c < w1.cols(); ++c) flat[k++] = w1(r, c);
    for (Eigen::Index r = 0; r < b1.size(); ++r) flat[k++] = b1[r];
    for (Eigen::Index r = 0; r < w2.rows(); ++r)
      for (Eigen::Index c = 0; c < w2.cols(); ++c) flat[k++] = w2(r, c);
    for (Eigen::Index r = 0; r < b2.size(); ++r) flat[k++] = b2[r];
    return flat;
  }

  void assign(const Eigen::VectorXd& flat) {
    if (flat.size() != kNumParams) throw DomainError("MLPModel::assign: wrong parameter count");
    Eigen::Index k = 0;
    for (Eigen::Index r = 0; r < w1.rows(); ++r)
      for (Eigen::Index c = 0; c < w1.cols(); ++c) w1(r, c) = flat[k++];
    for (Eigen::Index r = 0; r < b1.size(); ++r) b1[r] = flat[k++];
    for (Eigen::Index r = 0; r < w2.rows(); ++r)
      for (Eigen::Index c = 0; c < w2.cols(); ++c) w2(r, c) = flat[k++];
    for (Eigen::Index r = 0; r < b2.size(); ++r) b2[r] = flat[k++];
  }

  void validate() const {
    if (w1.rows() != static_cast<Eigen::Index>(kNumHidden) || w1.cols() != static_cast<Eigen::Index>(kNumFeatures) ||
        b1.size() != static_cast<Eigen::Index>(kNumHidden) || w2.rows() != static_cast<Eigen::Index>(kNumClasses) ||
        w2.cols() != static_cast<Eigen::Index>(kNumHidden) || b2.size() != static_cast<Eigen::Index>(kNumClasses)) {
      throw SchemaError("MLPModel: layer shapes must be 10x21, 10, 5x10, 5");
    }
    if (!w1.allFinite() || !b1.allFinite() || !w2.allFinite() || !b2.allFinite()) {
      throw DomainError("MLPModel: weights must be finite");
    }
  }
};

/// Gradient with the same layout as the model parameters.
struct ModelGradient {
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;
  Eigen::VectorXd b2;

  Eigen::VectorXd flatten() const {
    MLPModel tmp;
    tmp.w1 = w1;
    tmp.b1 = b1;
    tmp.w2 = w2;
    tmp.b2 = b2;
    return tmp.flatten();
  }
};

using ClassProbabilities = std::array<double, kNumClasses>;

struct LabeledItem {
  FeatureVector features;
  ClassLabel label = ClassLabel::C;
};

namespace detail {

inline double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

/// Column-wise softmax, shifted by the column max for stability.
inline Eigen::MatrixXd softmax_columns(const Eigen::MatrixXd& z) {
  Eigen::MatrixXd y(z.rows(), z.cols());
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    const double peak = z.col(c).maxCoeff();
    y.col(c) = (z.col(c).array() - peak).exp().matrix();
    y.col(c) /= y.col(c).sum();
  }
  return y;
}

/// Features as a 21 x B column matrix plus label indices.
struct BatchMatrix {
  Eigen::MatrixXd x;
  std::vector<Eigen::Index> y;

  explicit BatchMatrix(std::span<const LabeledItem> items)
      : x(static_cast<Eigen::Index>(kNumFeatures), static_cast<Eigen::Index>(items.size())), y(items.size()) {
    for (std::size_t b = 0; b < items.size(); ++b) {
      for (std::size_t f = 0; f < kNumFeatures; ++f) x(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(b)) = items[b].features.probs[f];
      y[b] = static_cast<Eigen::Index>(index_of(items[b].label));
    }
  }

  Eigen::Index size() const { return x.cols(); }
};

/// Mean cross-entropy over the batch, and optionally its gradient.
inline double loss_and_gradient(const MLPModel& model, const BatchMatrix& batch, ModelGradient* grad) {
  const Eigen::Index count = batch.size();
  Eigen::MatrixXd a1 = model.w1 * batch.x;
  a1.colwise() += model.b1;
  const Eigen::MatrixXd h = a1.unaryExpr([](double v) { return sigmoid(v); });
  Eigen::MatrixXd z = model.w2 * h;
  z.colwise() += model.b2;

  double loss = 0.0;
  Eigen::MatrixXd y(z.rows(), count);
  for (Eigen::Index c = 0; c < count; ++c) {
    const double peak = z.col(c).maxCoeff();
    const Eigen::VectorXd e = (z.col(c).array() - peak).exp().matrix();
    const double norm = e.sum();
    y.col(c) = e / norm;
    loss -= z(batch.y[static_cast<std::size_t>(c)], c) - peak - std::log(norm);
  }
  loss /= static_cast<double>(count);

  if (grad != nullptr) {
    Eigen::MatrixXd delta2 = y;
    for (Eigen::Index c = 0; c < count; ++c) delta2(batch.y[static_cast<std::size_t>(c)], c) -= 1.0;
    delta2 /= static_cast<double>(count);
    grad->w2 = delta2 * h.transpose();
    grad->b2 = delta2.rowwise().sum();
    const Eigen::MatrixXd delta1 =
        ((model.w2.transpose() * delta2).array() * h.array() * (1.0 - h.array())).matrix();
    grad->w1 = delta1 * batch.x.transpose();
    grad->b1 = delta1.rowwise().sum();
  }
  return loss;
}

}  // namespace detail

/// h = sigmoid(w1 x + b1); y = softmax(w2 h + b2).
inline ClassProbabilities forward(const MLPModel& model, const FeatureVector& x) {
  const Eigen::Map<const Eigen::VectorXd> in(x.probs.data(), static_cast<Eigen::Index>(kNumFeatures));
  const Eigen::VectorXd h = (model.w1 * in + model.b1).unaryExpr([](double v) { return detail::sigmoid(v); });
  const Eigen::VectorXd y = detail::softmax_columns(model.w2 * h + model.b2);
  ClassProbabilities out{};
  for (std::size_t k = 0; k < kNumClasses; ++k) out[k] = y[static_cast<Eigen::Index>(k)];
  return out;
}

/// Argmax of the output layer; ties go to the lower class index.
inline ClassLabel predict(const MLPModel& model, const FeatureVector& x) {
  const auto y = forward(model, x);
  std::size_t best = 0;
  for (std::size_t k = 1; k < kNumClasses; ++k) {
    if (y[k] > y[best]) best = k;
  }
  return model.labels[best];
}

/// KL divergence from a one-hot target, which is the cross-entropy -ln y_target.
inline double kl_loss(const ClassProbabilities& predicted, ClassLabel target) {
  return -std::log(predicted[index_of(target)]);
}

inline double kl_loss(const MLPModel& model, std::span<const LabeledItem> batch) {
  if (batch.empty()) throw EmptyInput("kl_loss: empty batch");
  return detail::loss_and_gradient(model, detail::BatchMatrix(batch), nullptr);
}

/// Exact gradient of the mean kl_loss over `batch`.
inline ModelGradient gradient(const MLPModel& model, std::span<const LabeledItem> batch) {
  if (batch.empty()) throw EmptyInput("gradient: empty batch");
  ModelGradient g;
  detail::loss_and_gradient(model, detail::BatchMatrix(batch), &g);
  return g;
}

// ---------------------------------------------------------------------------
// Datasets

struct Split {
  double train = 0.70;
  double validation = 0.15;
  double test = 0.15;

  void validate() const {
    if (train <= 0.0 || validation < 0.0 || test < 0.0 || std::abs(train + validation + test - 1.0) > 1e-9) {
      throw DomainError("Split: fractions must be nonnegative and sum to 1");
    }
  }
};

struct LabeledDataset {
  std::vector<LabeledItem> train;
  std::vector<LabeledItem> validation;
  std::vector<LabeledItem> test;
  Split split;

  std::size_t size() const { return train.size() + validation.size() + test.size(); }
};

using ClassDefinitions = std::array<DistinguishableMix, kNumClasses>;

/// Per-class source mixes; each source is its own distinguishable mode and
/// every class's total mean photon number lies in [1, 1.5].
inline ClassDefinitions default_class_definitions() {
  using M = ModeSpec;
  return {
      DistinguishableMix{{M::coherent(1.5)}},
      DistinguishableMix{{M::thermal(1.5)}},
      DistinguishableMix{{M::coherent(0.5), M::thermal(0.5)}},
      DistinguishableMix{{M::thermal(0.75), M::thermal(0.25)}},
      DistinguishableMix{{M::coherent(0.2), M::thermal(0.65), M::thermal(0.65)}},
  };
}

/// Deterministic in-place Fisher-Yates shuffle.
template <typename T>
void shuffle_in_place(std::vector<T>& items, StreamRng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

/// Samples `per_class` histograms of `shots` measurements for each class and
/// splits every class 70/15/15 (stratified), then shuffles each split.
inline LabeledDataset generate_dataset(const ClassDefinitions& defs, std::uint64_t shots, std::size_t per_class,
                                       std::uint64_t seed, const Split& split = {}) {
  split.validate();
  if (shots == 0) throw EmptyHistogram("generate_dataset: shots per histogram must be positive");
  LabeledDataset data;
  data.split = split;
  const auto n_train = static_cast<std::size_t>(std::llround(split.train * static_cast<double>(per_class)));
  const auto n_val = static_cast<std::size_t>(std::llround(split.validation * static_cast<double>(per_class)));
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const auto dist = distribution_mix_converged(defs[c], 1e-12);
    std::vector<LabeledItem> items;
    items.reserve(per_class);
    for (std::size_t i = 0; i < per_class; ++i) {
      const auto hist = sample_counts(dist, shots, seed, stream_id(StreamPurpose::kHistogram, c * per_class + i));
      items.push_back({to_features(hist), kAllLabels[c]});
    }
    StreamRng rng(seed, stream_id(StreamPurpose::kShuffle, c));
    shuffle_in_place(items, rng);
    for (std::size_t i = 0; i < items.size(); ++i) {
      auto& dst = i < n_train ? data.train : (i < n_train + n_val ? data.validation : data.test);
      dst.push_back(items[i]);
    }
  }
  StreamRng rng(seed, stream_id(StreamPurpose::kShuffle, kNumClasses));
  shuffle_in_place(data.train, rng);
  shuffle_in_place(data.validation, rng);
  shuffle_in_place(data.test, rng);
  return data;
}

// ---------------------------------------------------------------------------
// Training: Møller's scaled conjugate gradient with early stopping.

struct TrainConfig {
  std::size_t patience_epochs = 1000;
  std::size_t max_epochs = 5000;
  std::uint64_t seed = 0;
  double sigma = 1e-5;
  double lambda_init = 1e-7;
  double init_half_width = 0.5;
  /// Classes that must appear in the training split.
  std::vector<ClassLabel> required_classes{kAllLabels.begin(), kAllLabels.end()};

  void validate() const {
    if (patience_epochs > max_epochs) throw DomainError("TrainConfig: patience must not exceed max_epochs");
    if (!(sigma > 0.0) || !(lambda_init > 0.0)) throw DomainError("TrainConfig: sigma and lambda must be positive");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
};

enum class StopReason { Patience, MaxEpochs, ZeroGradient };

struct TrainResult {
  MLPModel model;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_validation_loss = 0.0;
  StopReason stop_reason = StopReason::MaxEpochs;
};

inline void check_training_classes(const LabeledDataset& data, const TrainConfig& cfg) {
  std::array<bool, kNumClasses> seen{};
  for (const auto& item : data.train) seen[index_of(item.label)] = true;
  for (ClassLabel l : cfg.required_classes) {
    if (!seen[index_of(l)]) {
      throw DegenerateDataset("train_scg: class " + std::string(to_string(l)) + " is absent from the training split");
    }
  }
  if (data.validation.empty()) throw DegenerateDataset("train_scg: validation split is empty");
}

/// Full-batch SCG (Møller 1993). One epoch is one SCG iteration. Returns the
/// parameters of the epoch with the lowest validation loss; stops after
/// `patience_epochs` epochs without improvement or at `max_epochs`.
inline TrainResult train_scg(const MLPModel& init, const LabeledDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  init.validate();
  check_training_classes(data, cfg);

  const detail::BatchMatrix train(data.train);
  const detail::BatchMatrix val(data.validation);
  MLPModel work = init;
  auto eval = [&](const Eigen::VectorXd& w, Eigen::VectorXd& g) {
    work.assign(w);
    ModelGradient mg;
    const double e = detail::loss_and_gradient(work, train, &mg);
    g = mg.flatten();
    return e;
  };
  auto val_loss = [&](const Eigen::VectorXd& w) {
    work.assign(w);
    return detail::loss_and_gradient(work, val, nullptr);
  };

  TrainResult result;
  const Eigen::Index n_params = MLPModel::kNumParams;
  Eigen::VectorXd w = init.flatten();
  Eigen::VectorXd g;
  double e = eval(w, g);
  Eigen::VectorXd r = -g;
  Eigen::VectorXd p = r;
  double lambda = cfg.lambda_init;
  double lambda_bar = 0.0;
  double delta = 0.0;
  bool success = true;

  Eigen::VectorXd best_w = w;
  double best_val = val_loss(w);
  result.history.push_back({0, e, best_val});
  result.best_epoch = 0;

  Eigen::VectorXd g_probe, g_new;
  std::size_t successes = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double p2 = p.squaredNorm();
    if (r.squaredNorm() == 0.0 || p2 == 0.0) {
      result.stop_reason = StopReason::ZeroGradient;
      break;
    }
    if (success) {
      // Second-order information from a finite-difference Hessian-vector product.
      const double sigma_k = cfg.sigma / std::sqrt(p2);
      eval(w + sigma_k * p, g_probe);
      delta = p.dot(g_probe - g) / sigma_k;
    }
    delta += (lambda - lambda_bar) * p2;
    if (delta <= 0.0) {
      // Make the Hessian approximation positive definite.
      lambda_bar = 2.0 * (lambda - delta / p2);
      delta = -delta + lambda * p2;
      lambda = lambda_bar;
    }
    const double mu = p.dot(r);
    const double alpha = mu / delta;
    const Eigen::VectorXd w_new = w + alpha * p;
    const double e_new = eval(w_new, g_new);
    const double comparison = 2.0 * delta * (e - e_new) / (mu * mu);

    if (comparison >= 0.0 && std::isfinite(e_new)) {
      w = w_new;
      e = e_new;
      g = g_new;
      const Eigen::VectorXd r_old = r;
      r = -g;
      lambda_bar = 0.0;
      success = true;
      ++successes;
      if (successes % static_cast<std::size_t>(n_params) == 0) {
        p = r;
      } else {
        const double beta = (r.squaredNorm() - r.dot(r_old)) / mu;
        p = r + beta * p;
      }
      if (comparison >= 0.75) lambda *= 0.25;
    } else {
      lambda_bar = lambda;
      success = false;
    }
    if (comparison < 0.25 || !std::isfinite(comparison)) lambda += delta * (1.0 - comparison) / p2;
    if (!std::isfinite(lambda)) lambda = cfg.lambda_init;

    const double v = val_loss(w);
    result.history.push_back({epoch, e, v});
    if (v < best_val) {
      best_val = v;
      best_w = w;
      result.best_epoch = epoch;
    }
    if (epoch - result.best_epoch >= cfg.patience_epochs) {
      result.stop_reason = StopReason::Patience;
      break;
    }
  }

  result.model = init;
  result.model.assign(best_w);
  result.best_validation_loss = best_val;
  return result;
}

inline TrainResult train_scg(const LabeledDataset& data, const TrainConfig& cfg) {
  return train_scg(MLPModel::random_uniform(cfg.seed, cfg.init_half_width), data, cfg);
}

// ---------------------------------------------------------------------------
// Evaluation

struct Evaluation {
  double accuracy = 0.0;
  /// confusion[true][predicted]
  std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> confusion{};
  std::uint64_t total = 0;
};

inline Evaluation evaluate(const MLPModel& model, std::span<const LabeledItem> testset) {
  if (testset.empty()) throw EmptyInput("evaluate: empty test set");
  Evaluation ev;
  std::uint64_t correct = 0;
  for (const auto& item : testset) {
    const ClassLabel pred = predict(model, item.features);
    ++ev.confusion[index_of(item.label)][index_of(pred)];
    if (pred == item.label) ++correct;
  }
  ev.total = testset.size();
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(ev.total);
  return ev;
}

// ---------------------------------------------------------------------------
// Serialization

inline constexpr int kModelSchemaVersion = 1;

/// JSON document with fields schema_version, labels, w1, b1, w2, b2 (and an
/// optional provenance string). Numbers carry 17 significant digits.
inline void write_model_json(std::ostream& os, const MLPModel& model, std::string_view provenance = {}) {
  model.validate();
  auto vec = [](const Eigen::VectorXd& v) {
    std::string s = "[";
    for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt17(v[i]);
    return s + "]";
  };
  auto mat = [&](const Eigen::MatrixXd& m) {
    std::string s = "[\n";
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      s += "    " + vec(m.row(r).transpose()) + (r + 1 < m.rows() ? ",\n" : "\n");
    }
    return s + "  ]";
  };
  os << "{\n";
  if (!provenance.empty()) os << "  \"provenance\": " << nlohmann::json(std::string(provenance)).dump() << ",\n";
  os << "  \"schema_version\": " << kModelSchemaVersion << ",\n";
  os << "  \"labels\": [";
  for (std::size_t k = 0; k < kNumClasses; ++k) os << (k ? ", " : "") << '"' << to_string(model.labels[k]) << '"';
  os << "],\n";
  os << "  \"w1\": " << mat(model.w1) << ",\n";
  os << "  \"b1\": " << vec(model.b1) << ",\n";
  os << "  \"w2\": " << mat(model.w2) << ",\n";
  os << "  \"b2\": " << vec(model.b2) << "\n";
  os << "}\n";
}

inline MLPModel read_model_json(std::istream& is) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("model JSON: ") + e.what());
  }
  try {
    if (doc.at("schema_version").get<int>() != kModelSchemaVersion) {
      throw SchemaError("model JSON: unsupported schema_version");
    }
    MLPModel m;
    const auto labels = doc.at("labels");
    if (labels.size() != kNumClasses) throw SchemaError("model JSON: expected 5 labels");
    for (std::size_t k = 0; k < kNumClasses; ++k) m.labels[k] = parse_label(labels[k].get<std::string>());
    auto read_mat = [&](const char* key, Eigen::MatrixXd& out) {
      const auto& rows = doc.at(key);
      if (rows.size() != static_cast<std::size_t>(out.rows())) throw SchemaError(std::string("model JSON: bad shape for ") + key);
      for (Eigen::Index r = 0; r < out.rows(); ++r) {
        const auto& row = rows[static_cast<std::size_t>(r)];
        if (row.size() != static_cast<std::size_t>(out.cols())) throw SchemaError(std::string("model JSON: bad shape for ") + key);
        for (Eigen::Index c = 0; c < out.cols(); ++c) out(r, c) = row[static_cast<std::size_t>(c)].get<double>();
      }
    };
    auto read_vec = [&](const char* key, Eigen::VectorXd& out) {
      const auto& vals = doc.at(key);
      if (vals.size() != static_cast<std::size_t>(out.size())) throw SchemaError(std::string("model JSON: bad shape for ") + key);
      for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = vals[static_cast<std::size_t>(i)].get<double>();
    };
    read_mat("w1", m.w1);
    read_vec("b1", m.b1);
    read_mat("w2", m.w2);
    read_vec("b2", m.b2);
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("model JSON: ") + e.what());
  }
}

/// One row per item: p0..p20 then the label.
inline void write_dataset_csv(std::ostream& os, std::span<const LabeledItem> items) {
  for (std::size_t f = 0; f < kNumFeatures; ++f) os << 'p' << f << ',';
  os << "label\n";
  for (const auto& item : items) {
    for (double p : item.features.probs) os << fmt17(p) << ',';
    os << to_string(item.label) << '\n';
  }
}

inline std::vector<LabeledItem> read_dataset_csv(std::istream& is) {
  std::vector<LabeledItem> items;
  std::string line;
  bool header_seen = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != kNumFeatures + 1) {
      throw SchemaError("dataset CSV: expected 21 feature columns plus a label, found " +
                        std::to_string(fields.size()) + " columns");
    }
    if (!header_seen) {
      header_seen = true;
      if (fields.front() == "p0") continue;
    }
    LabeledItem item;
    for (std::size_t f = 0; f < kNumFeatures; ++f) item.features.probs[f] = parse_double(fields[f], "dataset CSV");
    item.label = parse_label(fields.back());
    items.push_back(item);
  }
  return items;
}

}  // namespace qsi
