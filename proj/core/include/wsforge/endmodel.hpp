#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "wsforge/corpus.hpp"

namespace wsforge {

enum class TokenPattern { Alphanumeric, Whitespace };

struct FeatureConfig {
  std::size_t dim = std::size_t{1} << 18;  // power of two
  bool lowercase = true;
  TokenPattern token_pattern = TokenPattern::Alphanumeric;
  int ngram_max = 1;          // 1 or 2
  bool l2_normalize = false;  // scale each vector to unit norm
};

struct FeatureVector {
  std::vector<std::uint32_t> indices;  // strictly increasing
  std::vector<double> values;

  std::size_t nnz() const noexcept { return indices.size(); }
};

std::uint64_t fnv1a64(std::string_view bytes) noexcept;
std::vector<std::string> tokenize(std::string_view text, const FeatureConfig& config);

// Hashed n-gram counts (or unit-norm weights) modulo dim.
FeatureVector featurize(std::string_view text, const FeatureConfig& config);

struct TrainConfig {
  double lr = 0.1;
  double l2 = 1e-4;
  int epochs = 500;
  std::uint64_t seed = 0;
  bool soft_labels = false;
  unsigned threads = 1;  // gradient partials are reduced in a fixed chunk order
};

/// Rows of the design matrix with hard targets, and soft targets (n x k)
/// when training on posteriors.
struct TrainingSet {
  std::size_t k = 0;
  std::vector<FeatureVector> x;
  std::vector<ClassIndex> y;
  std::vector<double> soft;

  std::size_t n() const noexcept { return x.size(); }
};

struct LinearParams {
  std::size_t k = 0;
  std::size_t dim = 0;
  std::vector<double> weights;  // k x dim, row per class
  std::vector<double> bias;     // k

  double& w(std::size_t c, std::size_t j) noexcept { return weights[c * dim + j]; }
  double w(std::size_t c, std::size_t j) const noexcept { return weights[c * dim + j]; }
};

struct TrainDiagnostics {
  int epochs = 0;
  double final_loss = 0.0;
  std::vector<double> loss_trace;  // objective before each epoch's update
  std::uint64_t seed = 0;
};

struct LinearModel {
  LinearParams params;
  FeatureConfig features;
  TrainConfig config;
  TrainDiagnostics diagnostics;

  std::vector<double> logits(const FeatureVector& x) const;
  ClassIndex predict(const FeatureVector& x) const;
  ClassIndex predict(std::string_view text) const { return predict(featurize(text, features)); }
};

/// Mean multinomial cross-entropy plus (l2 / 2) * ||W||^2 (bias unpenalized).
/// When `gradient` is non-null it receives the full analytic gradient.
double loss_and_gradient(const LinearParams& params, const TrainingSet& data, double l2, bool soft_labels,
                         LinearParams* gradient = nullptr);

/// Full-batch proximal gradient descent from zero weights. Each epoch takes
/// a gradient step on the cross-entropy and applies the L2 term in closed
/// form, W <- (W - lr * g) / (1 + lr * l2). With unit-norm features the
/// cross-entropy gradient is 1-Lipschitz, so lr <= 1 keeps the objective
/// non-increasing for any l2.
LinearModel train(const TrainingSet& data, const FeatureConfig& features, const TrainConfig& config);

TrainingSet make_training_set(std::span<const std::string> texts, std::span<const ClassIndex> labels,
                              std::size_t k, const FeatureConfig& features,
                              std::span<const double> soft = {});

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;

  bool operator==(const ClassMetrics&) const = default;
};

struct EvalReport {
  double accuracy = 0.0;
  std::optional<double> f1_binary;  // present iff the class space names a positive class
  double f1_macro = 0.0;
  std::size_t n_test = 0;
  std::vector<ClassMetrics> per_class;

  bool operator==(const EvalReport&) const = default;
};

// F1 is 0 whenever precision + recall is 0.
EvalReport evaluate_predictions(std::span<const ClassIndex> predicted, std::span<const ClassIndex> gold,
                                const ClassSpace& classes);
EvalReport evaluate(const LinearModel& model, std::span<const Document> test, const ClassSpace& classes);

nlohmann::json eval_to_json(const EvalReport& report);
EvalReport eval_from_json(const nlohmann::json& doc);

// Binary file: "WSFLM1\n", a JSON header line (k, dim, configs, seed,
// diagnostics, nnz), k biases, then nnz (class u32, index u32, value f64)
// records, little-endian.
void save_model(const std::filesystem::path& path, const LinearModel& model);
LinearModel load_model(const std::filesystem::path& path);

}  // namespace wsforge
