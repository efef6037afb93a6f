#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "wsforge/corpus.hpp"
#include "wsforge/votes.hpp"

namespace wsforge {

enum class ModelKind { MajorityVote, WeightedMajorityVote, DawidSkene, FlyingSquid };

std::string_view to_string(ModelKind kind);  // "mv", "wmv", "ds", "fs"
ModelKind parse_model_kind(std::string_view text);

struct FitConfig {
  int ds_max_iters = 100;
  double ds_tol = 1e-6;
  double ds_smoothing = 0.01;       // M-step pseudocount
  double ds_init_smoothing = 0.1;   // uniform mass added to MV responsibilities
  int ds_restarts = 1;              // restart 0 starts from MV; later ones are random
  std::uint64_t seed = 0;
  double fs_moment_floor = 1e-3;
  bool wmv_fallback = true;         // allow MV-agreement weights when no dev set
};

// Gold-labelled votes on a held-out split.
struct DevSet {
  VoteMatrix votes;
  std::vector<ClassIndex> gold;
};

struct MajorityParams {};

struct WeightedParams {
  std::vector<double> weights;
  std::string weight_source;  // "dev_accuracy" or "mv_agreement"
};

/// Per-LF confusion tensors over emissions {abstain, 0, ..., k-1}:
/// confusion[a][c][e] = P(LF a emits e | y = c), with e = vote + 1.
struct DawidSkeneParams {
  std::vector<double> prior;
  std::vector<std::vector<std::vector<double>>> confusion;
};

/// Per-LF accuracies from the triplet method. For k == 2 there is one
/// binary task (class 1 coded +1). For k > 2 task c is class c vs rest.
struct FlyingSquidParams {
  std::vector<std::vector<double>> accuracies;  // [task][lf], probability scale
  std::vector<double> balance;
  std::vector<std::size_t> lfs_without_triples;  // per task count, accuracy left at 0.5
};

struct FitDiagnostics {
  std::size_t iterations = 0;
  std::optional<double> log_likelihood;  // DS: marginal log-likelihood of the final parameters
  std::vector<double> objective_trace;   // DS: penalized log-likelihood after each iteration
};

struct NoiseModel {
  ModelKind kind = ModelKind::MajorityVote;
  std::size_t k = 0;
  std::size_t m = 0;                 // 0 for MV (accepts any column count)
  std::vector<double> class_prior;   // tie-break order and all-abstain posterior
  std::variant<MajorityParams, WeightedParams, DawidSkeneParams, FlyingSquidParams> params;
  FitDiagnostics diagnostics;
};

struct Posterior {
  std::size_t k = 0;
  std::vector<double> probs;  // n x k, row-major
  std::vector<ClassIndex> hard;
  std::vector<bool> covered;

  std::size_t n() const noexcept { return hard.size(); }
  std::span<const double> row(std::size_t i) const noexcept { return {probs.data() + i * k, k}; }
};

NoiseModel fit(ModelKind kind, const VoteMatrix& votes, const ClassSpace& classes, const DevSet* dev = nullptr,
               const FitConfig& config = {});

Posterior infer(const NoiseModel& model, const VoteMatrix& votes);

// Argmax with ties broken by the highest prior, then the lowest index.
ClassIndex argmax_with_ties(std::span<const double> probs, std::span<const double> prior);

/// Symmetric matrix of E[s_a s_b] over points where both LFs vote, with
/// votes coded +1 / -1 (abstains excluded).
struct SecondMoments {
  std::size_t m = 0;
  std::vector<double> values;          // m x m
  std::vector<std::size_t> counts;     // co-voting points per pair

  double operator()(std::size_t a, std::size_t b) const noexcept { return values[a * m + b]; }
};

// Codes vote == positive as +1 and any other non-abstain vote as -1.
SecondMoments second_moments(const VoteMatrix& votes, ClassIndex positive);

struct TripletEstimate {
  std::array<double, 3> signed_scale;  // |E[s y]| estimates, unclamped
  std::array<double, 3> probability;   // (1 + s) / 2 clamped to [0.5, 1 - 1e-6]
};

/// Closed-form accuracies of LFs (a, b, c) from their pairwise moments:
/// s_a = sqrt(|M_ab M_ac / M_bc|), and cyclically. Returns nullopt when any
/// denominator is at or below `moment_floor` in magnitude.
std::optional<TripletEstimate> triplet_accuracy(const SecondMoments& moments, std::size_t a, std::size_t b,
                                                std::size_t c, double moment_floor = 1e-3);

nlohmann::json model_to_json(const NoiseModel& model);
NoiseModel model_from_json(const nlohmann::json& doc);

}  // namespace wsforge
