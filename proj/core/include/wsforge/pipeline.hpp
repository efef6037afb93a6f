#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "wsforge/corpus.hpp"
#include "wsforge/endmodel.hpp"
#include "wsforge/labelmodels.hpp"
#include "wsforge/lfkit.hpp"
#include "wsforge/lfstats.hpp"
#include "wsforge/promptforge.hpp"

namespace wsforge {

// ---------------------------------------------------------------------------
// Pseudolabeled training sets
// ---------------------------------------------------------------------------

enum class Origin { Human, Synthesized };

std::string_view to_string(Origin origin);
Origin parse_origin(std::string_view text);

struct PseudoLabel {
  std::string id;
  ClassIndex label = 0;
  std::vector<double> posterior;
  Origin origin = Origin::Human;

  bool operator==(const PseudoLabel&) const = default;
};

/// Covered points of one split with their inferred labels. Entries follow
/// split order.
struct PseudoLabeledSet {
  std::size_t n_total = 0;  // size of the split
  std::vector<PseudoLabel> entries;

  double coverage() const noexcept {
    return n_total ? static_cast<double>(entries.size()) / static_cast<double>(n_total) : 0.0;
  }
  bool operator==(const PseudoLabeledSet&) const = default;
};

// One entry per covered row of `posterior`; docs and posterior rows align.
PseudoLabeledSet make_pseudolabels(std::span<const Document> docs, const Posterior& posterior, Origin origin);

/// Human entries verbatim, plus synthesized entries for ids the human set
/// does not cover. Output order follows `all_ids`. Throws when an entry's id
/// is not in `all_ids` or either input repeats an id.
PseudoLabeledSet combine_union(const PseudoLabeledSet& human, const PseudoLabeledSet& synthesized,
                               std::span<const std::string> all_ids);

// JSON Lines: a header {"n_total": N} then one {"id","label","posterior","origin"} per entry.
void write_pseudolabels(std::ostream& out, const PseudoLabeledSet& set, const ClassSpace& classes);
PseudoLabeledSet read_pseudolabels(std::istream& in, const ClassSpace& classes);
void save_pseudolabels(const std::filesystem::path& path, const PseudoLabeledSet& set, const ClassSpace& classes);
PseudoLabeledSet load_pseudolabels(const std::filesystem::path& path, const ClassSpace& classes);

// ---------------------------------------------------------------------------
// Stage helpers shared by `run` and the CLI subcommands
// ---------------------------------------------------------------------------

// "f1" when the class space names a positive class, else "accuracy".
std::string metric_name(const ClassSpace& classes);

struct LabelModelScore {
  double metric = 0.0;    // over covered test points
  double coverage = 0.0;  // covered fraction of the split
};

LabelModelScore score_posterior(const Posterior& posterior, std::span<const ClassIndex> gold,
                                const ClassSpace& classes);

// End-model training rows: documents named by the set, in set order.
TrainingSet training_set_from(const PseudoLabeledSet& set, std::span<const Document> docs, const ClassSpace& classes,
                              const FeatureConfig& features, bool soft_labels);

// Gold-labelled valid split votes, when a fully labelled valid split exists.
std::optional<DevSet> make_dev_set(const Dataset& dataset, const VoteMatrix& valid_votes);

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

enum class CombineMode { Union, Refit };

std::string_view to_string(CombineMode mode);
CombineMode parse_combine_mode(std::string_view text);

struct ClientConfig {
  std::string kind = "mock";        // "mock" or "http"
  std::filesystem::path fixtures;   // mock: directory of <strategy>.json
  std::string endpoint;             // http
  int retries = 3;
};

struct RunConfig {
  std::filesystem::path data_dir;
  std::optional<std::filesystem::path> classes_path;
  std::filesystem::path task_spec;
  std::vector<PromptStrategy> strategies{PromptStrategy::General};
  std::optional<std::filesystem::path> human_lfs;
  std::vector<ModelKind> label_models{ModelKind::MajorityVote, ModelKind::WeightedMajorityVote,
                                      ModelKind::DawidSkene, ModelKind::FlyingSquid};
  bool combine = false;
  CombineMode combine_mode = CombineMode::Union;
  ClientConfig client;
  GenerationParams generation;
  bool allow_any_temperature = false;
  std::uint64_t seed = 0;
  FitConfig fit;
  TrainConfig train;
  FeatureConfig features{.dim = std::size_t{1} << 18, .l2_normalize = true};
  unsigned threads = 1;
  std::chrono::milliseconds apply_timeout{5000};  // per script-LF call
  std::map<std::string, std::vector<std::string>> runners;  // runtime id -> command for script LFs
  std::filesystem::path cache_dir;  // defaults to out_dir/cache
  std::filesystem::path out_dir = "out";
  std::string run_id = "run";
};

// Keys mirror the fields above; see README for the schema. Relative paths
// in a loaded file resolve against the file's directory.
RunConfig run_config_from_json(const nlohmann::json& doc, const std::filesystem::path& base = {});
RunConfig load_run_config(const std::filesystem::path& path);
// Settings that determine results. Output locations are left out so runs
// written to different directories compare equal.
nlohmann::json config_echo(const RunConfig& config);

struct LfSetStats {
  std::string lf_set;  // "human", "synthesized"
  LfStatistics stats;

  bool operator==(const LfSetStats&) const = default;
};

struct KindScore {
  ModelKind kind = ModelKind::MajorityVote;
  double metric = 0.0;

  bool operator==(const KindScore&) const = default;
};

/// One row of the label-model table: a metric per model, their average, and
/// test coverage.
struct LabelModelRow {
  std::string lf_set;
  std::size_t n_lfs = 0;
  std::vector<KindScore> scores;
  double average = 0.0;
  double coverage = 0.0;

  bool operator==(const LabelModelRow&) const = default;
};

struct KindEval {
  ModelKind kind = ModelKind::MajorityVote;
  EvalReport eval;

  bool operator==(const KindEval&) const = default;
};

/// One row of the end-model table: logistic regression trained on each label
/// model's pseudolabels, plus the training-set coverage.
struct EndModelRow {
  std::string lf_set;  // "human", "synthesized", "combined"
  std::string n_lfs;   // "12", or "12+8" for combined sets
  std::vector<KindEval> evals;
  double average = 0.0;
  double coverage = 0.0;

  bool operator==(const EndModelRow&) const = default;
};

struct ErrorRow {
  std::string lf_set;
  std::string lf_name;
  LfErrorTally tally;

  bool operator==(const ErrorRow& o) const {
    return lf_set == o.lf_set && lf_name == o.lf_name && tally.launch_failures == o.tally.launch_failures &&
           tally.timeouts == o.tally.timeouts && tally.out_of_range == o.tally.out_of_range &&
           tally.crashes == o.tally.crashes && tally.messages == o.tally.messages;
  }
};

struct RunReport {
  std::string metric;  // "f1" or "accuracy"
  std::optional<std::string> combine_mode;
  std::vector<LfSetStats> lf_stats;
  std::vector<LabelModelRow> label_models;
  std::vector<EndModelRow> end_models;
  std::vector<ErrorRow> errors;  // LFs with at least one failure
  std::vector<std::string> warnings;
  nlohmann::json config;

  bool operator==(const RunReport&) const = default;
};

nlohmann::json report_to_json(const RunReport& report);
RunReport report_from_json(const nlohmann::json& doc);
std::string render_report_text(const RunReport& report);

struct StageTiming {
  std::string stage;
  double seconds = 0.0;
};

struct RunResult {
  RunReport report;
  std::filesystem::path run_dir;
  std::vector<StageTiming> timings;
};

/// synthesize -> apply -> stats -> fit -> infer -> (combine) -> train ->
/// evaluate. Every intermediate lands under out_dir/run_id. A failing stage
/// throws StageError naming it; artifacts written so far stay on disk.
RunResult run(const RunConfig& config);
RunResult run(const RunConfig& config, GenerationClient& client);

}  // namespace wsforge
