#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "wsforge/corpus.hpp"
#include "wsforge/error.hpp"
#include "wsforge/lfkit.hpp"

namespace wsforge {

enum class PromptStrategy { General, MissionStatement, HumanHeuristic, LfExemplars, DataExemplars };
enum class OutputForm { Script, RuleProgram };

inline constexpr PromptStrategy kAllStrategies[] = {PromptStrategy::General, PromptStrategy::MissionStatement,
                                                    PromptStrategy::HumanHeuristic, PromptStrategy::LfExemplars,
                                                    PromptStrategy::DataExemplars};

// "general", "mission_statement", "human_heuristic", "lf_exemplars", "data_exemplars"
std::string_view to_string(PromptStrategy strategy);
PromptStrategy parse_strategy(std::string_view text);
std::string_view to_string(OutputForm form);
OutputForm parse_output_form(std::string_view text);

/// Everything needed to render a prompt for one dataset. The first four
/// fields are the general prompt; the optional ones feed the richer
/// strategies.
struct TaskSpec {
  std::string language_line;
  std::string task_description;
  std::string function_signature;
  std::string labeling_instructions;
  std::optional<std::string> mission;
  std::optional<std::vector<std::string>> heuristics;
  std::optional<std::vector<std::string>> lf_exemplars;
  std::optional<std::vector<std::pair<std::string, std::string>>> data_exemplars;  // (text, class name)
  OutputForm output_form = OutputForm::RuleProgram;
  std::string comment_prefix;  // prepended to generated block lines, e.g. "# "
};

TaskSpec task_spec_from_json(const nlohmann::json& doc);
nlohmann::json task_spec_to_json(const TaskSpec& spec);
TaskSpec load_task_spec(const std::filesystem::path& path);

struct GenerationParams {
  double temperature = 0.0;
  int max_tokens = 512;
  int n_samples = 1;
  std::string model_name = "mock";

  bool operator==(const GenerationParams&) const = default;
};

inline constexpr double kMaxTemperature = 0.2;

struct PromptBundle {
  PromptStrategy strategy = PromptStrategy::General;
  OutputForm output_form = OutputForm::RuleProgram;
  std::string text;
  GenerationParams params;
  std::string entrypoint;   // function name parsed from the signature
  std::string prompt_hash;  // sha256 over (strategy, form, text, params)
};

/// Renders the prompt in a fixed block order: language line, mission, task
/// description, heuristics, exemplars, function signature, labeling
/// instructions. Throws ConfigError when the strategy's field is missing or
/// the temperature lies outside [0, 0.2] (unless `allow_any_temperature`).
PromptBundle build_prompt(PromptStrategy strategy, const TaskSpec& spec, const GenerationParams& params,
                          bool allow_any_temperature = false);

std::string sha256_hex(std::string_view data);

// ---------------------------------------------------------------------------
// Code-generation clients
// ---------------------------------------------------------------------------

class TransportError : public Error {
 public:
  using Error::Error;
};

class GenerationClient {
 public:
  virtual ~GenerationClient() = default;
  // Returns up to bundle.params.n_samples completions. Throws TransportError.
  virtual std::vector<std::string> complete(const PromptBundle& bundle) = 0;
  virtual std::size_t call_count() const = 0;
};

/// Replays canned completions. Fixture directories hold `<strategy>.json`
/// files shaped {"completions": ["...", ...]}; the first n_samples entries
/// are returned.
class MockClient : public GenerationClient {
 public:
  explicit MockClient(std::map<PromptStrategy, std::vector<std::string>> completions);
  static MockClient from_directory(const std::filesystem::path& fixture_dir);

  std::vector<std::string> complete(const PromptBundle& bundle) override;
  std::size_t call_count() const override;

 private:
  std::map<PromptStrategy, std::vector<std::string>> completions_;
  mutable std::mutex mutex_;
  std::size_t calls_ = 0;
};

// ---------------------------------------------------------------------------
// Generation records and the response cache
// ---------------------------------------------------------------------------

struct RejectedCompletion {
  std::string completion;
  std::string reason;
};

struct GenerationRecord {
  std::string prompt_hash;
  PromptStrategy strategy = PromptStrategy::General;
  std::string model_name;
  std::vector<std::string> raw_completions;
  std::vector<LabelingFunction> accepted;
  std::vector<RejectedCompletion> rejected;
  std::string timestamp;  // ISO-8601 UTC
};

nlohmann::json record_to_json(const GenerationRecord& record);
GenerationRecord record_from_json(const nlohmann::json& doc);

/// `<cache_dir>/<prompt_hash>.json`, written atomically. Operations on one
/// hash are serialized; distinct hashes proceed concurrently.
class GenerationCache {
 public:
  explicit GenerationCache(std::filesystem::path dir);

  const std::filesystem::path& dir() const noexcept { return dir_; }
  std::optional<GenerationRecord> load(const std::string& prompt_hash) const;
  void store(const GenerationRecord& record) const;
  std::mutex& lock_for(const std::string& prompt_hash);

 private:
  std::filesystem::path dir_;
  std::mutex map_mutex_;
  std::map<std::string, std::unique_ptr<std::mutex>> locks_;
};

struct SynthesizeOptions {
  const RunnerRegistry* runners = nullptr;  // script-form handshake dry-run
  std::string script_runtime = "python";
  std::chrono::milliseconds handshake_timeout{5000};
};

class AllCompletionsRejected : public Error {
 public:
  explicit AllCompletionsRejected(GenerationRecord record)
      : Error("all " + std::to_string(record.raw_completions.size()) + " completions rejected for prompt " +
              record.prompt_hash),
        record_(std::move(record)) {}
  const GenerationRecord& record() const noexcept { return record_; }

 private:
  GenerationRecord record_;
};

/// Returns the cached record for the bundle's hash when present; otherwise
/// requests completions, validates them into LFs, persists and returns the
/// record. Throws AllCompletionsRejected (after persisting) when nothing
/// validates.
GenerationRecord synthesize(GenerationClient& client, const PromptBundle& bundle, const ClassSpace& classes,
                            GenerationCache& cache, const SynthesizeOptions& options = {});

// First fenced code block if any, else the whole completion, with trailing
// prose after the last closing brace (rule form) or return line (script) cut.
std::string extract_code(std::string_view completion, OutputForm form);

struct CachedRecordSummary {
  std::string prompt_hash;
  std::string strategy;
  std::string model_name;
  std::string timestamp;
  std::size_t completions = 0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
};

struct CacheListing {
  std::vector<CachedRecordSummary> records;  // sorted by timestamp, then hash
  std::vector<std::string> warnings;         // one per unreadable record file
};

CacheListing list_cached(const std::filesystem::path& cache_dir);

}  // namespace wsforge
