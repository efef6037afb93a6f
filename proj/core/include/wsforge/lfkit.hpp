#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "wsforge/corpus.hpp"
#include "wsforge/votes.hpp"

namespace wsforge {

class RunnerRegistry;

// ---------------------------------------------------------------------------
// Rule DSL
//
//   {"name": "...", "rules": [{"if": <cond>, "emit": <vote>}, ...], "default": <vote>}
//
// <cond> is one of
//   {"keyword_any": ["check out", "subscribe"]}      case-insensitive substring
//   {"regex": "https?://"}                           ECMAScript, searched
//   {"length": {"op": "<", "value": 20}}             length in code points
//   {"upper_fraction": {"op": ">=", "value": 0.5}}   uppercase / alphabetic
//   {"and": [<cond>...]}, {"or": [<cond>...]}, {"not": <cond>}
//
// Rules are evaluated in order and the first match wins.
// ---------------------------------------------------------------------------

enum class CompareOp { Less, LessEqual, Greater, GreaterEqual };

struct KeywordAny {
  std::vector<std::string> keywords;  // stored lowercased
};

struct RegexMatch {
  std::string pattern;
  std::shared_ptr<const std::regex> compiled;
};

struct LengthCompare {
  CompareOp op;
  double threshold;
};

struct UpperFractionCompare {
  CompareOp op;
  double threshold;
};

struct Condition;

struct AllOf {
  std::vector<Condition> terms;
};
struct AnyOf {
  std::vector<Condition> terms;
};
struct Negation {
  std::shared_ptr<const Condition> term;
};

struct Condition {
  std::variant<KeywordAny, RegexMatch, LengthCompare, UpperFractionCompare, AllOf, AnyOf, Negation> node;
};

struct Rule {
  Condition condition;
  Vote emit = kAbstain;
};

struct RuleProgram {
  std::vector<Rule> rules;
  Vote fallback = kAbstain;

  Vote evaluate(std::string_view text) const;
};

// Throws ParseError on schema violations ("unknown predicate", "regex compile",
// "vote out of range" when k is given).
RuleProgram parse_rule_program(const nlohmann::json& doc, std::optional<std::size_t> k = std::nullopt);
RuleProgram parse_rule_program(std::string_view text, std::optional<std::size_t> k = std::nullopt);
nlohmann::json rule_program_to_json(const RuleProgram& program);

bool matches(const Condition& cond, std::string_view text);

// ---------------------------------------------------------------------------
// Labeling functions
// ---------------------------------------------------------------------------

enum class LfSource { Human, Synthesized };

struct ScriptHandle {
  std::filesystem::path path;
  std::string entrypoint;
  std::string runtime_id;
};

struct LabelingFunction {
  std::string name;
  LfSource source = LfSource::Human;
  std::optional<std::string> strategy_tag;
  std::variant<RuleProgram, ScriptHandle> body;
  std::optional<std::string> provenance;  // prompt hash for synthesized LFs
};

nlohmann::json lf_to_json(const LabelingFunction& lf);
LabelingFunction lf_from_json(const nlohmann::json& doc, std::optional<std::size_t> k = std::nullopt);

// Reads a rule-program document or a JSON array of them; directories load
// every *.json inside in lexicographic order. Names must be unique.
std::vector<LabelingFunction> load_lf_set(const std::filesystem::path& path, const ClassSpace& classes,
                                          LfSource source = LfSource::Human);
void save_lf_set(const std::filesystem::path& path, std::span<const LabelingFunction> lfs);

// Per-LF failure counters from script execution.
struct LfErrorTally {
  std::size_t launch_failures = 0;
  std::size_t timeouts = 0;
  std::size_t out_of_range = 0;
  std::size_t crashes = 0;
  std::vector<std::string> messages;  // first few distinct messages

  std::size_t total() const noexcept { return launch_failures + timeouts + out_of_range + crashes; }
  void note(std::string message);
};

struct ApplyOptions {
  std::chrono::milliseconds timeout{5000};
  const RunnerRegistry* runners = nullptr;
  unsigned threads = 1;
};

struct ApplyResult {
  VoteMatrix votes;
  std::vector<LfErrorTally> errors;  // one per LF
};

/// Applies one LF to one document. Script failures are recorded in `tally`
/// and yield ABSTAIN; a missing runner registration throws.
Vote apply_lf(const LabelingFunction& lf, const Document& doc, const ClassSpace& classes,
              const ApplyOptions& options = {}, LfErrorTally* tally = nullptr);

/// Column a of the result is lfs[a] applied to docs in order. Script LFs run
/// one runner process per LF for the whole split.
ApplyResult apply_all(std::span<const LabelingFunction> lfs, std::span<const Document> docs,
                      const ClassSpace& classes, const ApplyOptions& options = {});

}  // namespace wsforge
