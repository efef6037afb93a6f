#include "wsforge/promptforge.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "wsforge/script_runner.hpp"

namespace wsforge {

using nlohmann::json;

std::string_view to_string(PromptStrategy strategy) {
  switch (strategy) {
    case PromptStrategy::General: return "general";
    case PromptStrategy::MissionStatement: return "mission_statement";
    case PromptStrategy::HumanHeuristic: return "human_heuristic";
    case PromptStrategy::LfExemplars: return "lf_exemplars";
    case PromptStrategy::DataExemplars: return "data_exemplars";
  }
  return "?";
}

PromptStrategy parse_strategy(std::string_view text) {
  for (PromptStrategy s : kAllStrategies)
    if (to_string(s) == text) return s;
  throw ConfigError("unknown prompt strategy '" + std::string(text) + "'");
}

std::string_view to_string(OutputForm form) { return form == OutputForm::Script ? "script" : "rule_program"; }

OutputForm parse_output_form(std::string_view text) {
  if (text == "script") return OutputForm::Script;
  if (text == "rule_program") return OutputForm::RuleProgram;
  throw ConfigError("unknown output form '" + std::string(text) + "'");
}

// ---- task specs --------------------------------------------------------------

TaskSpec task_spec_from_json(const json& doc) {
  TaskSpec spec;
  auto required = [&](const char* key) {
    if (!doc.contains(key) || !doc[key].is_string()) throw ConfigError(std::string("task spec: missing '") + key + "'");
    return doc[key].get<std::string>();
  };
  spec.language_line = required("language_line");
  spec.task_description = required("task_description");
  spec.function_signature = required("function_signature");
  spec.labeling_instructions = required("labeling_instructions");
  if (doc.contains("mission") && !doc["mission"].is_null()) spec.mission = doc["mission"].get<std::string>();
  if (doc.contains("heuristics") && !doc["heuristics"].is_null())
    spec.heuristics = doc["heuristics"].get<std::vector<std::string>>();
  if (doc.contains("lf_exemplars") && !doc["lf_exemplars"].is_null())
    spec.lf_exemplars = doc["lf_exemplars"].get<std::vector<std::string>>();
  if (doc.contains("data_exemplars") && !doc["data_exemplars"].is_null()) {
    std::vector<std::pair<std::string, std::string>> pairs;
    for (const auto& ex : doc["data_exemplars"]) {
      if (ex.is_array() && ex.size() == 2) {
        pairs.emplace_back(ex[0].get<std::string>(), ex[1].get<std::string>());
      } else {
        pairs.emplace_back(ex.at("text").get<std::string>(), ex.at("label").get<std::string>());
      }
    }
    spec.data_exemplars = std::move(pairs);
  }
  if (doc.contains("output_form")) spec.output_form = parse_output_form(doc["output_form"].get<std::string>());
  if (doc.contains("comment_prefix")) spec.comment_prefix = doc["comment_prefix"].get<std::string>();
  return spec;
}

json task_spec_to_json(const TaskSpec& spec) {
  json doc{{"language_line", spec.language_line},
           {"task_description", spec.task_description},
           {"function_signature", spec.function_signature},
           {"labeling_instructions", spec.labeling_instructions},
           {"output_form", to_string(spec.output_form)},
           {"comment_prefix", spec.comment_prefix}};
  if (spec.mission) doc["mission"] = *spec.mission;
  if (spec.heuristics) doc["heuristics"] = *spec.heuristics;
  if (spec.lf_exemplars) doc["lf_exemplars"] = *spec.lf_exemplars;
  if (spec.data_exemplars) {
    json arr = json::array();
    for (const auto& [text, label] : *spec.data_exemplars) arr.push_back({{"text", text}, {"label", label}});
    doc["data_exemplars"] = arr;
  }
  return doc;
}

TaskSpec load_task_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open task spec " + path.string());
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("task spec " + path.string() + " is not valid JSON");
  return task_spec_from_json(doc);
}

// ---- prompt rendering --------------------------------------------------------

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 digest failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

namespace {

void require_nonempty(const std::string& value, const char* field) {
  if (value.find_first_not_of(" \t\r\n") == std::string::npos)
    throw ConfigError(std::string("task spec: '") + field + "' must be non-empty");
}

template <typename T>
const T& require_field(const std::optional<T>& field, const char* name, PromptStrategy strategy) {
  if (!field || field->empty())
    throw ConfigError("strategy " + std::string(to_string(strategy)) + " requires a non-empty '" + name + "'");
  return *field;
}

std::string entrypoint_of(const std::string& signature) {
  static const std::regex kName(R"(([A-Za-z_][A-Za-z0-9_]*)\s*\()");
  std::smatch m;
  if (std::regex_search(signature, m, kName)) {
    std::string name = m[1];
    if (name != "def" && name != "function") return name;
  }
  return {};
}

void validate_params(const GenerationParams& params, bool allow_any_temperature) {
  if (!std::isfinite(params.temperature) || params.temperature < 0.0)
    throw ConfigError("temperature must be a non-negative number");
  if (!allow_any_temperature && params.temperature > kMaxTemperature)
    throw ConfigError("temperature must lie in [0, 0.2] (pass --allow-any-temperature to override)");
  if (params.n_samples < 1) throw ConfigError("n_samples must be at least 1");
  if (params.max_tokens < 1) throw ConfigError("max_tokens must be at least 1");
  if (params.model_name.empty()) throw ConfigError("model name must be non-empty");
}

}  // namespace

PromptBundle build_prompt(PromptStrategy strategy, const TaskSpec& spec, const GenerationParams& params,
                          bool allow_any_temperature) {
  require_nonempty(spec.language_line, "language_line");
  require_nonempty(spec.task_description, "task_description");
  require_nonempty(spec.function_signature, "function_signature");
  require_nonempty(spec.labeling_instructions, "labeling_instructions");
  validate_params(params, allow_any_temperature);

  const std::string& p = spec.comment_prefix;
  std::ostringstream text;
  text << spec.language_line << '\n';
  if (strategy == PromptStrategy::MissionStatement) text << require_field(spec.mission, "mission", strategy) << '\n';
  text << spec.task_description << '\n';
  switch (strategy) {
    case PromptStrategy::HumanHeuristic: {
      text << p << "Heuristics from existing labeling functions:\n";
      for (const auto& h : require_field(spec.heuristics, "heuristics", strategy)) text << p << "- " << h << '\n';
      break;
    }
    case PromptStrategy::LfExemplars: {
      text << p << "Example labeling functions:\n";
      for (const auto& ex : require_field(spec.lf_exemplars, "lf_exemplars", strategy)) text << ex << "\n\n";
      break;
    }
    case PromptStrategy::DataExemplars: {
      text << p << "Labeled examples:\n";
      for (const auto& [doc, label] : require_field(spec.data_exemplars, "data_exemplars", strategy))
        text << p << '"' << doc << "\" -> " << label << '\n';
      break;
    }
    default: break;
  }
  text << spec.function_signature << '\n';
  text << spec.labeling_instructions << '\n';

  PromptBundle bundle;
  bundle.strategy = strategy;
  bundle.output_form = spec.output_form;
  bundle.text = text.str();
  bundle.params = params;
  bundle.entrypoint = entrypoint_of(spec.function_signature);
  json keyed{{"strategy", to_string(strategy)},
             {"output_form", to_string(spec.output_form)},
             {"text", bundle.text},
             {"params",
              {{"temperature", params.temperature},
               {"max_tokens", params.max_tokens},
               {"n_samples", params.n_samples},
               {"model", params.model_name}}}};
  bundle.prompt_hash = sha256_hex(keyed.dump());
  return bundle;
}

// ---- mock client -------------------------------------------------------------

MockClient::MockClient(std::map<PromptStrategy, std::vector<std::string>> completions)
    : completions_(std::move(completions)) {}

MockClient MockClient::from_directory(const std::filesystem::path& fixture_dir) {
  if (!std::filesystem::is_directory(fixture_dir))
    throw ConfigError("mock fixture directory not found: " + fixture_dir.string());
  std::map<PromptStrategy, std::vector<std::string>> completions;
  for (PromptStrategy s : kAllStrategies) {
    auto path = fixture_dir / (std::string(to_string(s)) + ".json");
    if (!std::filesystem::exists(path)) continue;
    std::ifstream in(path);
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded() || !doc.contains("completions"))
      throw ConfigError("mock fixture " + path.string() + " must hold {\"completions\": [...]}");
    completions[s] = doc["completions"].get<std::vector<std::string>>();
  }
  return MockClient(std::move(completions));
}

std::vector<std::string> MockClient::complete(const PromptBundle& bundle) {
  std::lock_guard lock(mutex_);
  ++calls_;
  auto it = completions_.find(bundle.strategy);
  if (it == completions_.end())
    throw TransportError("mock client has no completions for strategy " + std::string(to_string(bundle.strategy)));
  const auto take = std::min<std::size_t>(it->second.size(), static_cast<std::size_t>(bundle.params.n_samples));
  return {it->second.begin(), it->second.begin() + static_cast<std::ptrdiff_t>(take)};
}

std::size_t MockClient::call_count() const {
  std::lock_guard lock(mutex_);
  return calls_;
}

// ---- records -----------------------------------------------------------------

json record_to_json(const GenerationRecord& record) {
  json accepted = json::array();
  for (const auto& lf : record.accepted) accepted.push_back(lf_to_json(lf));
  json rejected = json::array();
  for (const auto& r : record.rejected) rejected.push_back({{"completion", r.completion}, {"reason", r.reason}});
  return {{"prompt_hash", record.prompt_hash},
          {"strategy", to_string(record.strategy)},
          {"model", record.model_name},
          {"raw_completions", record.raw_completions},
          {"accepted", accepted},
          {"rejected", rejected},
          {"timestamp", record.timestamp}};
}

GenerationRecord record_from_json(const json& doc) {
  GenerationRecord record;
  record.prompt_hash = doc.at("prompt_hash").get<std::string>();
  record.strategy = parse_strategy(doc.at("strategy").get<std::string>());
  record.model_name = doc.at("model").get<std::string>();
  record.raw_completions = doc.at("raw_completions").get<std::vector<std::string>>();
  for (const auto& lf : doc.at("accepted")) record.accepted.push_back(lf_from_json(lf));
  for (const auto& r : doc.at("rejected"))
    record.rejected.push_back({r.at("completion").get<std::string>(), r.at("reason").get<std::string>()});
  record.timestamp = doc.at("timestamp").get<std::string>();
  if (record.accepted.size() + record.rejected.size() != record.raw_completions.size())
    throw ParseError("generation record: accepted + rejected does not match completion count");
  return record;
}

GenerationCache::GenerationCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::optional<GenerationRecord> GenerationCache::load(const std::string& prompt_hash) const {
  auto path = dir_ / (prompt_hash + ".json");
  if (!std::filesystem::exists(path)) return std::nullopt;
  std::ifstream in(path);
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) return std::nullopt;
  try {
    return record_from_json(doc);
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

void GenerationCache::store(const GenerationRecord& record) const {
  const auto final_path = dir_ / (record.prompt_hash + ".json");
  auto tmp = final_path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write cache record " + tmp.string());
    out << record_to_json(record).dump(2) << '\n';
    if (!out.flush()) throw Error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, final_path);
}

std::mutex& GenerationCache::lock_for(const std::string& prompt_hash) {
  std::lock_guard lock(map_mutex_);
  auto& slot = locks_[prompt_hash];
  if (!slot) slot = std::make_unique<std::mutex>();
  return *slot;
}

// ---- synthesis ---------------------------------------------------------------

std::string extract_code(std::string_view completion, OutputForm form) {
  std::string code(completion);
  if (auto open = completion.find("```"); open != std::string_view::npos) {
    auto body = completion.find('\n', open);
    if (body != std::string_view::npos) {
      auto close = completion.find("```", body + 1);
      code = std::string(completion.substr(body + 1, close == std::string_view::npos ? std::string_view::npos
                                                                                      : close - body - 1));
    }
  }
  if (form == OutputForm::RuleProgram) {
    auto first = code.find('{');
    auto last = code.rfind('}');
    if (first == std::string::npos || last == std::string::npos || last < first) return {};
    return code.substr(first, last - first + 1);
  }
  auto ret = code.rfind("return");
  if (ret != std::string::npos) {
    auto eol = code.find('\n', ret);
    if (eol != std::string::npos) code.erase(eol + 1);
  }
  auto end = code.find_last_not_of(" \t\r\n");
  return end == std::string::npos ? std::string{} : code.substr(0, end + 1) + "\n";
}

namespace {

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto secs = std::chrono::system_clock::to_time_t(now);
  const auto micros =
      std::chrono::duration_cast<std::chrono::microseconds>(now.time_since_epoch()).count() % 1000000;
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%06lldZ", tm.tm_year + 1900, tm.tm_mon + 1,
                tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<long long>(micros));
  return buf;
}

std::string normalized_source(std::string_view code) {
  std::string out;
  bool space = false;
  for (char ch : code) {
    if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
      space = !out.empty();
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(ch);
  }
  return out;
}

// Small fixture every accepted rule program must label without range errors.
const std::vector<std::string>& smoke_texts() {
  static const std::vector<std::string> texts{"", "FREE entry!! Call 08001234567 now to claim your prize",
                                              "see you at 5, bring the keys", "check out my channel http://x.co",
                                              "ok"};
  return texts;
}

struct Verdict {
  std::optional<LabelingFunction> lf;
  std::string reason;
};

Verdict validate_rule_completion(const std::string& code, const ClassSpace& classes) {
  if (code.empty()) return {std::nullopt, "no rule program found in completion"};
  json doc = json::parse(code, nullptr, false);
  if (doc.is_discarded()) return {std::nullopt, "parse error: not valid JSON"};
  if (doc.is_object()) {
    doc.erase("name");
    doc.erase("source");
    doc.erase("strategy");
    doc.erase("provenance");
  }
  try {
    RuleProgram program = parse_rule_program(doc, classes.k());
    for (const auto& t : smoke_texts()) {
      Vote v = program.evaluate(t);
      if (v != kAbstain && !classes.contains(v)) return {std::nullopt, "vote out of range on smoke fixture"};
    }
    LabelingFunction lf;
    lf.body = std::move(program);
    return {std::move(lf), {}};
  } catch (const ParseError& e) {
    return {std::nullopt, e.what()};
  } catch (const std::exception& e) {
    return {std::nullopt, std::string("invalid rule program: ") + e.what()};
  }
}

Verdict validate_script_completion(const std::string& code, const PromptBundle& bundle, const ClassSpace& classes,
                                   const GenerationCache& cache, std::size_t index, const SynthesizeOptions& options) {
  if (code.empty()) return {std::nullopt, "empty completion"};
  if (bundle.entrypoint.empty()) return {std::nullopt, "function signature names no entrypoint"};
  if (code.find(bundle.entrypoint) == std::string::npos)
    return {std::nullopt, "missing entrypoint '" + bundle.entrypoint + "'"};
  const auto script_dir = cache.dir() / "scripts";
  std::filesystem::create_directories(script_dir);
  const auto path =
      std::filesystem::absolute(script_dir / (bundle.prompt_hash.substr(0, 16) + "_" + std::to_string(index) + ".py"));
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << code;
  }
  ScriptHandle handle{path, bundle.entrypoint, options.script_runtime};
  const auto* command = options.runners ? options.runners->find(options.script_runtime) : nullptr;
  if (!command) return {std::nullopt, "no runner registered for runtime '" + options.script_runtime + "'"};
  try {
    ScriptSession session(*command, handle, classes.k(), options.handshake_timeout);
    session.close();
  } catch (const RunnerLaunchError& e) {
    return {std::nullopt, std::string("runner handshake failed: ") + e.what()};
  }
  LabelingFunction lf;
  lf.body = std::move(handle);
  return {std::move(lf), {}};
}

}  // namespace

GenerationRecord synthesize(GenerationClient& client, const PromptBundle& bundle, const ClassSpace& classes,
                            GenerationCache& cache, const SynthesizeOptions& options) {
  std::lock_guard lock(cache.lock_for(bundle.prompt_hash));
  if (auto cached = cache.load(bundle.prompt_hash)) {
    if (cached->accepted.empty()) throw AllCompletionsRejected(std::move(*cached));
    return std::move(*cached);
  }

  GenerationRecord record;
  record.prompt_hash = bundle.prompt_hash;
  record.strategy = bundle.strategy;
  record.model_name = bundle.params.model_name;
  record.raw_completions = client.complete(bundle);

  std::map<std::string, std::size_t> seen;
  for (std::size_t j = 0; j < record.raw_completions.size(); ++j) {
    const auto& completion = record.raw_completions[j];
    const std::string code = extract_code(completion, bundle.output_form);
    const std::string key = normalized_source(code);
    if (!key.empty()) {
      if (auto it = seen.find(key); it != seen.end()) {
        record.rejected.push_back({completion, "duplicate of completion #" + std::to_string(it->second)});
        continue;
      }
    }
    Verdict verdict = bundle.output_form == OutputForm::RuleProgram
                          ? validate_rule_completion(code, classes)
                          : validate_script_completion(code, bundle, classes, cache, j, options);
    if (!verdict.lf) {
      record.rejected.push_back({completion, verdict.reason});
      continue;
    }
    seen.emplace(key, j);
    LabelingFunction lf = std::move(*verdict.lf);
    lf.name = std::string(to_string(bundle.strategy)) + "_" + bundle.prompt_hash.substr(0, 8) + "_" + std::to_string(j);
    lf.source = LfSource::Synthesized;
    lf.strategy_tag = std::string(to_string(bundle.strategy));
    lf.provenance = bundle.prompt_hash;
    record.accepted.push_back(std::move(lf));
  }
  record.timestamp = utc_timestamp();
  cache.store(record);
  if (record.accepted.empty()) throw AllCompletionsRejected(std::move(record));
  return record;
}

CacheListing list_cached(const std::filesystem::path& cache_dir) {
  if (!std::filesystem::is_directory(cache_dir)) throw Error("cache directory not found: " + cache_dir.string());
  CacheListing listing;
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(cache_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    try {
      std::ifstream in(path);
      json doc = json::parse(in);
      GenerationRecord rec = record_from_json(doc);
      listing.records.push_back({rec.prompt_hash, std::string(to_string(rec.strategy)), rec.model_name, rec.timestamp,
                                 rec.raw_completions.size(), rec.accepted.size(), rec.rejected.size()});
    } catch (const std::exception& e) {
      listing.warnings.push_back(path.filename().string() + ": " + e.what());
    }
  }
  std::sort(listing.records.begin(), listing.records.end(), [](const auto& x, const auto& y) {
    return std::tie(x.timestamp, x.prompt_hash) < std::tie(y.timestamp, y.prompt_hash);
  });
  return listing;
}

}  // namespace wsforge
