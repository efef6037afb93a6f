#include "wsforge/lfkit.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "wsforge/error.hpp"
#include "wsforge/script_runner.hpp"

namespace wsforge {

using nlohmann::json;

namespace {

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& ch : out)
    if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
  return out;
}

std::size_t codepoint_length(std::string_view s) {
  return static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [](char ch) { return (static_cast<unsigned char>(ch) & 0xC0) != 0x80; }));
}

double upper_fraction(std::string_view s) {
  std::size_t letters = 0;
  std::size_t upper = 0;
  for (char ch : s) {
    if (ch >= 'A' && ch <= 'Z') {
      ++letters;
      ++upper;
    } else if (ch >= 'a' && ch <= 'z') {
      ++letters;
    }
  }
  return letters == 0 ? 0.0 : static_cast<double>(upper) / static_cast<double>(letters);
}

bool compare(CompareOp op, double lhs, double rhs) {
  switch (op) {
    case CompareOp::Less: return lhs < rhs;
    case CompareOp::LessEqual: return lhs <= rhs;
    case CompareOp::Greater: return lhs > rhs;
    case CompareOp::GreaterEqual: return lhs >= rhs;
  }
  return false;
}

CompareOp parse_op(const json& j) {
  if (!j.is_string()) throw ParseError("comparison op must be a string");
  const auto& s = j.get_ref<const std::string&>();
  if (s == "<") return CompareOp::Less;
  if (s == "<=" || s == "≤") return CompareOp::LessEqual;
  if (s == ">") return CompareOp::Greater;
  if (s == ">=" || s == "≥") return CompareOp::GreaterEqual;
  throw ParseError("unknown comparison op '" + s + "'");
}

const char* op_text(CompareOp op) {
  switch (op) {
    case CompareOp::Less: return "<";
    case CompareOp::LessEqual: return "<=";
    case CompareOp::Greater: return ">";
    case CompareOp::GreaterEqual: return ">=";
  }
  return "?";
}

std::pair<CompareOp, double> parse_comparison(const json& j, const char* what) {
  if (!j.is_object() || !j.contains("op") || !j.contains("value"))
    throw ParseError(std::string(what) + " needs {\"op\", \"value\"}");
  if (!j["value"].is_number()) throw ParseError(std::string(what) + " threshold must be a number");
  double v = j["value"].get<double>();
  if (!std::isfinite(v)) throw ParseError(std::string(what) + " threshold must be finite");
  return {parse_op(j["op"]), v};
}

Vote parse_vote(const json& j, std::optional<std::size_t> k) {
  if (!j.is_number_integer()) throw ParseError("vote must be an integer");
  auto v = j.get<long long>();
  if (v < kAbstain || (k && v >= static_cast<long long>(*k)))
    throw ParseError("vote out of range: " + std::to_string(v));
  return static_cast<Vote>(v);
}

Condition parse_condition(const json& j) {
  if (!j.is_object() || j.size() != 1) throw ParseError("condition must be an object with exactly one predicate");
  const auto& [key, arg] = *j.items().begin();
  if (key == "keyword_any") {
    if (!arg.is_array() || arg.empty()) throw ParseError("keyword_any needs a non-empty list of strings");
    KeywordAny kw;
    for (const auto& w : arg) {
      if (!w.is_string() || w.get_ref<const std::string&>().empty())
        throw ParseError("keyword_any entries must be non-empty strings");
      kw.keywords.push_back(ascii_lower(w.get_ref<const std::string&>()));
    }
    return {std::move(kw)};
  }
  if (key == "regex") {
    if (!arg.is_string()) throw ParseError("regex pattern must be a string");
    RegexMatch rx{arg.get<std::string>(), nullptr};
    try {
      rx.compiled = std::make_shared<const std::regex>(rx.pattern, std::regex::ECMAScript);
    } catch (const std::regex_error& e) {
      throw ParseError("regex compile: '" + rx.pattern + "': " + e.what());
    }
    return {std::move(rx)};
  }
  if (key == "length") {
    auto [op, v] = parse_comparison(arg, "length");
    return {LengthCompare{op, v}};
  }
  if (key == "upper_fraction") {
    auto [op, v] = parse_comparison(arg, "upper_fraction");
    if (v < 0.0 || v > 1.0) throw ParseError("upper_fraction threshold must lie in [0, 1]");
    return {UpperFractionCompare{op, v}};
  }
  if (key == "and" || key == "or") {
    if (!arg.is_array() || arg.empty()) throw ParseError(key + " needs a non-empty list of conditions");
    std::vector<Condition> terms;
    for (const auto& t : arg) terms.push_back(parse_condition(t));
    if (key == "and") return {AllOf{std::move(terms)}};
    return {AnyOf{std::move(terms)}};
  }
  if (key == "not") return {Negation{std::make_shared<const Condition>(parse_condition(arg))}};
  throw ParseError("unknown predicate '" + key + "'");
}

json condition_to_json(const Condition& c) {
  return std::visit(
      [](const auto& node) -> json {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, KeywordAny>) {
          return {{"keyword_any", node.keywords}};
        } else if constexpr (std::is_same_v<T, RegexMatch>) {
          return {{"regex", node.pattern}};
        } else if constexpr (std::is_same_v<T, LengthCompare>) {
          return {{"length", {{"op", op_text(node.op)}, {"value", node.threshold}}}};
        } else if constexpr (std::is_same_v<T, UpperFractionCompare>) {
          return {{"upper_fraction", {{"op", op_text(node.op)}, {"value", node.threshold}}}};
        } else if constexpr (std::is_same_v<T, AllOf> || std::is_same_v<T, AnyOf>) {
          json terms = json::array();
          for (const auto& t : node.terms) terms.push_back(condition_to_json(t));
          return {{std::is_same_v<T, AllOf> ? "and" : "or", terms}};
        } else {
          return {{"not", condition_to_json(*node.term)}};
        }
      },
      c.node);
}

// Matching helper that lowercases once per evaluation.
struct TextView {
  std::string_view raw;
  mutable std::optional<std::string> lower;

  const std::string& lowered() const {
    if (!lower) lower = ascii_lower(raw);
    return *lower;
  }
};

bool eval(const Condition& cond, const TextView& text) {
  return std::visit(
      [&](const auto& node) -> bool {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, KeywordAny>) {
          const auto& low = text.lowered();
          return std::any_of(node.keywords.begin(), node.keywords.end(),
                             [&](const std::string& kw) { return low.find(kw) != std::string::npos; });
        } else if constexpr (std::is_same_v<T, RegexMatch>) {
          return std::regex_search(text.raw.begin(), text.raw.end(), *node.compiled);
        } else if constexpr (std::is_same_v<T, LengthCompare>) {
          return compare(node.op, static_cast<double>(codepoint_length(text.raw)), node.threshold);
        } else if constexpr (std::is_same_v<T, UpperFractionCompare>) {
          return compare(node.op, upper_fraction(text.raw), node.threshold);
        } else if constexpr (std::is_same_v<T, AllOf>) {
          return std::all_of(node.terms.begin(), node.terms.end(), [&](const Condition& t) { return eval(t, text); });
        } else if constexpr (std::is_same_v<T, AnyOf>) {
          return std::any_of(node.terms.begin(), node.terms.end(), [&](const Condition& t) { return eval(t, text); });
        } else {
          return !eval(*node.term, text);
        }
      },
      cond.node);
}

const char* source_text(LfSource s) { return s == LfSource::Human ? "human" : "synthesized"; }

}  // namespace

bool matches(const Condition& cond, std::string_view text) { return eval(cond, TextView{text, std::nullopt}); }

Vote RuleProgram::evaluate(std::string_view text) const {
  TextView view{text, std::nullopt};
  for (const auto& rule : rules)
    if (eval(rule.condition, view)) return rule.emit;
  return fallback;
}

RuleProgram parse_rule_program(const json& doc, std::optional<std::size_t> k) {
  if (!doc.is_object()) throw ParseError("rule program must be an object");
  for (const auto& [key, _] : doc.items()) {
    static const std::set<std::string> known{"name", "rules", "default", "source", "strategy", "provenance"};
    if (!known.count(key)) throw ParseError("rule program: unknown field '" + key + "'");
  }
  RuleProgram program;
  if (doc.contains("rules")) {
    const auto& rules = doc["rules"];
    if (!rules.is_array()) throw ParseError("rule program: 'rules' must be a list");
    for (const auto& r : rules) {
      if (!r.is_object() || !r.contains("if") || !r.contains("emit"))
        throw ParseError("rule program: each rule needs 'if' and 'emit'");
      program.rules.push_back(Rule{parse_condition(r["if"]), parse_vote(r["emit"], k)});
    }
  }
  if (!doc.contains("default")) throw ParseError("rule program: missing 'default'");
  program.fallback = parse_vote(doc["default"], k);
  if (program.rules.empty() && program.fallback == kAbstain)
    throw ParseError("rule program: needs at least one rule or a non-abstain default");
  return program;
}

RuleProgram parse_rule_program(std::string_view text, std::optional<std::size_t> k) {
  json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded()) throw ParseError("rule program: not valid JSON");
  return parse_rule_program(doc, k);
}

json rule_program_to_json(const RuleProgram& program) {
  json rules = json::array();
  for (const auto& r : program.rules) rules.push_back({{"if", condition_to_json(r.condition)}, {"emit", r.emit}});
  return {{"rules", rules}, {"default", program.fallback}};
}

json lf_to_json(const LabelingFunction& lf) {
  json doc;
  if (const auto* prog = std::get_if<RuleProgram>(&lf.body)) {
    doc = rule_program_to_json(*prog);
  } else {
    const auto& script = std::get<ScriptHandle>(lf.body);
    doc["script"] = {{"path", script.path.string()}, {"entrypoint", script.entrypoint}, {"runtime", script.runtime_id}};
  }
  doc["name"] = lf.name;
  doc["source"] = source_text(lf.source);
  if (lf.strategy_tag) doc["strategy"] = *lf.strategy_tag;
  if (lf.provenance) doc["provenance"] = *lf.provenance;
  return doc;
}

LabelingFunction lf_from_json(const json& doc, std::optional<std::size_t> k) {
  if (!doc.is_object()) throw ParseError("labeling function must be an object");
  LabelingFunction lf;
  if (!doc.contains("name") || !doc["name"].is_string() || doc["name"].get_ref<const std::string&>().empty())
    throw ParseError("labeling function needs a non-empty 'name'");
  lf.name = doc["name"].get<std::string>();
  if (auto s = doc.find("source"); s != doc.end()) {
    if (*s == "human") {
      lf.source = LfSource::Human;
    } else if (*s == "synthesized") {
      lf.source = LfSource::Synthesized;
    } else {
      throw ParseError("labeling function '" + lf.name + "': unknown source " + s->dump());
    }
  }
  if (auto s = doc.find("strategy"); s != doc.end() && s->is_string()) lf.strategy_tag = s->get<std::string>();
  if (auto s = doc.find("provenance"); s != doc.end() && s->is_string()) lf.provenance = s->get<std::string>();
  if (auto s = doc.find("script"); s != doc.end()) {
    lf.body = ScriptHandle{s->at("path").get<std::string>(), s->at("entrypoint").get<std::string>(),
                           s->at("runtime").get<std::string>()};
  } else {
    try {
      lf.body = parse_rule_program(doc, k);
    } catch (const ParseError& e) {
      throw ParseError("labeling function '" + lf.name + "': " + e.what());
    }
  }
  if (lf.source == LfSource::Synthesized && !lf.provenance)
    throw ParseError("synthesized labeling function '" + lf.name + "' lacks a provenance hash");
  return lf;
}

namespace {

void append_lfs_from_file(const std::filesystem::path& file, std::size_t k, LfSource source,
                          std::vector<LabelingFunction>& out) {
  std::ifstream in(file);
  if (!in) throw Error("cannot open LF file " + file.string());
  std::stringstream buf;
  buf << in.rdbuf();
  json doc = json::parse(buf.str(), nullptr, false);
  if (doc.is_discarded()) throw ParseError(file.string() + ": not valid JSON");
  auto add = [&](json item) {
    if (item.is_object() && !item.contains("name")) item["name"] = file.stem().string();
    if (item.is_object() && !item.contains("source")) item["source"] = source_text(source);
    out.push_back(lf_from_json(item, k));
  };
  if (doc.is_array()) {
    for (const auto& item : doc) add(item);
  } else {
    add(std::move(doc));
  }
}

}  // namespace

std::vector<LabelingFunction> load_lf_set(const std::filesystem::path& path, const ClassSpace& classes,
                                          LfSource source) {
  std::vector<LabelingFunction> lfs;
  if (std::filesystem::is_directory(path)) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(path))
      if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) append_lfs_from_file(f, classes.k(), source, lfs);
  } else {
    append_lfs_from_file(path, classes.k(), source, lfs);
  }
  std::set<std::string> names;
  for (const auto& lf : lfs)
    if (!names.insert(lf.name).second) throw Error("duplicate labeling function name '" + lf.name + "'");
  return lfs;
}

void save_lf_set(const std::filesystem::path& path, std::span<const LabelingFunction> lfs) {
  json arr = json::array();
  for (const auto& lf : lfs) arr.push_back(lf_to_json(lf));
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << arr.dump(2) << '\n';
}

void LfErrorTally::note(std::string message) {
  constexpr std::size_t kMaxMessages = 5;
  if (messages.size() < kMaxMessages && std::find(messages.begin(), messages.end(), message) == messages.end())
    messages.push_back(std::move(message));
}

namespace {

void record(const ScriptCall& call, LfErrorTally& tally) {
  using Status = ScriptCall::Status;
  switch (call.status) {
    case Status::Ok: return;
    case Status::Timeout: ++tally.timeouts; break;
    case Status::OutOfRange: ++tally.out_of_range; break;
    case Status::Crash:
    case Status::ScriptError: ++tally.crashes; break;
  }
  tally.note(call.message);
}

const std::vector<std::string>& runner_command(const ScriptHandle& script, const ApplyOptions& options) {
  const std::vector<std::string>* cmd = options.runners ? options.runners->find(script.runtime_id) : nullptr;
  if (!cmd) throw Error("no runner registered for runtime '" + script.runtime_id + "'");
  return *cmd;
}

// Runs one script LF over a whole split, restarting the runner after a crash
// or timeout. A failed (re)launch abstains on every remaining document.
void apply_script_column(const ScriptHandle& script, std::span<const Document> docs, const ClassSpace& classes,
                         const ApplyOptions& options, std::vector<Vote>& column, LfErrorTally& tally) {
  const auto& command = runner_command(script, options);
  std::optional<ScriptSession> session;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (!session || !session->alive()) {
      session.reset();
      try {
        session.emplace(command, script, classes.k(), options.timeout);
      } catch (const RunnerLaunchError& e) {
        tally.launch_failures += docs.size() - i;
        tally.note(e.what());
        std::fill(column.begin() + static_cast<std::ptrdiff_t>(i), column.end(), kAbstain);
        return;
      }
    }
    ScriptCall call = session->label(docs[i].id, docs[i].text);
    record(call, tally);
    column[i] = call.vote;
  }
}

}  // namespace

Vote apply_lf(const LabelingFunction& lf, const Document& doc, const ClassSpace& classes,
              const ApplyOptions& options, LfErrorTally* tally) {
  if (const auto* prog = std::get_if<RuleProgram>(&lf.body)) {
    Vote v = prog->evaluate(doc.text);
    if (v != kAbstain && !classes.contains(v)) throw Error("LF '" + lf.name + "' emitted out-of-range vote");
    return v;
  }
  LfErrorTally local;
  std::vector<Vote> column(1, kAbstain);
  apply_script_column(std::get<ScriptHandle>(lf.body), std::span<const Document>(&doc, 1), classes, options, column,
                      tally ? *tally : local);
  return column[0];
}

ApplyResult apply_all(std::span<const LabelingFunction> lfs, std::span<const Document> docs,
                      const ClassSpace& classes, const ApplyOptions& options) {
  if (lfs.empty()) throw Error("apply_all: LF list is empty");
  for (const auto& lf : lfs)
    if (const auto* script = std::get_if<ScriptHandle>(&lf.body)) runner_command(*script, options);

  const std::size_t n = docs.size();
  const std::size_t m = lfs.size();
  std::vector<std::vector<Vote>> columns(m, std::vector<Vote>(n, kAbstain));
  std::vector<LfErrorTally> tallies(m);

  auto run_column = [&](std::size_t a) {
    const auto& lf = lfs[a];
    if (const auto* prog = std::get_if<RuleProgram>(&lf.body)) {
      for (std::size_t i = 0; i < n; ++i) columns[a][i] = prog->evaluate(docs[i].text);
    } else {
      apply_script_column(std::get<ScriptHandle>(lf.body), docs, classes, options, columns[a], tallies[a]);
    }
  };

  const unsigned threads = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(m)));
  if (threads == 1) {
    for (std::size_t a = 0; a < m; ++a) run_column(a);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> failures(m);
    {
      std::vector<std::jthread> pool;
      for (unsigned t = 0; t < threads; ++t)
        pool.emplace_back([&] {
          for (std::size_t a = next++; a < m; a = next++) {
            try {
              run_column(a);
            } catch (...) {
              failures[a] = std::current_exception();
            }
          }
        });
    }
    for (const auto& f : failures)
      if (f) std::rethrow_exception(f);
  }

  std::vector<Vote> votes(n * m);
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t i = 0; i < n; ++i) votes[i * m + a] = columns[a][i];
  std::vector<std::string> names;
  names.reserve(m);
  for (const auto& lf : lfs) names.push_back(lf.name);
  VoteMatrix matrix(n, m, std::move(votes), std::move(names));
  matrix.validate(classes.k());
  return {std::move(matrix), std::move(tallies)};
}

}  // namespace wsforge
