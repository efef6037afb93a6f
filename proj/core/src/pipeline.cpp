#include "wsforge/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "wsforge/error.hpp"
#include "wsforge/http_client.hpp"
#include "wsforge/script_runner.hpp"
#include "wsforge/votes.hpp"

namespace wsforge {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Origin origin) { return origin == Origin::Human ? "human" : "synthesized"; }

Origin parse_origin(std::string_view text) {
  if (text == "human") return Origin::Human;
  if (text == "synthesized") return Origin::Synthesized;
  throw ParseError("unknown origin '" + std::string(text) + "'");
}

std::string_view to_string(CombineMode mode) { return mode == CombineMode::Union ? "union" : "refit"; }

CombineMode parse_combine_mode(std::string_view text) {
  if (text == "union") return CombineMode::Union;
  if (text == "refit") return CombineMode::Refit;
  throw ConfigError("combine mode must be 'union' or 'refit', got '" + std::string(text) + "'");
}

PseudoLabeledSet make_pseudolabels(std::span<const Document> docs, const Posterior& posterior, Origin origin) {
  if (docs.size() != posterior.n())
    throw Error("make_pseudolabels: " + std::to_string(docs.size()) + " documents for " +
                std::to_string(posterior.n()) + " posterior rows");
  PseudoLabeledSet set;
  set.n_total = docs.size();
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (!posterior.covered[i]) continue;
    auto row = posterior.row(i);
    set.entries.push_back({docs[i].id, posterior.hard[i], {row.begin(), row.end()}, origin});
  }
  return set;
}

namespace {

std::unordered_map<std::string, std::size_t> index_entries(const PseudoLabeledSet& set, const char* which) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t e = 0; e < set.entries.size(); ++e)
    if (!index.emplace(set.entries[e].id, e).second)
      throw Error(std::string("combine: ") + which + " set repeats id '" + set.entries[e].id + "'");
  return index;
}

}  // namespace

PseudoLabeledSet combine_union(const PseudoLabeledSet& human, const PseudoLabeledSet& synthesized,
                               std::span<const std::string> all_ids) {
  const auto h = index_entries(human, "human");
  const auto s = index_entries(synthesized, "synthesized");
  std::set<std::string_view> known(all_ids.begin(), all_ids.end());
  for (const auto* set : {&human, &synthesized})
    for (const auto& e : set->entries)
      if (!known.count(e.id)) throw Error("combine: id '" + e.id + "' is not part of the split");
  PseudoLabeledSet out;
  out.n_total = all_ids.size();
  for (const auto& id : all_ids) {
    if (auto it = h.find(id); it != h.end()) {
      out.entries.push_back(human.entries[it->second]);
    } else if (auto jt = s.find(id); jt != s.end()) {
      out.entries.push_back(synthesized.entries[jt->second]);
    }
  }
  return out;
}

void write_pseudolabels(std::ostream& out, const PseudoLabeledSet& set, const ClassSpace& classes) {
  out << json{{"n_total", set.n_total}}.dump() << '\n';
  for (const auto& e : set.entries)
    out << json{{"id", e.id}, {"label", classes.name(e.label)}, {"posterior", e.posterior}, {"origin", to_string(e.origin)}}
               .dump()
        << '\n';
}

PseudoLabeledSet read_pseudolabels(std::istream& in, const ClassSpace& classes) {
  PseudoLabeledSet set;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json doc = json::parse(line, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw ParseError("malformed pseudolabel record", lineno);
    try {
      if (!header) {
        set.n_total = doc.at("n_total").get<std::size_t>();
        header = true;
        continue;
      }
      PseudoLabel e;
      e.id = doc.at("id").get<std::string>();
      auto label = classes.index_of(doc.at("label").get<std::string>());
      if (!label) throw ParseError("unknown label '" + doc["label"].get<std::string>() + "'", lineno);
      e.label = *label;
      e.posterior = doc.at("posterior").get<std::vector<double>>();
      if (e.posterior.size() != classes.k()) throw ParseError("posterior has wrong length", lineno);
      e.origin = parse_origin(doc.at("origin").get<std::string>());
      if (!seen.insert(e.id).second) throw ParseError("duplicate id '" + e.id + "'", lineno);
      set.entries.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw ParseError(std::string("malformed pseudolabel record: ") + ex.what(), lineno);
    }
  }
  if (!header) throw ParseError("pseudolabel file has no header");
  if (set.entries.size() > set.n_total) throw ParseError("pseudolabel file has more entries than n_total");
  return set;
}

void save_pseudolabels(const fs::path& path, const PseudoLabeledSet& set, const ClassSpace& classes) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_pseudolabels(out, set, classes);
}

PseudoLabeledSet load_pseudolabels(const fs::path& path, const ClassSpace& classes) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return read_pseudolabels(in, classes);
}

std::string metric_name(const ClassSpace& classes) { return classes.positive_class() ? "f1" : "accuracy"; }

namespace {

double headline(const EvalReport& r) { return r.f1_binary ? *r.f1_binary : r.accuracy; }

}  // namespace

LabelModelScore score_posterior(const Posterior& posterior, std::span<const ClassIndex> gold,
                                const ClassSpace& classes) {
  if (gold.size() != posterior.n()) throw Error("score_posterior: gold length does not match posterior");
  std::vector<ClassIndex> pred, truth;
  for (std::size_t i = 0; i < posterior.n(); ++i) {
    if (!posterior.covered[i]) continue;
    pred.push_back(posterior.hard[i]);
    truth.push_back(gold[i]);
  }
  LabelModelScore score;
  if (posterior.n() > 0) score.coverage = static_cast<double>(pred.size()) / static_cast<double>(posterior.n());
  if (!pred.empty()) score.metric = headline(evaluate_predictions(pred, truth, classes));
  return score;
}

TrainingSet training_set_from(const PseudoLabeledSet& set, std::span<const Document> docs, const ClassSpace& classes,
                              const FeatureConfig& features, bool soft_labels) {
  std::unordered_map<std::string_view, const Document*> by_id;
  for (const auto& d : docs) by_id.emplace(d.id, &d);
  TrainingSet data;
  data.k = classes.k();
  for (const auto& e : set.entries) {
    auto it = by_id.find(e.id);
    if (it == by_id.end()) throw Error("pseudolabel id '" + e.id + "' not found in split");
    data.x.push_back(featurize(it->second->text, features));
    data.y.push_back(e.label);
    if (soft_labels) data.soft.insert(data.soft.end(), e.posterior.begin(), e.posterior.end());
  }
  return data;
}

std::optional<DevSet> make_dev_set(const Dataset& dataset, const VoteMatrix& valid_votes) {
  if (!dataset.has_split(kValidSplit)) return std::nullopt;
  const auto& valid = dataset.split(kValidSplit);
  if (valid.empty() || !fully_labeled(valid)) return std::nullopt;
  if (valid_votes.n() != valid.size()) throw Error("dev votes do not match the valid split");
  return DevSet{valid_votes, gold_labels(valid)};
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

void reject_unknown(const json& doc, std::initializer_list<std::string_view> keys, const std::string& where) {
  for (const auto& [key, _] : doc.items())
    if (std::find(keys.begin(), keys.end(), key) == keys.end())
      throw ConfigError("unknown key '" + key + "' in " + where);
}

}  // namespace

RunConfig run_config_from_json(const json& doc, const fs::path& base) {
  if (!doc.is_object()) throw ConfigError("run config must be a JSON object");
  reject_unknown(doc,
                 {"data_dir", "classes", "task_spec", "strategies", "human_lfs", "label_models", "combine",
                  "combine_mode", "client", "generation", "allow_any_temperature", "seed", "fit", "end_model",
                  "threads", "apply_timeout_ms", "runners", "cache_dir", "out_dir", "run_id"},
                 "run config");
  RunConfig c;
  try {
    c.data_dir = resolve(base, doc.at("data_dir").get<std::string>());
    if (doc.contains("classes")) c.classes_path = resolve(base, doc["classes"].get<std::string>());
    c.task_spec = resolve(base, doc.at("task_spec").get<std::string>());
    if (doc.contains("strategies")) {
      c.strategies.clear();
      for (const auto& s : doc["strategies"]) c.strategies.push_back(parse_strategy(s.get<std::string>()));
    }
    if (doc.contains("human_lfs") && !doc["human_lfs"].is_null())
      c.human_lfs = resolve(base, doc["human_lfs"].get<std::string>());
    if (doc.contains("label_models")) {
      c.label_models.clear();
      for (const auto& s : doc["label_models"]) c.label_models.push_back(parse_model_kind(s.get<std::string>()));
    }
    c.combine = doc.value("combine", false);
    if (doc.contains("combine_mode")) c.combine_mode = parse_combine_mode(doc["combine_mode"].get<std::string>());
    if (doc.contains("client")) {
      const auto& cl = doc["client"];
      reject_unknown(cl, {"kind", "fixtures", "endpoint", "retries"}, "client");
      c.client.kind = cl.value("kind", "mock");
      if (cl.contains("fixtures")) c.client.fixtures = resolve(base, cl["fixtures"].get<std::string>());
      c.client.endpoint = cl.value("endpoint", "");
      c.client.retries = cl.value("retries", 3);
    }
    if (doc.contains("generation")) {
      const auto& g = doc["generation"];
      reject_unknown(g, {"temperature", "max_tokens", "n_samples", "model"}, "generation");
      c.generation.temperature = g.value("temperature", 0.0);
      c.generation.max_tokens = g.value("max_tokens", 512);
      c.generation.n_samples = g.value("n_samples", 1);
      c.generation.model_name = g.value("model", "mock");
    }
    c.allow_any_temperature = doc.value("allow_any_temperature", false);
    c.seed = doc.value("seed", std::uint64_t{0});
    if (doc.contains("fit")) {
      const auto& f = doc["fit"];
      reject_unknown(f, {"ds_max_iters", "ds_tol", "ds_restarts", "fs_moment_floor"}, "fit");
      c.fit.ds_max_iters = f.value("ds_max_iters", c.fit.ds_max_iters);
      c.fit.ds_tol = f.value("ds_tol", c.fit.ds_tol);
      c.fit.ds_restarts = f.value("ds_restarts", c.fit.ds_restarts);
      c.fit.fs_moment_floor = f.value("fs_moment_floor", c.fit.fs_moment_floor);
    }
    if (doc.contains("end_model")) {
      const auto& e = doc["end_model"];
      reject_unknown(e, {"lr", "epochs", "l2", "hash_dim", "ngram_max", "soft_labels"}, "end_model");
      c.train.lr = e.value("lr", c.train.lr);
      c.train.epochs = e.value("epochs", c.train.epochs);
      c.train.l2 = e.value("l2", c.train.l2);
      c.train.soft_labels = e.value("soft_labels", c.train.soft_labels);
      c.features.dim = e.value("hash_dim", c.features.dim);
      c.features.ngram_max = e.value("ngram_max", c.features.ngram_max);
    }
    c.threads = doc.value("threads", 1u);
    c.apply_timeout = std::chrono::milliseconds(doc.value("apply_timeout_ms", c.apply_timeout.count()));
    if (c.apply_timeout.count() <= 0) throw ConfigError("apply_timeout_ms must be positive");
    if (doc.contains("runners"))
      for (const auto& [id, cmd] : doc["runners"].items()) c.runners[id] = cmd.get<std::vector<std::string>>();
    if (doc.contains("cache_dir")) c.cache_dir = resolve(base, doc["cache_dir"].get<std::string>());
    if (doc.contains("out_dir")) c.out_dir = resolve(base, doc["out_dir"].get<std::string>());
    c.run_id = doc.value("run_id", c.run_id);
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("run config: ") + ex.what());
  } catch (const ParseError& ex) {
    throw ConfigError(std::string("run config: ") + ex.what());
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open run config " + path.string());
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("run config is not valid JSON: " + path.string());
  return run_config_from_json(doc, path.parent_path());
}

json config_echo(const RunConfig& c) {
  json strategies = json::array();
  for (auto s : c.strategies) strategies.push_back(to_string(s));
  json kinds = json::array();
  for (auto k : c.label_models) kinds.push_back(to_string(k));
  return {{"data_dir", c.data_dir.lexically_normal().generic_string()},
          {"strategies", strategies},
          {"human_lfs", c.human_lfs ? json(c.human_lfs->lexically_normal().generic_string()) : json(nullptr)},
          {"label_models", kinds},
          {"combine", c.combine},
          {"combine_mode", to_string(c.combine_mode)},
          {"client", c.client.kind},
          {"generation",
           {{"temperature", c.generation.temperature},
            {"max_tokens", c.generation.max_tokens},
            {"n_samples", c.generation.n_samples},
            {"model", c.generation.model_name}}},
          {"seed", c.seed},
          {"apply_timeout_ms", c.apply_timeout.count()},
          {"fit",
           {{"ds_max_iters", c.fit.ds_max_iters},
            {"ds_tol", c.fit.ds_tol},
            {"ds_restarts", c.fit.ds_restarts},
            {"fs_moment_floor", c.fit.fs_moment_floor}}},
          {"end_model",
           {{"lr", c.train.lr},
            {"epochs", c.train.epochs},
            {"l2", c.train.l2},
            {"hash_dim", c.features.dim},
            {"ngram_max", c.features.ngram_max},
            {"l2_normalize", c.features.l2_normalize},
            {"soft_labels", c.train.soft_labels}}}};
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

namespace {

class StageClock {
 public:
  explicit StageClock(std::vector<StageTiming>& timings) : timings_(timings) {}

  template <typename F>
  auto operator()(const std::string& stage, F&& body) {
    const auto start = std::chrono::steady_clock::now();
    struct Record {
      StageClock* self;
      std::string stage;
      std::chrono::steady_clock::time_point start;
      ~Record() {
        self->timings_.push_back(
            {stage, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()});
      }
    } record{this, stage, start};
    try {
      return body();
    } catch (const ConfigError&) {
      throw;
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& ex) {
      throw StageError(stage, ex.what());
    }
  }

 private:
  std::vector<StageTiming>& timings_;
};

struct LfSetVotes {
  std::string name;
  std::size_t m = 0;
  std::map<std::string, VoteMatrix, std::less<>> by_split;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

RunResult run(const RunConfig& config) {
  std::unique_ptr<GenerationClient> client;
  if (config.client.kind == "mock") {
    client.reset(new MockClient(MockClient::from_directory(config.client.fixtures)));
  } else if (config.client.kind == "http") {
    HttpClientConfig http;
    http.endpoint = config.client.endpoint;
    http.api_token = api_token_from_env();
    http.retries = config.client.retries;
    client = std::make_unique<HttpCompletionClient>(std::move(http));
  } else {
    throw ConfigError("client kind must be 'mock' or 'http', got '" + config.client.kind + "'");
  }
  return run(config, *client);
}

RunResult run(const RunConfig& config, GenerationClient& client) {
  if (config.combine && !config.human_lfs) throw ConfigError("human LF set required when combine is enabled");
  if (config.strategies.empty()) throw ConfigError("at least one prompt strategy is required");
  if (config.label_models.empty()) throw ConfigError("at least one label model is required");
  if (!fs::is_directory(config.data_dir)) throw ConfigError("data directory not found: " + config.data_dir.string());
  if (!fs::exists(config.task_spec)) throw ConfigError("task spec not found: " + config.task_spec.string());
  if (config.human_lfs && !fs::exists(*config.human_lfs))
    throw ConfigError("human LF set not found: " + config.human_lfs->string());

  RunResult result;
  result.run_dir = config.out_dir / config.run_id;
  const fs::path& dir = result.run_dir;
  for (const char* sub : {"votes", "models", "pseudolabels", "lfs"}) fs::create_directories(dir / sub);
  StageClock stage(result.timings);
  RunReport& report = result.report;
  report.config = config_echo(config);
  write_text(dir / "config-echo.json", report.config.dump(2) + "\n");

  // load
  Dataset dataset;
  TaskSpec spec;
  std::vector<LabelingFunction> human;
  stage("load", [&] {
    dataset = config.classes_path ? load_dataset(config.data_dir, *config.classes_path) : load_dataset(config.data_dir);
    if (!dataset.has_split(kTestSplit) || !fully_labeled(dataset.split(kTestSplit)))
      throw Error("a fully labelled test split is required");
    spec = load_task_spec(config.task_spec);
    if (config.human_lfs) human = load_lf_set(*config.human_lfs, dataset.classes, LfSource::Human);
  });
  const ClassSpace& classes = dataset.classes;
  report.metric = metric_name(classes);
  if (config.combine) report.combine_mode = std::string(to_string(config.combine_mode));

  // synthesize
  std::vector<LabelingFunction> synthesized;
  stage("synthesize", [&] {
    GenerationCache cache(config.cache_dir.empty() ? config.out_dir / "cache" : config.cache_dir);
    RunnerRegistry runners;
    for (const auto& [id, cmd] : config.runners) runners.add(id, cmd);
    SynthesizeOptions options;
    options.runners = &runners;
    for (PromptStrategy s : config.strategies) {
      auto bundle = build_prompt(s, spec, config.generation, config.allow_any_temperature);
      auto record = synthesize(client, bundle, classes, cache, options);
      synthesized.insert(synthesized.end(), record.accepted.begin(), record.accepted.end());
    }
    save_lf_set(dir / "lfs" / "synthesized.json", synthesized);
  });

  // apply
  RunnerRegistry runners;
  for (const auto& [id, cmd] : config.runners) runners.add(id, cmd);
  std::vector<LfSetVotes> sets;
  stage("apply", [&] {
    ApplyOptions options;
    options.runners = &runners;
    options.threads = config.threads;
    options.timeout = config.apply_timeout;
    auto apply_set = [&](const std::string& name, const std::vector<LabelingFunction>& lfs) {
      LfSetVotes set{name, lfs.size(), {}};
      std::vector<LfErrorTally> tallies(lfs.size());
      for (const auto& [split, docs] : dataset.splits) {
        VoteMatrix votes;
        if (lfs.empty()) {
          votes = VoteMatrix(docs.size(), 0);
        } else {
          auto applied = apply_all(lfs, docs, classes, options);
          votes = std::move(applied.votes);
          for (std::size_t a = 0; a < lfs.size(); ++a) {
            const auto& t = applied.errors[a];
            tallies[a].launch_failures += t.launch_failures;
            tallies[a].timeouts += t.timeouts;
            tallies[a].out_of_range += t.out_of_range;
            tallies[a].crashes += t.crashes;
            for (const auto& msg : t.messages) tallies[a].note(msg);
          }
        }
        save_votes(dir / "votes" / (name + "_" + split + ".votes"), votes);
        set.by_split.emplace(split, std::move(votes));
      }
      for (std::size_t a = 0; a < lfs.size(); ++a)
        if (tallies[a].total() > 0) report.errors.push_back({name, lfs[a].name, tallies[a]});
      sets.push_back(std::move(set));
    };
    if (config.human_lfs) apply_set("human", human);
    apply_set("synthesized", synthesized);
  });

  // stats
  const auto& train_docs = dataset.split(kTrainSplit);
  const auto& test_docs = dataset.split(kTestSplit);
  stage("stats", [&] {
    std::optional<std::vector<ClassIndex>> gold;
    if (fully_labeled(train_docs)) gold = gold_labels(train_docs);
    for (const auto& set : sets) {
      const auto& votes = set.by_split.at(std::string(kTrainSplit));
      auto stats = gold ? compute_stats(votes, std::span<const ClassIndex>(*gold), classes)
                        : compute_stats(votes, std::nullopt, classes);
      if (stats.m == 0) report.warnings.push_back(set.name + " LF set is empty (m=0)");
      report.lf_stats.push_back({set.name, std::move(stats)});
    }
  });

  if (config.combine && config.combine_mode == CombineMode::Refit) {
    LfSetVotes joined{"combined", sets[0].m + sets[1].m, {}};
    for (const auto& [split, votes] : sets[0].by_split)
      joined.by_split.emplace(split, VoteMatrix::hconcat(votes, sets[1].by_split.at(split)));
    sets.push_back(std::move(joined));
  }

  // fit and infer
  struct Fitted {
    std::string set;
    ModelKind kind;
    PseudoLabeledSet train_labels;
  };
  std::vector<Fitted> fitted;
  std::map<std::string, NoiseModel> models;
  FitConfig fit_config = config.fit;
  fit_config.seed = config.seed;
  stage("fit", [&] {
    for (const auto& set : sets) {
      if (set.m == 0) continue;
      std::optional<DevSet> dev;
      if (auto it = set.by_split.find(kValidSplit); it != set.by_split.end()) dev = make_dev_set(dataset, it->second);
      for (ModelKind kind : config.label_models) {
        const std::string key = set.name + "_" + std::string(to_string(kind));
        auto model = fit(kind, set.by_split.at(std::string(kTrainSplit)), classes, dev ? &*dev : nullptr, fit_config);
        write_text(dir / "models" / (key + ".json"), model_to_json(model).dump(2) + "\n");
        models.emplace(key, std::move(model));
      }
    }
  });

  stage("infer", [&] {
    const auto test_gold = gold_labels(test_docs);
    for (const auto& set : sets) {
      if (set.m == 0) {
        report.warnings.push_back("no label models fitted for the empty " + set.name + " LF set");
        continue;
      }
      LabelModelRow row{set.name, set.m, {}, 0.0, 0.0};
      std::vector<double> metrics;
      const Origin origin = set.name == "human" ? Origin::Human : Origin::Synthesized;
      for (ModelKind kind : config.label_models) {
        const std::string key = set.name + "_" + std::string(to_string(kind));
        const auto& model = models.at(key);
        auto test_post = infer(model, set.by_split.at(std::string(kTestSplit)));
        auto score = score_posterior(test_post, test_gold, classes);
        row.scores.push_back({kind, score.metric});
        metrics.push_back(score.metric);
        row.coverage = score.coverage;
        auto train_post = infer(model, set.by_split.at(std::string(kTrainSplit)));
        auto labels = make_pseudolabels(train_docs, train_post, origin);
        save_pseudolabels(dir / "pseudolabels" / (key + ".jsonl"), labels, classes);
        fitted.push_back({set.name, kind, std::move(labels)});
      }
      row.average = mean_of(metrics);
      report.label_models.push_back(std::move(row));
    }
  });

  if (config.combine && config.combine_mode == CombineMode::Union) {
    stage("combine", [&] {
      std::vector<std::string> ids;
      for (const auto& d : train_docs) ids.push_back(d.id);
      auto find = [&](const std::string& set, ModelKind kind) -> const PseudoLabeledSet* {
        for (const auto& f : fitted)
          if (f.set == set && f.kind == kind) return &f.train_labels;
        return nullptr;
      };
      const PseudoLabeledSet empty{train_docs.size(), {}};
      std::vector<Fitted> combined;
      for (ModelKind kind : config.label_models) {
        const auto* h = find("human", kind);
        const auto* s = find("synthesized", kind);
        auto labels = combine_union(h ? *h : empty, s ? *s : empty, ids);
        save_pseudolabels(dir / "pseudolabels" / ("combined_" + std::string(to_string(kind)) + ".jsonl"), labels,
                          classes);
        combined.push_back({"combined", kind, std::move(labels)});
      }
      for (auto& c : combined) fitted.push_back(std::move(c));
    });
  }

  // train and evaluate
  auto n_lfs_label = [&](const std::string& set) -> std::string {
    if (set != "combined") {
      for (const auto& s : sets)
        if (s.name == set) return std::to_string(s.m);
    }
    return std::to_string(sets[0].m) + "+" + std::to_string(sets[1].m);
  };
  std::map<std::string, LinearModel> end_models;
  TrainConfig train_config = config.train;
  train_config.seed = config.seed;
  train_config.threads = config.threads;
  stage("train", [&] {
    for (const auto& f : fitted) {
      const std::string key = f.set + "_" + std::string(to_string(f.kind));
      auto data = training_set_from(f.train_labels, train_docs, classes, config.features, train_config.soft_labels);
      auto model = train(data, config.features, train_config);
      save_model(dir / "models" / ("end_" + key + ".wsflm"), model);
      end_models.emplace(key, std::move(model));
    }
  });

  stage("evaluate", [&] {
    std::vector<std::string> order;
    for (const auto& f : fitted)
      if (std::find(order.begin(), order.end(), f.set) == order.end()) order.push_back(f.set);
    for (const auto& set : order) {
      EndModelRow row{set, n_lfs_label(set), {}, 0.0, 0.0};
      std::vector<double> metrics;
      for (const auto& f : fitted) {
        if (f.set != set) continue;
        auto eval = evaluate(end_models.at(f.set + "_" + std::string(to_string(f.kind))), test_docs, classes);
        metrics.push_back(headline(eval));
        row.coverage = f.train_labels.coverage();
        row.evals.push_back({f.kind, std::move(eval)});
      }
      row.average = mean_of(metrics);
      report.end_models.push_back(std::move(row));
    }
  });

  write_text(dir / "report.json", report_to_json(report).dump(2) + "\n");
  write_text(dir / "report.txt", render_report_text(report));
  json timings = json::array();
  for (const auto& t : result.timings) timings.push_back({{"stage", t.stage}, {"seconds", t.seconds}});
  write_text(dir / "timings.json", timings.dump(2) + "\n");
  return result;
}

}  // namespace wsforge
