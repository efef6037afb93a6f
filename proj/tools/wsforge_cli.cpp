#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "wsforge/corpus.hpp"
#include "wsforge/endmodel.hpp"
#include "wsforge/error.hpp"
#include "wsforge/http_client.hpp"
#include "wsforge/labelmodels.hpp"
#include "wsforge/lfkit.hpp"
#include "wsforge/lfstats.hpp"
#include "wsforge/pipeline.hpp"
#include "wsforge/promptforge.hpp"
#include "wsforge/script_runner.hpp"
#include "wsforge/votes.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace wsforge;

namespace {

struct DataArgs {
  std::string data_dir;
  std::string classes;

  Dataset load() const {
    if (data_dir.empty()) throw ConfigError("--data-dir is required");
    return classes.empty() ? load_dataset(data_dir) : load_dataset(data_dir, classes);
  }
};

void add_data_args(CLI::App* cmd, DataArgs& args) {
  cmd->add_option("--data-dir", args.data_dir, "Directory with classes.json and <split>.jsonl")->required();
  cmd->add_option("--classes", args.classes, "Class space file (default: <data-dir>/classes.json)");
}

struct ClientArgs {
  std::string fixtures;
  std::string endpoint;
  std::string model = "mock";
  double temperature = 0.0;
  bool allow_any_temperature = false;
  int n_samples = 1;
  int max_tokens = 512;
};

void add_client_args(CLI::App* cmd, ClientArgs& args) {
  cmd->add_option("--fixtures", args.fixtures, "Mock completion directory (<strategy>.json)");
  cmd->add_option("--endpoint", args.endpoint, "Completions endpoint URL");
  cmd->add_option("--model", args.model, "Model name sent to the endpoint");
  cmd->add_option("--temperature", args.temperature, "Sampling temperature, 0 to 0.2");
  cmd->add_flag("--allow-any-temperature", args.allow_any_temperature, "Lift the temperature bound");
  cmd->add_option("--n-samples", args.n_samples, "Completions per prompt");
  cmd->add_option("--max-tokens", args.max_tokens, "Token limit per completion");
}

std::unique_ptr<GenerationClient> make_client(const ClientArgs& args) {
  if (!args.endpoint.empty()) {
    HttpClientConfig http;
    http.endpoint = args.endpoint;
    http.api_token = api_token_from_env();
    return std::make_unique<HttpCompletionClient>(std::move(http));
  }
  if (args.fixtures.empty()) throw ConfigError("either --endpoint or --fixtures is required");
  return std::unique_ptr<GenerationClient>(new MockClient(MockClient::from_directory(args.fixtures)));
}

GenerationParams generation_params(const ClientArgs& args) {
  return {args.temperature, args.max_tokens, args.n_samples, args.model};
}

// id=command words, e.g. python="python3 runner.py"
void register_runners(const std::vector<std::string>& specs, RunnerRegistry& registry) {
  for (const auto& spec : specs) {
    auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--runner expects id=command, got '" + spec + "'");
    std::vector<std::string> words;
    std::istringstream in(spec.substr(eq + 1));
    for (std::string w; in >> w;) words.push_back(w);
    if (words.empty()) throw ConfigError("--runner '" + spec + "' has an empty command");
    registry.add(spec.substr(0, eq), std::move(words));
  }
}

void write_file(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out << text;
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ParseError("not valid JSON: " + path);
  return doc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weak supervision with synthesized labeling functions"};
  app.require_subcommand(1);
  std::string stage_name;
  std::function<void()> action;

  // synthesize
  DataArgs syn_data;
  ClientArgs syn_client;
  std::string syn_task, syn_cache = "cache", syn_out = "-";
  std::vector<std::string> syn_strategies{"general"}, syn_runners;
  auto* syn = app.add_subcommand("synthesize", "Prompt for labeling functions and validate the completions");
  add_data_args(syn, syn_data);
  add_client_args(syn, syn_client);
  syn->add_option("--task-spec", syn_task, "Task spec JSON")->required();
  syn->add_option("--strategy", syn_strategies, "Prompt strategy (repeatable)");
  syn->add_option("--cache-dir", syn_cache, "Generation cache directory");
  syn->add_option("--runner", syn_runners, "Script runtime, id=command");
  syn->add_option("--out", syn_out, "Output LF set (JSON)");
  syn->callback([&] {
    stage_name = "synthesize";
    action = [&] {
      auto dataset = syn_data.load();
      auto spec = load_task_spec(syn_task);
      auto client = make_client(syn_client);
      GenerationCache cache(syn_cache);
      RunnerRegistry runners;
      register_runners(syn_runners, runners);
      SynthesizeOptions options;
      options.runners = &runners;
      std::vector<LabelingFunction> lfs;
      for (const auto& s : syn_strategies) {
        auto bundle =
            build_prompt(parse_strategy(s), spec, generation_params(syn_client), syn_client.allow_any_temperature);
        auto record = synthesize(*client, bundle, dataset.classes, cache, options);
        for (const auto& r : record.rejected) std::cerr << "rejected (" << s << "): " << r.reason << '\n';
        lfs.insert(lfs.end(), record.accepted.begin(), record.accepted.end());
      }
      if (syn_out == "-") {
        json arr = json::array();
        for (const auto& lf : lfs) arr.push_back(lf_to_json(lf));
        std::cout << arr.dump(2) << '\n';
      } else {
        save_lf_set(syn_out, lfs);
      }
      std::cerr << lfs.size() << " labeling functions, " << client->call_count() << " client calls\n";
    };
  });

  // apply
  DataArgs app_data;
  std::string app_lfs, app_split = "train", app_out = "-", app_source = "human";
  std::vector<std::string> app_runners;
  unsigned app_threads = 1;
  int app_timeout_ms = 5000;
  auto* apply = app.add_subcommand("apply", "Apply an LF set to a split and write the vote matrix");
  add_data_args(apply, app_data);
  apply->add_option("--lfs", app_lfs, "LF set file or directory")->required();
  apply->add_option("--source", app_source, "human or synthesized")->check(CLI::IsMember({"human", "synthesized"}));
  apply->add_option("--split", app_split, "Split name");
  apply->add_option("--threads", app_threads, "Worker threads");
  apply->add_option("--timeout-ms", app_timeout_ms, "Per-document script timeout");
  apply->add_option("--runner", app_runners, "Script runtime, id=command");
  apply->add_option("--out", app_out, "Vote matrix output");
  apply->callback([&] {
    stage_name = "apply";
    action = [&] {
      auto dataset = app_data.load();
      auto lfs = load_lf_set(app_lfs, dataset.classes,
                             app_source == "human" ? LfSource::Human : LfSource::Synthesized);
      RunnerRegistry runners;
      register_runners(app_runners, runners);
      ApplyOptions options;
      options.runners = &runners;
      options.threads = app_threads;
      options.timeout = std::chrono::milliseconds(app_timeout_ms);
      auto result = apply_all(lfs, dataset.split(app_split), dataset.classes, options);
      for (std::size_t a = 0; a < lfs.size(); ++a)
        if (result.errors[a].total())
          std::cerr << lfs[a].name << ": " << result.errors[a].total() << " failed documents\n";
      std::ostringstream out;
      write_votes(out, result.votes);
      write_file(app_out, out.str());
    };
  });

  // stats
  DataArgs st_data;
  std::string st_votes, st_split = "train";
  bool st_json = false;
  auto* stats = app.add_subcommand("stats", "Coverage, overlap, conflict and accuracy per LF");
  add_data_args(stats, st_data);
  stats->add_option("--votes", st_votes, "Vote matrix")->required();
  stats->add_option("--split", st_split, "Split the votes belong to (gold for accuracy)");
  stats->add_flag("--json", st_json, "Print JSON instead of a table");
  stats->callback([&] {
    stage_name = "stats";
    action = [&] {
      auto dataset = st_data.load();
      auto votes = load_votes(st_votes);
      const auto& docs = dataset.split(st_split);
      std::optional<std::vector<ClassIndex>> gold;
      if (fully_labeled(docs)) gold = gold_labels(docs);
      auto s = gold ? compute_stats(votes, std::span<const ClassIndex>(*gold), dataset.classes)
                    : compute_stats(votes, std::nullopt, dataset.classes);
      if (s.m == 0) std::cout << "warning: empty LF set, m=0\n";
      std::cout << (st_json ? stats_to_json(s).dump(2) + "\n" : render_stats_table(s));
    };
  });

  // fit
  DataArgs fit_data;
  std::string fit_votes, fit_dev_votes, fit_kind = "mv", fit_out = "-";
  FitConfig fit_config;
  auto* fitcmd = app.add_subcommand("fit", "Fit a label model to a vote matrix");
  add_data_args(fitcmd, fit_data);
  fitcmd->add_option("--votes", fit_votes, "Training vote matrix")->required();
  fitcmd->add_option("--dev-votes", fit_dev_votes, "Vote matrix of the gold-labelled valid split");
  fitcmd->add_option("--label-model", fit_kind, "mv, wmv, ds or fs");
  fitcmd->add_option("--ds-max-iters", fit_config.ds_max_iters, "EM iteration cap");
  fitcmd->add_option("--ds-tol", fit_config.ds_tol, "EM convergence tolerance");
  fitcmd->add_option("--seed", fit_config.seed, "Seed for random restarts");
  fitcmd->add_option("--fs-moment-floor", fit_config.fs_moment_floor, "Smallest usable pairwise moment");
  fitcmd->add_option("--out", fit_out, "Model output (JSON)");
  fitcmd->callback([&] {
    stage_name = "fit";
    action = [&] {
      auto dataset = fit_data.load();
      auto votes = load_votes(fit_votes);
      std::optional<DevSet> dev;
      if (!fit_dev_votes.empty()) {
        dev = make_dev_set(dataset, load_votes(fit_dev_votes));
        if (!dev) throw ConfigError("--dev-votes given but the valid split is missing or unlabelled");
      }
      auto model = fit(parse_model_kind(fit_kind), votes, dataset.classes, dev ? &*dev : nullptr, fit_config);
      write_file(fit_out, model_to_json(model).dump(2) + "\n");
    };
  });

  // pseudolabel
  DataArgs pl_data;
  std::string pl_model, pl_votes, pl_split = "train", pl_origin = "human", pl_out = "-";
  auto* pl = app.add_subcommand("pseudolabel", "Infer pseudolabels for covered points");
  add_data_args(pl, pl_data);
  pl->add_option("--model", pl_model, "Label model (JSON)")->required();
  pl->add_option("--votes", pl_votes, "Vote matrix")->required();
  pl->add_option("--split", pl_split, "Split the votes belong to");
  pl->add_option("--origin", pl_origin, "human or synthesized")->check(CLI::IsMember({"human", "synthesized"}));
  pl->add_option("--out", pl_out, "Pseudolabel output (JSON Lines)");
  pl->callback([&] {
    stage_name = "pseudolabel";
    action = [&] {
      auto dataset = pl_data.load();
      auto model = model_from_json(read_json(pl_model));
      auto post = infer(model, load_votes(pl_votes));
      auto set = make_pseudolabels(dataset.split(pl_split), post, parse_origin(pl_origin));
      std::ostringstream out;
      write_pseudolabels(out, set, dataset.classes);
      write_file(pl_out, out.str());
      std::cerr << "coverage " << set.coverage() << '\n';
    };
  });

  // combine
  DataArgs cb_data;
  std::string cb_human, cb_synth, cb_split = "train", cb_out = "-";
  auto* cb = app.add_subcommand("combine", "Union of human and synthesized pseudolabels, human first");
  add_data_args(cb, cb_data);
  cb->add_option("--human", cb_human, "Human pseudolabels")->required();
  cb->add_option("--synthesized", cb_synth, "Synthesized pseudolabels")->required();
  cb->add_option("--split", cb_split, "Split both sets derive from");
  cb->add_option("--out", cb_out, "Combined pseudolabels");
  cb->callback([&] {
    stage_name = "combine";
    action = [&] {
      auto dataset = cb_data.load();
      std::vector<std::string> ids;
      for (const auto& d : dataset.split(cb_split)) ids.push_back(d.id);
      auto set = combine_union(load_pseudolabels(cb_human, dataset.classes),
                               load_pseudolabels(cb_synth, dataset.classes), ids);
      std::ostringstream out;
      write_pseudolabels(out, set, dataset.classes);
      write_file(cb_out, out.str());
      std::cerr << "coverage " << set.coverage() << '\n';
    };
  });

  // train
  DataArgs tr_data;
  std::string tr_labels, tr_split = "train", tr_out;
  TrainConfig tr_config;
  FeatureConfig tr_features{.dim = std::size_t{1} << 18, .l2_normalize = true};
  auto* tr = app.add_subcommand("train", "Train the logistic-regression end model on pseudolabels");
  add_data_args(tr, tr_data);
  tr->add_option("--pseudolabels", tr_labels, "Pseudolabels (JSON Lines)")->required();
  tr->add_option("--split", tr_split, "Split the pseudolabels refer to");
  tr->add_option("--end-model-lr", tr_config.lr, "Learning rate");
  tr->add_option("--end-model-epochs", tr_config.epochs, "Full-batch epochs");
  tr->add_option("--l2", tr_config.l2, "L2 penalty on weights");
  tr->add_option("--hash-dim", tr_features.dim, "Feature hashing dimension (power of two)");
  tr->add_option("--seed", tr_config.seed, "Recorded seed");
  tr->add_option("--threads", tr_config.threads, "Gradient worker threads");
  tr->add_flag("--soft-labels", tr_config.soft_labels, "Train on posteriors instead of hard labels");
  tr->add_option("--out", tr_out, "Model output")->required();
  tr->callback([&] {
    stage_name = "train";
    action = [&] {
      auto dataset = tr_data.load();
      auto set = load_pseudolabels(tr_labels, dataset.classes);
      auto data = training_set_from(set, dataset.split(tr_split), dataset.classes, tr_features, tr_config.soft_labels);
      auto model = train(data, tr_features, tr_config);
      if (auto parent = fs::path(tr_out).parent_path(); !parent.empty()) fs::create_directories(parent);
      save_model(tr_out, model);
      std::cerr << "final loss " << model.diagnostics.final_loss << '\n';
    };
  });

  // evaluate
  DataArgs ev_data;
  std::string ev_model, ev_split = "test";
  auto* ev = app.add_subcommand("evaluate", "Score an end model on a gold-labelled split");
  add_data_args(ev, ev_data);
  ev->add_option("--model", ev_model, "End model file")->required();
  ev->add_option("--split", ev_split, "Split to score");
  ev->callback([&] {
    stage_name = "evaluate";
    action = [&] {
      auto dataset = ev_data.load();
      auto report = evaluate(load_model(ev_model), dataset.split(ev_split), dataset.classes);
      std::cout << eval_to_json(report).dump(2) << '\n';
    };
  });

  // run
  std::string run_config_path, run_data_dir, run_out_dir, run_id, run_endpoint, run_model;
  std::vector<std::string> run_kinds;
  std::optional<std::uint64_t> run_seed;
  std::optional<int> run_ds_iters, run_epochs, run_n_samples, run_max_tokens;
  std::optional<double> run_ds_tol, run_floor, run_temperature, run_lr, run_l2;
  std::optional<std::size_t> run_hash_dim;
  std::optional<unsigned> run_threads;
  std::optional<long long> run_timeout_ms;
  bool run_allow_temp = false, run_soft = false;
  auto* runcmd = app.add_subcommand("run", "Run the whole pipeline from a config file");
  runcmd->add_option("--config", run_config_path, "Run config (JSON)")->required();
  runcmd->add_option("--data-dir", run_data_dir, "Override data_dir");
  runcmd->add_option("--out-dir", run_out_dir, "Override out_dir");
  runcmd->add_option("--run-id", run_id, "Override run_id");
  runcmd->add_option("--label-model", run_kinds, "Label models to fit (repeatable)");
  runcmd->add_option("--seed", run_seed, "Seed");
  runcmd->add_option("--ds-max-iters", run_ds_iters, "EM iteration cap");
  runcmd->add_option("--ds-tol", run_ds_tol, "EM convergence tolerance");
  runcmd->add_option("--fs-moment-floor", run_floor, "Smallest usable pairwise moment");
  runcmd->add_option("--endpoint", run_endpoint, "Use the HTTP client against this endpoint");
  runcmd->add_option("--model", run_model, "Model name for generation");
  runcmd->add_option("--temperature", run_temperature, "Sampling temperature");
  runcmd->add_flag("--allow-any-temperature", run_allow_temp, "Lift the temperature bound");
  runcmd->add_option("--n-samples", run_n_samples, "Completions per prompt");
  runcmd->add_option("--max-tokens", run_max_tokens, "Token limit per completion");
  runcmd->add_option("--end-model-lr", run_lr, "End model learning rate");
  runcmd->add_option("--end-model-epochs", run_epochs, "End model epochs");
  runcmd->add_option("--l2", run_l2, "End model L2 penalty");
  runcmd->add_option("--hash-dim", run_hash_dim, "Feature hashing dimension");
  runcmd->add_option("--threads", run_threads, "Worker threads");
  runcmd->add_option("--timeout-ms", run_timeout_ms, "Per-document script LF timeout");
  runcmd->add_flag("--soft-labels", run_soft, "Train the end model on posteriors");
  runcmd->callback([&] {
    stage_name = "run";
    action = [&] {
      auto config = load_run_config(run_config_path);
      if (!run_data_dir.empty()) config.data_dir = run_data_dir;
      if (!run_out_dir.empty()) config.out_dir = run_out_dir;
      if (!run_id.empty()) config.run_id = run_id;
      if (!run_kinds.empty()) {
        config.label_models.clear();
        for (const auto& k : run_kinds) config.label_models.push_back(parse_model_kind(k));
      }
      if (run_seed) config.seed = *run_seed;
      if (run_ds_iters) config.fit.ds_max_iters = *run_ds_iters;
      if (run_ds_tol) config.fit.ds_tol = *run_ds_tol;
      if (run_floor) config.fit.fs_moment_floor = *run_floor;
      if (!run_endpoint.empty()) {
        config.client.kind = "http";
        config.client.endpoint = run_endpoint;
      }
      if (!run_model.empty()) config.generation.model_name = run_model;
      if (run_temperature) config.generation.temperature = *run_temperature;
      if (run_allow_temp) config.allow_any_temperature = true;
      if (run_n_samples) config.generation.n_samples = *run_n_samples;
      if (run_max_tokens) config.generation.max_tokens = *run_max_tokens;
      if (run_lr) config.train.lr = *run_lr;
      if (run_epochs) config.train.epochs = *run_epochs;
      if (run_l2) config.train.l2 = *run_l2;
      if (run_hash_dim) config.features.dim = *run_hash_dim;
      if (run_threads) config.threads = *run_threads;
      if (run_timeout_ms) {
        if (*run_timeout_ms <= 0) throw ConfigError("--timeout-ms must be positive");
        config.apply_timeout = std::chrono::milliseconds(*run_timeout_ms);
      }
      if (run_soft) config.train.soft_labels = true;
      auto result = run(config);
      std::cout << render_report_text(result.report);
      std::cerr << "artifacts in " << result.run_dir.string() << '\n';
    };
  });

  // cache ls
  std::string cache_dir = "cache";
  auto* cache = app.add_subcommand("cache", "Inspect the generation cache");
  cache->require_subcommand(1);
  auto* ls = cache->add_subcommand("ls", "List cached generation records");
  ls->add_option("--cache-dir", cache_dir, "Cache directory");
  ls->callback([&] {
    stage_name = "cache";
    action = [&] {
      auto listing = list_cached(cache_dir);
      for (const auto& w : listing.warnings) std::cerr << "warning: " << w << '\n';
      std::printf("%-16s %-18s %-10s %-22s %5s %5s %5s\n", "hash", "strategy", "model", "timestamp", "comp", "ok",
                  "rej");
      for (const auto& r : listing.records)
        std::printf("%-16s %-18s %-10s %-22s %5zu %5zu %5zu\n", r.prompt_hash.substr(0, 16).c_str(),
                    r.strategy.c_str(), r.model_name.c_str(), r.timestamp.c_str(), r.completions, r.accepted,
                    r.rejected);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    action();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const StageError& e) {
    std::cerr << "stage failed: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "stage failed: " << stage_name << ": " << e.what() << '\n';
    return 3;
  }
  return 0;
}
