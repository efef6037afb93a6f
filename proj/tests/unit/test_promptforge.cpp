#include <doctest.h>

#include <fstream>

#include <nlohmann/json.hpp>

#include "test_support.hpp"
#include "wsforge/error.hpp"
#include "wsforge/promptforge.hpp"

using namespace wsforge;
using wsforge::testing::TempDir;

namespace {

const ClassSpace kSpam({"ham", "spam"}, 1);

TaskSpec youtube_spec() {
  TaskSpec s;
  s.language_line = "# Python 3";
  s.task_description = "# Label YouTube comments as spam or ham.";
  s.function_signature = "def label_comment(comment):";
  s.labeling_instructions = "# Return 1 for spam, 0 for ham, -1 otherwise.";
  s.output_form = OutputForm::Script;
  s.comment_prefix = "# ";
  return s;
}

TaskSpec full_spec() {
  TaskSpec s = youtube_spec();
  s.mission = "# Keep the comment section useful for viewers.";
  s.heuristics = std::vector<std::string>{"links to other channels are spam", "short praise is ham"};
  s.lf_exemplars = std::vector<std::string>{"def lf(x):\n    return 1 if 'subscribe' in x else -1"};
  s.data_exemplars = std::vector<std::pair<std::string, std::string>>{{"win a free iphone", "spam"},
                                                                      {"nice video", "ham"}};
  return s;
}

std::string rule_completion(const std::string& body) { return "Here you go:\n```json\n" + body + "\n```\nHope it helps."; }

PromptBundle rule_bundle(PromptStrategy strategy = PromptStrategy::General, int n = 1) {
  TaskSpec s = full_spec();
  s.output_form = OutputForm::RuleProgram;
  GenerationParams p;
  p.n_samples = n;
  return build_prompt(strategy, s, p);
}

}  // namespace

TEST_SUITE("promptforge") {
  TEST_CASE("general prompt holds exactly the four components in order") {
    auto b = build_prompt(PromptStrategy::General, youtube_spec(), {});
    const auto s = youtube_spec();
    const auto p0 = b.text.find(s.language_line), p1 = b.text.find(s.task_description),
               p2 = b.text.find(s.function_signature), p3 = b.text.find(s.labeling_instructions);
    REQUIRE(p0 != std::string::npos);
    CHECK(p0 < p1);
    CHECK(p1 < p2);
    CHECK(p2 < p3);
    CHECK(b.entrypoint == "label_comment");
    CHECK(b.text.find("subscribe") == std::string::npos);
  }

  TEST_CASE("every strategy contains the general components verbatim") {
    const auto s = full_spec();
    for (auto strategy : kAllStrategies) {
      auto b = build_prompt(strategy, s, {});
      for (const auto& part : {s.language_line, s.task_description, s.function_signature, s.labeling_instructions})
        CHECK(b.text.find(part) != std::string::npos);
      CHECK(b.strategy == strategy);
    }
  }

  TEST_CASE("strategy blocks sit in the fixed order") {
    const auto s = full_spec();
    auto mission = build_prompt(PromptStrategy::MissionStatement, s, {});
    CHECK(mission.text.find(*s.mission) < mission.text.find(s.task_description));

    auto heur = build_prompt(PromptStrategy::HumanHeuristic, s, {});
    CHECK(heur.text.find("links to other channels are spam") > heur.text.find(s.task_description));
    CHECK(heur.text.find("links to other channels are spam") < heur.text.find(s.function_signature));

    auto data = build_prompt(PromptStrategy::DataExemplars, s, {});
    const auto sig = data.text.find(s.function_signature);
    CHECK(data.text.find("win a free iphone") < sig);
    CHECK(data.text.find("nice video") < sig);
    CHECK(data.text.find("spam") != std::string::npos);

    auto lfx = build_prompt(PromptStrategy::LfExemplars, s, {});
    CHECK(lfx.text.find("'subscribe' in x") < lfx.text.find(s.function_signature));
  }

  TEST_CASE("missing strategy fields are configuration errors") {
    const auto s = youtube_spec();
    CHECK_THROWS_AS(build_prompt(PromptStrategy::MissionStatement, s, {}), ConfigError);
    CHECK_THROWS_AS(build_prompt(PromptStrategy::HumanHeuristic, s, {}), ConfigError);
    CHECK_THROWS_AS(build_prompt(PromptStrategy::LfExemplars, s, {}), ConfigError);
    CHECK_THROWS_AS(build_prompt(PromptStrategy::DataExemplars, s, {}), ConfigError);
    CHECK_THROWS_AS(parse_strategy("chain_of_thought"), ConfigError);
    CHECK(parse_strategy("lf_exemplars") == PromptStrategy::LfExemplars);
  }

  TEST_CASE("prompt text and hash are deterministic; params change the hash") {
    const auto s = full_spec();
    for (auto strategy : kAllStrategies) {
      auto a = build_prompt(strategy, s, {});
      auto b = build_prompt(strategy, s, {});
      CHECK(a.text == b.text);
      CHECK(a.prompt_hash == b.prompt_hash);
      CHECK(a.prompt_hash.size() == 64);
    }
    GenerationParams warm;
    warm.temperature = 0.2;
    CHECK(build_prompt(PromptStrategy::General, s, warm).prompt_hash !=
          build_prompt(PromptStrategy::General, s, {}).prompt_hash);
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  }

  TEST_CASE("temperature outside [0, 0.2] needs an explicit override") {
    GenerationParams hot;
    hot.temperature = 0.7;
    CHECK_THROWS_AS(build_prompt(PromptStrategy::General, youtube_spec(), hot), ConfigError);
    CHECK_NOTHROW(build_prompt(PromptStrategy::General, youtube_spec(), hot, true));
    hot.temperature = -0.1;
    CHECK_THROWS_AS(build_prompt(PromptStrategy::General, youtube_spec(), hot), ConfigError);
  }

  TEST_CASE("task spec JSON round trip") {
    auto s = full_spec();
    auto back = task_spec_from_json(nlohmann::json::parse(task_spec_to_json(s).dump()));
    CHECK(build_prompt(PromptStrategy::DataExemplars, back, {}).text ==
          build_prompt(PromptStrategy::DataExemplars, s, {}).text);
    CHECK_THROWS_AS(task_spec_from_json(nlohmann::json::object()), ConfigError);
  }

  TEST_CASE("extract_code takes the fenced block and trims chatter") {
    CHECK(extract_code(rule_completion("{\"rules\": [], \"default\": -1}"), OutputForm::RuleProgram) ==
          "{\"rules\": [], \"default\": -1}");
    CHECK(extract_code("{\"default\": 0} trailing words", OutputForm::RuleProgram) == "{\"default\": 0}");
    CHECK(extract_code("no braces here", OutputForm::RuleProgram).empty());
    CHECK(extract_code("def f(x):\n    return 1\nThis function labels spam.", OutputForm::Script) ==
          "def f(x):\n    return 1\n");
  }

  TEST_CASE("synthesize validates, caches and never calls twice") {
    TempDir tmp;
    GenerationCache cache(tmp.path() / "cache");
    const std::string good = "{\"rules\": [{\"if\": {\"keyword_any\": [\"free\"]}, \"emit\": 1}], \"default\": -1}";
    for (auto strategy : kAllStrategies) {
      MockClient client({{strategy, {rule_completion(good)}}});
      auto bundle = rule_bundle(strategy);
      auto first = synthesize(client, bundle, kSpam, cache);
      CHECK(client.call_count() == 1);
      REQUIRE(first.accepted.size() == 1);
      CHECK(first.accepted[0].provenance == bundle.prompt_hash);
      CHECK(first.accepted[0].source == LfSource::Synthesized);
      auto second = synthesize(client, bundle, kSpam, cache);
      CHECK(client.call_count() == 1);
      CHECK(record_to_json(second) == record_to_json(first));
    }
    auto listing = list_cached(tmp.path() / "cache");
    CHECK(listing.records.size() == 5);
    CHECK(listing.warnings.empty());
  }

  TEST_CASE("rejections carry reasons and all-rejected is persisted") {
    TempDir tmp;
    GenerationCache cache(tmp.path() / "cache");
    const std::string bad = "{\"rules\": [{\"if\": {\"keyword_any\": [\"free\"]}, \"emit\": 7}], \"default\": -1}";
    const std::string ok = "{\"rules\": [{\"if\": {\"keyword_any\": [\"win\"]}, \"emit\": 1}], \"default\": -1}";
    MockClient client({{PromptStrategy::General, {rule_completion(bad), "sorry, I cannot", rule_completion(ok),
                                                  rule_completion(ok)}}});
    auto record = synthesize(client, rule_bundle(PromptStrategy::General, 4), kSpam, cache);
    REQUIRE(record.accepted.size() == 1);
    REQUIRE(record.rejected.size() == 3);
    CHECK(record.rejected[0].reason.find("vote out of range") != std::string::npos);
    CHECK(record.rejected[2].reason.find("duplicate") != std::string::npos);
    CHECK(record.accepted.size() + record.rejected.size() == record.raw_completions.size());

    MockClient only_bad({{PromptStrategy::MissionStatement, {rule_completion(bad)}}});
    auto bundle = rule_bundle(PromptStrategy::MissionStatement);
    CHECK_THROWS_AS(synthesize(only_bad, bundle, kSpam, cache), AllCompletionsRejected);
    CHECK(std::filesystem::exists(tmp.path() / "cache" / (bundle.prompt_hash + ".json")));
    CHECK_THROWS_AS(synthesize(only_bad, bundle, kSpam, cache), AllCompletionsRejected);
    CHECK(only_bad.call_count() == 1);
  }

  TEST_CASE("list_cached skips unreadable records") {
    TempDir tmp;
    std::filesystem::create_directories(tmp.path());
    CHECK(list_cached(tmp.path()).records.empty());
    GenerationCache cache(tmp.path());
    MockClient client({{PromptStrategy::General, {rule_completion("{\"default\": 1}")}},
                       {PromptStrategy::HumanHeuristic, {rule_completion("{\"default\": 0}")}}});
    synthesize(client, rule_bundle(PromptStrategy::General), kSpam, cache);
    synthesize(client, rule_bundle(PromptStrategy::HumanHeuristic), kSpam, cache);
    wsforge::testing::write_text(tmp.path() / "garbage.json", "{not json");
    auto listing = list_cached(tmp.path());
    CHECK(listing.records.size() == 2);
    CHECK(listing.warnings.size() == 1);
    CHECK(listing.records[0].timestamp <= listing.records[1].timestamp);
  }

  TEST_CASE("mock fixtures load from a directory") {
    auto client = MockClient::from_directory(wsforge::testing::source_dir() / "prompts" / "minispam" / "mock");
    auto out = client.complete(rule_bundle(PromptStrategy::General));
    CHECK(out.size() == 1);
    CHECK(client.call_count() == 1);
  }
}
