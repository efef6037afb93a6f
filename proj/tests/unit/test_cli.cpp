#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>

#include <nlohmann/json.hpp>

#include "test_support.hpp"

#ifdef WSFORGE_CLI

namespace fs = std::filesystem;
using wsforge::testing::read_text;
using wsforge::testing::TempDir;
using wsforge::testing::write_text;

namespace {

struct Cli {
  TempDir tmp{"wsforge-cli"};
  std::string out, err;

  int operator()(const std::string& args) {
    const std::string cmd = std::string("\"") + WSFORGE_CLI + "\" " + args + " > \"" + (tmp / "stdout").string() +
                            "\" 2> \"" + (tmp / "stderr").string() + "\"";
    const int status = std::system(cmd.c_str());
    out = read_text(tmp / "stdout");
    err = read_text(tmp / "stderr");
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
};

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

const fs::path kConfig = wsforge::testing::source_dir() / "configs" / "minispam.json";

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("help and usage errors") {
    Cli cli;
    CHECK(cli("--help") == 0);
    CHECK(cli.out.find("synthesize") != std::string::npos);
    CHECK(cli("") == 2);
    CHECK(cli("frobnicate") == 2);
    CHECK(cli("run") == 2);  // --config missing
    CHECK(cli("run --config " + q(kConfig) + " --no-such-flag") == 2);
  }

  TEST_CASE("run succeeds and prints the report") {
    Cli cli;
    REQUIRE(cli("run --config " + q(kConfig) + " --out-dir " + q(cli.tmp.path()) + " --run-id a") == 0);
    CHECK(cli.out.find("Label models (F1)") != std::string::npos);
    CHECK(cli.out.find("combine mode: union") != std::string::npos);
    CHECK(fs::exists(cli.tmp / "a" / "report.json"));
    CHECK(cli("cache ls --cache-dir " + q(cli.tmp / "cache")) == 0);
    CHECK(cli.out.find("mission_statement") != std::string::npos);
  }

  TEST_CASE("configuration problems exit with 2") {
    Cli cli;
    CHECK(cli("run --config " + q(cli.tmp / "missing.json")) == 2);

    auto doc = nlohmann::json::parse(read_text(kConfig));
    const auto base = kConfig.parent_path();
    doc["data_dir"] = (base / doc["data_dir"].get<std::string>()).string();
    doc["task_spec"] = (base / doc["task_spec"].get<std::string>()).string();
    doc["client"]["fixtures"] = (base / doc["client"]["fixtures"].get<std::string>()).string();
    doc.erase("human_lfs");
    write_text(cli.tmp / "nohuman.json", doc.dump());
    CHECK(cli("run --config " + q(cli.tmp / "nohuman.json") + " --out-dir " + q(cli.tmp.path())) == 2);
    CHECK(cli.err.find("human LF set required") != std::string::npos);

    CHECK(cli("run --config " + q(kConfig) + " --out-dir " + q(cli.tmp.path()) + " --label-model snorkel") == 2);
    CHECK(cli("run --config " + q(kConfig) + " --out-dir " + q(cli.tmp.path()) + " --temperature 0.9") == 2);
  }

  TEST_CASE("stage failures exit with 3") {
    Cli cli;
    const auto data = cli.tmp / "data";
    fs::create_directories(data);
    fs::copy_file(wsforge::testing::minispam_dir() / "classes.json", data / "classes.json");
    fs::copy_file(wsforge::testing::minispam_dir() / "train.jsonl", data / "train.jsonl");
    write_text(data / "test.jsonl", "{\"id\": \"t1\", \"text\": \"hello\"}\n");  // no gold
    CHECK(cli("run --config " + q(kConfig) + " --data-dir " + q(data) + " --out-dir " + q(cli.tmp.path())) == 3);
    CHECK(cli.err.find("stage failed: load") != std::string::npos);

    CHECK(cli("stats --data-dir " + q(wsforge::testing::minispam_dir()) + " --votes " + q(cli.tmp / "nope.votes")) == 3);
  }

  TEST_CASE("stagewise subcommands reproduce the run") {
    Cli cli;
    const auto dir = cli.tmp.path();
    const auto data = q(wsforge::testing::minispam_dir());
    const auto lfs = q(wsforge::testing::minispam_dir() / "human_lfs.json");
    REQUIRE(cli("run --config " + q(kConfig) + " --out-dir " + q(dir) + " --run-id ref") == 0);

    REQUIRE(cli("apply --data-dir " + data + " --lfs " + lfs + " --split train --out " + q(dir / "h_train.votes")) == 0);
    REQUIRE(cli("apply --data-dir " + data + " --lfs " + lfs + " --split valid --out " + q(dir / "h_valid.votes")) == 0);
    CHECK(read_text(dir / "h_train.votes") == read_text(dir / "ref" / "votes" / "human_train.votes"));

    REQUIRE(cli("stats --data-dir " + data + " --votes " + q(dir / "h_train.votes")) == 0);
    CHECK(cli.out.find("Avg.Coverage") != std::string::npos);

    REQUIRE(cli("fit --data-dir " + data + " --votes " + q(dir / "h_train.votes") + " --dev-votes " +
                q(dir / "h_valid.votes") + " --label-model wmv --seed 7 --out " + q(dir / "wmv.json")) == 0);
    CHECK(nlohmann::json::parse(read_text(dir / "wmv.json")) ==
          nlohmann::json::parse(read_text(dir / "ref" / "models" / "human_wmv.json")));

    REQUIRE(cli("pseudolabel --data-dir " + data + " --model " + q(dir / "wmv.json") + " --votes " +
                q(dir / "h_train.votes") + " --out " + q(dir / "h.jsonl")) == 0);
    CHECK(read_text(dir / "h.jsonl") == read_text(dir / "ref" / "pseudolabels" / "human_wmv.jsonl"));

    REQUIRE(cli("combine --data-dir " + data + " --human " + q(dir / "h.jsonl") + " --synthesized " +
                q(dir / "ref" / "pseudolabels" / "synthesized_wmv.jsonl") + " --out " + q(dir / "c.jsonl")) == 0);
    CHECK(read_text(dir / "c.jsonl") == read_text(dir / "ref" / "pseudolabels" / "combined_wmv.jsonl"));

    REQUIRE(cli("train --data-dir " + data + " --pseudolabels " + q(dir / "c.jsonl") +
                " --end-model-lr 0.5 --end-model-epochs 300 --l2 1e-4 --hash-dim 262144 --seed 7 --out " +
                q(dir / "end.wsflm")) == 0);
    REQUIRE(cli("evaluate --data-dir " + data + " --model " + q(dir / "end.wsflm")) == 0);
    const auto eval = nlohmann::json::parse(cli.out);
    const auto report = nlohmann::json::parse(read_text(dir / "ref" / "report.json"));
    nlohmann::json want;
    for (const auto& row : report.at("end_models"))
      if (row.at("lf_set") == "combined")
        for (const auto& e : row.at("evals"))
          if (e.at("model") == "wmv") want = e.at("eval");
    CHECK(eval == want);
  }
}

#endif
