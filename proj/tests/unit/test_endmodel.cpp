#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "test_support.hpp"
#include "wsforge/endmodel.hpp"
#include "wsforge/error.hpp"

using namespace wsforge;

namespace {

const ClassSpace kBinary({"neg", "pos"}, 1);

// Random sparse rows over a small hashed space.
TrainingSet random_set(std::size_t n, std::size_t k, std::size_t dim, bool soft, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  TrainingSet d;
  d.k = k;
  for (std::size_t i = 0; i < n; ++i) {
    FeatureVector x;
    for (std::uint32_t j = 0; j < dim; ++j) {
      if (u(rng) < 0.4) {
        x.indices.push_back(j);
        x.values.push_back(u(rng) * 2.0);
      }
    }
    d.x.push_back(x);
    d.y.push_back(static_cast<ClassIndex>(rng() % k));
    if (soft) {
      double z = 0.0;
      std::vector<double> row(k);
      for (double& p : row) z += (p = u(rng) + 0.05);
      for (double p : row) d.soft.push_back(p / z);
    }
  }
  return d;
}

std::vector<std::string> corpus_texts(std::size_t n, std::mt19937_64& rng, std::vector<ClassIndex>& labels) {
  const std::vector<std::string> spam{"free", "prize", "win", "call", "cash", "claim", "txt"};
  const std::vector<std::string> ham{"see", "later", "thanks", "home", "dinner", "sorry", "ok"};
  const std::vector<std::string> both{"now", "today", "the", "you", "a"};
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    const bool pos = rng() % 3 == 0;
    const auto& pool = pos ? spam : ham;
    std::string t;
    for (int w = 0; w < 6; ++w) {
      t += (rng() % 3 == 0 ? both[rng() % both.size()] : pool[rng() % pool.size()]) + " ";
      if (rng() % 10 == 0) t += (pos ? ham : spam)[rng() % 7] + " ";  // label noise in the features
    }
    out.push_back(t);
    labels.push_back(pos ? 1 : 0);
  }
  return out;
}

FeatureConfig unit_features(std::size_t dim = 1 << 12) {
  FeatureConfig f;
  f.dim = dim;
  f.l2_normalize = true;
  return f;
}

}  // namespace

TEST_SUITE("endmodel") {
  TEST_CASE("FNV-1a reference values") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
  }

  TEST_CASE("tokenizer patterns") {
    FeatureConfig f;
    CHECK(tokenize("Hello, WORLD 42!", f) == std::vector<std::string>{"hello", "world", "42"});
    f.token_pattern = TokenPattern::Whitespace;
    CHECK(tokenize("Hello, WORLD", f) == std::vector<std::string>{"hello,", "world"});
    f.lowercase = false;
    CHECK(tokenize("Hello", f) == std::vector<std::string>{"Hello"});
  }

  TEST_CASE("featurize counts hashed tokens") {
    FeatureConfig f;
    auto x = featurize("free free cash", f);
    REQUIRE(x.nnz() == 2);
    auto vals = x.values;
    std::sort(vals.begin(), vals.end());
    CHECK(vals == std::vector<double>{1.0, 2.0});
    CHECK(std::is_sorted(x.indices.begin(), x.indices.end()));
    CHECK(featurize("", f).nnz() == 0);
    CHECK(featurize("free free cash", f).indices == x.indices);
    CHECK(x.indices[0] < f.dim);

    f.ngram_max = 2;
    CHECK(featurize("free free cash", f).nnz() == 4);  // free, cash, "free free", "free cash"
    f.l2_normalize = true;
    auto u = featurize("free free cash", f);
    double sq = 0.0;
    for (double v : u.values) sq += v * v;
    CHECK(sq == doctest::Approx(1.0));

    FeatureConfig bad;
    bad.dim = 1000;
    CHECK_THROWS_AS(featurize("x", bad), Error);
    bad.dim = 1024;
    bad.ngram_max = 3;
    CHECK_THROWS_AS(featurize("x", bad), Error);
  }

  TEST_CASE("analytic gradient matches central differences") {
    std::mt19937_64 rng(77);
    std::normal_distribution<double> g(0.0, 0.5);
    for (int inst = 0; inst < 12; ++inst) {
      const std::size_t k = 2 + static_cast<std::size_t>(inst % 3), dim = 8;
      const bool soft = inst % 2 == 1;
      auto data = random_set(8, k, dim, soft, rng);
      LinearParams p{k, dim, std::vector<double>(k * dim), std::vector<double>(k)};
      for (double& w : p.weights) w = g(rng);
      for (double& b : p.bias) b = g(rng);
      const double l2 = 0.01 * inst;
      LinearParams grad;
      loss_and_gradient(p, data, l2, soft, &grad);
      auto check = [&](double& slot, double analytic) {
        const double h = 1e-6, saved = slot;
        slot = saved + h;
        const double up = loss_and_gradient(p, data, l2, soft);
        slot = saved - h;
        const double down = loss_and_gradient(p, data, l2, soft);
        slot = saved;
        const double numeric = (up - down) / (2 * h);
        const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
        REQUIRE(std::abs(analytic - numeric) / scale < 1e-4);
      };
      for (std::size_t i = 0; i < p.weights.size(); ++i) check(p.weights[i], grad.weights[i]);
      for (std::size_t c = 0; c < k; ++c) check(p.bias[c], grad.bias[c]);
    }
  }

  TEST_CASE("loss is non-increasing under the default optimizer settings") {
    std::mt19937_64 rng(5);
    std::vector<ClassIndex> labels;
    auto texts = corpus_texts(300, rng, labels);
    for (bool soft : {false, true}) {
      std::vector<double> posts;
      for (ClassIndex y : labels) {
        posts.push_back(y == 0 ? 0.8 : 0.2);
        posts.push_back(y == 0 ? 0.2 : 0.8);
      }
      auto data = make_training_set(texts, labels, 2, unit_features(), soft ? std::span<const double>(posts)
                                                                            : std::span<const double>());
      TrainConfig cfg;
      cfg.soft_labels = soft;
      auto model = train(data, unit_features(), cfg);
      const auto& trace = model.diagnostics.loss_trace;
      CHECK(trace.size() == 500);
      for (std::size_t t = 1; t < trace.size(); ++t) REQUIRE(trace[t] <= trace[t - 1] + 1e-12);
      CHECK(model.diagnostics.final_loss <= trace.back());
    }
  }

  TEST_CASE("separable toy set is fit exactly") {
    const std::vector<std::string> texts{"good great", "great fine", "bad awful", "awful poor"};
    const std::vector<ClassIndex> y{1, 1, 0, 0};
    FeatureConfig f;
    f.dim = 1 << 10;
    auto data = make_training_set(texts, y, 2, f);
    TrainConfig cfg{.lr = 0.5, .l2 = 0.0, .epochs = 200};
    auto model = train(data, f, cfg);
    for (std::size_t i = 0; i < texts.size(); ++i) CHECK(model.predict(texts[i]) == y[i]);
  }

  TEST_CASE("huge l2 leaves the class prior") {
    const std::vector<std::string> texts{"a b", "c d", "e f", "g h", "i j"};
    const std::vector<ClassIndex> y{1, 1, 1, 0, 0};
    auto data = make_training_set(texts, y, 2, unit_features());
    TrainConfig cfg{.lr = 0.1, .l2 = 1e6, .epochs = 300};
    auto model = train(data, unit_features(), cfg);
    for (double w : model.params.weights) CHECK(std::abs(w) < 1e-6);
    for (const auto& t : texts) CHECK(model.predict(t) == 1);
  }

  TEST_CASE("shifting every class row leaves predictions unchanged") {
    std::mt19937_64 rng(3);
    std::vector<ClassIndex> labels;
    auto texts = corpus_texts(60, rng, labels);
    auto data = make_training_set(texts, labels, 2, unit_features(64));
    auto model = train(data, unit_features(64), TrainConfig{.epochs = 50});
    auto shifted = model;
    for (std::size_t c = 0; c < 2; ++c) {
      for (std::size_t j = 0; j < 64; ++j) shifted.params.w(c, j) += 0.37 * static_cast<double>(j % 5);
      shifted.params.bias[c] += 1.5;
    }
    for (const auto& x : data.x) CHECK(shifted.predict(x) == model.predict(x));
  }

  TEST_CASE("thread count does not change the result") {
    std::mt19937_64 rng(12);
    std::vector<ClassIndex> labels;
    auto texts = corpus_texts(1000, rng, labels);
    auto data = make_training_set(texts, labels, 2, unit_features());
    TrainConfig one{.epochs = 40, .threads = 1};
    TrainConfig four{.epochs = 40, .threads = 4};
    auto a = train(data, unit_features(), one);
    auto b = train(data, unit_features(), four);
    CHECK(a.params.weights == b.params.weights);
    CHECK(a.params.bias == b.params.bias);
    CHECK(a.diagnostics.loss_trace == b.diagnostics.loss_trace);
    auto c = train(data, unit_features(), one);
    CHECK(c.diagnostics.loss_trace == a.diagnostics.loss_trace);
  }

  TEST_CASE("training rejects bad input") {
    TrainingSet empty{2, {}, {}, {}};
    CHECK_THROWS_AS(train(empty, unit_features(), {}), Error);
    FeatureConfig f;
    f.dim = 16;
    auto data = make_training_set(std::vector<std::string>{"a"}, std::vector<ClassIndex>{3}, 2, f);
    CHECK_THROWS_AS(train(data, f, {}), Error);
    auto ok = make_training_set(std::vector<std::string>{"a"}, std::vector<ClassIndex>{1}, 2, f);
    CHECK_THROWS_AS(train(ok, f, TrainConfig{.soft_labels = true}), Error);
  }

  TEST_CASE("F1 conventions") {
    auto r = evaluate_predictions(std::vector<ClassIndex>{1, 1, 0, 0}, std::vector<ClassIndex>{1, 0, 1, 0}, kBinary);
    CHECK(r.accuracy == 0.5);
    CHECK(r.per_class[1].precision == 0.5);
    CHECK(r.per_class[1].recall == 0.5);
    CHECK(*r.f1_binary == doctest::Approx(0.5));
    CHECK(r.n_test == 4);

    auto none = evaluate_predictions(std::vector<ClassIndex>{0, 0, 0}, std::vector<ClassIndex>{1, 0, 1}, kBinary);
    CHECK(*none.f1_binary == 0.0);
    CHECK(none.f1_macro == doctest::Approx(0.25));  // neg: P 1/3, R 1 -> 0.5; pos 0

    auto perfect = evaluate_predictions(std::vector<ClassIndex>{1, 0}, std::vector<ClassIndex>{1, 0}, kBinary);
    CHECK(perfect.accuracy == 1.0);
    CHECK(*perfect.f1_binary == 1.0);

    ClassSpace plain({"a", "b", "c"});
    auto multi = evaluate_predictions(std::vector<ClassIndex>{0, 1, 2}, std::vector<ClassIndex>{0, 1, 1}, plain);
    CHECK_FALSE(multi.f1_binary);
    CHECK(eval_from_json(nlohmann::json::parse(eval_to_json(multi).dump())) == multi);
  }

  TEST_CASE("evaluate needs gold labels") {
    FeatureConfig f;
    f.dim = 16;
    auto data = make_training_set(std::vector<std::string>{"a", "b"}, std::vector<ClassIndex>{1, 0}, 2, f);
    auto model = train(data, f, TrainConfig{.epochs = 5});
    std::vector<Document> docs{{"x", "a", 1}, {"y", "b", std::nullopt}};
    CHECK_THROWS_AS(evaluate(model, docs, kBinary), Error);
    docs[1].gold = 0;
    CHECK(evaluate(model, docs, kBinary).n_test == 2);
  }

  TEST_CASE("model file round trip") {
    wsforge::testing::TempDir tmp;
    std::mt19937_64 rng(8);
    std::vector<ClassIndex> labels;
    auto texts = corpus_texts(80, rng, labels);
    auto data = make_training_set(texts, labels, 2, unit_features());
    auto model = train(data, unit_features(), TrainConfig{.epochs = 30, .seed = 42});
    save_model(tmp / "m.wsflm", model);
    auto back = load_model(tmp / "m.wsflm");
    CHECK(back.params.weights == model.params.weights);
    CHECK(back.params.bias == model.params.bias);
    CHECK(back.diagnostics.seed == 42);
    CHECK(back.diagnostics.final_loss == model.diagnostics.final_loss);
    for (const auto& t : texts) CHECK(back.predict(t) == model.predict(t));
    wsforge::testing::write_text(tmp / "bad.wsflm", "NOTAMODEL\n");
    CHECK_THROWS_AS(load_model(tmp / "bad.wsflm"), Error);
  }
}
