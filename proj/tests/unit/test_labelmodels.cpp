#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "test_support.hpp"
#include "wsforge/error.hpp"
#include "wsforge/labelmodels.hpp"

using namespace wsforge;

namespace {

// Every n x m matrix over {-1} u [0, k), as a flat index in base k + 1.
template <class F>
void for_each_matrix(std::size_t n, std::size_t m, int k, F&& f) {
  const std::size_t cells = n * m;
  std::size_t total = 1;
  for (std::size_t i = 0; i < cells; ++i) total *= static_cast<std::size_t>(k + 1);
  std::vector<Vote> votes(cells);
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t x = code;
    for (auto& v : votes) {
      v = static_cast<Vote>(x % static_cast<std::size_t>(k + 1)) - 1;
      x /= static_cast<std::size_t>(k + 1);
    }
    f(VoteMatrix(n, m, votes));
  }
}

VoteMatrix random_votes(std::size_t n, std::size_t m, int k, double abstain, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> cls(0, k - 1);
  VoteMatrix v(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < m; ++a) v(i, a) = u(rng) < abstain ? kAbstain : cls(rng);
  return v;
}

ClassSpace classes_k(int k, std::optional<std::vector<double>> prior = std::nullopt) {
  std::vector<std::string> names;
  for (int c = 0; c < k; ++c) names.push_back("c" + std::to_string(c));
  return ClassSpace(names, std::nullopt, prior);
}

void check_matches(const Posterior& post, const oracle::Rows& want) {
  REQUIRE(post.n() == want.hard.size());
  for (std::size_t i = 0; i < post.n(); ++i) {
    for (std::size_t c = 0; c < post.k; ++c) REQUIRE(post.row(i)[c] == want.probs[i][c]);
    REQUIRE(post.hard[i] == want.hard[i]);
    REQUIRE(post.covered[i] == want.covered[i]);
  }
}

DawidSkeneParams symmetric_ds(std::size_t m, int k, double abstain, double correct) {
  DawidSkeneParams p;
  p.prior.assign(static_cast<std::size_t>(k), 1.0 / k);
  const double wrong = (1.0 - abstain - correct) / (k - 1);
  for (std::size_t a = 0; a < m; ++a) {
    std::vector<std::vector<double>> lf;
    for (int c = 0; c < k; ++c) {
      std::vector<double> row(static_cast<std::size_t>(k + 1), wrong);
      row[0] = abstain;
      row[static_cast<std::size_t>(c + 1)] = correct;
      lf.push_back(row);
    }
    p.confusion.push_back(lf);
  }
  return p;
}

NoiseModel ds_model(DawidSkeneParams params) {
  NoiseModel model;
  model.kind = ModelKind::DawidSkene;
  model.k = params.prior.size();
  model.m = params.confusion.size();
  model.class_prior = params.prior;
  model.params = std::move(params);
  return model;
}

const std::vector<ModelKind> kAllKinds = {ModelKind::MajorityVote, ModelKind::WeightedMajorityVote,
                                          ModelKind::DawidSkene, ModelKind::FlyingSquid};

}  // namespace

TEST_SUITE("labelmodels") {
  TEST_CASE("majority vote on small rows") {
    const auto cs = classes_k(2);
    VoteMatrix v(3, 3, {0, 0, 1, -1, -1, -1, 0, 1, -1});
    auto model = fit(ModelKind::MajorityVote, v, cs);
    auto post = infer(model, v);
    CHECK(post.row(0)[0] == doctest::Approx(2.0 / 3.0));
    CHECK(post.row(0)[1] == doctest::Approx(1.0 / 3.0));
    CHECK(post.hard[0] == 0);
    CHECK(post.row(1)[0] == 0.5);
    CHECK(post.hard[1] == 0);
    CHECK_FALSE(post.covered[1]);
    CHECK(post.hard[2] == 0);  // tie, uniform prior: lowest index
  }

  TEST_CASE("ties go to the higher prior class") {
    const auto cs = classes_k(2, std::vector<double>{0.3, 0.7});
    VoteMatrix v(2, 2, {0, 1, -1, -1});
    auto post = infer(fit(ModelKind::MajorityVote, v, cs), v);
    CHECK(post.hard[0] == 1);
    CHECK(post.row(1)[0] == 0.3);
    CHECK(post.hard[1] == 1);
    const std::vector<double> p{0.4, 0.4 + 1e-13, 0.2}, prior{0.5, 0.2, 0.3};
    CHECK(argmax_with_ties(p, prior) == 0);
  }

  TEST_CASE("MV and WMV agree with the brute-force oracle on every small matrix") {
    std::mt19937_64 rng(11);
    for (int k : {2, 3}) {
      const std::size_t limit = k == 2 ? 8 : 6;
      for (std::optional<std::vector<double>> prior : {std::optional<std::vector<double>>{},
                                                       std::optional<std::vector<double>>(k == 2
                                                           ? std::vector<double>{0.3, 0.7}
                                                           : std::vector<double>{0.2, 0.5, 0.3})}) {
        const auto cs = classes_k(k, prior);
        const auto pr = cs.prior_or_uniform();
        for (std::size_t n = 1; n <= 4; ++n) {
          for (std::size_t m = 1; m <= 3; ++m) {
            if (n * m > limit) continue;
            DevSet dev{random_votes(6, m, k, 0.3, rng), {}};
            std::uniform_int_distribution<int> g(0, k - 1);
            for (int i = 0; i < 6; ++i) dev.gold.push_back(g(rng));
            const auto dev_w = oracle::dev_weights(dev.votes, dev.gold, k);
            for_each_matrix(n, m, k, [&](const VoteMatrix& v) {
              check_matches(infer(fit(ModelKind::MajorityVote, v, cs), v), oracle::vote_shares(v, k, {}, pr));

              auto wmv = fit(ModelKind::WeightedMajorityVote, v, cs, &dev);
              REQUIRE(std::get<WeightedParams>(wmv.params).weights == dev_w);
              check_matches(infer(wmv, v), oracle::vote_shares(v, k, dev_w, pr));

              const auto agree = oracle::agreement_weights(v, k, pr);
              if (std::all_of(agree.begin(), agree.end(), [](double w) { return w == 0.0; })) {
                REQUIRE_THROWS_AS(fit(ModelKind::WeightedMajorityVote, v, cs), Error);
              } else {
                auto fb = fit(ModelKind::WeightedMajorityVote, v, cs);
                REQUIRE(std::get<WeightedParams>(fb.params).weights == agree);
                REQUIRE(std::get<WeightedParams>(fb.params).weight_source == "mv_agreement");
                check_matches(infer(fb, v), oracle::vote_shares(v, k, agree, pr));
              }
            });
          }
        }
      }
    }
  }

  TEST_CASE("WMV dev weights") {
    const auto cs = classes_k(2);
    DevSet dev{VoteMatrix(4, 2, {1, 0, 1, 1, 0, -1, -1, -1}), {1, 1, 0, 0}};
    auto model = fit(ModelKind::WeightedMajorityVote, VoteMatrix(1, 2), cs, &dev);
    const auto& w = std::get<WeightedParams>(model.params).weights;
    CHECK(w[0] == doctest::Approx(0.5 + 1e-6));  // acc 1.0
    CHECK(w[1] == doctest::Approx(1e-6));        // acc 0.5
    CHECK(std::get<WeightedParams>(model.params).weight_source == "dev_accuracy");
    DevSet bad{VoteMatrix(1, 3), {0}};
    CHECK_THROWS_AS(fit(ModelKind::WeightedMajorityVote, VoteMatrix(1, 2), cs, &bad), Error);
    FitConfig strict;
    strict.wmv_fallback = false;
    CHECK_THROWS_AS(fit(ModelKind::WeightedMajorityVote, VoteMatrix(1, 2, {0, 1}), cs, nullptr, strict), Error);
  }

  TEST_CASE("DS inference equals enumeration on hand-set models") {
    DawidSkeneParams p;
    p.prior = {0.6, 0.4};
    p.confusion = {{{0.3, 0.6, 0.1}, {0.2, 0.2, 0.6}}, {{0.5, 0.4, 0.1}, {0.1, 0.3, 0.6}}};
    auto model = ds_model(p);
    VoteMatrix v(3, 2, {0, 1, -1, -1, 1, 1});
    auto post = infer(model, v);
    for (std::size_t i = 0; i < 3; ++i) {
      auto want = oracle::ds_posterior_row(v.row(i), p.prior, p.confusion);
      for (std::size_t c = 0; c < 2; ++c) CHECK(post.row(i)[c] == doctest::Approx(want[c]).epsilon(1e-9));
    }
    // point 0: 0.6*0.6*0.1 vs 0.4*0.2*0.6
    CHECK(post.row(0)[0] == doctest::Approx(0.036 / (0.036 + 0.048)).epsilon(1e-12));

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.05, 1.0);
    for (int rep = 0; rep < 20; ++rep) {
      const int k = 3;
      DawidSkeneParams q;
      for (int c = 0; c < k; ++c) q.prior.push_back(u(rng));
      double z = std::accumulate(q.prior.begin(), q.prior.end(), 0.0);
      for (double& x : q.prior) x /= z;
      for (int a = 0; a < 3; ++a) {
        std::vector<std::vector<double>> lf;
        for (int c = 0; c < k; ++c) {
          std::vector<double> row(4);
          for (double& x : row) x = u(rng);
          z = std::accumulate(row.begin(), row.end(), 0.0);
          for (double& x : row) x /= z;
          lf.push_back(row);
        }
        q.confusion.push_back(lf);
      }
      auto m = ds_model(q);
      for_each_matrix(1, 3, k, [&](const VoteMatrix& row) {
        auto got = infer(m, row);
        auto want = oracle::ds_posterior_row(row.row(0), q.prior, q.confusion);
        for (int c = 0; c < k; ++c) REQUIRE(got.row(0)[static_cast<std::size_t>(c)] == doctest::Approx(want[static_cast<std::size_t>(c)]).epsilon(1e-9));
      });
    }
  }

  TEST_CASE("DS with symmetric confusion reduces to majority vote") {
    for (int k : {2, 3}) {
      auto model = ds_model(symmetric_ds(4, k, 0.3, 0.5));
      const auto cs = classes_k(k);
      const std::size_t n = k == 2 ? 1 : 1;
      for_each_matrix(n, 4, k, [&](const VoteMatrix& v) {
        REQUIRE(infer(model, v).hard == infer(fit(ModelKind::MajorityVote, v, cs), v).hard);
      });
    }
  }

  TEST_CASE("DS EM objective is monotone and recovers planted confusions") {
    const std::vector<double> row0 = {0.2, 0.64, 0.16}, row1 = {0.2, 0.16, 0.64};
    std::vector<std::vector<std::vector<double>>> truth(5, std::vector<std::vector<double>>{row0, row1});
    auto sample = oracle::sample_dawid_skene(2000, {0.5, 0.5}, truth, 99);
    auto model = fit(ModelKind::DawidSkene, sample.votes, classes_k(2));
    const auto& trace = model.diagnostics.objective_trace;
    REQUIRE(!trace.empty());
    CHECK(trace.size() == model.diagnostics.iterations);
    for (std::size_t t = 1; t < trace.size(); ++t) CHECK(trace[t] >= trace[t - 1] - 1e-9);
    CHECK(model.diagnostics.iterations <= 100);
    const auto& p = std::get<DawidSkeneParams>(model.params);
    double worst = 0.0;
    for (std::size_t a = 0; a < 5; ++a)
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t e = 0; e < 3; ++e) worst = std::max(worst, std::abs(p.confusion[a][c][e] - truth[a][c][e]));
    CHECK(worst <= 0.05);
    for (const auto& lf : p.confusion)
      for (const auto& r : lf) CHECK(std::accumulate(r.begin(), r.end(), 0.0) == doctest::Approx(1.0));
  }

  TEST_CASE("DS respects the iteration cap and rejects degenerate input") {
    std::mt19937_64 rng(3);
    auto v = random_votes(50, 4, 2, 0.3, rng);
    FitConfig one;
    one.ds_max_iters = 1;
    CHECK(fit(ModelKind::DawidSkene, v, classes_k(2), nullptr, one).diagnostics.iterations == 1);
    one.ds_max_iters = 0;
    CHECK_THROWS_AS(fit(ModelKind::DawidSkene, v, classes_k(2), nullptr, one), ConfigError);
    CHECK_THROWS_AS(fit(ModelKind::DawidSkene, VoteMatrix(4, 2), classes_k(2)), Error);
    CHECK_THROWS_AS(fit(ModelKind::DawidSkene, VoteMatrix(0, 2), classes_k(2)), Error);
  }

  TEST_CASE("triplet closed form") {
    SecondMoments mom;
    mom.m = 3;
    mom.values = {1.0, 0.48, 0.48, 0.48, 1.0, 0.36, 0.48, 0.36, 1.0};
    auto est = triplet_accuracy(mom, 0, 1, 2);
    REQUIRE(est);
    CHECK(std::abs(est->signed_scale[0] - 0.8) <= 1e-12);
    CHECK(std::abs(est->probability[0] - 0.9) <= 1e-12);
    CHECK(std::abs(est->signed_scale[1] - 0.6) <= 1e-12);

    mom.values = {1, 1, 1, 1, 1, 1, 1, 1, 1};
    est = triplet_accuracy(mom, 0, 1, 2);
    REQUIRE(est);
    CHECK(est->probability[0] == 1.0 - 1e-6);

    mom.values = {1.0, 0.48, 0.48, 0.48, 1.0, 1e-9, 0.48, 1e-9, 1.0};
    CHECK_FALSE(triplet_accuracy(mom, 0, 1, 2));
    mom.values[5] = mom.values[7] = 1e-3;
    CHECK_FALSE(triplet_accuracy(mom, 0, 1, 2));
  }

  TEST_CASE("second moments count co-voting points only") {
    VoteMatrix v(4, 3, {1, 1, -1, 1, 0, 0, 0, 0, -1, -1, 1, 1});
    auto mom = second_moments(v, 1);
    CHECK(mom(0, 1) == doctest::Approx(1.0 / 3.0));  // +1, -1, +1
    CHECK(mom.counts[0 * 3 + 1] == 3);
    CHECK(mom(1, 2) == doctest::Approx(1.0));        // rows 1 and 3, both agree
    CHECK(mom.counts[1 * 3 + 2] == 2);
    CHECK(mom(0, 0) == 1.0);
  }

  TEST_CASE("FlyingSquid recovers accuracies of independent LFs") {
    const std::vector<double> acc = {0.9, 0.8, 0.7};
    auto s = oracle::sample_binary_accuracies(10000, acc, 17);
    auto model = fit(ModelKind::FlyingSquid, s.votes, classes_k(2));
    const auto& p = std::get<FlyingSquidParams>(model.params);
    REQUIRE(p.accuracies.size() == 1);
    for (std::size_t a = 0; a < 3; ++a) CHECK(std::abs(p.accuracies[0][a] - acc[a]) <= 0.05);
    CHECK(p.lfs_without_triples[0] == 0);
  }

  TEST_CASE("FlyingSquid falls back to 0.5 without usable triples") {
    VoteMatrix v(3, 3, {1, -1, -1, -1, 0, -1, -1, -1, 1});
    auto model = fit(ModelKind::FlyingSquid, v, classes_k(2));
    const auto& p = std::get<FlyingSquidParams>(model.params);
    CHECK(p.lfs_without_triples[0] == 3);
    CHECK(p.accuracies[0] == std::vector<double>{0.5, 0.5, 0.5});
    CHECK_THROWS_AS(fit(ModelKind::FlyingSquid, VoteMatrix(3, 2, {0, 1, 1, 0, 0, 0}), classes_k(2)), Error);
  }

  TEST_CASE("FlyingSquid multiclass uses one task per class") {
    std::mt19937_64 rng(8);
    auto v = random_votes(300, 5, 3, 0.2, rng);
    auto model = fit(ModelKind::FlyingSquid, v, classes_k(3));
    CHECK(std::get<FlyingSquidParams>(model.params).accuracies.size() == 3);
    auto post = infer(model, v);
    for (std::size_t i = 0; i < post.n(); ++i) {
      auto r = post.row(i);
      CHECK(std::accumulate(r.begin(), r.end(), 0.0) == doctest::Approx(1.0));
    }
  }

  TEST_CASE("posterior rows are distributions with correct coverage flags") {
    std::mt19937_64 rng(21);
    for (int rep = 0; rep < 30; ++rep) {
      const int k = 2 + rep % 3;
      auto v = random_votes(40, 4, k, 0.5, rng);
      if (v.all_abstain()) continue;
      for (auto kind : kAllKinds) {
        auto post = infer(fit(kind, v, classes_k(k)), v);
        for (std::size_t i = 0; i < post.n(); ++i) {
          auto r = post.row(i);
          double sum = 0.0;
          for (double p : r) {
            REQUIRE(p >= 0.0);
            REQUIRE(p <= 1.0);
            sum += p;
          }
          REQUIRE(sum == doctest::Approx(1.0).epsilon(1e-12));
          REQUIRE(post.covered[i] == v.row_covered(i));
          REQUIRE(post.hard[i] >= 0);
          REQUIRE(post.hard[i] < k);
        }
      }
    }
  }

  TEST_CASE("fit and infer are equivariant under row and LF permutations") {
    std::mt19937_64 rng(4);
    for (int rep = 0; rep < 10; ++rep) {
      const int k = 2 + rep % 2;
      auto v = random_votes(60, 5, k, 0.4, rng);
      std::vector<std::size_t> rows(v.n()), cols(v.m());
      std::iota(rows.begin(), rows.end(), 0);
      std::iota(cols.begin(), cols.end(), 0);
      std::shuffle(rows.begin(), rows.end(), rng);
      std::shuffle(cols.begin(), cols.end(), rng);
      for (auto kind : kAllKinds) {
        const auto base = infer(fit(kind, v, classes_k(k)), v);
        auto by_rows = v.select_rows(rows);
        auto post_rows = infer(fit(kind, by_rows, classes_k(k)), by_rows);
        auto by_cols = v.select_columns(cols);
        auto post_cols = infer(fit(kind, by_cols, classes_k(k)), by_cols);
        for (std::size_t i = 0; i < rows.size(); ++i) {
          for (std::size_t c = 0; c < static_cast<std::size_t>(k); ++c) {
            REQUIRE(post_rows.row(i)[c] == doctest::Approx(base.row(rows[i])[c]).epsilon(1e-7));
            REQUIRE(post_cols.row(i)[c] == doctest::Approx(base.row(i)[c]).epsilon(1e-7));
          }
        }
      }
    }
  }

  TEST_CASE("infer rejects a column count the model was not fit on") {
    std::mt19937_64 rng(2);
    auto v = random_votes(20, 4, 2, 0.2, rng);
    for (auto kind : {ModelKind::WeightedMajorityVote, ModelKind::DawidSkene, ModelKind::FlyingSquid}) {
      auto model = fit(kind, v, classes_k(2));
      CHECK_THROWS_AS(infer(model, VoteMatrix(3, 3)), Error);
    }
    CHECK_NOTHROW(infer(fit(ModelKind::MajorityVote, v, classes_k(2)), VoteMatrix(3, 7)));
  }

  TEST_CASE("model JSON round trip preserves inference") {
    std::mt19937_64 rng(6);
    auto v = random_votes(80, 4, 3, 0.3, rng);
    for (auto kind : kAllKinds) {
      auto model = fit(kind, v, classes_k(3));
      auto back = model_from_json(nlohmann::json::parse(model_to_json(model).dump()));
      CHECK(back.kind == kind);
      CHECK(back.diagnostics.objective_trace == model.diagnostics.objective_trace);
      CHECK(infer(back, v).probs == infer(model, v).probs);
    }
    CHECK(parse_model_kind("ds") == ModelKind::DawidSkene);
    CHECK_THROWS_AS(parse_model_kind("snorkel"), ConfigError);
  }
}
