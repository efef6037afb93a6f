#include "wsforge/labelmodels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "wsforge/error.hpp"

namespace wsforge {

using nlohmann::json;

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::MajorityVote: return "mv";
    case ModelKind::WeightedMajorityVote: return "wmv";
    case ModelKind::DawidSkene: return "ds";
    case ModelKind::FlyingSquid: return "fs";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view text) {
  if (text == "mv") return ModelKind::MajorityVote;
  if (text == "wmv") return ModelKind::WeightedMajorityVote;
  if (text == "ds") return ModelKind::DawidSkene;
  if (text == "fs") return ModelKind::FlyingSquid;
  throw ConfigError("unknown label model '" + std::string(text) + "' (expected mv, wmv, ds or fs)");
}

ClassIndex argmax_with_ties(std::span<const double> probs, std::span<const double> prior) {
  constexpr double kTieTolerance = 1e-12;
  const double best = *std::max_element(probs.begin(), probs.end());
  ClassIndex chosen = -1;
  for (std::size_t c = 0; c < probs.size(); ++c) {
    if (best - probs[c] > kTieTolerance) continue;
    if (chosen < 0 || prior[c] > prior[static_cast<std::size_t>(chosen)]) chosen = static_cast<ClassIndex>(c);
  }
  return chosen;
}

namespace {

double log_sum_exp(std::span<const double> xs) {
  const double mx = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - mx);
  return mx + std::log(s);
}

void normalize(std::span<double> row) {
  double total = std::accumulate(row.begin(), row.end(), 0.0);
  for (double& p : row) p /= total;
}

// MV/WMV posterior for one row: weighted vote shares, prior when no votes.
void weighted_vote_row(std::span<const Vote> votes, std::span<const double> weights, std::span<const double> prior,
                       std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  double total = 0.0;
  for (std::size_t a = 0; a < votes.size(); ++a) {
    if (votes[a] == kAbstain) continue;
    const double w = weights.empty() ? 1.0 : weights[a];
    out[static_cast<std::size_t>(votes[a])] += w;
    total += w;
  }
  if (total > 0.0) {
    for (double& p : out) p /= total;
  } else {
    std::copy(prior.begin(), prior.end(), out.begin());
  }
}

Posterior empty_posterior(std::size_t n, std::size_t k) {
  Posterior post;
  post.k = k;
  post.probs.assign(n * k, 0.0);
  post.hard.assign(n, 0);
  post.covered.assign(n, false);
  return post;
}

void finish_posterior(Posterior& post, const VoteMatrix& votes, std::span<const double> prior) {
  for (std::size_t i = 0; i < post.n(); ++i) {
    std::span<double> row(post.probs.data() + i * post.k, post.k);
    normalize(row);
    post.hard[i] = argmax_with_ties(row, prior);
    post.covered[i] = votes.row_covered(i);
  }
}

Posterior majority_posterior(const VoteMatrix& votes, std::size_t k, std::span<const double> weights,
                             std::span<const double> prior) {
  Posterior post = empty_posterior(votes.n(), k);
  for (std::size_t i = 0; i < votes.n(); ++i)
    weighted_vote_row(votes.row(i), weights, prior, std::span<double>(post.probs.data() + i * k, k));
  for (std::size_t i = 0; i < votes.n(); ++i) {
    post.hard[i] = argmax_with_ties(post.row(i), prior);
    post.covered[i] = votes.row_covered(i);
  }
  return post;
}

// ---- weighted majority vote ------------------------------------------------

WeightedParams fit_weights(const VoteMatrix& votes, const ClassSpace& classes, const DevSet* dev,
                           const FitConfig& config) {
  const std::size_t m = votes.m();
  const double k = static_cast<double>(classes.k());
  WeightedParams params;
  params.weights.assign(m, 0.0);
  if (dev) {
    if (dev->votes.m() != m) throw Error("WMV: dev matrix has " + std::to_string(dev->votes.m()) + " LFs, expected " +
                                         std::to_string(m));
    if (dev->gold.size() != dev->votes.n()) throw Error("WMV: dev gold length mismatch");
    params.weight_source = "dev_accuracy";
    for (std::size_t a = 0; a < m; ++a) {
      std::size_t voted = 0;
      std::size_t correct = 0;
      for (std::size_t i = 0; i < dev->votes.n(); ++i) {
        Vote v = dev->votes(i, a);
        if (v == kAbstain) continue;
        ++voted;
        if (v == dev->gold[i]) ++correct;
      }
      const double acc = voted ? static_cast<double>(correct) / static_cast<double>(voted) : 0.0;
      params.weights[a] = std::max(acc - 1.0 / k, 0.0) + 1e-6;
    }
    return params;
  }
  if (!config.wmv_fallback) throw Error("WMV: no dev set and MV-agreement fallback disabled");
  params.weight_source = "mv_agreement";
  const auto prior = classes.prior_or_uniform();
  Posterior mv = majority_posterior(votes, classes.k(), {}, prior);
  for (std::size_t a = 0; a < m; ++a) {
    std::size_t voted = 0;
    std::size_t agree = 0;
    for (std::size_t i = 0; i < votes.n(); ++i) {
      Vote v = votes(i, a);
      if (v == kAbstain) continue;
      ++voted;
      if (v == mv.hard[i]) ++agree;
    }
    params.weights[a] = voted ? static_cast<double>(agree) / static_cast<double>(voted) : 0.0;
  }
  if (std::all_of(params.weights.begin(), params.weights.end(), [](double w) { return w == 0.0; }))
    throw Error("WMV: every LF weight is zero (no LF ever votes)");
  return params;
}

// ---- Dawid-Skene -----------------------------------------------------------

struct EmResult {
  DawidSkeneParams params;
  FitDiagnostics diagnostics;
  double objective = -std::numeric_limits<double>::infinity();
};

class DawidSkeneFitter {
 public:
  DawidSkeneFitter(const VoteMatrix& votes, std::size_t k, const FitConfig& config)
      : votes_(votes), n_(votes.n()), m_(votes.m()), k_(k), config_(config) {}

  EmResult run(std::vector<double> responsibilities) const {
    EmResult result;
    auto& params = result.params;
    double previous = -std::numeric_limits<double>::infinity();
    for (int iter = 1; iter <= config_.ds_max_iters; ++iter) {
      maximize(responsibilities, params);
      double ll = 0.0;
      expect(params, responsibilities, ll);
      const double objective = ll + log_pseudo_prior(params);
      result.diagnostics.objective_trace.push_back(objective);
      result.diagnostics.iterations = static_cast<std::size_t>(iter);
      result.diagnostics.log_likelihood = ll;
      result.objective = objective;
      if (objective < previous - 1e-9)
        throw Error("Dawid-Skene: EM objective decreased at iteration " + std::to_string(iter));
      if (iter > 1 && objective - previous < config_.ds_tol) break;
      previous = objective;
    }
    return result;
  }

  // Smoothed MV responsibilities.
  std::vector<double> majority_start(std::span<const double> prior) const {
    std::vector<double> resp(n_ * k_);
    for (std::size_t i = 0; i < n_; ++i) {
      std::span<double> row(resp.data() + i * k_, k_);
      weighted_vote_row(votes_.row(i), {}, prior, row);
      for (double& p : row) p += config_.ds_init_smoothing;
      normalize(row);
    }
    return resp;
  }

  std::vector<double> random_start(std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    std::vector<double> resp(n_ * k_);
    for (std::size_t i = 0; i < n_; ++i) {
      std::span<double> row(resp.data() + i * k_, k_);
      for (double& p : row) p = static_cast<double>((rng() >> 11) + 1) * 0x1.0p-53;
      normalize(row);
    }
    return resp;
  }

 private:
  void maximize(const std::vector<double>& resp, DawidSkeneParams& params) const {
    const double alpha = config_.ds_smoothing;
    const std::size_t emissions = k_ + 1;
    params.prior.assign(k_, alpha);
    params.confusion.assign(m_, std::vector<std::vector<double>>(k_, std::vector<double>(emissions, alpha)));
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t c = 0; c < k_; ++c) {
        const double t = resp[i * k_ + c];
        params.prior[c] += t;
        for (std::size_t a = 0; a < m_; ++a)
          params.confusion[a][c][static_cast<std::size_t>(votes_(i, a) + 1)] += t;
      }
    }
    normalize(params.prior);
    for (auto& lf : params.confusion)
      for (auto& row : lf) normalize(row);
  }

  void expect(const DawidSkeneParams& params, std::vector<double>& resp, double& ll) const {
    std::vector<double> logp(k_);
    for (std::size_t c = 0; c < k_; ++c) logp[c] = std::log(params.prior[c]);
    std::vector<double> row(k_);
    ll = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t c = 0; c < k_; ++c) {
        double s = logp[c];
        for (std::size_t a = 0; a < m_; ++a) s += std::log(params.confusion[a][c][static_cast<std::size_t>(votes_(i, a) + 1)]);
        row[c] = s;
      }
      const double lse = log_sum_exp(row);
      ll += lse;
      for (std::size_t c = 0; c < k_; ++c) resp[i * k_ + c] = std::exp(row[c] - lse);
    }
  }

  // Log density of the symmetric Dirichlet(1 + alpha) pseudocount prior, up
  // to a constant; EM with smoothed M-steps ascends ll + this term.
  double log_pseudo_prior(const DawidSkeneParams& params) const {
    const double alpha = config_.ds_smoothing;
    double s = 0.0;
    for (double p : params.prior) s += alpha * std::log(p);
    for (const auto& lf : params.confusion)
      for (const auto& row : lf)
        for (double p : row) s += alpha * std::log(p);
    return s;
  }

  const VoteMatrix& votes_;
  std::size_t n_;
  std::size_t m_;
  std::size_t k_;
  const FitConfig& config_;
};

NoiseModel fit_dawid_skene(const VoteMatrix& votes, const ClassSpace& classes, const FitConfig& config) {
  if (votes.n() == 0 || votes.m() == 0) throw Error("Dawid-Skene: vote matrix is empty");
  if (votes.all_abstain()) throw Error("Dawid-Skene: every vote is an abstain");
  if (config.ds_max_iters < 1) throw ConfigError("Dawid-Skene: max iterations must be positive");
  const std::size_t k = classes.k();
  DawidSkeneFitter fitter(votes, k, config);
  const auto prior = classes.prior_or_uniform();

  std::optional<EmResult> best;
  for (int r = 0; r < std::max(1, config.ds_restarts); ++r) {
    auto start = r == 0 ? fitter.majority_start(prior) : fitter.random_start(config.seed + static_cast<std::uint64_t>(r));
    EmResult result = fitter.run(std::move(start));
    if (!best || result.objective > best->objective) best = std::move(result);
  }

  NoiseModel model;
  model.kind = ModelKind::DawidSkene;
  model.k = k;
  model.m = votes.m();
  model.class_prior = best->params.prior;
  model.params = std::move(best->params);
  model.diagnostics = std::move(best->diagnostics);
  return model;
}

Posterior infer_dawid_skene(const NoiseModel& model, const VoteMatrix& votes) {
  const auto& params = std::get<DawidSkeneParams>(model.params);
  const std::size_t k = model.k;
  Posterior post = empty_posterior(votes.n(), k);
  std::vector<double> row(k);
  for (std::size_t i = 0; i < votes.n(); ++i) {
    for (std::size_t c = 0; c < k; ++c) {
      double s = std::log(params.prior[c]);
      for (std::size_t a = 0; a < votes.m(); ++a)
        s += std::log(params.confusion[a][c][static_cast<std::size_t>(votes(i, a) + 1)]);
      row[c] = s;
    }
    const double lse = log_sum_exp(row);
    for (std::size_t c = 0; c < k; ++c) post.probs[i * k + c] = std::exp(row[c] - lse);
  }
  finish_posterior(post, votes, model.class_prior);
  return post;
}

// ---- FlyingSquid triplets ----------------------------------------------------

constexpr double kMaxAccuracy = 1.0 - 1e-6;

double to_probability(double signed_accuracy) {
  return std::clamp((1.0 + signed_accuracy) / 2.0, 0.5, kMaxAccuracy);
}

double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t mid = xs.size() / 2;
  return xs.size() % 2 ? xs[mid] : 0.5 * (xs[mid - 1] + xs[mid]);
}

std::vector<double> triplet_accuracies(const SecondMoments& moments, double floor, std::size_t& missing) {
  const std::size_t m = moments.m;
  std::vector<double> acc(m, 0.5);
  missing = 0;
  for (std::size_t a = 0; a < m; ++a) {
    std::vector<double> estimates;
    for (std::size_t b = 0; b < m; ++b) {
      if (b == a) continue;
      for (std::size_t c = b + 1; c < m; ++c) {
        if (c == a) continue;
        if (auto est = triplet_accuracy(moments, a, b, c, floor)) estimates.push_back(est->probability[0]);
      }
    }
    if (estimates.empty()) {
      ++missing;
    } else {
      acc[a] = median(std::move(estimates));
    }
  }
  return acc;
}

// log P(lambda, Y = +1) and log P(lambda, Y = -1) for one binary task.
std::pair<double, double> binary_log_joint(std::span<const Vote> votes, ClassIndex positive,
                                           std::span<const double> acc, double balance_pos) {
  balance_pos = std::clamp(balance_pos, 1e-12, 1.0 - 1e-12);
  double pos = std::log(balance_pos);
  double neg = std::log(1.0 - balance_pos);
  for (std::size_t a = 0; a < votes.size(); ++a) {
    if (votes[a] == kAbstain) continue;
    const bool says_pos = votes[a] == positive;
    pos += std::log(says_pos ? acc[a] : 1.0 - acc[a]);
    neg += std::log(says_pos ? 1.0 - acc[a] : acc[a]);
  }
  return {pos, neg};
}

std::vector<double> dev_balance(const DevSet& dev, std::size_t k) {
  if (dev.gold.empty()) throw Error("dev set has no gold labels");
  std::vector<double> b(k, 0.0);
  for (ClassIndex g : dev.gold) b.at(static_cast<std::size_t>(g)) += 1.0;
  for (double& x : b) x /= static_cast<double>(dev.gold.size());
  return b;
}

NoiseModel fit_flying_squid(const VoteMatrix& votes, const ClassSpace& classes, const DevSet* dev,
                            const FitConfig& config) {
  if (votes.m() < 3) throw Error("FlyingSquid: the triplet method needs at least 3 LFs");
  if (votes.n() == 0) throw Error("FlyingSquid: vote matrix is empty");
  const std::size_t k = classes.k();
  FlyingSquidParams params;
  params.balance = dev ? dev_balance(*dev, k) : classes.prior_or_uniform();
  const std::size_t tasks = k == 2 ? 1 : k;
  for (std::size_t t = 0; t < tasks; ++t) {
    const ClassIndex positive = k == 2 ? 1 : static_cast<ClassIndex>(t);
    std::size_t missing = 0;
    params.accuracies.push_back(triplet_accuracies(second_moments(votes, positive), config.fs_moment_floor, missing));
    params.lfs_without_triples.push_back(missing);
  }
  NoiseModel model;
  model.kind = ModelKind::FlyingSquid;
  model.k = k;
  model.m = votes.m();
  model.class_prior = params.balance;
  model.params = std::move(params);
  return model;
}

Posterior infer_flying_squid(const NoiseModel& model, const VoteMatrix& votes) {
  const auto& params = std::get<FlyingSquidParams>(model.params);
  const std::size_t k = model.k;
  Posterior post = empty_posterior(votes.n(), k);
  for (std::size_t i = 0; i < votes.n(); ++i) {
    auto row = votes.row(i);
    if (k == 2) {
      auto [pos, neg] = binary_log_joint(row, 1, params.accuracies[0], params.balance[1]);
      const double mx = std::max(pos, neg);
      post.probs[i * 2 + 1] = std::exp(pos - mx);
      post.probs[i * 2 + 0] = std::exp(neg - mx);
      continue;
    }
    double total = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      auto [pos, neg] =
          binary_log_joint(row, static_cast<ClassIndex>(c), params.accuracies[c], params.balance[c]);
      const double q = params.balance[c] > 0.0 ? 1.0 / (1.0 + std::exp(neg - pos)) : 0.0;
      post.probs[i * k + c] = q;
      total += q;
    }
    if (!(total > 0.0))
      for (std::size_t c = 0; c < k; ++c) post.probs[i * k + c] = params.balance[c];
  }
  finish_posterior(post, votes, model.class_prior);
  return post;
}

}  // namespace

SecondMoments second_moments(const VoteMatrix& votes, ClassIndex positive) {
  const std::size_t m = votes.m();
  SecondMoments out;
  out.m = m;
  out.values.assign(m * m, 0.0);
  out.counts.assign(m * m, 0);
  std::vector<int> coded(m);
  std::vector<double> sums(m * m, 0.0);
  for (std::size_t i = 0; i < votes.n(); ++i) {
    for (std::size_t a = 0; a < m; ++a) {
      Vote v = votes(i, a);
      coded[a] = v == kAbstain ? 0 : (v == positive ? 1 : -1);
    }
    for (std::size_t a = 0; a < m; ++a) {
      if (!coded[a]) continue;
      for (std::size_t b = a; b < m; ++b) {
        if (!coded[b]) continue;
        sums[a * m + b] += coded[a] * coded[b];
        ++out.counts[a * m + b];
      }
    }
  }
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = a; b < m; ++b) {
      const std::size_t cnt = out.counts[a * m + b];
      const double v = cnt ? sums[a * m + b] / static_cast<double>(cnt) : 0.0;
      out.values[a * m + b] = out.values[b * m + a] = v;
      out.counts[b * m + a] = cnt;
    }
  }
  return out;
}

std::optional<TripletEstimate> triplet_accuracy(const SecondMoments& moments, std::size_t a, std::size_t b,
                                                std::size_t c, double moment_floor) {
  const double ab = moments(a, b);
  const double ac = moments(a, c);
  const double bc = moments(b, c);
  if (std::abs(ab) <= moment_floor || std::abs(ac) <= moment_floor || std::abs(bc) <= moment_floor)
    return std::nullopt;
  TripletEstimate est;
  est.signed_scale = {std::sqrt(std::abs(ab * ac / bc)), std::sqrt(std::abs(ab * bc / ac)),
                      std::sqrt(std::abs(ac * bc / ab))};
  for (std::size_t i = 0; i < 3; ++i) est.probability[i] = to_probability(est.signed_scale[i]);
  return est;
}

NoiseModel fit(ModelKind kind, const VoteMatrix& votes, const ClassSpace& classes, const DevSet* dev,
               const FitConfig& config) {
  votes.validate(classes.k());
  if (dev) dev->votes.validate(classes.k());
  switch (kind) {
    case ModelKind::MajorityVote: {
      NoiseModel model;
      model.kind = kind;
      model.k = classes.k();
      model.class_prior = classes.prior_or_uniform();
      return model;
    }
    case ModelKind::WeightedMajorityVote: {
      NoiseModel model;
      model.kind = kind;
      model.k = classes.k();
      model.m = votes.m();
      model.class_prior = classes.prior_or_uniform();
      model.params = fit_weights(votes, classes, dev, config);
      return model;
    }
    case ModelKind::DawidSkene: return fit_dawid_skene(votes, classes, config);
    case ModelKind::FlyingSquid: return fit_flying_squid(votes, classes, dev, config);
  }
  throw Error("unknown model kind");
}

Posterior infer(const NoiseModel& model, const VoteMatrix& votes) {
  if (model.kind != ModelKind::MajorityVote && votes.m() != model.m)
    throw Error("infer: vote matrix has " + std::to_string(votes.m()) + " columns, model expects " +
                std::to_string(model.m));
  votes.validate(model.k);
  switch (model.kind) {
    case ModelKind::MajorityVote: return majority_posterior(votes, model.k, {}, model.class_prior);
    case ModelKind::WeightedMajorityVote:
      return majority_posterior(votes, model.k, std::get<WeightedParams>(model.params).weights, model.class_prior);
    case ModelKind::DawidSkene: return infer_dawid_skene(model, votes);
    case ModelKind::FlyingSquid: return infer_flying_squid(model, votes);
  }
  throw Error("unknown model kind");
}

json model_to_json(const NoiseModel& model) {
  json doc;
  doc["kind"] = to_string(model.kind);
  doc["k"] = model.k;
  doc["m"] = model.m;
  doc["class_prior"] = model.class_prior;
  json params = json::object();
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, WeightedParams>) {
          params["weights"] = p.weights;
          params["weight_source"] = p.weight_source;
        } else if constexpr (std::is_same_v<T, DawidSkeneParams>) {
          params["prior"] = p.prior;
          params["confusion"] = p.confusion;
        } else if constexpr (std::is_same_v<T, FlyingSquidParams>) {
          params["accuracies"] = p.accuracies;
          params["balance"] = p.balance;
          params["lfs_without_triples"] = p.lfs_without_triples;
        }
      },
      model.params);
  doc["params"] = params;
  json diag;
  diag["iterations"] = model.diagnostics.iterations;
  diag["log_likelihood"] = model.diagnostics.log_likelihood ? json(*model.diagnostics.log_likelihood) : json(nullptr);
  diag["objective_trace"] = model.diagnostics.objective_trace;
  doc["diagnostics"] = diag;
  return doc;
}

NoiseModel model_from_json(const json& doc) {
  NoiseModel model;
  model.kind = parse_model_kind(doc.at("kind").get<std::string>());
  model.k = doc.at("k").get<std::size_t>();
  model.m = doc.at("m").get<std::size_t>();
  model.class_prior = doc.at("class_prior").get<std::vector<double>>();
  const auto& p = doc.at("params");
  switch (model.kind) {
    case ModelKind::MajorityVote: model.params = MajorityParams{}; break;
    case ModelKind::WeightedMajorityVote:
      model.params = WeightedParams{p.at("weights").get<std::vector<double>>(), p.at("weight_source").get<std::string>()};
      break;
    case ModelKind::DawidSkene:
      model.params = DawidSkeneParams{p.at("prior").get<std::vector<double>>(),
                                      p.at("confusion").get<std::vector<std::vector<std::vector<double>>>>()};
      break;
    case ModelKind::FlyingSquid:
      model.params = FlyingSquidParams{p.at("accuracies").get<std::vector<std::vector<double>>>(),
                                       p.at("balance").get<std::vector<double>>(),
                                       p.at("lfs_without_triples").get<std::vector<std::size_t>>()};
      break;
  }
  const auto& d = doc.at("diagnostics");
  model.diagnostics.iterations = d.at("iterations").get<std::size_t>();
  if (!d.at("log_likelihood").is_null()) model.diagnostics.log_likelihood = d["log_likelihood"].get<double>();
  model.diagnostics.objective_trace = d.at("objective_trace").get<std::vector<double>>();
  return model;
}

}  // namespace wsforge
