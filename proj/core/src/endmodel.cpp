#include "wsforge/endmodel.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <thread>

#include <nlohmann/json.hpp>

#include "wsforge/error.hpp"

namespace wsforge {

using nlohmann::json;

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::string> tokenize(std::string_view text, const FeatureConfig& config) {
  std::vector<std::string> tokens;
  std::string current;
  auto is_token_byte = [&](unsigned char ch) {
    if (config.token_pattern == TokenPattern::Whitespace) return !(ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r');
    return std::isalnum(ch) != 0 || ch >= 0x80;
  };
  for (unsigned char ch : text) {
    if (is_token_byte(ch)) {
      current.push_back(config.lowercase && ch >= 'A' && ch <= 'Z' ? static_cast<char>(ch - 'A' + 'a')
                                                                   : static_cast<char>(ch));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

FeatureVector featurize(std::string_view text, const FeatureConfig& config) {
  if (config.dim == 0 || !std::has_single_bit(config.dim)) throw Error("hash dimension must be a power of two");
  if (config.dim > (std::size_t{1} << 32)) throw Error("hash dimension must fit in 32 bits");
  if (config.ngram_max < 1 || config.ngram_max > 2) throw Error("ngram_max must be 1 or 2");
  const auto tokens = tokenize(text, config);
  const std::uint64_t mask = config.dim - 1;
  std::map<std::uint32_t, double> counts;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    counts[static_cast<std::uint32_t>(fnv1a64(tokens[t]) & mask)] += 1.0;
    if (config.ngram_max >= 2 && t + 1 < tokens.size())
      counts[static_cast<std::uint32_t>(fnv1a64(tokens[t] + ' ' + tokens[t + 1]) & mask)] += 1.0;
  }
  FeatureVector fv;
  fv.indices.reserve(counts.size());
  fv.values.reserve(counts.size());
  double norm2 = 0.0;
  for (const auto& [idx, v] : counts) {
    fv.indices.push_back(idx);
    fv.values.push_back(v);
    norm2 += v * v;
  }
  if (config.l2_normalize && norm2 > 0.0) {
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& v : fv.values) v *= inv;
  }
  return fv;
}

std::vector<double> LinearModel::logits(const FeatureVector& x) const {
  std::vector<double> z(params.bias);
  for (std::size_t c = 0; c < params.k; ++c)
    for (std::size_t j = 0; j < x.nnz(); ++j) z[c] += params.w(c, x.indices[j]) * x.values[j];
  return z;
}

ClassIndex LinearModel::predict(const FeatureVector& x) const {
  const auto z = logits(x);
  return static_cast<ClassIndex>(std::max_element(z.begin(), z.end()) - z.begin());
}

namespace {

constexpr std::size_t kChunkRows = 128;

// Sparse rows whose column positions index a parameter block of width cols.
struct CompactData {
  std::size_t k = 0;
  std::size_t cols = 0;
  std::vector<std::vector<std::uint32_t>> positions;
  const TrainingSet* source = nullptr;
};

struct Block {
  std::vector<double> w;  // k x cols
  std::vector<double> b;  // k

  void reset(std::size_t k, std::size_t cols) {
    w.assign(k * cols, 0.0);
    b.assign(k, 0.0);
  }
};

void check_targets(const TrainingSet& data, bool soft_labels) {
  if (data.k < 2) throw Error("training set needs k >= 2");
  if (data.y.size() != data.n()) throw Error("training set: label count does not match rows");
  for (ClassIndex y : data.y)
    if (y < 0 || static_cast<std::size_t>(y) >= data.k) throw Error("training set: pseudolabel out of range");
  if (soft_labels && data.soft.size() != data.n() * data.k)
    throw Error("training set: soft labels requested but posterior rows are missing");
}

// Unnormalized cross-entropy sum and gradient over rows [begin, end).
double chunk_loss_gradient(const CompactData& data, const Block& params, bool soft, std::size_t begin,
                           std::size_t end, Block& grad) {
  const std::size_t k = data.k;
  const std::size_t cols = data.cols;
  const auto& set = *data.source;
  std::vector<double> z(k), target(k);
  double loss = 0.0;
  for (std::size_t i = begin; i < end; ++i) {
    const auto& pos = data.positions[i];
    const auto& val = set.x[i].values;
    for (std::size_t c = 0; c < k; ++c) {
      double s = params.b[c];
      const double* wc = params.w.data() + c * cols;
      for (std::size_t j = 0; j < pos.size(); ++j) s += wc[pos[j]] * val[j];
      z[c] = s;
    }
    const double mx = *std::max_element(z.begin(), z.end());
    double denom = 0.0;
    for (std::size_t c = 0; c < k; ++c) denom += std::exp(z[c] - mx);
    const double log_denom = mx + std::log(denom);
    if (soft) {
      std::copy_n(set.soft.begin() + static_cast<std::ptrdiff_t>(i * k), k, target.begin());
    } else {
      std::fill(target.begin(), target.end(), 0.0);
      target[static_cast<std::size_t>(set.y[i])] = 1.0;
    }
    for (std::size_t c = 0; c < k; ++c) {
      const double log_p = z[c] - log_denom;
      if (target[c] != 0.0) loss -= target[c] * log_p;
      const double r = std::exp(log_p) - target[c];
      grad.b[c] += r;
      double* gc = grad.w.data() + c * cols;
      for (std::size_t j = 0; j < pos.size(); ++j) gc[pos[j]] += r * val[j];
    }
  }
  return loss;
}

// Mean cross-entropy and its gradient (without the L2 term). Chunk partials
// are summed in chunk order whatever the thread count.
double data_loss_gradient(const CompactData& data, const Block& params, bool soft, unsigned threads, Block& grad) {
  const std::size_t n = data.positions.size();
  const std::size_t chunks = (n + kChunkRows - 1) / kChunkRows;
  grad.reset(data.k, data.cols);
  double loss = 0.0;
  if (threads <= 1 || chunks <= 1) {
    Block partial;
    for (std::size_t ch = 0; ch < chunks; ++ch) {
      partial.reset(data.k, data.cols);
      loss += chunk_loss_gradient(data, params, soft, ch * kChunkRows, std::min(n, (ch + 1) * kChunkRows), partial);
      for (std::size_t q = 0; q < grad.w.size(); ++q) grad.w[q] += partial.w[q];
      for (std::size_t c = 0; c < data.k; ++c) grad.b[c] += partial.b[c];
    }
  } else {
    std::vector<Block> partials(chunks);
    std::vector<double> losses(chunks, 0.0);
    std::atomic<std::size_t> next{0};
    {
      std::vector<std::jthread> pool;
      for (unsigned t = 0; t < std::min<std::size_t>(threads, chunks); ++t)
        pool.emplace_back([&] {
          for (std::size_t ch = next++; ch < chunks; ch = next++) {
            partials[ch].reset(data.k, data.cols);
            losses[ch] =
                chunk_loss_gradient(data, params, soft, ch * kChunkRows, std::min(n, (ch + 1) * kChunkRows), partials[ch]);
          }
        });
    }
    for (std::size_t ch = 0; ch < chunks; ++ch) {
      loss += losses[ch];
      for (std::size_t q = 0; q < grad.w.size(); ++q) grad.w[q] += partials[ch].w[q];
      for (std::size_t c = 0; c < data.k; ++c) grad.b[c] += partials[ch].b[c];
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  for (double& g : grad.w) g *= inv_n;
  for (double& g : grad.b) g *= inv_n;
  return loss * inv_n;
}

double squared_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

}  // namespace

double loss_and_gradient(const LinearParams& params, const TrainingSet& data, double l2, bool soft_labels,
                         LinearParams* gradient) {
  check_targets(data, soft_labels);
  if (data.n() == 0) throw Error("training set is empty");
  if (params.k != data.k) throw Error("parameter class count does not match training set");
  CompactData compact{data.k, params.dim, {}, &data};
  compact.positions.reserve(data.n());
  for (const auto& x : data.x) {
    for (auto idx : x.indices)
      if (idx >= params.dim) throw Error("feature index exceeds parameter dimension");
    compact.positions.push_back(x.indices);
  }
  Block block{params.weights, params.bias};
  Block grad;
  const double loss = data_loss_gradient(compact, block, soft_labels, 1, grad) + 0.5 * l2 * squared_norm(params.weights);
  if (gradient) {
    gradient->k = params.k;
    gradient->dim = params.dim;
    gradient->weights = std::move(grad.w);
    for (std::size_t q = 0; q < gradient->weights.size(); ++q) gradient->weights[q] += l2 * params.weights[q];
    gradient->bias = std::move(grad.b);
  }
  return loss;
}

LinearModel train(const TrainingSet& data, const FeatureConfig& features, const TrainConfig& config) {
  if (data.n() == 0) throw Error("cannot train on an empty training set");
  check_targets(data, config.soft_labels);
  if (!(config.lr > 0.0) || !std::isfinite(config.lr)) throw Error("learning rate must be positive");
  if (!(config.l2 >= 0.0) || !std::isfinite(config.l2)) throw Error("l2 must be non-negative");
  if (config.epochs < 0) throw Error("epochs must be non-negative");

  // Only columns that occur in the data can move away from zero.
  std::vector<std::uint32_t> active;
  for (const auto& x : data.x) active.insert(active.end(), x.indices.begin(), x.indices.end());
  std::sort(active.begin(), active.end());
  active.erase(std::unique(active.begin(), active.end()), active.end());
  if (!active.empty() && active.back() >= features.dim) throw Error("feature index exceeds hash dimension");

  CompactData compact{data.k, active.size(), {}, &data};
  compact.positions.reserve(data.n());
  for (const auto& x : data.x) {
    std::vector<std::uint32_t> pos(x.indices.size());
    for (std::size_t j = 0; j < x.indices.size(); ++j)
      pos[j] = static_cast<std::uint32_t>(std::lower_bound(active.begin(), active.end(), x.indices[j]) - active.begin());
    compact.positions.push_back(std::move(pos));
  }

  Block params;
  params.reset(data.k, compact.cols);
  Block grad;
  LinearModel model;
  model.features = features;
  model.config = config;
  model.diagnostics.seed = config.seed;
  const double shrink = 1.0 / (1.0 + config.lr * config.l2);

  auto objective = [&](double data_loss) { return data_loss + 0.5 * config.l2 * squared_norm(params.w); };
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double loss = objective(data_loss_gradient(compact, params, config.soft_labels, config.threads, grad));
    if (!std::isfinite(loss)) throw Error("non-finite training loss at epoch " + std::to_string(epoch));
    model.diagnostics.loss_trace.push_back(loss);
    for (std::size_t q = 0; q < params.w.size(); ++q) params.w[q] = (params.w[q] - config.lr * grad.w[q]) * shrink;
    for (std::size_t c = 0; c < data.k; ++c) params.b[c] -= config.lr * grad.b[c];
  }
  model.diagnostics.epochs = config.epochs;
  model.diagnostics.final_loss = objective(data_loss_gradient(compact, params, config.soft_labels, config.threads, grad));
  if (!std::isfinite(model.diagnostics.final_loss))
    throw Error("non-finite training loss at epoch " + std::to_string(config.epochs));

  model.params.k = data.k;
  model.params.dim = features.dim;
  model.params.weights.assign(data.k * features.dim, 0.0);
  model.params.bias = params.b;
  for (std::size_t c = 0; c < data.k; ++c)
    for (std::size_t j = 0; j < active.size(); ++j) model.params.w(c, active[j]) = params.w[c * compact.cols + j];
  return model;
}

TrainingSet make_training_set(std::span<const std::string> texts, std::span<const ClassIndex> labels, std::size_t k,
                              const FeatureConfig& features, std::span<const double> soft) {
  if (texts.size() != labels.size()) throw Error("make_training_set: texts and labels differ in length");
  TrainingSet set;
  set.k = k;
  set.y.assign(labels.begin(), labels.end());
  set.soft.assign(soft.begin(), soft.end());
  set.x.reserve(texts.size());
  for (const auto& t : texts) set.x.push_back(featurize(t, features));
  return set;
}

EvalReport evaluate_predictions(std::span<const ClassIndex> predicted, std::span<const ClassIndex> gold,
                                const ClassSpace& classes) {
  if (predicted.size() != gold.size()) throw Error("evaluate: prediction and gold lengths differ");
  if (gold.empty()) throw Error("evaluate: no test points");
  const std::size_t k = classes.k();
  std::vector<std::size_t> tp(k, 0), fp(k, 0), fn(k, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto p = static_cast<std::size_t>(predicted[i]);
    const auto g = static_cast<std::size_t>(gold[i]);
    if (p >= k || g >= k) throw Error("evaluate: label out of range");
    if (p == g) {
      ++correct;
      ++tp[g];
    } else {
      ++fp[p];
      ++fn[g];
    }
  }
  EvalReport report;
  report.n_test = gold.size();
  report.accuracy = static_cast<double>(correct) / static_cast<double>(gold.size());
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    ClassMetrics m;
    m.support = tp[c] + fn[c];
    m.precision = tp[c] + fp[c] ? static_cast<double>(tp[c]) / static_cast<double>(tp[c] + fp[c]) : 0.0;
    m.recall = tp[c] + fn[c] ? static_cast<double>(tp[c]) / static_cast<double>(tp[c] + fn[c]) : 0.0;
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    f1_sum += m.f1;
    report.per_class.push_back(m);
  }
  report.f1_macro = f1_sum / static_cast<double>(k);
  if (auto pos = classes.positive_class()) report.f1_binary = report.per_class[static_cast<std::size_t>(*pos)].f1;
  return report;
}

EvalReport evaluate(const LinearModel& model, std::span<const Document> test, const ClassSpace& classes) {
  std::vector<ClassIndex> predicted, gold;
  for (const auto& d : test) {
    if (!d.gold) throw Error("evaluate: test document '" + d.id + "' has no gold label");
    gold.push_back(*d.gold);
    predicted.push_back(model.predict(d.text));
  }
  return evaluate_predictions(predicted, gold, classes);
}

json eval_to_json(const EvalReport& report) {
  json per = json::array();
  for (const auto& m : report.per_class)
    per.push_back({{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"support", m.support}});
  return {{"accuracy", report.accuracy},
          {"f1_binary", report.f1_binary ? json(*report.f1_binary) : json(nullptr)},
          {"f1_macro", report.f1_macro},
          {"n_test", report.n_test},
          {"per_class", per}};
}

EvalReport eval_from_json(const json& doc) {
  EvalReport r;
  r.accuracy = doc.at("accuracy").get<double>();
  if (!doc.at("f1_binary").is_null()) r.f1_binary = doc["f1_binary"].get<double>();
  r.f1_macro = doc.at("f1_macro").get<double>();
  r.n_test = doc.at("n_test").get<std::size_t>();
  for (const auto& m : doc.at("per_class"))
    r.per_class.push_back({m.at("precision").get<double>(), m.at("recall").get<double>(), m.at("f1").get<double>(),
                           m.at("support").get<std::size_t>()});
  return r;
}

namespace {

constexpr char kMagic[] = "WSFLM1\n";

template <typename T>
void put(std::ostream& out, T value) {
  static_assert(std::endian::native == std::endian::little, "model files are little-endian");
  out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

template <typename T>
T get(std::istream& in) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof value)) throw ParseError("model file truncated");
  return value;
}

json feature_config_json(const FeatureConfig& f) {
  return {{"dim", f.dim},
          {"lowercase", f.lowercase},
          {"token_pattern", f.token_pattern == TokenPattern::Whitespace ? "whitespace" : "alphanumeric"},
          {"ngram_max", f.ngram_max},
          {"l2_normalize", f.l2_normalize}};
}

FeatureConfig feature_config_from(const json& j) {
  FeatureConfig f;
  f.dim = j.at("dim").get<std::size_t>();
  f.lowercase = j.at("lowercase").get<bool>();
  f.token_pattern = j.at("token_pattern") == "whitespace" ? TokenPattern::Whitespace : TokenPattern::Alphanumeric;
  f.ngram_max = j.at("ngram_max").get<int>();
  f.l2_normalize = j.at("l2_normalize").get<bool>();
  return f;
}

}  // namespace

void save_model(const std::filesystem::path& path, const LinearModel& model) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write model file " + path.string());
  std::size_t nnz = 0;
  for (double w : model.params.weights) nnz += w != 0.0;
  json header{{"k", model.params.k},
               {"dim", model.params.dim},
               {"features", feature_config_json(model.features)},
               {"train",
                {{"lr", model.config.lr},
                 {"l2", model.config.l2},
                 {"epochs", model.config.epochs},
                 {"seed", model.config.seed},
                 {"soft_labels", model.config.soft_labels}}},
               {"diagnostics",
                {{"epochs", model.diagnostics.epochs},
                 {"final_loss", model.diagnostics.final_loss},
                 {"loss_trace", model.diagnostics.loss_trace}}},
               {"nnz", nnz}};
  out.write(kMagic, sizeof kMagic - 1);
  out << header.dump() << '\n';
  for (double b : model.params.bias) put(out, b);
  for (std::size_t c = 0; c < model.params.k; ++c) {
    for (std::size_t j = 0; j < model.params.dim; ++j) {
      const double w = model.params.w(c, j);
      if (w == 0.0) continue;
      put(out, static_cast<std::uint32_t>(c));
      put(out, static_cast<std::uint32_t>(j));
      put(out, w);
    }
  }
  if (!out) throw Error("short write to " + path.string());
}

LinearModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open model file " + path.string());
  char magic[sizeof kMagic - 1];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw ParseError("not a model file: " + path.string());
  std::string line;
  std::getline(in, line);
  json header = json::parse(line, nullptr, false);
  if (header.is_discarded()) throw ParseError("model file header is not valid JSON");
  LinearModel model;
  model.params.k = header.at("k").get<std::size_t>();
  model.params.dim = header.at("dim").get<std::size_t>();
  model.features = feature_config_from(header.at("features"));
  const auto& t = header.at("train");
  model.config.lr = t.at("lr").get<double>();
  model.config.l2 = t.at("l2").get<double>();
  model.config.epochs = t.at("epochs").get<int>();
  model.config.seed = t.at("seed").get<std::uint64_t>();
  model.config.soft_labels = t.at("soft_labels").get<bool>();
  const auto& d = header.at("diagnostics");
  model.diagnostics.epochs = d.at("epochs").get<int>();
  model.diagnostics.final_loss = d.at("final_loss").get<double>();
  model.diagnostics.loss_trace = d.at("loss_trace").get<std::vector<double>>();
  model.diagnostics.seed = model.config.seed;
  model.params.bias.resize(model.params.k);
  for (double& b : model.params.bias) b = get<double>(in);
  model.params.weights.assign(model.params.k * model.params.dim, 0.0);
  const auto nnz = header.at("nnz").get<std::size_t>();
  for (std::size_t e = 0; e < nnz; ++e) {
    const auto c = get<std::uint32_t>(in);
    const auto j = get<std::uint32_t>(in);
    const auto w = get<double>(in);
    if (c >= model.params.k || j >= model.params.dim) throw ParseError("model file entry out of range");
    model.params.w(c, j) = w;
  }
  return model;
}

}  // namespace wsforge
