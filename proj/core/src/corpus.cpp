#include "wsforge/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "wsforge/error.hpp"

namespace wsforge {

using nlohmann::json;

ClassSpace::ClassSpace(std::vector<std::string> names, std::optional<ClassIndex> positive_class,
                       std::optional<std::vector<double>> prior)
    : names_(std::move(names)), positive_class_(positive_class), prior_(std::move(prior)) {
  if (names_.size() < 2) throw Error("class space needs at least 2 classes");
  std::set<std::string> seen;
  for (const auto& n : names_) {
    if (n.empty()) throw Error("class names must be non-empty");
    if (!seen.insert(n).second) throw Error("duplicate class name '" + n + "'");
  }
  if (positive_class_ && !contains(*positive_class_)) throw Error("positive_class out of range");
  if (prior_) {
    if (prior_->size() != names_.size()) throw Error("prior length does not match class count");
    double sum = 0.0;
    for (double p : *prior_) {
      if (!(p >= 0.0) || !std::isfinite(p)) throw Error("prior entries must be finite and non-negative");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw Error("prior must sum to 1");
  }
}

std::optional<ClassIndex> ClassSpace::index_of(std::string_view name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<ClassIndex>(it - names_.begin());
}

std::vector<double> ClassSpace::prior_or_uniform() const {
  if (prior_) return *prior_;
  return std::vector<double>(k(), 1.0 / static_cast<double>(k()));
}

const std::vector<Document>& Dataset::split(std::string_view name) const {
  auto it = splits.find(name);
  if (it == splits.end()) throw Error("split '" + std::string(name) + "' is missing");
  return it->second;
}

ClassSpace parse_classes(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("classes file: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("names") || !doc["names"].is_array())
    throw ParseError("classes file: expected an object with a 'names' array");
  std::vector<std::string> names;
  for (const auto& n : doc["names"]) {
    if (!n.is_string()) throw ParseError("classes file: names must be strings");
    names.push_back(n.get<std::string>());
  }
  std::optional<ClassIndex> positive;
  if (doc.contains("positive_class") && !doc["positive_class"].is_null()) {
    const auto& pc = doc["positive_class"];
    if (!pc.is_string()) throw ParseError("classes file: positive_class must be a class name or null");
    auto it = std::find(names.begin(), names.end(), pc.get<std::string>());
    if (it == names.end()) throw ParseError("classes file: positive_class '" + pc.get<std::string>() + "' is not a class");
    positive = static_cast<ClassIndex>(it - names.begin());
  }
  std::optional<std::vector<double>> prior;
  if (doc.contains("prior") && !doc["prior"].is_null()) {
    if (!doc["prior"].is_array()) throw ParseError("classes file: prior must be an array or null");
    prior = doc["prior"].get<std::vector<double>>();
  }
  return ClassSpace(std::move(names), positive, std::move(prior));
}

ClassSpace load_classes(const std::filesystem::path& classes_path) {
  std::ifstream in(classes_path);
  if (!in) throw Error("cannot open classes file " + classes_path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_classes(buf.str());
}

std::string render_classes(const ClassSpace& classes) {
  json doc;
  doc["names"] = classes.names();
  doc["positive_class"] = classes.positive_class() ? json(classes.name(*classes.positive_class())) : json(nullptr);
  doc["prior"] = classes.prior() ? json(*classes.prior()) : json(nullptr);
  return doc.dump();
}

std::vector<Document> read_split(std::istream& in, const ClassSpace& classes) {
  std::vector<Document> docs;
  std::set<std::string, std::less<>> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error&) {
      throw ParseError("malformed record", lineno);
    }
    if (!rec.is_object()) throw ParseError("malformed record: expected an object", lineno);
    auto id_it = rec.find("id");
    auto text_it = rec.find("text");
    if (id_it == rec.end() || !id_it->is_string() || id_it->get_ref<const std::string&>().empty())
      throw ParseError("malformed record: missing or empty 'id'", lineno);
    if (text_it == rec.end() || !text_it->is_string())
      throw ParseError("malformed record: missing 'text'", lineno);
    Document doc{id_it->get<std::string>(), text_it->get<std::string>(), std::nullopt};
    if (auto lab = rec.find("label"); lab != rec.end() && !lab->is_null()) {
      if (!lab->is_string()) throw ParseError("malformed record: 'label' must be a class name", lineno);
      auto idx = classes.index_of(lab->get_ref<const std::string&>());
      if (!idx) throw ParseError("unknown label '" + lab->get<std::string>() + "'", lineno);
      doc.gold = *idx;
    }
    if (!ids.insert(doc.id).second) throw ParseError("duplicate id '" + doc.id + "'", lineno);
    docs.push_back(std::move(doc));
  }
  if (docs.empty()) throw ParseError("empty split file");
  return docs;
}

std::vector<Document> load_split(const std::filesystem::path& path, const ClassSpace& classes) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open split file " + path.string());
  try {
    return read_split(in, classes);
  } catch (const ParseError& e) {
    throw ParseError(path.filename().string() + ": " + e.what());
  }
}

void write_split(std::ostream& out, const std::vector<Document>& docs, const ClassSpace& classes) {
  for (const auto& d : docs) {
    json rec;
    rec["id"] = d.id;
    rec["text"] = d.text;
    if (d.gold) rec["label"] = classes.name(*d.gold);
    out << rec.dump() << '\n';
  }
}

Dataset load_dataset(const std::filesystem::path& data_dir, const std::filesystem::path& classes_path) {
  Dataset ds;
  ds.classes = load_classes(classes_path);
  for (std::string_view split : {kTrainSplit, kValidSplit, kTestSplit}) {
    auto path = data_dir / (std::string(split) + ".jsonl");
    if (!std::filesystem::exists(path)) {
      if (split == kTrainSplit) throw Error("missing train split " + path.string());
      continue;
    }
    ds.splits.emplace(std::string(split), load_split(path, ds.classes));
  }
  return ds;
}

Dataset load_dataset(const std::filesystem::path& data_dir) {
  return load_dataset(data_dir, data_dir / "classes.json");
}

std::vector<double> class_balance(const std::vector<Document>& docs, std::size_t k) {
  if (docs.empty()) throw Error("class_balance: split is empty");
  std::vector<double> counts(k, 0.0);
  for (const auto& d : docs) {
    if (!d.gold) throw Error("class_balance: document '" + d.id + "' has no gold label");
    counts.at(static_cast<std::size_t>(*d.gold)) += 1.0;
  }
  for (double& c : counts) c /= static_cast<double>(docs.size());
  return counts;
}

std::vector<double> class_balance(const Dataset& dataset, std::string_view split) {
  return class_balance(dataset.split(split), dataset.classes.k());
}

std::vector<ClassIndex> gold_labels(const std::vector<Document>& docs) {
  std::vector<ClassIndex> out;
  out.reserve(docs.size());
  for (const auto& d : docs) {
    if (!d.gold) throw Error("document '" + d.id + "' has no gold label");
    out.push_back(*d.gold);
  }
  return out;
}

bool fully_labeled(const std::vector<Document>& docs) {
  return !docs.empty() && std::all_of(docs.begin(), docs.end(), [](const Document& d) { return d.gold.has_value(); });
}

}  // namespace wsforge
