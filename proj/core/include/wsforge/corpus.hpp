#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace wsforge {

// Class index as stored in memory. Files carry class names.
using ClassIndex = int;

/// Label space: ordered class names, an optional positive class for binary
/// F1, and an optional prior used for tie-breaking and as the all-abstain
/// posterior.
class ClassSpace {
 public:
  ClassSpace() = default;
  ClassSpace(std::vector<std::string> names, std::optional<ClassIndex> positive_class = std::nullopt,
             std::optional<std::vector<double>> prior = std::nullopt);

  std::size_t k() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  const std::string& name(ClassIndex c) const { return names_.at(static_cast<std::size_t>(c)); }
  std::optional<ClassIndex> index_of(std::string_view name) const;
  std::optional<ClassIndex> positive_class() const noexcept { return positive_class_; }
  const std::optional<std::vector<double>>& prior() const noexcept { return prior_; }

  // The configured prior, or uniform when none was given.
  std::vector<double> prior_or_uniform() const;
  bool contains(ClassIndex c) const noexcept { return c >= 0 && static_cast<std::size_t>(c) < k(); }

  bool operator==(const ClassSpace&) const = default;

 private:
  std::vector<std::string> names_;
  std::optional<ClassIndex> positive_class_;
  std::optional<std::vector<double>> prior_;
};

struct Document {
  std::string id;
  std::string text;
  std::optional<ClassIndex> gold;

  bool operator==(const Document&) const = default;
};

inline constexpr std::string_view kTrainSplit = "train";
inline constexpr std::string_view kValidSplit = "valid";
inline constexpr std::string_view kTestSplit = "test";

struct Dataset {
  ClassSpace classes;
  std::map<std::string, std::vector<Document>, std::less<>> splits;

  bool has_split(std::string_view name) const { return splits.find(name) != splits.end(); }
  // Throws Error when the split is missing.
  const std::vector<Document>& split(std::string_view name) const;

  bool operator==(const Dataset&) const = default;
};

ClassSpace parse_classes(std::string_view json_text);
ClassSpace load_classes(const std::filesystem::path& classes_path);
std::string render_classes(const ClassSpace& classes);

// One record per line: {"id": str, "text": str, "label": str (optional)}.
std::vector<Document> read_split(std::istream& in, const ClassSpace& classes);
std::vector<Document> load_split(const std::filesystem::path& path, const ClassSpace& classes);
void write_split(std::ostream& out, const std::vector<Document>& docs, const ClassSpace& classes);

/// Loads `train.jsonl`, `valid.jsonl` and `test.jsonl` from `data_dir`.
/// Train is required; valid and test are loaded when present.
Dataset load_dataset(const std::filesystem::path& data_dir, const std::filesystem::path& classes_path);
Dataset load_dataset(const std::filesystem::path& data_dir);

// Empirical class frequencies of a fully gold-labelled split.
std::vector<double> class_balance(const Dataset& dataset, std::string_view split);
std::vector<double> class_balance(const std::vector<Document>& docs, std::size_t k);

// Gold labels of a split; throws when any document lacks one.
std::vector<ClassIndex> gold_labels(const std::vector<Document>& docs);
bool fully_labeled(const std::vector<Document>& docs);

}  // namespace wsforge
