#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "wsforge/corpus.hpp"
#include "wsforge/votes.hpp"

namespace wsforge {

struct LfStat {
  double coverage = 0.0;
  double overlap = 0.0;
  double conflict = 0.0;
  std::optional<double> accuracy;  // over the LF's covered points; absent without gold or coverage

  bool operator==(const LfStat&) const = default;
};

struct LfStatistics {
  std::size_t n = 0;
  std::size_t m = 0;
  std::vector<std::string> lf_names;
  std::vector<LfStat> per_lf;
  LfStat averages;  // unweighted over LFs; accuracy over LFs where it is defined

  bool operator==(const LfStatistics&) const = default;
};

/// Coverage, overlap, conflict and covered-set accuracy per LF.
LfStatistics compute_stats(const VoteMatrix& votes, std::optional<std::span<const ClassIndex>> gold,
                           const ClassSpace& classes);

nlohmann::json stats_to_json(const LfStatistics& stats);
LfStatistics stats_from_json(const nlohmann::json& doc);

// Table layout: #LFs, Avg.Coverage, Avg.Overlap, Avg.Conflict, Avg.Accuracy.
std::string render_stats_table(const LfStatistics& stats, bool per_lf_rows = true);

}  // namespace wsforge
