#include "wsforge/lfstats.hpp"

#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

#include "wsforge/error.hpp"

namespace wsforge {

using nlohmann::json;

LfStatistics compute_stats(const VoteMatrix& votes, std::optional<std::span<const ClassIndex>> gold,
                           const ClassSpace& classes) {
  const std::size_t n = votes.n();
  const std::size_t m = votes.m();
  if (n == 0) throw Error("compute_stats: vote matrix has no points");
  if (gold && gold->size() != n)
    throw Error("compute_stats: gold has " + std::to_string(gold->size()) + " labels for " + std::to_string(n) +
                " points");
  votes.validate(classes.k());

  // Per point: number of voting LFs and, for up to two distinct labels, how
  // many LFs chose each. That is enough to answer overlap/conflict per LF.
  std::vector<std::size_t> covered(m, 0), overlapped(m, 0), conflicted(m, 0), correct(m, 0);
  std::vector<std::size_t> label_count(classes.k());
  for (std::size_t i = 0; i < n; ++i) {
    auto row = votes.row(i);
    std::size_t voters = 0;
    std::fill(label_count.begin(), label_count.end(), 0);
    for (Vote v : row) {
      if (v == kAbstain) continue;
      ++voters;
      ++label_count[static_cast<std::size_t>(v)];
    }
    for (std::size_t a = 0; a < m; ++a) {
      Vote v = row[a];
      if (v == kAbstain) continue;
      ++covered[a];
      if (voters >= 2) ++overlapped[a];
      if (voters > label_count[static_cast<std::size_t>(v)]) ++conflicted[a];
      if (gold && (*gold)[i] == v) ++correct[a];
    }
  }

  LfStatistics stats;
  stats.n = n;
  stats.m = m;
  stats.lf_names = votes.lf_names();
  const double dn = static_cast<double>(n);
  double acc_sum = 0.0;
  std::size_t acc_terms = 0;
  for (std::size_t a = 0; a < m; ++a) {
    LfStat s;
    s.coverage = static_cast<double>(covered[a]) / dn;
    s.overlap = static_cast<double>(overlapped[a]) / dn;
    s.conflict = static_cast<double>(conflicted[a]) / dn;
    if (gold && covered[a] > 0) {
      s.accuracy = static_cast<double>(correct[a]) / static_cast<double>(covered[a]);
      acc_sum += *s.accuracy;
      ++acc_terms;
    }
    stats.averages.coverage += s.coverage;
    stats.averages.overlap += s.overlap;
    stats.averages.conflict += s.conflict;
    stats.per_lf.push_back(s);
  }
  if (m > 0) {
    stats.averages.coverage /= static_cast<double>(m);
    stats.averages.overlap /= static_cast<double>(m);
    stats.averages.conflict /= static_cast<double>(m);
  }
  if (acc_terms > 0) stats.averages.accuracy = acc_sum / static_cast<double>(acc_terms);
  return stats;
}

namespace {

json stat_to_json(const LfStat& s) {
  return {{"coverage", s.coverage},
          {"overlap", s.overlap},
          {"conflict", s.conflict},
          {"accuracy", s.accuracy ? json(*s.accuracy) : json(nullptr)}};
}

LfStat stat_from_json(const json& j) {
  LfStat s;
  s.coverage = j.at("coverage").get<double>();
  s.overlap = j.at("overlap").get<double>();
  s.conflict = j.at("conflict").get<double>();
  if (!j.at("accuracy").is_null()) s.accuracy = j["accuracy"].get<double>();
  return s;
}

std::string fmt3(std::optional<double> v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", *v);
  return buf;
}

}  // namespace

json stats_to_json(const LfStatistics& stats) {
  json per = json::array();
  for (std::size_t a = 0; a < stats.m; ++a) {
    json row = stat_to_json(stats.per_lf[a]);
    row["name"] = stats.lf_names[a];
    per.push_back(row);
  }
  return {{"n", stats.n}, {"m", stats.m}, {"per_lf", per}, {"averages", stat_to_json(stats.averages)}};
}

LfStatistics stats_from_json(const json& doc) {
  LfStatistics stats;
  stats.n = doc.at("n").get<std::size_t>();
  stats.m = doc.at("m").get<std::size_t>();
  for (const auto& row : doc.at("per_lf")) {
    stats.lf_names.push_back(row.at("name").get<std::string>());
    stats.per_lf.push_back(stat_from_json(row));
  }
  stats.averages = stat_from_json(doc.at("averages"));
  return stats;
}

std::string render_stats_table(const LfStatistics& stats, bool per_lf_rows) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-28s %6s %12s %12s %12s %12s\n", "", "#LFs", "Avg.Coverage", "Avg.Overlap",
                "Avg.Conflict", "Avg.Accuracy");
  out << line;
  std::snprintf(line, sizeof line, "%-28s %6zu %12s %12s %12s %12s\n", "all", stats.m,
                fmt3(stats.averages.coverage).c_str(), fmt3(stats.averages.overlap).c_str(),
                fmt3(stats.averages.conflict).c_str(), fmt3(stats.averages.accuracy).c_str());
  out << line;
  if (per_lf_rows) {
    for (std::size_t a = 0; a < stats.m; ++a) {
      const auto& s = stats.per_lf[a];
      std::string name = stats.lf_names[a].size() > 26 ? stats.lf_names[a].substr(0, 26) : stats.lf_names[a];
      std::snprintf(line, sizeof line, "  %-26s %6s %12s %12s %12s %12s\n", name.c_str(), "", fmt3(s.coverage).c_str(),
                    fmt3(s.overlap).c_str(), fmt3(s.conflict).c_str(), fmt3(s.accuracy).c_str());
      out << line;
    }
  }
  return out.str();
}

}  // namespace wsforge
