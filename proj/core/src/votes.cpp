#include "wsforge/votes.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>

#include <nlohmann/json.hpp>

#include "wsforge/error.hpp"

namespace wsforge {

namespace {

std::vector<std::string> default_names(std::size_t m) {
  std::vector<std::string> names;
  names.reserve(m);
  for (std::size_t a = 0; a < m; ++a) names.push_back("lf" + std::to_string(a));
  return names;
}

}  // namespace

VoteMatrix::VoteMatrix(std::size_t n, std::size_t m, std::vector<std::string> lf_names)
    : VoteMatrix(n, m, std::vector<Vote>(n * m, kAbstain), std::move(lf_names)) {}

VoteMatrix::VoteMatrix(std::size_t n, std::size_t m, std::vector<Vote> votes, std::vector<std::string> lf_names)
    : n_(n), m_(m), votes_(std::move(votes)), lf_names_(std::move(lf_names)) {
  if (votes_.size() != n * m) throw Error("vote buffer size does not match n*m");
  if (lf_names_.empty()) lf_names_ = default_names(m);
  if (lf_names_.size() != m) throw Error("lf_names length does not match m");
}

bool VoteMatrix::row_covered(std::size_t i) const noexcept {
  auto r = row(i);
  return std::any_of(r.begin(), r.end(), [](Vote v) { return v != kAbstain; });
}

bool VoteMatrix::all_abstain() const noexcept {
  return std::all_of(votes_.begin(), votes_.end(), [](Vote v) { return v == kAbstain; });
}

void VoteMatrix::validate(std::size_t k) const {
  for (std::size_t idx = 0; idx < votes_.size(); ++idx) {
    Vote v = votes_[idx];
    if (v < kAbstain || (v >= 0 && static_cast<std::size_t>(v) >= k))
      throw Error("vote " + std::to_string(v) + " at (" + std::to_string(idx / std::max<std::size_t>(m_, 1)) + ", " +
                  std::to_string(idx % std::max<std::size_t>(m_, 1)) + ") outside class range");
  }
}

VoteMatrix VoteMatrix::hconcat(const VoteMatrix& left, const VoteMatrix& right) {
  if (left.n() != right.n()) throw Error("hconcat: row counts differ");
  const std::size_t n = left.n();
  const std::size_t m = left.m() + right.m();
  std::vector<Vote> votes;
  votes.reserve(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    auto l = left.row(i);
    auto r = right.row(i);
    votes.insert(votes.end(), l.begin(), l.end());
    votes.insert(votes.end(), r.begin(), r.end());
  }
  auto names = left.lf_names();
  names.insert(names.end(), right.lf_names().begin(), right.lf_names().end());
  return VoteMatrix(n, m, std::move(votes), std::move(names));
}

VoteMatrix VoteMatrix::select_rows(std::span<const std::size_t> rows) const {
  std::vector<Vote> votes;
  votes.reserve(rows.size() * m_);
  for (std::size_t i : rows) {
    auto r = row(i);
    votes.insert(votes.end(), r.begin(), r.end());
  }
  return VoteMatrix(rows.size(), m_, std::move(votes), lf_names_);
}

VoteMatrix VoteMatrix::select_columns(std::span<const std::size_t> cols) const {
  std::vector<Vote> votes;
  votes.reserve(n_ * cols.size());
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t a : cols) votes.push_back((*this)(i, a));
  std::vector<std::string> names;
  for (std::size_t a : cols) names.push_back(lf_names_.at(a));
  return VoteMatrix(n_, cols.size(), std::move(votes), std::move(names));
}

void write_votes(std::ostream& out, const VoteMatrix& votes) {
  nlohmann::json header{{"n", votes.n()}, {"m", votes.m()}, {"lf_names", votes.lf_names()}};
  out << header.dump() << '\n';
  for (std::size_t i = 0; i < votes.n(); ++i) {
    for (std::size_t a = 0; a < votes.m(); ++a) {
      if (a) out << ' ';
      out << votes(i, a);
    }
    out << '\n';
  }
}

VoteMatrix read_votes(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("vote matrix: missing header", 1);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error&) {
    throw ParseError("vote matrix: malformed header", 1);
  }
  const auto n = header.at("n").get<std::size_t>();
  const auto m = header.at("m").get<std::size_t>();
  auto names = header.at("lf_names").get<std::vector<std::string>>();
  std::vector<Vote> votes;
  votes.reserve(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw ParseError("vote matrix: expected " + std::to_string(n) + " rows", i + 2);
    const char* p = line.data();
    const char* end = p + line.size();
    std::size_t got = 0;
    while (p < end) {
      while (p < end && (*p == ' ' || *p == '\r')) ++p;
      if (p == end) break;
      Vote v{};
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc{}) throw ParseError("vote matrix: bad integer", i + 2);
      votes.push_back(v);
      ++got;
      p = next;
    }
    if (got != m) throw ParseError("vote matrix: expected " + std::to_string(m) + " votes per row", i + 2);
  }
  return VoteMatrix(n, m, std::move(votes), std::move(names));
}

void save_votes(const std::filesystem::path& path, const VoteMatrix& votes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_votes(out, votes);
}

VoteMatrix load_votes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_votes(in);
}

}  // namespace wsforge
