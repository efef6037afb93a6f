#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "wsforge/corpus.hpp"

namespace wsforge {

// A single LF output: ABSTAIN or a class index.
using Vote = int;
inline constexpr Vote kAbstain = -1;

/// Dense n x m matrix of LF outputs, row-major (one row per point).
class VoteMatrix {
 public:
  VoteMatrix() = default;
  VoteMatrix(std::size_t n, std::size_t m, std::vector<std::string> lf_names = {});
  VoteMatrix(std::size_t n, std::size_t m, std::vector<Vote> votes, std::vector<std::string> lf_names = {});

  std::size_t n() const noexcept { return n_; }
  std::size_t m() const noexcept { return m_; }
  const std::vector<std::string>& lf_names() const noexcept { return lf_names_; }

  Vote operator()(std::size_t i, std::size_t a) const noexcept { return votes_[i * m_ + a]; }
  Vote& operator()(std::size_t i, std::size_t a) noexcept { return votes_[i * m_ + a]; }
  std::span<const Vote> row(std::size_t i) const noexcept { return {votes_.data() + i * m_, m_}; }
  const std::vector<Vote>& data() const noexcept { return votes_; }

  bool row_covered(std::size_t i) const noexcept;
  bool all_abstain() const noexcept;

  // Throws when an entry lies outside {-1} u [0, k).
  void validate(std::size_t k) const;

  // Matrices with columns appended side by side (same n).
  static VoteMatrix hconcat(const VoteMatrix& left, const VoteMatrix& right);
  VoteMatrix select_rows(std::span<const std::size_t> rows) const;
  VoteMatrix select_columns(std::span<const std::size_t> cols) const;

  bool operator==(const VoteMatrix&) const = default;

 private:
  std::size_t n_ = 0;
  std::size_t m_ = 0;
  std::vector<Vote> votes_;
  std::vector<std::string> lf_names_;
};

// Header line {"n","m","lf_names"} followed by n lines of m space-separated ints.
void write_votes(std::ostream& out, const VoteMatrix& votes);
VoteMatrix read_votes(std::istream& in);
void save_votes(const std::filesystem::path& path, const VoteMatrix& votes);
VoteMatrix load_votes(const std::filesystem::path& path);

}  // namespace wsforge
