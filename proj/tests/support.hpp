#pragma once

// Helpers shared by the unit tests and the acceptance binary: small matrix
// builders, planted-structure generators, finite differences and scratch
// directories.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <unistd.h>

#include "irec/common.hpp"
#include "irec/dataset.hpp"

namespace irec::testing {

struct Cell {
  Index u;
  Index i;
  double count = 1.0;
  std::int64_t time = InteractionMatrix::kNoTimestamp;
};

/// Builds a matrix with user keys "u<idx>" and item keys "i<idx>" so that
/// dense indices equal the numbers used here. Cells must be distinct.
inline InteractionMatrix from_cells(std::size_t n_users, std::size_t n_items, std::vector<Cell> cells) {
  std::sort(cells.begin(), cells.end(),
            [](const Cell& a, const Cell& b) { return std::pair(a.u, a.i) < std::pair(b.u, b.i); });
  InteractionMatrix m;
  m.rows.n_rows = n_users;
  m.rows.n_cols = n_items;
  m.rows.row_ptr.assign(n_users + 1, 0);
  for (std::size_t t = 0; t < cells.size(); ++t) {
    const auto& c = cells[t];
    m.rows.cols.push_back(c.i);
    m.rows.values.push_back(c.count);
    m.timestamps.push_back(c.time);
    m.sequence.push_back(t);
    if (c.time != InteractionMatrix::kNoTimestamp) m.has_timestamps = true;
    ++m.rows.row_ptr[c.u + 1];
  }
  for (std::size_t u = 0; u < n_users; ++u) m.rows.row_ptr[u + 1] += m.rows.row_ptr[u];
  for (std::size_t u = 0; u < n_users; ++u) m.user_ids.intern("u" + std::to_string(u));
  for (std::size_t i = 0; i < n_items; ++i) m.item_ids.intern("i" + std::to_string(i));
  return m;
}

/// Users and items are split into `blocks` groups; each user buys
/// `per_user` distinct items, each from its own block with probability
/// `in_block`. Timestamps are random so the held-out item is random too.
inline InteractionMatrix planted_blocks(std::size_t n_users, std::size_t n_items, std::size_t blocks,
                                        std::size_t per_user, double in_block, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Cell> cells;
  const std::size_t block_items = n_items / blocks;
  for (std::size_t u = 0; u < n_users; ++u) {
    const std::size_t b = u % blocks;
    std::set<Index> chosen;
    while (chosen.size() < per_user) {
      Index i;
      if (rng.uniform() < in_block) {
        i = static_cast<Index>(b * block_items + rng.index(block_items));
      } else {
        i = static_cast<Index>(rng.index(n_items));
      }
      chosen.insert(i);
    }
    for (Index i : chosen) {
      cells.push_back({static_cast<Index>(u), i, static_cast<double>(1 + rng.index(3)),
                       static_cast<std::int64_t>(rng.index(1'000'000))});
    }
  }
  return from_cells(n_users, n_items, std::move(cells));
}

/// Observed cells drawn with probability increasing in a planted rank-r
/// score, so the pattern is low rank but noisy.
inline InteractionMatrix planted_low_rank(std::size_t n_users, std::size_t n_items, std::size_t rank,
                                          double density, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> a(n_users, std::vector<double>(rank));
  std::vector<std::vector<double>> b(n_items, std::vector<double>(rank));
  for (auto& row : a) {
    for (double& x : row) x = rng.normal();
  }
  for (auto& row : b) {
    for (double& x : row) x = rng.normal();
  }
  std::vector<std::tuple<double, Index, Index>> scored;
  for (std::size_t u = 0; u < n_users; ++u) {
    for (std::size_t i = 0; i < n_items; ++i) {
      double s = 0.0;
      for (std::size_t r = 0; r < rank; ++r) s += a[u][r] * b[i][r];
      scored.emplace_back(s + 0.3 * rng.normal(), static_cast<Index>(u), static_cast<Index>(i));
    }
  }
  std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) { return std::get<0>(x) > std::get<0>(y); });
  const auto keep = static_cast<std::size_t>(density * static_cast<double>(n_users * n_items));
  std::vector<Cell> cells;
  for (std::size_t t = 0; t < keep; ++t) {
    cells.push_back({std::get<1>(scored[t]), std::get<2>(scored[t]), static_cast<double>(1 + rng.index(3)),
                     static_cast<std::int64_t>(rng.index(1'000'000))});
  }
  return from_cells(n_users, n_items, std::move(cells));
}

/// Central difference of f with respect to x, restoring x afterwards.
inline double central_difference(const std::function<double()>& f, double& x, double h = 1e-6) {
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2.0 * h);
}

/// Relative error with an absolute floor so that tiny gradients compare
/// on the absolute scale of the finite-difference noise.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Area under the ROC curve of positives vs negatives (ties count half).
inline double auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double wins = 0.0;
  for (double p : pos) {
    for (double n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  }
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("irec_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace irec::testing
