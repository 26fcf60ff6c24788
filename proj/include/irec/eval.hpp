#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "irec/common.hpp"
#include "irec/dataset.hpp"

namespace irec::eval {

/// Scores `items` for `user`; higher is better. Must be safe to call
/// concurrently for different users.
using Scorer = std::function<std::vector<double>(Index user, std::span<const Index> items)>;

/// NDCG@k with a single relevant item: IDCG = 1, so the value is the
/// discounted gain 1/log2(rank + 1) inside the cutoff.
inline double ndcg_at_k(std::size_t rank, std::size_t k) {
  if (rank < 1 || k < 1) throw std::invalid_argument("ndcg_at_k: rank and k must be >= 1");
  return rank <= k ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

inline int one_product_hit(std::size_t rank, std::size_t k) {
  if (rank < 1) throw std::invalid_argument("one_product_hit: rank must be >= 1");
  return rank <= k ? 1 : 0;
}

struct RankedList {
  Index user = 0;
  std::vector<Index> items;  // descending score, ties by ascending item
  std::size_t position_of_positive = 0;  // 1-based
};

/// Orders {positive} ∪ negatives by score.
inline RankedList rank_candidates(Index user, Index positive, std::span<const Index> candidates,
                                  std::span<const double> scores) {
  std::vector<std::size_t> order(candidates.size());
  for (std::size_t t = 0; t < order.size(); ++t) order[t] = t;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return candidates[a] < candidates[b];
  });
  RankedList list{user, {}, 0};
  list.items.reserve(order.size());
  for (std::size_t t = 0; t < order.size(); ++t) {
    list.items.push_back(candidates[order[t]]);
    if (candidates[order[t]] == positive) list.position_of_positive = t + 1;
  }
  return list;
}

struct UserResult {
  Index user = 0;
  std::size_t rank = 0;
  double ndcg = 0.0;
};

/// Aggregate leave-one-out metrics; the ± band is the population
/// standard deviation over tested users.
struct EvalReport {
  std::size_t k = 12;
  double ndcg_mean = 0.0;
  double ndcg_std = 0.0;
  double one_product_hit_ratio = 0.0;
  std::vector<UserResult> per_user;

  nlohmann::json to_json() const {
    return {{"k", k},
            {"n_users", per_user.size()},
            {"ndcg_mean", ndcg_mean},
            {"ndcg_std", ndcg_std},
            {"std_kind", "population"},
            {"one_product_hit_ratio", one_product_hit_ratio}};
  }

  void write_per_user_csv(std::ostream& out, const IdMap* users = nullptr) const {
    out << "user,rank,ndcg\n";
    for (const auto& r : per_user) {
      out << (users ? users->key(r.user) : std::to_string(r.user)) << ',' << r.rank << ','
          << nlohmann::json(r.ndcg).dump() << '\n';
    }
  }
};

inline EvalReport evaluate(const Scorer& scorer, const LeaveOneOutSplit& split, std::size_t k) {
  if (k < 1) throw std::invalid_argument("evaluate: k must be >= 1");
  if (split.test_negatives.size() != split.test_positives.size()) {
    throw std::invalid_argument("evaluate: split is missing negatives");
  }
  EvalReport report;
  report.k = k;
  report.per_user.resize(split.test_positives.size());
  parallel_for(split.test_positives.size(), [&](std::size_t t) {
    const auto [user, positive] = split.test_positives[t];
    std::vector<Index> candidates{positive};
    candidates.insert(candidates.end(), split.test_negatives[t].begin(), split.test_negatives[t].end());
    const auto scores = scorer(user, candidates);
    if (scores.size() != candidates.size()) throw std::runtime_error("evaluate: scorer returned wrong length");
    for (std::size_t c = 0; c < scores.size(); ++c) {
      if (!std::isfinite(scores[c])) {
        throw TrainingError("evaluate: non-finite score for user " + std::to_string(user) + ", item " +
                            std::to_string(candidates[c]));
      }
    }
    const auto list = rank_candidates(user, positive, candidates, scores);
    report.per_user[t] = {user, list.position_of_positive, ndcg_at_k(list.position_of_positive, k)};
  });

  if (report.per_user.empty()) return report;
  const double n = static_cast<double>(report.per_user.size());
  double sum = 0.0;
  double hits = 0.0;
  for (const auto& r : report.per_user) {
    sum += r.ndcg;
    hits += one_product_hit(r.rank, k);
  }
  report.ndcg_mean = sum / n;
  double var = 0.0;
  for (const auto& r : report.per_user) var += (r.ndcg - report.ndcg_mean) * (r.ndcg - report.ndcg_mean);
  report.ndcg_std = std::sqrt(var / n);
  report.one_product_hit_ratio = hits / n;
  return report;
}

struct Recommendation {
  Index item;
  double score;
};

/// Top-k items for a user by descending score (ties by item index),
/// optionally skipping items already in the user's training row.
inline std::vector<Recommendation> recommend_top_k(const Scorer& scorer, const InteractionMatrix& train,
                                                   Index user, std::size_t k, bool exclude_seen) {
  if (user >= train.n_users()) throw std::out_of_range("recommend_top_k: user out of range");
  std::vector<Index> candidates;
  for (Index i = 0; i < train.n_items(); ++i) {
    if (!exclude_seen || !train.contains(user, i)) candidates.push_back(i);
  }
  if (k > candidates.size()) {
    throw std::invalid_argument("recommend_top_k: k = " + std::to_string(k) + " exceeds " +
                                std::to_string(candidates.size()) + " candidates");
  }
  const auto scores = scorer(user, candidates);
  std::vector<std::size_t> order(candidates.size());
  for (std::size_t t = 0; t < order.size(); ++t) order[t] = t;
  auto before = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return candidates[a] < candidates[b];
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), before);
  std::vector<Recommendation> out;
  for (std::size_t t = 0; t < k; ++t) out.push_back({candidates[order[t]], scores[order[t]]});
  return out;
}

}  // namespace irec::eval
