#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "irec/dataset.hpp"
#include "irec/factors.hpp"
#include "irec/neural.hpp"

namespace irec::bpr {

struct BprConfig {
  std::size_t k = 200;
  double learning_rate = 0.01;
  double reg = 1e-4;
  std::size_t epochs = 200;
  std::size_t batch_size = 512;
  std::uint64_t seed = 0;

  void validate() const {
    if (k < 1) throw std::invalid_argument("bpr: k must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("bpr: learning_rate must be > 0");
    if (!(reg >= 0.0)) throw std::invalid_argument("bpr: reg must be >= 0");
    if (epochs < 1 || batch_size < 1) throw std::invalid_argument("bpr: epochs and batch_size must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const BprConfig& c) {
  j = {{"k", c.k},           {"learning_rate", c.learning_rate}, {"reg", c.reg},
       {"epochs", c.epochs}, {"batch_size", c.batch_size},       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, BprConfig& c) {
  c.k = j.value("k", c.k);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.reg = j.value("reg", c.reg);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
}

/// x̂_uij = score(u, i) − score(u, j).
inline double preference_gap(const FactorModel& m, const Triplet& t) {
  return score(m, t.u, t.i) - score(m, t.u, t.j);
}

/// −ln σ(x̂_uij) + reg (‖p_u‖² + ‖q_i‖² + ‖q_j‖²).
inline double pairwise_loss(const FactorModel& m, const Triplet& t, double reg) {
  const double x = preference_gap(m, t);
  const double penalty =
      dot(m.P.row(t.u), m.P.row(t.u)) + dot(m.Q.row(t.i), m.Q.row(t.i)) + dot(m.Q.row(t.j), m.Q.row(t.j));
  return neural::softplus(-x) + reg * penalty;
}

struct PairwiseGradient {
  double loss = 0.0;  // summed over the batch
  neural::SparseRowGrad user;
  neural::SparseRowGrad item;
};

/// Loss and gradient of Σ_batch pairwise_loss. Only rows named in the
/// batch receive gradient.
inline PairwiseGradient pairwise_gradient(const FactorModel& m, std::span<const Triplet> batch,
                                          double reg) {
  const std::size_t k = m.k();
  PairwiseGradient g{0.0, neural::SparseRowGrad(k), neural::SparseRowGrad(k)};
  for (const Triplet& t : batch) {
    g.loss += pairwise_loss(m, t, reg);
    const double x = preference_gap(m, t);
    const double w = neural::sigmoid(-x);  // −d/dx ln σ(x)
    auto p = m.P.row(t.u);
    auto qi = m.Q.row(t.i);
    auto qj = m.Q.row(t.j);
    auto gp = g.user.row(t.u);
    for (std::size_t a = 0; a < k; ++a) gp[a] += -w * (qi[a] - qj[a]) + 2.0 * reg * p[a];
    auto gi = g.item.row(t.i);
    for (std::size_t a = 0; a < k; ++a) gi[a] += -w * p[a] + 2.0 * reg * qi[a];
    auto gj = g.item.row(t.j);
    for (std::size_t a = 0; a < k; ++a) gj[a] += w * p[a] + 2.0 * reg * qj[a];
  }
  return g;
}

struct Optimizer {
  neural::AdamState user;
  neural::AdamState item;

  static Optimizer for_model(const FactorModel& m, double learning_rate) {
    return {neural::AdamState::for_size(m.P.size(), learning_rate),
            neural::AdamState::for_size(m.Q.size(), learning_rate)};
  }
};

/// One Adam update on the summed batch loss. Returns the loss evaluated
/// before the update.
inline double sgd_step(FactorModel& m, std::span<const Triplet> batch, const BprConfig& cfg,
                       Optimizer& opt) {
  if (batch.empty()) throw std::invalid_argument("bpr::sgd_step: empty batch");
  auto g = pairwise_gradient(m, batch, cfg.reg);
  if (!std::isfinite(g.loss)) throw TrainingError("bpr: non-finite loss");
  neural::adam_step_rows(m.P, g.user, opt.user);
  neural::adam_step_rows(m.Q, g.item, opt.item);
  return g.loss;
}

struct BprFit {
  FactorModel model;
  std::vector<double> epoch_loss;  // mean pairwise loss per epoch
};

/// Each epoch draws nnz fresh triplets and updates in batches.
inline BprFit fit(const InteractionMatrix& train, const BprConfig& cfg) {
  cfg.validate();
  users_with_negatives(train);
  BprFit res{init_factors(train.n_users(), train.n_items(), cfg.k, cfg.seed), {}};
  auto opt = Optimizer::for_model(res.model, cfg.learning_rate);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const auto triplets = sample_triplets(train, train.nnz(), derive_seed(cfg.seed, 1000 + e));
    double total = 0.0;
    for (std::size_t b = 0; b < triplets.size(); b += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, triplets.size() - b);
      total += sgd_step(res.model, std::span(triplets).subspan(b, len), cfg, opt);
    }
    res.epoch_loss.push_back(total / static_cast<double>(triplets.size()));
  }
  return res;
}

inline void save(const FactorModel& m, const BprConfig& cfg, const std::filesystem::path& dir) {
  save_factors(m, dir, "bpr.json", {{"model", "bpr"}, {"config", cfg}});
}

}  // namespace irec::bpr
