#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "irec/common.hpp"
#include "irec/dataset.hpp"
#include "irec/factors.hpp"
#include "irec/matrix.hpp"

namespace irec::als {

/// Implicit ALS hyperparameters. `learning_rate` and `batch_size` are
/// carried for configuration parity only; the exact alternating solver
/// does not use them.
struct AlsConfig {
  std::size_t k = 200;
  double reg = 1e-4;
  double alpha = 15.0;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  double learning_rate = 0.01;
  std::size_t batch_size = 512;

  void validate() const {
    if (k < 1) throw std::invalid_argument("als: k must be >= 1");
    if (!(reg >= 0.0)) throw std::invalid_argument("als: reg must be >= 0");
    if (!(alpha >= 0.0)) throw std::invalid_argument("als: alpha must be >= 0");
    if (epochs < 1) throw std::invalid_argument("als: epochs must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const AlsConfig& c) {
  j = {{"k", c.k},           {"reg", c.reg},         {"alpha", c.alpha},
       {"epochs", c.epochs}, {"seed", c.seed},       {"learning_rate", c.learning_rate},
       {"batch_size", c.batch_size}};
}

inline void from_json(const nlohmann::json& j, AlsConfig& c) {
  c.k = j.value("k", c.k);
  c.reg = j.value("reg", c.reg);
  c.alpha = j.value("alpha", c.alpha);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
}

inline double confidence(double r, double alpha) { return 1.0 + alpha * r; }

/// Weighted squared error over all M×N cells plus L2 penalty. Unobserved
/// cells (preference 0, confidence 1) are summed in closed form via QᵀQ.
inline double als_objective(const FactorModel& model, const InteractionMatrix& train,
                            const AlsConfig& cfg) {
  if (model.n_users() != train.n_users() || model.n_items() != train.n_items()) {
    throw DimensionMismatch("als_objective: model and matrix shapes differ");
  }
  const Matrix2D gq = gram(model.Q);
  const std::size_t k = model.k();
  double total = 0.0;
  for (std::size_t u = 0; u < train.n_users(); ++u) {
    auto p = model.P.row(u);
    double all_cells = 0.0;
    for (std::size_t a = 0; a < k; ++a) all_cells += p[a] * dot(gq.row(a), p);
    double observed = 0.0;
    auto items = train.items_of(u);
    auto counts = train.counts_of(u);
    for (std::size_t t = 0; t < items.size(); ++t) {
      const double s = dot(p, model.Q.row(items[t]));
      const double c = confidence(counts[t], cfg.alpha);
      observed += c * (1.0 - s) * (1.0 - s) - s * s;
    }
    total += all_cells + observed;
  }
  return total + cfg.reg * (model.P.squared_norm() + model.Q.squared_norm());
}

/// Exact regularized least-squares solve for every row of one side while
/// the other side (`fixed`, n_cols × k) is held constant. Row r minimizes
/// Σ_i c_ri (p_ri − xᵀy_i)² + reg ‖x‖² using
/// (YᵀY + Yᵀ(C_r − I)Y + reg I) x = Yᵀ C_r p_r.
inline Matrix2D solve_side(const Matrix2D& fixed, const Csr& side, const AlsConfig& cfg) {
  if (fixed.rows() != side.n_cols) {
    throw std::invalid_argument("solve_side: fixed factors do not match matrix columns");
  }
  const std::size_t k = fixed.cols();
  const Matrix2D yty = gram(fixed);
  Matrix2D out(side.n_rows, k);
  parallel_for(side.n_rows, [&](std::size_t r) {
    Matrix2D a = yty;
    for (std::size_t d = 0; d < k; ++d) a(d, d) += cfg.reg;
    std::vector<double> b(k, 0.0);
    auto cols = side.row_cols(r);
    auto vals = side.row_values(r);
    for (std::size_t t = 0; t < cols.size(); ++t) {
      const double c = confidence(vals[t], cfg.alpha);
      auto y = fixed.row(cols[t]);
      const double w = c - 1.0;
      for (std::size_t i = 0; i < k; ++i) {
        b[i] += c * y[i];
        const double wy = w * y[i];
        if (wy == 0.0) continue;
        double* ai = &a(i, 0);
        for (std::size_t j = 0; j <= i; ++j) ai[j] += wy * y[j];
      }
    }
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = i + 1; j < k; ++j) a(i, j) = a(j, i);
    }
    if (!cholesky_factor(a)) {
      throw TrainingError("solve_side: normal equations for row " + std::to_string(r) +
                          " are singular (reg = " + std::to_string(cfg.reg) + ")");
    }
    cholesky_solve(a, b);
    std::copy(b.begin(), b.end(), out.row(r).begin());
  });
  return out;
}

struct AlsFit {
  FactorModel model;
  /// Objective after each half-sweep (users, then items), 2·epochs entries.
  std::vector<double> objective_trace;
};

inline AlsFit fit(const InteractionMatrix& train, const AlsConfig& cfg) {
  cfg.validate();
  if (train.nnz() == 0) throw std::invalid_argument("als::fit: empty training matrix");
  AlsFit res{init_factors(train.n_users(), train.n_items(), cfg.k, cfg.seed), {}};
  const Csr by_item = train.rows.transpose();
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    res.model.P = solve_side(res.model.Q, train.rows, cfg);
    res.objective_trace.push_back(als_objective(res.model, train, cfg));
    res.model.Q = solve_side(res.model.P, by_item, cfg);
    res.objective_trace.push_back(als_objective(res.model, train, cfg));
  }
  if (!res.model.P.all_finite() || !res.model.Q.all_finite()) {
    throw TrainingError("als::fit produced non-finite factors");
  }
  return res;
}

inline void save(const FactorModel& m, const AlsConfig& cfg, const std::filesystem::path& dir) {
  save_factors(m, dir, "als.json", {{"model", "als"}, {"config", cfg}});
}

}  // namespace irec::als
