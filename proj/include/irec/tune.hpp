#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "irec/common.hpp"
#include "irec/matrix.hpp"

namespace irec::tune {

enum class ParamKind { continuous_log, continuous_linear, integer, categorical };

struct ParamSpec {
  std::string name;
  ParamKind kind = ParamKind::continuous_linear;
  double low = 0.0;
  double high = 1.0;
  std::vector<std::string> choices;

  std::size_t encoded_width() const { return kind == ParamKind::categorical ? choices.size() : 1; }
};

using ParamValue = std::variant<double, std::int64_t, std::string>;
using Point = std::map<std::string, ParamValue>;

inline double as_double(const ParamValue& v) {
  if (const auto* d = std::get_if<double>(&v)) return *d;
  if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  throw std::invalid_argument("parameter value is categorical, not numeric");
}

struct SearchSpace {
  std::vector<ParamSpec> params;

  std::size_t encoded_dim() const {
    std::size_t d = 0;
    for (const auto& p : params) d += p.encoded_width();
    return d;
  }

  void validate() const {
    if (params.empty()) throw std::invalid_argument("search space has no parameters");
    for (const auto& p : params) {
      if (p.kind == ParamKind::categorical) {
        if (p.choices.empty()) throw std::invalid_argument("categorical parameter '" + p.name + "' has no choices");
        continue;
      }
      if (!std::isfinite(p.low) || !std::isfinite(p.high) || !(p.low < p.high)) {
        throw std::invalid_argument("parameter '" + p.name + "' needs finite bounds with low < high");
      }
      if (p.kind == ParamKind::continuous_log && !(p.low > 0.0)) {
        throw std::invalid_argument("log-scale parameter '" + p.name + "' needs a positive lower bound");
      }
    }
  }

  /// {"params": [{"name", "kind": log|linear|integer|categorical, "low", "high", "choices"}]}
  static SearchSpace from_json(const nlohmann::json& j) {
    SearchSpace s;
    for (const auto& e : j.at("params")) {
      ParamSpec p;
      p.name = e.at("name").get<std::string>();
      const auto kind = e.at("kind").get<std::string>();
      if (kind == "log" || kind == "continuous-log") {
        p.kind = ParamKind::continuous_log;
      } else if (kind == "linear" || kind == "continuous-linear") {
        p.kind = ParamKind::continuous_linear;
      } else if (kind == "integer" || kind == "int") {
        p.kind = ParamKind::integer;
      } else if (kind == "categorical") {
        p.kind = ParamKind::categorical;
      } else {
        throw SchemaError("unknown parameter kind '" + kind + "'");
      }
      if (p.kind == ParamKind::categorical) {
        p.choices = e.at("choices").get<std::vector<std::string>>();
      } else {
        p.low = e.at("low").get<double>();
        p.high = e.at("high").get<double>();
      }
      s.params.push_back(std::move(p));
    }
    s.validate();
    return s;
  }
};

inline nlohmann::json to_json(const Point& p) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, v] : p) {
    std::visit([&](const auto& x) { j[name] = x; }, v);
  }
  return j;
}

/// Maps a point into the unit hypercube: log-scale and linear parameters
/// to [0, 1], integers linearly, categoricals one-hot.
inline std::vector<double> encode(const Point& point, const SearchSpace& space) {
  std::vector<double> out;
  out.reserve(space.encoded_dim());
  for (const auto& p : space.params) {
    auto it = point.find(p.name);
    if (it == point.end()) throw std::invalid_argument("encode: point is missing '" + p.name + "'");
    if (p.kind == ParamKind::categorical) {
      const auto* s = std::get_if<std::string>(&it->second);
      if (!s) throw std::invalid_argument("encode: '" + p.name + "' expects a choice");
      auto c = std::find(p.choices.begin(), p.choices.end(), *s);
      if (c == p.choices.end()) throw std::invalid_argument("encode: '" + *s + "' is not a choice of " + p.name);
      for (std::size_t k = 0; k < p.choices.size(); ++k) out.push_back(p.choices.begin() + static_cast<std::ptrdiff_t>(k) == c ? 1.0 : 0.0);
      continue;
    }
    const double v = as_double(it->second);
    if (v < p.low || v > p.high) {
      throw std::invalid_argument("encode: '" + p.name + "' = " + std::to_string(v) + " outside bounds");
    }
    if (p.kind == ParamKind::continuous_log) {
      out.push_back((std::log10(v) - std::log10(p.low)) / (std::log10(p.high) - std::log10(p.low)));
    } else {
      out.push_back((v - p.low) / (p.high - p.low));
    }
  }
  return out;
}

/// Inverse of encode. Integers round to the nearest value; categoricals
/// take the largest coordinate of their one-hot block.
inline Point decode(std::span<const double> x, const SearchSpace& space) {
  if (x.size() != space.encoded_dim()) throw std::invalid_argument("decode: wrong vector length");
  Point point;
  std::size_t off = 0;
  for (const auto& p : space.params) {
    if (p.kind == ParamKind::categorical) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < p.choices.size(); ++k) {
        if (x[off + k] > x[off + best]) best = k;
      }
      point[p.name] = p.choices[best];
      off += p.choices.size();
      continue;
    }
    const double t = std::clamp(x[off++], 0.0, 1.0);
    if (p.kind == ParamKind::continuous_log) {
      const double lo = std::log10(p.low);
      const double hi = std::log10(p.high);
      point[p.name] = std::clamp(std::pow(10.0, lo + t * (hi - lo)), p.low, p.high);
    } else if (p.kind == ParamKind::continuous_linear) {
      point[p.name] = p.low + t * (p.high - p.low);
    } else {
      point[p.name] = static_cast<std::int64_t>(std::llround(p.low + t * (p.high - p.low)));
    }
  }
  return point;
}

namespace detail {

// One coordinate per parameter in [0, 1); categoricals pick floor(u·n).
inline Point from_raw(std::span<const double> raw, const SearchSpace& space) {
  std::vector<double> enc;
  for (std::size_t p = 0; p < space.params.size(); ++p) {
    const auto& param = space.params[p];
    if (param.kind == ParamKind::categorical) {
      const auto n = param.choices.size();
      const auto pick = std::min(n - 1, static_cast<std::size_t>(raw[p] * static_cast<double>(n)));
      for (std::size_t k = 0; k < n; ++k) enc.push_back(k == pick ? 1.0 : 0.0);
    } else {
      enc.push_back(raw[p]);
    }
  }
  return decode(enc, space);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Gaussian-process surrogate

struct KernelParams {
  double length_scale = 0.3;
  double noise = 1e-4;  // in standardized-output units
};

/// Matérn-5/2 with unit signal variance.
inline double matern52(std::span<const double> a, std::span<const double> b, double length_scale) {
  double d2 = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) d2 += (a[k] - b[k]) * (a[k] - b[k]);
  const double r = std::sqrt(5.0 * d2) / length_scale;
  return (1.0 + r + r * r / 3.0) * std::exp(-r);
}

struct Posterior {
  double mean = 0.0;
  double variance = 0.0;
};

/// Zero-mean GP on standardized outputs; predictions are returned in the
/// original output scale.
class GaussianProcess {
 public:
  GaussianProcess(std::vector<std::vector<double>> x, std::vector<double> y, KernelParams params)
      : x_(std::move(x)), params_(params) {
    if (x_.empty() || x_.size() != y.size()) throw std::invalid_argument("gp: need >= 1 observation");
    const double n = static_cast<double>(y.size());
    for (double v : y) y_mean_ += v;
    y_mean_ /= n;
    double var = 0.0;
    for (double v : y) var += (v - y_mean_) * (v - y_mean_);
    y_std_ = std::sqrt(var / n);
    if (!(y_std_ > 1e-12)) y_std_ = 1.0;
    std::vector<double> ys(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) ys[i] = (y[i] - y_mean_) / y_std_;

    const std::size_t m = x_.size();
    for (double jitter : {0.0, 1e-10, 1e-8, 1e-6, 1e-4, 1e-2}) {
      chol_ = Matrix2D(m, m);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) chol_(i, j) = matern52(x_[i], x_[j], params_.length_scale);
        chol_(i, i) += params_.noise + jitter;
      }
      if (cholesky_factor(chol_)) {
        alpha_ = ys;
        cholesky_solve(chol_, alpha_);
        log_ml_ = -0.5 * dot(ys, alpha_) - 0.5 * static_cast<double>(m) * std::log(2.0 * M_PI);
        for (std::size_t i = 0; i < m; ++i) log_ml_ -= std::log(chol_(i, i));
        return;
      }
    }
    throw Error("gp: Gram matrix is not positive definite after jitter escalation");
  }

  Posterior predict(std::span<const double> q) const {
    const std::size_t m = x_.size();
    std::vector<double> ks(m);
    for (std::size_t i = 0; i < m; ++i) ks[i] = matern52(x_[i], q, params_.length_scale);
    const double mean_std = dot(ks, alpha_);
    // v = L⁻¹ k*, variance = k** − vᵀv
    std::vector<double> v = ks;
    for (std::size_t i = 0; i < m; ++i) {
      double s = v[i];
      for (std::size_t p = 0; p < i; ++p) s -= chol_(i, p) * v[p];
      v[i] = s / chol_(i, i);
    }
    const double var_std = std::max(0.0, 1.0 - dot(v, v));
    return {y_mean_ + y_std_ * mean_std, var_std * y_std_ * y_std_};
  }

  double log_marginal_likelihood() const { return log_ml_; }

 private:
  std::vector<std::vector<double>> x_;
  KernelParams params_;
  double y_mean_ = 0.0;
  double y_std_ = 1.0;
  Matrix2D chol_;
  std::vector<double> alpha_;
  double log_ml_ = 0.0;
};

/// Length scale and noise by maximum marginal likelihood over a log grid.
inline KernelParams fit_kernel(const std::vector<std::vector<double>>& x, const std::vector<double>& y) {
  KernelParams best;
  double best_ll = -std::numeric_limits<double>::infinity();
  for (double ls : {0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0, 1.5, 2.0}) {
    for (double noise : {1e-6, 1e-4, 1e-3, 1e-2, 1e-1}) {
      try {
        GaussianProcess gp(x, y, {ls, noise});
        if (gp.log_marginal_likelihood() > best_ll) {
          best_ll = gp.log_marginal_likelihood();
          best = {ls, noise};
        }
      } catch (const Error&) {
      }
    }
  }
  return best;
}

struct Observation {
  std::vector<double> x;
  double y;
};

inline Posterior gp_posterior(const std::vector<Observation>& obs, std::span<const double> query,
                              const KernelParams& params) {
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  for (const auto& o : obs) {
    x.push_back(o.x);
    y.push_back(o.y);
  }
  return GaussianProcess(std::move(x), std::move(y), params).predict(query);
}

/// Closed-form expected improvement for maximization.
inline double expected_improvement(double mean, double variance, double best_so_far) {
  if (variance < 0.0) throw std::invalid_argument("expected_improvement: negative variance");
  const double sigma = std::sqrt(variance);
  const double gap = mean - best_so_far;
  if (sigma <= 1e-12) return std::max(0.0, gap);
  const double z = gap / sigma;
  const double cdf = 0.5 * std::erfc(-z / std::sqrt(2.0));
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
  return std::max(0.0, gap * cdf + sigma * pdf);
}

// ---------------------------------------------------------------------------
// Search loop

/// Returns one objective value per validation fold.
using Objective = std::function<std::vector<double>(const Point&, std::size_t n_folds)>;

struct Trial {
  Point point;
  std::vector<double> fold_values;
  double objective = std::numeric_limits<double>::quiet_NaN();  // mean of fold_values
  bool failed = false;
  std::string error;
  double wall_time_s = 0.0;
};

struct TuneResult {
  Trial best;
  std::vector<Trial> history;
  std::size_t design_size = 0;
};

inline std::size_t design_size(const SearchSpace& space) {
  return std::max<std::size_t>(5, 2 * space.encoded_dim());
}

namespace detail {

inline Trial run_trial(const Objective& objective, Point point, std::size_t n_folds) {
  Trial t;
  t.point = std::move(point);
  const auto start = std::chrono::steady_clock::now();
  try {
    t.fold_values = objective(t.point, n_folds);
    if (t.fold_values.empty()) throw std::runtime_error("objective returned no fold values");
    double sum = 0.0;
    for (double v : t.fold_values) {
      if (!std::isfinite(v)) throw std::runtime_error("objective returned a non-finite value");
      sum += v;
    }
    t.objective = sum / static_cast<double>(t.fold_values.size());
  } catch (const std::exception& e) {
    t.failed = true;
    t.error = e.what();
    t.objective = std::numeric_limits<double>::quiet_NaN();
  }
  t.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return t;
}

inline TuneResult finish(std::vector<Trial> history, std::size_t design) {
  TuneResult r;
  r.design_size = design;
  std::size_t best = history.size();
  for (std::size_t t = 0; t < history.size(); ++t) {
    if (history[t].failed) continue;
    if (best == history.size() || history[t].objective > history[best].objective) best = t;
  }
  if (best == history.size()) {
    throw TrainingError("tune: every trial failed" +
                        (history.empty() ? std::string() : " (last error: " + history.back().error + ")"));
  }
  r.best = history[best];
  r.history = std::move(history);
  return r;
}

inline std::vector<std::vector<double>> latin_hypercube(std::size_t n, std::size_t dim, Rng& rng) {
  std::vector<std::vector<double>> pts(n, std::vector<double>(dim));
  for (std::size_t d = 0; d < dim; ++d) {
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm);
    for (std::size_t i = 0; i < n; ++i) {
      pts[i][d] = (static_cast<double>(perm[i]) + rng.uniform()) / static_cast<double>(n);
    }
  }
  return pts;
}

}  // namespace detail

/// Bayesian optimization: Latin-hypercube design of max(5, 2·dim) points,
/// then expected-improvement maximization of a Matérn-5/2 GP surrogate
/// (1024 random candidates, best 8 refined by local perturbation).
/// Failed trials consume budget and are imputed as the worst value.
inline TuneResult tune(const SearchSpace& space, const Objective& objective, std::size_t budget,
                       std::size_t n_folds, std::uint64_t seed) {
  space.validate();
  const std::size_t design = design_size(space);
  if (budget < design) {
    throw BudgetError("tune: budget " + std::to_string(budget) + " is below the initial design size " +
                      std::to_string(design));
  }
  Rng rng(seed);
  const std::size_t raw_dim = space.params.size();
  std::vector<Trial> history;
  for (const auto& raw : detail::latin_hypercube(design, raw_dim, rng)) {
    history.push_back(detail::run_trial(objective, detail::from_raw(raw, space), n_folds));
  }

  constexpr std::size_t kCandidates = 1024;
  constexpr std::size_t kStarts = 8;
  constexpr std::size_t kRefineSteps = 24;
  while (history.size() < budget) {
    double worst = std::numeric_limits<double>::infinity();
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& t : history) {
      if (t.failed) continue;
      worst = std::min(worst, t.objective);
      best = std::max(best, t.objective);
    }
    if (!std::isfinite(worst)) worst = best = 0.0;
    std::vector<std::vector<double>> xs;
    std::vector<double> ys;
    for (const auto& t : history) {
      xs.push_back(encode(t.point, space));
      ys.push_back(t.failed ? worst : t.objective);
    }
    const GaussianProcess gp(xs, ys, fit_kernel(xs, ys));
    auto acquisition = [&](std::span<const double> raw) {
      const auto post = gp.predict(encode(detail::from_raw(raw, space), space));
      return expected_improvement(post.mean, post.variance, best);
    };

    std::vector<std::pair<double, std::vector<double>>> scored;
    for (std::size_t c = 0; c < kCandidates; ++c) {
      std::vector<double> raw(raw_dim);
      for (double& v : raw) v = rng.uniform();
      scored.emplace_back(acquisition(raw), std::move(raw));
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    auto chosen = scored.front();
    for (std::size_t s = 0; s < std::min(kStarts, scored.size()); ++s) {
      auto cur = scored[s];
      double step = 0.05;
      for (std::size_t it = 0; it < kRefineSteps; ++it) {
        std::vector<double> next = cur.second;
        for (double& v : next) v = std::clamp(v + step * rng.normal(), 0.0, 1.0 - 1e-12);
        const double a = acquisition(next);
        if (a > cur.first) {
          cur = {a, std::move(next)};
        } else {
          step *= 0.85;
        }
      }
      if (cur.first > chosen.first) chosen = std::move(cur);
    }
    history.push_back(detail::run_trial(objective, detail::from_raw(chosen.second, space), n_folds));
  }
  return detail::finish(std::move(history), design);
}

/// Uniform random search with the same trial bookkeeping.
inline TuneResult random_search(const SearchSpace& space, const Objective& objective, std::size_t budget,
                                std::size_t n_folds, std::uint64_t seed) {
  space.validate();
  if (budget < 1) throw BudgetError("random_search: budget must be >= 1");
  Rng rng(seed);
  std::vector<Trial> history;
  for (std::size_t t = 0; t < budget; ++t) {
    std::vector<double> raw(space.params.size());
    for (double& v : raw) v = rng.uniform();
    history.push_back(detail::run_trial(objective, detail::from_raw(raw, space), n_folds));
  }
  return detail::finish(std::move(history), 0);
}

/// Serialized trial history. Timing is optional so that reproducibility
/// checks can compare files byte for byte.
inline nlohmann::json history_to_json(const TuneResult& r, bool include_timing = true) {
  nlohmann::json trials = nlohmann::json::array();
  for (std::size_t t = 0; t < r.history.size(); ++t) {
    const auto& tr = r.history[t];
    nlohmann::json j{{"trial", t + 1},
                     {"point", to_json(tr.point)},
                     {"fold_values", tr.fold_values},
                     {"objective", tr.failed ? nlohmann::json(nullptr) : nlohmann::json(tr.objective)},
                     {"failed", tr.failed}};
    if (tr.failed) j["error"] = tr.error;
    if (include_timing) j["wall_time_s"] = tr.wall_time_s;
    trials.push_back(std::move(j));
  }
  return {{"design_size", r.design_size},
          {"best", {{"point", to_json(r.best.point)}, {"objective", r.best.objective}}},
          {"trials", trials}};
}

}  // namespace irec::tune
