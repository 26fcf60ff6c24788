#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <variant>

#include "irec/acf.hpp"
#include "irec/als.hpp"
#include "irec/bpr.hpp"
#include "irec/eval.hpp"
#include "irec/factors.hpp"
#include "irec/ncf.hpp"

namespace irec {

/// A trained model of any of the four families, as loaded from disk.
using AnyModel = std::variant<FactorModel, ncf::NeuMfModel, acf::AcfModel>;

inline std::size_t model_items(const AnyModel& m) {
  return std::visit([](const auto& x) -> std::size_t { return x.n_items(); }, m);
}

/// User count, or 0 for models that score from the interaction row alone.
inline std::size_t model_users(const AnyModel& m) {
  if (const auto* f = std::get_if<FactorModel>(&m)) return f->n_users();
  if (const auto* n = std::get_if<ncf::NeuMfModel>(&m)) return n->n_users();
  return 0;
}

/// Model family stored in `dir`, from its manifest file name.
inline std::string detect_model(const std::filesystem::path& dir) {
  for (const char* name : {"als", "bpr", "ncf", "acf"}) {
    if (std::filesystem::exists(dir / (std::string(name) + ".json"))) return name;
  }
  throw SchemaError("no model manifest (als.json, bpr.json, ncf.json, acf.json) in " + dir.string());
}

inline AnyModel load_model(const std::filesystem::path& dir) {
  const auto kind = detect_model(dir);
  if (kind == "als" || kind == "bpr") return load_factors(dir, kind + ".json");
  if (kind == "ncf") return ncf::load(dir);
  return acf::load(dir);
}

inline void check_dimensions(const AnyModel& m, const InteractionMatrix& data) {
  const std::size_t users = model_users(m);
  if (model_items(m) != data.n_items() || (users != 0 && users != data.n_users())) {
    throw DimensionMismatch("model expects " + std::to_string(users) + " users x " +
                            std::to_string(model_items(m)) + " items, data has " +
                            std::to_string(data.n_users()) + " x " + std::to_string(data.n_items()));
  }
}

/// Ranking scorer over a loaded model. NCF scores are output logits (same
/// order as probabilities without saturation ties); ACF scores are
/// reconstruction probabilities from the user's row in `data`.
inline eval::Scorer make_scorer(std::shared_ptr<const AnyModel> model, const InteractionMatrix& data) {
  check_dimensions(*model, data);
  if (std::holds_alternative<FactorModel>(*model)) {
    return [model](Index u, std::span<const Index> items) {
      const auto& f = std::get<FactorModel>(*model);
      std::vector<double> s;
      s.reserve(items.size());
      for (Index i : items) s.push_back(score(f, u, i));
      return s;
    };
  }
  if (std::holds_alternative<ncf::NeuMfModel>(*model)) {
    return [model](Index u, std::span<const Index> items) {
      return ncf::logits(std::get<ncf::NeuMfModel>(*model), u, items);
    };
  }
  const InteractionMatrix* rows = &data;
  return [model, rows](Index u, std::span<const Index> items) {
    return acf::score_user(std::get<acf::AcfModel>(*model), *rows, u, items);
  };
}

}  // namespace irec
