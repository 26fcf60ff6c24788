#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "irec/acf.hpp"
#include "irec/als.hpp"
#include "irec/bpr.hpp"
#include "irec/dataset.hpp"
#include "irec/ncf.hpp"

namespace irec {

enum class ModelKind { als, bpr, ncf, acf };

inline std::string to_string(ModelKind m) {
  switch (m) {
    case ModelKind::als: return "als";
    case ModelKind::bpr: return "bpr";
    case ModelKind::ncf: return "ncf";
    case ModelKind::acf: return "acf";
  }
  return "als";
}

inline ModelKind model_from_string(const std::string& s) {
  if (s == "als") return ModelKind::als;
  if (s == "bpr") return ModelKind::bpr;
  if (s == "ncf") return ModelKind::ncf;
  if (s == "acf") return ModelKind::acf;
  throw SchemaError("unknown model '" + s + "' (expected als, bpr, ncf or acf)");
}

/// Everything a train/evaluate/tune run needs. Model blocks default to the
/// published hyperparameter tables; only the selected block is serialized.
struct RunConfig {
  ModelKind model = ModelKind::als;
  als::AlsConfig als;
  bpr::BprConfig bpr;
  ncf::NcfConfig ncf;
  acf::AcfConfig acf;
  bool pretrain = false;  // NCF: pre-train GMF and MLP, then fuse
  std::uint64_t seed = 0;
  std::size_t n_neg = 100;
  std::size_t k = 12;
  CsvSchema schema;

  /// Sets the run seed and the selected model's seed.
  void set_seed(std::uint64_t s) {
    seed = s;
    als.seed = bpr.seed = ncf.seed = acf.seed = s;
  }

  nlohmann::json model_block() const {
    switch (model) {
      case ModelKind::als: return als;
      case ModelKind::bpr: return bpr;
      case ModelKind::ncf: return ncf;
      case ModelKind::acf: return acf;
    }
    return {};
  }

  /// Replaces the selected model block after merging `patch` into it.
  void patch_model_block(const nlohmann::json& patch) {
    nlohmann::json block = model_block();
    block.merge_patch(patch);
    switch (model) {
      case ModelKind::als: als = block.get<als::AlsConfig>(); break;
      case ModelKind::bpr: bpr = block.get<bpr::BprConfig>(); break;
      case ModelKind::ncf: ncf = block.get<ncf::NcfConfig>(); break;
      case ModelKind::acf: acf = block.get<acf::AcfConfig>(); break;
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j{{"model", to_string(model)}, {"seed", seed}, {"n_neg", n_neg}, {"k", k},
                     {to_string(model), model_block()}};
    if (model == ModelKind::ncf) j["pretrain"] = pretrain;
    return j;
  }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    std::string present;
    for (const char* name : {"als", "bpr", "ncf", "acf"}) {
      if (!j.contains(name)) continue;
      if (!present.empty()) {
        throw SchemaError("config has both '" + present + "' and '" + name + "' blocks; exactly one is allowed");
      }
      present = name;
    }
    if (j.contains("model")) {
      c.model = model_from_string(j.at("model").get<std::string>());
      if (!present.empty() && present != to_string(c.model)) {
        throw SchemaError("config selects model '" + to_string(c.model) + "' but carries a '" + present + "' block");
      }
    } else if (!present.empty()) {
      c.model = model_from_string(present);
    }
    try {
      c.seed = j.value("seed", c.seed);
      c.als.seed = c.bpr.seed = c.ncf.seed = c.acf.seed = c.seed;
      c.n_neg = j.value("n_neg", c.n_neg);
      c.k = j.value("k", c.k);
      c.pretrain = j.value("pretrain", c.pretrain);
      c.schema = CsvSchema::from_json(j.contains("schema") ? j.at("schema") : j);
      if (!present.empty()) c.patch_model_block(j.at(present));
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(std::string("bad run config: ") + e.what());
    }
    return c;
  }
};

}  // namespace irec
