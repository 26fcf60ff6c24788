#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "irec/config.hpp"
#include "irec/dataset.hpp"
#include "irec/eval.hpp"
#include "irec/models.hpp"
#include "irec/tune.hpp"

// Implementation of the implicit-rec subcommands. Each command returns
// normally on success and throws an irec::Error subclass on failure;
// run_guarded() turns those into the documented exit codes.
namespace irec::cli {

namespace fs = std::filesystem;

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kSchema = 2,
  kTraining = 3,
  kDimension = 4,
  kBudget = 5,
};

inline int run_guarded(const std::function<void()>& fn, std::ostream& err = std::cerr) {
  try {
    fn();
    return kOk;
  } catch (const SchemaError& e) {
    err << "error: " << e.what() << "\n";
    return kSchema;
  } catch (const TrainingError& e) {
    err << "training failed: " << e.what() << "\n";
    return kTraining;
  } catch (const DimensionMismatch& e) {
    err << "dimension mismatch: " << e.what() << "\n";
    return kDimension;
  } catch (const BudgetError& e) {
    err << "error: " << e.what() << "\n";
    return kBudget;
  } catch (const nlohmann::json::exception& e) {
    err << "error: malformed JSON input: " << e.what() << "\n";
    return kSchema;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
}

inline nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(io::read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("cannot parse " + path.string() + ": " + e.what());
  }
}

inline RunConfig load_config(const std::optional<fs::path>& path) {
  return path ? RunConfig::from_json(read_json(*path)) : RunConfig{};
}

/// A data directory is either a split (train/ + test.json) or a snapshot.
inline InteractionMatrix load_training_matrix(const fs::path& dir) {
  if (fs::exists(dir / "test.json")) return load_snapshot(dir / "train");
  return load_snapshot(dir);
}

// ---------------------------------------------------------------------------

struct IngestReport {
  std::size_t rows_read = 0;
  std::size_t skipped = 0;
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  std::size_t nnz = 0;
  double sparsity = 0.0;
};

inline IngestReport cmd_ingest(const fs::path& input, const fs::path& out, const RunConfig& cfg) {
  const auto ingested = ingest_csv(input, cfg.schema);
  if (ingested.records.empty()) throw SchemaError("no valid rows in " + input.string());
  const auto m = build_matrix(ingested.records);
  save_snapshot(m, out);
  IngestReport r{ingested.rows_read, ingested.skipped, m.n_users(), m.n_items(), m.nnz(), m.sparsity()};
  const nlohmann::json j{{"rows_read", r.rows_read}, {"skipped", r.skipped}, {"n_users", r.n_users},
                         {"n_items", r.n_items},     {"nnz", r.nnz},         {"sparsity", r.sparsity}};
  io::write_text(out / "ingest_report.json", j.dump(1) + "\n");
  return r;
}

inline void cmd_split(const fs::path& snapshot, const fs::path& out, const RunConfig& cfg) {
  const auto m = load_snapshot(snapshot);
  const auto split = leave_one_out_split(m, cfg.n_neg, cfg.seed);
  save_split(split, out);
  const nlohmann::json j{{"seed", cfg.seed},
                         {"n_neg", cfg.n_neg},
                         {"tested_users", split.test_positives.size()},
                         {"excluded_users", split.excluded_users.size()},
                         {"train_nnz", split.train.nnz()}};
  io::write_text(out / "split_report.json", j.dump(1) + "\n");
}

// ---------------------------------------------------------------------------

/// Trains the configured model on `data` and writes it to `out` with
/// train_log.json holding the per-epoch loss trace.
inline nlohmann::json train_and_save(const InteractionMatrix& data, const RunConfig& cfg, const fs::path& out) {
  fs::create_directories(out);
  nlohmann::json log{{"model", to_string(cfg.model)}};
  try {
    switch (cfg.model) {
      case ModelKind::als: {
        const auto fit = als::fit(data, cfg.als);
        std::vector<double> per_epoch;
        for (std::size_t e = 1; e < fit.objective_trace.size(); e += 2) per_epoch.push_back(fit.objective_trace[e]);
        log["loss"] = per_epoch;
        log["half_sweep_objective"] = fit.objective_trace;
        als::save(fit.model, cfg.als, out);
        break;
      }
      case ModelKind::bpr: {
        const auto fit = bpr::fit(data, cfg.bpr);
        log["loss"] = fit.epoch_loss;
        bpr::save(fit.model, cfg.bpr, out);
        break;
      }
      case ModelKind::ncf: {
        std::optional<ncf::NeuMfModel> init;
        if (cfg.pretrain) {
          auto pre = ncf::pretrain_and_fuse(data, cfg.ncf);
          ncf::save(pre.gmf.model, cfg.ncf, out / "gmf");
          ncf::save(pre.mlp.model, cfg.ncf, out / "mlp");
          log["gmf_loss"] = pre.gmf.epoch_loss;
          log["mlp_loss"] = pre.mlp.epoch_loss;
          init = std::move(pre.fused);
        }
        const auto fit = ncf::fit(data, cfg.ncf, std::move(init));
        log["loss"] = fit.epoch_loss;
        log["pretrained"] = cfg.pretrain;
        ncf::save(fit.model, cfg.ncf, out);
        break;
      }
      case ModelKind::acf: {
        const auto fit = acf::fit(data, cfg.acf);
        log["loss"] = fit.epoch_loss;
        acf::save(fit.model, cfg.acf, out);
        break;
      }
    }
  } catch (const std::invalid_argument& e) {
    throw TrainingError(e.what());
  }
  log["config"] = cfg.model_block();
  io::write_text(out / "train_log.json", log.dump(1) + "\n");
  io::write_text(out / "run_config.json", cfg.to_json().dump(1) + "\n");
  return log;
}

inline nlohmann::json cmd_train(const fs::path& data_dir, const fs::path& out, const RunConfig& cfg) {
  return train_and_save(load_training_matrix(data_dir), cfg, out);
}

inline eval::EvalReport cmd_evaluate(const fs::path& model_dir, const fs::path& split_dir, const fs::path& out,
                                     const RunConfig& cfg) {
  const auto split = load_split(split_dir);
  auto model = std::make_shared<const AnyModel>(load_model(model_dir));
  const auto scorer = make_scorer(model, split.train);
  const auto report = eval::evaluate(scorer, split, cfg.k);
  fs::create_directories(out);
  io::write_text(out / "metrics.json", report.to_json().dump(1) + "\n");
  std::ofstream csv(out / "per_user.csv", std::ios::trunc);
  report.write_per_user_csv(csv, &split.train.user_ids);
  return report;
}

// ---------------------------------------------------------------------------

/// Mean validation NDCG@k over folds; fold f re-splits the training
/// matrix leave-one-out with its own negative-sampling seed.
inline tune::Objective validation_objective(const InteractionMatrix& train, const RunConfig& base) {
  return [&train, base](const tune::Point& point, std::size_t n_folds) {
    RunConfig cfg = base;
    cfg.patch_model_block(tune::to_json(point));
    std::vector<double> folds;
    for (std::size_t f = 0; f < n_folds; ++f) {
      const auto val = leave_one_out_split(train, cfg.n_neg, derive_seed(cfg.seed, 500 + f));
      AnyModel model = [&]() -> AnyModel {
        switch (cfg.model) {
          case ModelKind::als: return als::fit(val.train, cfg.als).model;
          case ModelKind::bpr: return bpr::fit(val.train, cfg.bpr).model;
          case ModelKind::ncf: {
            std::optional<ncf::NeuMfModel> init;
            if (cfg.pretrain) init = ncf::pretrain_and_fuse(val.train, cfg.ncf).fused;
            return ncf::fit(val.train, cfg.ncf, std::move(init)).model;
          }
          case ModelKind::acf: return acf::fit(val.train, cfg.acf).model;
        }
        throw std::logic_error("unreachable");
      }();
      auto shared = std::make_shared<const AnyModel>(std::move(model));
      folds.push_back(eval::evaluate(make_scorer(shared, val.train), val, cfg.k).ndcg_mean);
    }
    return folds;
  };
}

struct TuneOutcome {
  tune::TuneResult result;
  RunConfig best_config;
};

inline TuneOutcome cmd_tune(const fs::path& data_dir, const fs::path& space_file, const fs::path& out,
                            const RunConfig& cfg, std::size_t budget, std::size_t n_folds = 3) {
  const auto space = [&] {
    try {
      return tune::SearchSpace::from_json(read_json(space_file));
    } catch (const std::invalid_argument& e) {
      throw SchemaError(space_file.string() + ": " + e.what());
    }
  }();
  const auto train = load_training_matrix(data_dir);
  auto result = tune::tune(space, validation_objective(train, cfg), budget, n_folds, cfg.seed);
  RunConfig best = cfg;
  best.patch_model_block(tune::to_json(result.best.point));
  fs::create_directories(out);
  io::write_text(out / "tune_history.json", tune::history_to_json(result).dump(1) + "\n");
  io::write_text(out / "best_config.json", best.to_json().dump(1) + "\n");
  return {std::move(result), best};
}

// ---------------------------------------------------------------------------

struct RecommendSummary {
  std::size_t users_written = 0;
  std::size_t warnings = 0;
};

/// Writes `user_key,rank,item_key,score` rows. Unknown user keys and users
/// with fewer than k candidates are reported in `<out>.errors.csv`.
inline RecommendSummary cmd_recommend(const fs::path& model_dir, const fs::path& data_dir, const fs::path& out_csv,
                                      const std::vector<std::string>& user_keys, std::size_t k, bool exclude_seen,
                                      std::ostream& warn = std::cerr) {
  const auto data = load_training_matrix(data_dir);
  auto model = std::make_shared<const AnyModel>(load_model(model_dir));
  const auto scorer = make_scorer(model, data);

  std::vector<std::pair<std::string, std::optional<Index>>> targets;
  if (user_keys.empty()) {
    for (std::size_t u = 0; u < data.n_users(); ++u) {
      targets.emplace_back(data.user_ids.key(static_cast<Index>(u)), static_cast<Index>(u));
    }
  } else {
    for (const auto& key : user_keys) targets.emplace_back(key, data.user_ids.find(key));
  }

  if (out_csv.has_parent_path()) fs::create_directories(out_csv.parent_path());
  std::ofstream out(out_csv, std::ios::trunc);
  if (!out) throw Error("cannot write " + out_csv.string());
  out << "user_key,rank,item_key,score\n";
  std::ostringstream errors;
  RecommendSummary summary;
  for (const auto& [key, user] : targets) {
    if (!user) {
      errors << detail::csv_escape(key) << ",unknown user key\n";
      ++summary.warnings;
      continue;
    }
    std::size_t available = 0;
    for (Index i = 0; i < data.n_items(); ++i) available += (!exclude_seen || !data.contains(*user, i)) ? 1 : 0;
    const std::size_t take = std::min(k, available);
    if (take < k) {
      errors << detail::csv_escape(key) << ",only " << take << " candidate items\n";
      ++summary.warnings;
    }
    const auto recs = eval::recommend_top_k(scorer, data, *user, take, exclude_seen);
    for (std::size_t r = 0; r < recs.size(); ++r) {
      out << detail::csv_escape(key) << ',' << r + 1 << ',' << detail::csv_escape(data.item_ids.key(recs[r].item))
          << ',' << nlohmann::json(recs[r].score).dump() << '\n';
    }
    ++summary.users_written;
  }
  if (summary.warnings > 0) {
    io::write_text(fs::path(out_csv.string() + ".errors.csv"), "user_key,error\n" + errors.str());
    warn << "warning: " << summary.warnings << " user(s) reported in " << out_csv.string() << ".errors.csv\n";
  }
  return summary;
}

}  // namespace irec::cli
