// implicit-rec: ingest, split, train, evaluate, tune and recommend.
//
// Exit codes: 0 ok, 1 usage, 2 input/schema error, 3 training failure,
// 4 model/data dimension mismatch, 5 tuning budget below design size.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "irec/cli.hpp"

namespace {

struct Common {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required = true) {
  cmd->add_option("--config", c.config, "JSON run config");
  cmd->add_option("--seed", c.seed, "Seed for splitting, sampling and initialization");
  auto* out = cmd->add_option("--out", c.out, "Output directory (or file for recommend)");
  if (out_required) out->required();
}

irec::RunConfig resolve(const Common& c) {
  auto cfg = irec::cli::load_config(c.config ? std::optional<std::filesystem::path>(*c.config) : std::nullopt);
  if (c.seed) cfg.set_seed(*c.seed);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Implicit-feedback recommendation: ALS, BPR, NCF and autoencoder models"};
  app.require_subcommand(1);

  Common ingest_opts;
  std::string input;
  auto* ingest = app.add_subcommand("ingest", "Aggregate a transaction CSV into a matrix snapshot");
  add_common(ingest, ingest_opts);
  ingest->add_option("--input", input, "Transaction CSV")->required();

  Common split_opts;
  std::string snapshot;
  std::optional<std::size_t> n_neg;
  auto* split = app.add_subcommand("split", "Leave-one-out split with sampled negatives");
  add_common(split, split_opts);
  split->add_option("--snapshot", snapshot, "Matrix snapshot directory")->required();
  split->add_option("--n-neg", n_neg, "Negatives per tested user (default 100)");

  Common train_opts;
  std::string train_data;
  std::optional<std::string> model_name;
  bool pretrain = false;
  auto* train = app.add_subcommand("train", "Train a model");
  add_common(train, train_opts);
  train->add_option("--data", train_data, "Split directory or snapshot")->required();
  train->add_option("--model", model_name, "als | bpr | ncf | acf");
  train->add_flag("--pretrain", pretrain, "NCF: pre-train GMF and MLP before fusing");

  Common eval_opts;
  std::string eval_model, eval_split;
  std::optional<std::size_t> eval_k;
  auto* evaluate = app.add_subcommand("evaluate", "Leave-one-out NDCG@k and hit ratio");
  add_common(evaluate, eval_opts);
  evaluate->add_option("--model-dir", eval_model, "Trained model directory")->required();
  evaluate->add_option("--split", eval_split, "Split directory")->required();
  evaluate->add_option("--k", eval_k, "Cutoff (default 12)");

  Common tune_opts;
  std::string tune_data, space_file;
  std::optional<std::string> tune_model;
  std::size_t budget = 20;
  std::size_t folds = 3;
  auto* tune = app.add_subcommand("tune", "Bayesian optimization of validation NDCG@k");
  add_common(tune, tune_opts);
  tune->add_option("--data", tune_data, "Split directory or snapshot")->required();
  tune->add_option("--space", space_file, "Search-space JSON")->required();
  tune->add_option("--model", tune_model, "als | bpr | ncf | acf");
  tune->add_option("--budget", budget, "Number of trials");
  tune->add_option("--folds", folds, "Validation folds");
  std::optional<std::size_t> tune_n_neg;
  tune->add_option("--n-neg", tune_n_neg, "Negatives per validation user (default 100)");

  Common rec_opts;
  std::string rec_model, rec_data;
  std::vector<std::string> users;
  std::size_t rec_k = 12;
  bool include_seen = false;
  auto* recommend = app.add_subcommand("recommend", "Top-k recommendations as CSV");
  add_common(recommend, rec_opts);
  recommend->add_option("--model-dir", rec_model, "Trained model directory")->required();
  recommend->add_option("--data", rec_data, "Snapshot or split with the users' purchase history")->required();
  recommend->add_option("--users", users, "User keys (default: all)")->delimiter(',');
  recommend->add_option("--k", rec_k, "Items per user");
  recommend->add_flag("--include-seen", include_seen, "Do not exclude already purchased items");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : irec::cli::kUsage;
  }

  using namespace irec::cli;
  if (*ingest) {
    return run_guarded([&] {
      const auto r = cmd_ingest(input, ingest_opts.out, resolve(ingest_opts));
      std::cout << "rows " << r.rows_read << ", skipped " << r.skipped << ", users " << r.n_users << ", items "
                << r.n_items << ", nnz " << r.nnz << ", sparsity " << r.sparsity << "\n";
    });
  }
  if (*split) {
    return run_guarded([&] {
      auto cfg = resolve(split_opts);
      if (n_neg) cfg.n_neg = *n_neg;
      cmd_split(snapshot, split_opts.out, cfg);
    });
  }
  if (*train) {
    return run_guarded([&] {
      auto cfg = resolve(train_opts);
      if (model_name) cfg.model = irec::model_from_string(*model_name);
      if (pretrain) cfg.pretrain = true;
      const auto log = cmd_train(train_data, train_opts.out, cfg);
      const auto& loss = log.at("loss");
      std::cout << "trained " << log.at("model").get<std::string>() << " for " << loss.size() << " epochs";
      if (!loss.empty()) std::cout << ", final loss " << loss.back().get<double>();
      std::cout << "\n";
    });
  }
  if (*evaluate) {
    return run_guarded([&] {
      auto cfg = resolve(eval_opts);
      if (eval_k) cfg.k = *eval_k;
      const auto r = cmd_evaluate(eval_model, eval_split, eval_opts.out, cfg);
      std::cout << "NDCG@" << r.k << " " << r.ndcg_mean << " +/- " << r.ndcg_std << " (population std), hit ratio "
                << r.one_product_hit_ratio << " over " << r.per_user.size() << " users\n";
    });
  }
  if (*tune) {
    return run_guarded([&] {
      auto cfg = resolve(tune_opts);
      if (tune_model) cfg.model = irec::model_from_string(*tune_model);
      if (tune_n_neg) cfg.n_neg = *tune_n_neg;
      const auto outcome = cmd_tune(tune_data, space_file, tune_opts.out, cfg, budget, folds);
      std::cout << "best objective " << outcome.result.best.objective << " at "
                << irec::tune::to_json(outcome.result.best.point).dump() << "\n";
    });
  }
  if (*recommend) {
    return run_guarded([&] {
      const auto s = cmd_recommend(rec_model, rec_data, rec_opts.out, users, rec_k, !include_seen);
      std::cout << "wrote recommendations for " << s.users_written << " user(s)";
      if (s.warnings) std::cout << ", " << s.warnings << " warning(s)";
      std::cout << "\n";
    });
  }
  return kUsage;
}
