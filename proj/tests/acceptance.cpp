// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails. Desk-scale configurations are fixed below; the
// rationale for each lives next to it.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "irec/eval.hpp"
#include "irec/models.hpp"
#include "irec/tune.hpp"
#include "support.hpp"

namespace {

using namespace irec;
using testing::central_difference;
using testing::relative_error;

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void run(int id, const std::string& name, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o{false, ""};
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!o.pass) ++failures;
  std::printf("[%s] %2d %-28s %7.2fs  %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), secs, o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Metric oracle

double brute_force_ndcg(std::size_t rank, std::size_t k, std::size_t len) {
  std::vector<double> rel(len, 0.0);
  rel[rank - 1] = 1.0;
  auto dcg = [&](const std::vector<double>& r) {
    double s = 0.0;
    for (std::size_t p = 0; p < std::min(k, r.size()); ++p) s += (std::pow(2.0, r[p]) - 1.0) / std::log2(p + 2.0);
    return s;
  };
  auto ideal = rel;
  std::sort(ideal.rbegin(), ideal.rend());
  return dcg(rel) / dcg(ideal);
}

Outcome metric_oracle() {
  std::size_t checked = 0, bad = 0;
  for (std::size_t k : {1, 5, 10, 12, 20}) {
    for (std::size_t rank = 1; rank <= 101; ++rank) {
      ++checked;
      if (eval::ndcg_at_k(rank, k) != brute_force_ndcg(rank, k, 101)) ++bad;
      if (eval::one_product_hit(rank, k) != (rank <= k ? 1 : 0)) ++bad;
    }
  }
  return {bad == 0, std::to_string(checked) + " (rank, k) pairs, " + std::to_string(bad) + " mismatches"};
}

// ---------------------------------------------------------------------------
// 2. Random-scorer calibration

Outcome random_calibration() {
  const std::size_t users = 2500, n_neg = 100, k = 12;
  LeaveOneOutSplit s;
  s.n_neg = n_neg;
  s.train = testing::from_cells(users, n_neg + 1, {});
  std::vector<Index> negs;
  for (Index i = 1; i <= n_neg; ++i) negs.push_back(i);
  for (std::size_t u = 0; u < users; ++u) {
    s.test_positives.emplace_back(static_cast<Index>(u), 0);
    s.test_negatives.push_back(negs);
  }
  eval::Scorer random = [](Index u, std::span<const Index> items) {
    Rng rng(derive_seed(2024, u));
    std::vector<double> out(items.size());
    for (double& x : out) x = rng.uniform();
    return out;
  };
  const auto r = eval::evaluate(random, s, k);
  const double n = static_cast<double>(users);
  const double p = 12.0 / 101.0;
  const double hr_sigma = std::sqrt(p * (1.0 - p) / n);
  double mean = 0.0, second = 0.0;
  for (std::size_t rank = 1; rank <= k; ++rank) {
    mean += (1.0 / 101.0) / std::log2(rank + 1.0);
    second += (1.0 / 101.0) / std::pow(std::log2(rank + 1.0), 2);
  }
  const double ndcg_sigma = std::sqrt((second - mean * mean) / n);
  const double zh = std::abs(r.one_product_hit_ratio - p) / hr_sigma;
  const double zn = std::abs(r.ndcg_mean - mean) / ndcg_sigma;
  return {zh <= 3.0 && zn <= 3.0,
          fmt("hit %.4f vs %.4f (z=%.2f), ndcg %.4f", r.one_product_hit_ratio, p, zh, r.ndcg_mean) +
              fmt(" vs %.4f (z=%.2f), 2500 users", mean, zn)};
}

// ---------------------------------------------------------------------------
// 3. Gradient correctness

constexpr int kInstances = 20;

double max_error(std::vector<double>& params, const std::vector<double>& analytic, const std::function<double()>& loss) {
  if (params.size() != analytic.size()) return INFINITY;
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    worst = std::max(worst, relative_error(analytic[k], central_difference(loss, params[k], 1e-6)));
  }
  return worst;
}

double bpr_instance(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t m = 2 + rng.index(4), n = 2 + rng.index(5), k = 1 + rng.index(4);
  FactorModel f{Matrix2D(m, k), Matrix2D(n, k)};
  for (double& x : f.P.data()) x = 0.6 * rng.normal();
  for (double& x : f.Q.data()) x = 0.6 * rng.normal();
  std::vector<Triplet> batch;
  for (std::size_t b = 0, len = 1 + rng.index(8); b < len; ++b) {
    const Index i = static_cast<Index>(rng.index(n));
    Index j = static_cast<Index>(rng.index(n - 1));
    if (j >= i) ++j;
    batch.push_back({static_cast<Index>(rng.index(m)), i, j});
  }
  const double reg = 0.1 * rng.uniform();
  auto loss = [&] {
    double s = 0.0;
    for (const auto& t : batch) s += bpr::pairwise_loss(f, t, reg);
    return s;
  };
  const auto g = bpr::pairwise_gradient(f, batch, reg);
  return std::max(max_error(f.P.data(), g.user.dense(m).data(), loss),
                  max_error(f.Q.data(), g.item.dense(n).data(), loss));
}

double ncf_instance(ncf::Kind kind, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t users = 2 + rng.index(4), items = 2 + rng.index(5);
  ncf::NcfConfig cfg;
  cfg.n_factors = 1 + rng.index(4);
  cfg.layer_sizes = {2 * (1 + rng.index(4))};
  for (std::size_t l = 0, depth = 1 + rng.index(3); l < depth; ++l) {
    cfg.layer_sizes.push_back(1 + rng.index(cfg.layer_sizes.back()));
  }
  cfg.seed = seed;
  auto m = ncf::init_model(kind, users, items, cfg);
  auto fill = [&](std::vector<double>& v) {
    for (double& x : v) x = 0.8 * rng.normal();
  };
  fill(m.gmf_user.data());
  fill(m.gmf_item.data());
  fill(m.mlp_user.data());
  fill(m.mlp_item.data());
  for (auto& l : m.mlp_layers) {
    fill(l.weight.data());
    fill(l.bias);
  }
  fill(m.h);
  std::vector<ncf::Example> batch;
  for (std::size_t b = 0, len = 1 + rng.index(10); b < len; ++b) {
    batch.push_back({static_cast<Index>(rng.index(users)), static_cast<Index>(rng.index(items)),
                     static_cast<double>(rng.index(2))});
  }
  auto loss = [&] { return ncf::loss_and_gradient(m, batch).loss; };
  const auto g = ncf::loss_and_gradient(m, batch);
  double worst = 0.0;
  if (m.has_gmf()) {
    worst = std::max(worst, max_error(m.gmf_user.data(), g.gmf_user.dense(users).data(), loss));
    worst = std::max(worst, max_error(m.gmf_item.data(), g.gmf_item.dense(items).data(), loss));
  }
  if (m.has_mlp()) {
    worst = std::max(worst, max_error(m.mlp_user.data(), g.mlp_user.dense(users).data(), loss));
    worst = std::max(worst, max_error(m.mlp_item.data(), g.mlp_item.dense(items).data(), loss));
    for (std::size_t l = 0; l < m.mlp_layers.size(); ++l) {
      worst = std::max(worst, max_error(m.mlp_layers[l].weight.data(), g.layers[l].weight.data(), loss));
      worst = std::max(worst, max_error(m.mlp_layers[l].bias, g.layers[l].bias, loss));
    }
  }
  return std::max(worst, max_error(m.h, g.h, loss));
}

double acf_instance(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t n = 3 + rng.index(6);
  acf::AcfConfig cfg;
  cfg.hidden_layer = 1 + rng.index(std::min<std::size_t>(4, n));
  cfg.noise_prob = 0.5 * rng.uniform();
  cfg.dropout_prob = 0.5 * rng.uniform();
  cfg.seed = seed;
  auto m = acf::init_model(n, cfg);
  for (double& x : m.encoder.weight.data()) x = 0.7 * rng.normal();
  for (double& x : m.encoder.bias) x = 0.5 + 0.3 * rng.normal();
  for (double& x : m.decoder.weight.data()) x = 0.7 * rng.normal();
  for (double& x : m.decoder.bias) x = 0.3 * rng.normal();
  Matrix2D x(1 + rng.index(4), n);
  for (double& v : x.data()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
  const double wd = 0.05 * rng.uniform();
  const std::uint64_t mask_seed = rng.next();
  auto loss = [&] { return acf::loss_and_gradient(m, x, neural::DropoutMode::train, mask_seed, wd).loss; };
  const auto g = acf::loss_and_gradient(m, x, neural::DropoutMode::train, mask_seed, wd);
  return std::max({max_error(m.encoder.weight.data(), g.encoder.weight.data(), loss),
                   max_error(m.encoder.bias, g.encoder.bias, loss),
                   max_error(m.decoder.weight.data(), g.decoder.weight.data(), loss),
                   max_error(m.decoder.bias, g.decoder.bias, loss)});
}

Outcome gradients() {
  std::map<std::string, double> worst;
  for (int t = 0; t < kInstances; ++t) {
    const std::uint64_t seed = 9000 + static_cast<std::uint64_t>(t);
    worst["bpr"] = std::max(worst["bpr"], bpr_instance(seed));
    worst["gmf"] = std::max(worst["gmf"], ncf_instance(ncf::Kind::gmf, seed));
    worst["mlp"] = std::max(worst["mlp"], ncf_instance(ncf::Kind::mlp, seed));
    worst["neumf"] = std::max(worst["neumf"], ncf_instance(ncf::Kind::neumf, seed));
    worst["acf"] = std::max(worst["acf"], acf_instance(seed));
  }
  bool ok = true;
  std::ostringstream d;
  d << kInstances << " instances each, max rel. err:";
  for (const auto& [name, e] : worst) {
    ok = ok && e < 1e-4;
    d << " " << name << " " << std::scientific << std::setprecision(1) << e;
  }
  return {ok, d.str()};
}

// ---------------------------------------------------------------------------
// 4. ALS descent and separation on a planted rank-4 matrix

Outcome als_descent() {
  // Matrix seeds 1..8; the mean AUC over all of them is what is compared,
  // so no single lucky draw decides the outcome.
  als::AlsConfig cfg;
  cfg.k = 4;
  cfg.reg = 1.0;
  cfg.alpha = 1.0;
  cfg.epochs = 30;
  bool monotone = true;
  std::size_t half_sweeps = 0;
  double mean_auc = 0.0, lo = 1.0, hi = 0.0;
  const int seeds = 8;
  for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
    const auto data = testing::planted_low_rank(50, 80, 4, 0.05, seed);
    const auto split = leave_one_out_split(data, 50, seed);
    cfg.seed = seed;
    const auto fit = als::fit(split.train, cfg);
    half_sweeps = fit.objective_trace.size();
    monotone = monotone && half_sweeps == 60;
    for (std::size_t t = 1; t < fit.objective_trace.size(); ++t) {
      monotone = monotone && fit.objective_trace[t] <= fit.objective_trace[t - 1] * (1.0 + 1e-8);
    }
    double auc = 0.0;
    for (std::size_t t = 0; t < split.test_positives.size(); ++t) {
      const auto [u, pos] = split.test_positives[t];
      std::vector<double> neg;
      for (Index j : split.test_negatives[t]) neg.push_back(irec::score(fit.model, u, j));
      auc += testing::auc({irec::score(fit.model, u, pos)}, neg);
    }
    auc /= static_cast<double>(split.test_positives.size());
    mean_auc += auc / seeds;
    lo = std::min(lo, auc);
    hi = std::max(hi, auc);
  }
  return {monotone && mean_auc > 0.90,
          std::string(monotone ? "objective non-increasing over " : "objective INCREASED within ") +
              std::to_string(half_sweeps) + " half-sweeps; " +
              fmt("held-out AUC mean %.4f (min %.4f, max %.4f) over 8 matrices, need > 0.90", mean_auc, lo, hi)};
}

// ---------------------------------------------------------------------------
// 5-7. Planted-structure runs shared by the ordering, pre-training and
// hit-ratio criteria.

struct PlantedRun {
  double ndcg_als = 0, ndcg_bpr = 0, ndcg_neumf = 0, ndcg_acf = 0;
  double hr_min = 1.0;
  std::string hr_detail;
  std::vector<std::pair<double, double>> warm_cold;  // epoch-0 BCE per seed
};

// Desk-scale settings: latent sizes and epochs shrink from the published
// tables; other values stay at the table defaults where they fit.
als::AlsConfig desk_als(std::uint64_t seed) {
  als::AlsConfig c;
  c.k = 16;
  c.epochs = 15;
  c.seed = seed;
  return c;
}

bpr::BprConfig desk_bpr(std::uint64_t seed) {
  bpr::BprConfig c;
  c.k = 16;
  c.epochs = 20;
  c.batch_size = 256;
  c.seed = seed;
  return c;
}

ncf::NcfConfig desk_ncf(std::uint64_t seed) {
  ncf::NcfConfig c;
  c.n_factors = 16;
  c.layer_sizes = {32, 16, 8};
  c.epochs = 10;
  c.learning_rate = 0.002;
  c.batch_size = 128;
  c.seed = seed;
  return c;
}

acf::AcfConfig desk_acf(std::uint64_t seed) {
  acf::AcfConfig c;
  c.hidden_layer = 16;
  c.epochs = 60;
  c.learning_rate = 0.01;
  c.batch_size = 32;
  c.seed = seed;
  return c;
}

const PlantedRun& planted_run() {
  static const PlantedRun result = [] {
    PlantedRun r;
    std::ostringstream hr;
    hr << std::fixed << std::setprecision(3);
    for (std::uint64_t seed : {1, 2, 3}) {
      const auto data = testing::planted_blocks(300, 500, 8, 20, 1.0, seed);
      const auto split = leave_one_out_split(data, 100, seed + 10);
      auto score = [&](AnyModel m, const char* name) {
        auto shared = std::make_shared<const AnyModel>(std::move(m));
        const auto rep = eval::evaluate(make_scorer(shared, split.train), split, 12);
        r.hr_min = std::min(r.hr_min, rep.one_product_hit_ratio);
        hr << " " << name << seed << "=" << rep.one_product_hit_ratio;
        return rep.ndcg_mean / 3.0;
      };
      r.ndcg_als += score(als::fit(split.train, desk_als(seed)).model, "als");
      r.ndcg_bpr += score(bpr::fit(split.train, desk_bpr(seed)).model, "bpr");

      const auto cfg = desk_ncf(seed);
      auto pre = ncf::pretrain_and_fuse(split.train, cfg);
      auto warm = ncf::fit(split.train, cfg, pre.fused);
      // Epoch 0 of a cold run sees the same training set regardless of the
      // epoch count, so one epoch is enough for the comparison.
      auto cold_cfg = cfg;
      cold_cfg.epochs = 1;
      const auto cold = ncf::fit(split.train, cold_cfg);
      r.warm_cold.emplace_back(warm.epoch_loss.at(0), cold.epoch_loss.at(0));
      r.ndcg_neumf += score(std::move(warm.model), "neumf");
      r.ndcg_acf += score(acf::fit(split.train, desk_acf(seed)).model, "acf");
    }
    r.hr_detail = hr.str();
    return r;
  }();
  return result;
}

Outcome planted_ordering() {
  const auto& r = planted_run();
  const bool ok = r.ndcg_neumf >= r.ndcg_als - 0.01 && r.ndcg_bpr >= r.ndcg_als - 0.01;
  return {ok, fmt("mean NDCG@12 over 3 seeds: als %.4f, bpr %.4f, neumf %.4f, acf %.4f", r.ndcg_als, r.ndcg_bpr,
                  r.ndcg_neumf, r.ndcg_acf)};
}

Outcome pretraining_effect() {
  const auto& r = planted_run();
  bool ok = !r.warm_cold.empty();
  std::ostringstream d;
  d << "models trained under 5; epoch-0 BCE warm/cold:" << std::fixed << std::setprecision(4);
  for (const auto& [warm, cold] : r.warm_cold) {
    ok = ok && warm < cold;
    d << " " << warm << "/" << cold;
  }
  return {ok, d.str()};
}

Outcome hit_ratio() {
  const auto& r = planted_run();
  return {r.hr_min >= 0.95, fmt("models trained under 5; min %.3f;", r.hr_min) + r.hr_detail};
}

// ---------------------------------------------------------------------------
// 8. Bayesian optimization sanity

Outcome bo_sanity() {
  const auto space = tune::SearchSpace::from_json(
      nlohmann::json::parse(R"({"params":[{"name":"x","kind":"linear","low":0,"high":1}]})"));
  tune::Objective f = [](const tune::Point& p, std::size_t folds) {
    const double x = tune::as_double(p.at("x"));
    return std::vector<double>(folds, -(x - 0.3) * (x - 0.3));
  };
  int close = 0;
  double bo = 0.0, rs = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = tune::tune(space, f, 25, 1, seed);
    if (r.history.size() == 25 && std::abs(tune::as_double(r.best.point.at("x")) - 0.3) <= 0.05) ++close;
    bo += r.best.objective / 20.0;
    rs += tune::random_search(space, f, 25, 1, seed).best.objective / 20.0;
  }
  return {close >= 18 && bo > rs,
          std::to_string(close) + "/20 seeds within 0.05; " + fmt("mean best %.2e vs random search %.2e", bo, rs)};
}

// ---------------------------------------------------------------------------
// 9. Determinism of the command-line tool

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cli(const std::string& args) {
  const std::string cmd = std::string(IREC_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Every regular file under `dir`, keyed by relative path.
std::map<std::string, std::string> tree(const std::filesystem::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[std::filesystem::relative(e.path(), dir).string()] = slurp(e.path());
  }
  return files;
}

std::string without_timing(const std::filesystem::path& history) {
  auto j = nlohmann::json::parse(slurp(history));
  for (auto& t : j.at("trials")) t.erase("wall_time_s");
  return j.dump();
}

Outcome determinism() {
  testing::TempDir dir("accept9");
  const auto data = testing::planted_blocks(60, 90, 4, 10, 0.9, 21);
  {
    std::ofstream csv(dir / "tx.csv");
    csv << "user,item,count,timestamp\n";
    for (std::size_t u = 0; u < data.n_users(); ++u) {
      for (std::size_t p = data.rows.row_ptr[u]; p < data.rows.row_ptr[u + 1]; ++p) {
        csv << "c" << u << ",s" << data.rows.cols[p] << "," << data.rows.values[p] << "," << data.timestamps[p] << "\n";
      }
    }
  }
  const std::map<std::string, std::string> configs{
      {"als", R"({"als":{"k":8,"epochs":5},"n_neg":30})"},
      {"bpr", R"({"bpr":{"k":8,"epochs":5,"batch_size":64},"n_neg":30})"},
      {"ncf", R"({"ncf":{"n_factors":4,"layer_sizes":[8,4],"epochs":2},"pretrain":true,"n_neg":30})"},
      {"acf", R"({"acf":{"hidden_layer":6,"epochs":4,"batch_size":16},"n_neg":30})"},
  };
  for (const auto& [name, text] : configs) std::ofstream(dir / (name + ".json")) << text;
  std::ofstream(dir / "space.json") << R"({"params":[{"name":"reg","kind":"log","low":0.001,"high":10},)"
                                       R"({"name":"k","kind":"integer","low":2,"high":12}]})";

  const std::string d = dir.path().string();
  std::vector<std::string> problems;
  auto step = [&](const std::string& args) {
    if (const int code = cli(args); code != 0) problems.push_back("exit " + std::to_string(code) + ": " + args);
  };
  std::size_t compared = 0;
  for (int run = 0; run < 2; ++run) {
    const std::string r = d + "/run" + std::to_string(run);
    step("ingest --input " + d + "/tx.csv --out " + r + "/snap");
    step("split --snapshot " + r + "/snap --n-neg 30 --seed 4 --out " + r + "/split");
    for (const auto& [name, text] : configs) {
      step("train --data " + r + "/split --config " + d + "/" + name + ".json --seed 4 --out " + r + "/" + name);
      step("evaluate --model-dir " + r + "/" + name + " --split " + r + "/split --config " + d + "/" + name +
           ".json --out " + r + "/eval_" + name);
    }
    step("tune --data " + r + "/split --space " + d + "/space.json --config " + d +
         "/als.json --budget 7 --folds 2 --seed 4 --out " + r + "/tune");
  }
  if (!problems.empty()) return {false, problems.front()};

  const std::filesystem::path a = dir / "run0", b = dir / "run1";
  for (const char* sub : {"snap", "split", "als", "bpr", "ncf", "acf", "eval_als", "eval_bpr", "eval_ncf", "eval_acf"}) {
    const auto ta = tree(a / sub), tb = tree(b / sub);
    if (ta != tb) problems.push_back(std::string(sub) + " differs");
    compared += ta.size();
  }
  if (without_timing(a / "tune/tune_history.json") != without_timing(b / "tune/tune_history.json")) {
    problems.push_back("tune history differs");
  }
  if (slurp(a / "tune/best_config.json") != slurp(b / "tune/best_config.json")) problems.push_back("best config differs");
  compared += 2;
  return {problems.empty(), problems.empty() ? std::to_string(compared) + " files byte-identical across two runs"
                                             : problems.front()};
}

// ---------------------------------------------------------------------------
// 10. Split integrity under fuzzing

std::string check_split(const InteractionMatrix& m, const LeaveOneOutSplit& s, std::size_t n_neg) {
  if (s.test_positives.size() != s.test_negatives.size()) return "positives/negatives length mismatch";
  if (s.train.n_users() != m.n_users() || s.train.n_items() != m.n_items()) return "train shape changed";
  std::set<Index> tested, excluded(s.excluded_users.begin(), s.excluded_users.end());
  for (std::size_t t = 0; t < s.test_positives.size(); ++t) {
    const auto [u, pos] = s.test_positives[t];
    if (!tested.insert(u).second) return "user tested twice";
    if (s.train.contains(u, pos)) return "test item left in train";
    if (!m.contains(u, pos)) return "test item was never observed";
    const auto& negs = s.test_negatives[t];
    if (negs.size() != n_neg) return "wrong negative count";
    if (std::set<Index>(negs.begin(), negs.end()).size() != negs.size()) return "repeated negative";
    for (Index j : negs) {
      if (j >= m.n_items() || m.contains(u, j)) return "negative inside the user's interaction set";
    }
    // Held out: the greatest (timestamp, input order) of the user's cells.
    const auto row = m.items_of(u);
    std::size_t best = m.rows.row_ptr[u];
    for (std::size_t p = m.rows.row_ptr[u]; p < m.rows.row_ptr[u + 1]; ++p) {
      if (std::pair(m.timestamps[p], m.sequence[p]) > std::pair(m.timestamps[best], m.sequence[best])) best = p;
    }
    if (m.rows.cols[best] != pos) return "held-out item is not the latest";
    if (row.size() < 2) return "user with a single interaction was tested";
  }
  for (std::size_t u = 0; u < m.n_users(); ++u) {
    const bool is_tested = tested.count(static_cast<Index>(u)) > 0;
    const bool is_excluded = excluded.count(static_cast<Index>(u)) > 0;
    if (is_tested == is_excluded) return "user neither tested nor excluded (or both)";
    if (is_excluded != (m.items_of(u).size() < 2)) return "wrong exclusion";
    // train row ∪ held-out item reproduces the original row exactly.
    std::vector<Index> rebuilt(s.train.items_of(u).begin(), s.train.items_of(u).end());
    if (is_tested) {
      for (const auto& [tu, ti] : s.test_positives) {
        if (tu == u) rebuilt.push_back(ti);
      }
    }
    std::sort(rebuilt.begin(), rebuilt.end());
    const auto orig = m.items_of(u);
    if (!std::equal(rebuilt.begin(), rebuilt.end(), orig.begin(), orig.end())) return "train plus test != original";
    for (std::size_t p = 0; p < s.train.items_of(u).size(); ++p) {
      const Index i = s.train.items_of(u)[p];
      const auto it = std::lower_bound(orig.begin(), orig.end(), i);
      if (s.train.counts_of(u)[p] != m.counts_of(u)[static_cast<std::size_t>(it - orig.begin())]) return "count changed";
    }
  }
  return "";
}

Outcome split_fuzz() {
  std::size_t valid = 0, rejected = 0;
  for (std::uint64_t trial = 0; trial < 1000; ++trial) {
    Rng rng(derive_seed(77, trial));
    const std::size_t users = 1 + rng.index(25), items = 2 + rng.index(40);
    const std::size_t n_neg = 1 + rng.index(std::max<std::size_t>(1, items / 2));
    const bool timed = rng.uniform() < 0.8;
    std::vector<InteractionRecord> records;
    for (std::size_t r = 0, len = 1 + rng.index(users * 6); r < len; ++r) {
      InteractionRecord rec{"u" + std::to_string(rng.index(users)), "i" + std::to_string(rng.index(items)),
                            static_cast<std::int64_t>(1 + rng.index(4)), std::nullopt};
      // Few distinct timestamps, so ties are common.
      if (timed && rng.uniform() < 0.9) rec.timestamp = static_cast<std::int64_t>(rng.index(6));
      records.push_back(std::move(rec));
    }
    const auto m = build_matrix(records);
    bool feasible = true;
    for (std::size_t u = 0; u < m.n_users(); ++u) {
      const std::size_t deg = m.items_of(u).size();
      if (deg >= 2 && m.n_items() - deg < n_neg) feasible = false;
    }
    try {
      const auto s = leave_one_out_split(m, n_neg, trial);
      if (!feasible) return {false, "trial " + std::to_string(trial) + ": infeasible split was not rejected"};
      if (const auto why = check_split(m, s, n_neg); !why.empty()) {
        return {false, "trial " + std::to_string(trial) + ": " + why};
      }
      const auto again = leave_one_out_split(m, n_neg, trial);
      if (again.test_negatives != s.test_negatives) return {false, "trial " + std::to_string(trial) + ": not reproducible"};
      ++valid;
    } catch (const std::invalid_argument&) {
      if (feasible) return {false, "trial " + std::to_string(trial) + ": feasible split was rejected"};
      ++rejected;
    }
  }
  return {valid >= 500, std::to_string(valid) + " splits checked, " + std::to_string(rejected) +
                            " infeasible inputs correctly rejected"};
}

}  // namespace

int main() {
  run(1, "metric oracle", metric_oracle);
  run(2, "random-scorer calibration", random_calibration);
  run(3, "gradient correctness", gradients);
  run(4, "ALS descent", als_descent);
  run(5, "planted-structure ordering", planted_ordering);
  run(6, "pre-training effect", pretraining_effect);
  run(7, "one-product hit ratio", hit_ratio);
  run(8, "BO sanity", bo_sanity);
  run(9, "determinism", determinism);
  run(10, "split integrity", split_fuzz);
  std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
