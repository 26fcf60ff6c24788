#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "irec/dataset.hpp"
#include "irec/neural.hpp"

namespace irec::ncf {

using neural::DenseLayer;

/// NeuMF hyperparameters. layer_sizes[0] is the MLP input width (the
/// concatenated user and item embeddings, each layer_sizes[0] / 2 wide);
/// the remaining entries are hidden layer widths.
struct NcfConfig {
  std::size_t n_factors = 16;
  std::vector<std::size_t> layer_sizes{64, 32, 16};
  std::size_t epochs = 50;
  double learning_rate = 0.001;
  std::size_t batch_size = 256;
  std::size_t neg_ratio = 4;
  std::uint64_t seed = 0;

  std::size_t mlp_embedding_width() const { return layer_sizes.at(0) / 2; }

  void validate() const {
    if (n_factors < 1) throw std::invalid_argument("ncf: n_factors must be >= 1");
    if (layer_sizes.empty() || layer_sizes[0] < 2 || layer_sizes[0] % 2 != 0) {
      throw std::invalid_argument("ncf: layer_sizes[0] must be an even MLP input width");
    }
    for (std::size_t w : layer_sizes) {
      if (w < 1) throw std::invalid_argument("ncf: layer widths must be >= 1");
    }
    if (neg_ratio < 1) throw std::invalid_argument("ncf: neg_ratio must be >= 1");
    if (epochs < 1 || batch_size < 1) throw std::invalid_argument("ncf: epochs and batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("ncf: learning_rate must be > 0");
  }
};

/// Rejects an MLP tower whose input width is not twice the embedding width.
inline void check_tower(std::span<const std::size_t> layer_sizes, std::size_t embedding_width) {
  if (layer_sizes.empty() || layer_sizes[0] != 2 * embedding_width) {
    throw std::invalid_argument(
        "ncf: MLP input width " + (layer_sizes.empty() ? std::string("<none>") : std::to_string(layer_sizes[0])) +
        " does not chain with two " + std::to_string(embedding_width) + "-wide embeddings");
  }
}

inline void to_json(nlohmann::json& j, const NcfConfig& c) {
  j = {{"n_factors", c.n_factors},   {"layer_sizes", c.layer_sizes}, {"epochs", c.epochs},
       {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"neg_ratio", c.neg_ratio},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, NcfConfig& c) {
  c.n_factors = j.value("n_factors", c.n_factors);
  c.layer_sizes = j.value("layer_sizes", c.layer_sizes);
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.neg_ratio = j.value("neg_ratio", c.neg_ratio);
  c.seed = j.value("seed", c.seed);
}

enum class Kind { gmf, mlp, neumf };

inline std::string to_string(Kind k) {
  switch (k) {
    case Kind::gmf: return "gmf";
    case Kind::mlp: return "mlp";
    case Kind::neumf: return "neumf";
  }
  return "neumf";
}

inline Kind kind_from_string(const std::string& s) {
  if (s == "gmf") return Kind::gmf;
  if (s == "mlp") return Kind::mlp;
  if (s == "neumf") return Kind::neumf;
  throw SchemaError("unknown ncf kind '" + s + "'");
}

/// GMF, MLP or fused NeuMF network. The GMF tower is unused (empty) for
/// Kind::mlp and the MLP tower for Kind::gmf. The output head h spans the
/// GMF product vector followed by the last MLP activation.
struct NeuMfModel {
  Kind kind = Kind::neumf;
  Matrix2D gmf_user, gmf_item;
  Matrix2D mlp_user, mlp_item;
  std::vector<DenseLayer> mlp_layers;
  std::vector<double> h;

  bool has_gmf() const { return kind != Kind::mlp; }
  bool has_mlp() const { return kind != Kind::gmf; }
  std::size_t gmf_width() const { return has_gmf() ? gmf_user.cols() : 0; }
  std::size_t mlp_width() const {
    if (!has_mlp()) return 0;
    return mlp_layers.empty() ? 2 * mlp_user.cols() : mlp_layers.back().out();
  }
  std::size_t n_users() const { return has_gmf() ? gmf_user.rows() : mlp_user.rows(); }
  std::size_t n_items() const { return has_gmf() ? gmf_item.rows() : mlp_item.rows(); }

  void check() const {
    if (h.size() != gmf_width() + mlp_width()) throw std::invalid_argument("ncf: output head width mismatch");
    if (has_gmf() && (gmf_item.cols() != gmf_user.cols())) throw std::invalid_argument("ncf: GMF embedding widths differ");
    if (has_mlp()) {
      if (mlp_item.cols() != mlp_user.cols()) throw std::invalid_argument("ncf: MLP embedding widths differ");
      if (!mlp_layers.empty()) {
        check_tower(std::vector<std::size_t>{mlp_layers[0].in()}, mlp_user.cols());
      }
    }
    if (has_gmf() && has_mlp() && (gmf_user.rows() != mlp_user.rows() || gmf_item.rows() != mlp_item.rows())) {
      throw std::invalid_argument("ncf: tower universes differ");
    }
  }
};

/// Fresh model: N(0, 0.01²) embeddings, Xavier dense layers with ReLU
/// hidden activations, Xavier output head.
inline NeuMfModel init_model(Kind kind, std::size_t n_users, std::size_t n_items, const NcfConfig& cfg) {
  cfg.validate();
  NeuMfModel m;
  m.kind = kind;
  auto normal = [](std::size_t r, std::size_t c, std::uint64_t seed) {
    Matrix2D x(r, c);
    Rng rng(seed);
    for (double& v : x.data()) v = 0.01 * rng.normal();
    return x;
  };
  if (m.has_gmf()) {
    m.gmf_user = normal(n_users, cfg.n_factors, derive_seed(cfg.seed, 11));
    m.gmf_item = normal(n_items, cfg.n_factors, derive_seed(cfg.seed, 12));
  }
  if (m.has_mlp()) {
    const std::size_t e = cfg.mlp_embedding_width();
    check_tower(cfg.layer_sizes, e);
    m.mlp_user = normal(n_users, e, derive_seed(cfg.seed, 13));
    m.mlp_item = normal(n_items, e, derive_seed(cfg.seed, 14));
    for (std::size_t l = 1; l < cfg.layer_sizes.size(); ++l) {
      m.mlp_layers.push_back(neural::make_dense(cfg.layer_sizes[l - 1], cfg.layer_sizes[l],
                                                neural::Activation::relu, derive_seed(cfg.seed, 100 + l)));
    }
  }
  const std::size_t width = m.gmf_width() + m.mlp_width();
  m.h = neural::xavier_init(width, 1, derive_seed(cfg.seed, 15)).data();
  return m;
}

/// One labelled training pair.
struct Example {
  Index u;
  Index i;
  double label;
};

namespace detail {

struct Activations {
  Matrix2D features;  // B × (gmf_width + mlp_width)
  neural::Tape tape;
  std::vector<double> logits;
};

inline void check_index(const NeuMfModel& m, Index u, Index i) {
  if (u >= m.n_users() || i >= m.n_items()) {
    throw std::out_of_range("ncf: pair (" + std::to_string(u) + ", " + std::to_string(i) + ") out of range");
  }
}

template <typename PairAt>
Activations run(const NeuMfModel& m, std::size_t n, PairAt pair_at, bool keep_tape) {
  const std::size_t g = m.gmf_width();
  const std::size_t w = g + m.mlp_width();
  Activations a;
  a.features = Matrix2D(n, w);
  Matrix2D mlp_in;
  if (m.has_mlp()) mlp_in = Matrix2D(n, 2 * m.mlp_user.cols());
  for (std::size_t b = 0; b < n; ++b) {
    const auto [u, i] = pair_at(b);
    check_index(m, u, i);
    if (m.has_gmf()) {
      auto p = m.gmf_user.row(u);
      auto q = m.gmf_item.row(i);
      for (std::size_t c = 0; c < g; ++c) a.features(b, c) = p[c] * q[c];
    }
    if (m.has_mlp()) {
      auto p = m.mlp_user.row(u);
      auto q = m.mlp_item.row(i);
      auto dst = mlp_in.row(b);
      std::copy(p.begin(), p.end(), dst.begin());
      std::copy(q.begin(), q.end(), dst.begin() + static_cast<std::ptrdiff_t>(p.size()));
    }
  }
  if (m.has_mlp()) {
    Matrix2D out;
    if (m.mlp_layers.empty()) {
      out = mlp_in;
    } else if (keep_tape) {
      auto fr = neural::forward(m.mlp_layers, mlp_in);
      out = std::move(fr.output);
      a.tape = std::move(fr.tape);
    } else {
      out = neural::infer(m.mlp_layers, mlp_in);
    }
    for (std::size_t b = 0; b < n; ++b) {
      std::copy(out.row(b).begin(), out.row(b).end(), a.features.row(b).begin() + static_cast<std::ptrdiff_t>(g));
    }
  }
  a.logits.resize(n);
  for (std::size_t b = 0; b < n; ++b) a.logits[b] = dot(a.features.row(b), m.h);
  return a;
}

}  // namespace detail

/// Output logits hᵀ[φ_GMF ; φ_MLP] for user u against each item.
inline std::vector<double> logits(const NeuMfModel& m, Index u, std::span<const Index> items) {
  return detail::run(m, items.size(), [&](std::size_t b) { return std::pair{u, items[b]}; }, false).logits;
}

inline double predict(const NeuMfModel& m, Index u, Index i) {
  const Index items[1] = {i};
  return neural::sigmoid(logits(m, u, items)[0]);
}

inline double gmf_forward(const NeuMfModel& m, Index u, Index i) {
  if (m.kind != Kind::gmf) throw std::invalid_argument("gmf_forward: model is not a GMF model");
  return predict(m, u, i);
}

inline double mlp_forward(const NeuMfModel& m, Index u, Index i) {
  if (m.kind != Kind::mlp) throw std::invalid_argument("mlp_forward: model is not an MLP model");
  return predict(m, u, i);
}

inline double neumf_forward(const NeuMfModel& m, Index u, Index i) {
  if (m.kind != Kind::neumf) throw std::invalid_argument("neumf_forward: model is not a NeuMF model");
  return predict(m, u, i);
}

struct NcfGradient {
  double loss = 0.0;  // mean BCE over the batch
  neural::SparseRowGrad gmf_user{0}, gmf_item{0}, mlp_user{0}, mlp_item{0};
  std::vector<neural::LayerGrad> layers;
  std::vector<double> h;
};

/// Mean binary cross-entropy of the batch and its gradient.
inline NcfGradient loss_and_gradient(const NeuMfModel& m, std::span<const Example> batch) {
  if (batch.empty()) throw std::invalid_argument("ncf: empty batch");
  const std::size_t n = batch.size();
  auto act = detail::run(m, n, [&](std::size_t b) { return std::pair{batch[b].u, batch[b].i}; }, true);

  std::vector<double> pred(n), labels(n);
  for (std::size_t b = 0; b < n; ++b) {
    pred[b] = neural::sigmoid(act.logits[b]);
    labels[b] = batch[b].label;
  }
  const auto bce = neural::bce_loss(pred, labels);

  NcfGradient g;
  g.loss = bce.value;
  const std::size_t gw = m.gmf_width();
  const std::size_t mw = m.mlp_width();
  g.h.assign(m.h.size(), 0.0);
  g.gmf_user = neural::SparseRowGrad(gw);
  g.gmf_item = neural::SparseRowGrad(gw);
  const std::size_t e = m.has_mlp() ? m.mlp_user.cols() : 0;
  g.mlp_user = neural::SparseRowGrad(e);
  g.mlp_item = neural::SparseRowGrad(e);

  Matrix2D mlp_up(n, mw);
  for (std::size_t b = 0; b < n; ++b) {
    // dL/dlogit = (ŷ − y)/n, zero where the clamp is active.
    const bool clamped = pred[b] < neural::kBceClamp || pred[b] > 1.0 - neural::kBceClamp;
    const double dlogit = clamped ? 0.0 : (pred[b] - labels[b]) / static_cast<double>(n);
    auto f = act.features.row(b);
    for (std::size_t c = 0; c < m.h.size(); ++c) g.h[c] += dlogit * f[c];
    if (m.has_gmf()) {
      auto p = m.gmf_user.row(batch[b].u);
      auto q = m.gmf_item.row(batch[b].i);
      auto gp = g.gmf_user.row(batch[b].u);
      auto gq = g.gmf_item.row(batch[b].i);
      for (std::size_t c = 0; c < gw; ++c) {
        const double df = dlogit * m.h[c];
        gp[c] += df * q[c];
        gq[c] += df * p[c];
      }
    }
    for (std::size_t c = 0; c < mw; ++c) mlp_up(b, c) = dlogit * m.h[gw + c];
  }

  if (m.has_mlp()) {
    Matrix2D din;
    if (m.mlp_layers.empty()) {
      din = std::move(mlp_up);
    } else {
      auto grads = neural::backward(m.mlp_layers, act.tape, mlp_up);
      g.layers = std::move(grads.layers);
      din = std::move(grads.input);
    }
    for (std::size_t b = 0; b < n; ++b) {
      auto gu = g.mlp_user.row(batch[b].u);
      auto gi = g.mlp_item.row(batch[b].i);
      for (std::size_t c = 0; c < e; ++c) {
        gu[c] += din(b, c);
        gi[c] += din(b, e + c);
      }
    }
  }
  return g;
}

/// Adam moments for every parameter tensor of a model.
struct Optimizer {
  neural::AdamState gmf_user, gmf_item, mlp_user, mlp_item, h;
  std::vector<neural::AdamState> weights, biases;

  static Optimizer for_model(const NeuMfModel& m, double lr) {
    using neural::AdamState;
    Optimizer o{AdamState::for_size(m.gmf_user.size(), lr), AdamState::for_size(m.gmf_item.size(), lr),
                AdamState::for_size(m.mlp_user.size(), lr), AdamState::for_size(m.mlp_item.size(), lr),
                AdamState::for_size(m.h.size(), lr), {}, {}};
    for (const auto& l : m.mlp_layers) {
      o.weights.push_back(AdamState::for_size(l.weight.size(), lr));
      o.biases.push_back(AdamState::for_size(l.bias.size(), lr));
    }
    return o;
  }
};

/// Applies one Adam step; returns the pre-update batch loss.
inline double train_step(NeuMfModel& m, std::span<const Example> batch, Optimizer& opt) {
  auto g = loss_and_gradient(m, batch);
  if (!std::isfinite(g.loss)) throw TrainingError("ncf: non-finite loss");
  if (m.has_gmf()) {
    neural::adam_step_rows(m.gmf_user, g.gmf_user, opt.gmf_user);
    neural::adam_step_rows(m.gmf_item, g.gmf_item, opt.gmf_item);
  }
  if (m.has_mlp()) {
    neural::adam_step_rows(m.mlp_user, g.mlp_user, opt.mlp_user);
    neural::adam_step_rows(m.mlp_item, g.mlp_item, opt.mlp_item);
    for (std::size_t l = 0; l < m.mlp_layers.size(); ++l) {
      neural::adam_step(m.mlp_layers[l].weight.data(), g.layers[l].weight.data(), opt.weights[l]);
      neural::adam_step(m.mlp_layers[l].bias, g.layers[l].bias, opt.biases[l]);
    }
  }
  neural::adam_step(m.h, g.h, opt.h);
  return g.loss;
}

/// Every observed pair labelled 1 plus neg_ratio uniformly drawn
/// non-interacted items per positive labelled 0, shuffled.
inline std::vector<Example> make_training_set(const InteractionMatrix& train, std::size_t neg_ratio,
                                              std::uint64_t seed) {
  if (neg_ratio < 1) throw std::invalid_argument("make_training_set: neg_ratio must be >= 1");
  const auto users = users_with_negatives(train);
  Rng rng(seed);
  std::vector<Example> out;
  out.reserve(train.nnz() * (1 + neg_ratio));
  for (Index u : users) {
    for (Index i : train.items_of(u)) {
      out.push_back({u, i, 1.0});
      for (std::size_t r = 0; r < neg_ratio; ++r) out.push_back({u, sample_negative(train, u, rng), 0.0});
    }
  }
  rng.shuffle(out);
  return out;
}

struct NcfFit {
  NeuMfModel model;
  std::vector<double> epoch_loss;  // mean training BCE per epoch
};

/// Trains `model` in place for cfg.epochs with a fresh training set each epoch.
inline NcfFit train(NeuMfModel model, const InteractionMatrix& data, const NcfConfig& cfg) {
  cfg.validate();
  model.check();
  if (model.n_users() != data.n_users() || model.n_items() != data.n_items()) {
    throw DimensionMismatch("ncf: model universe does not match training matrix");
  }
  NcfFit res{std::move(model), {}};
  auto opt = Optimizer::for_model(res.model, cfg.learning_rate);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const auto examples = make_training_set(data, cfg.neg_ratio, derive_seed(cfg.seed, 2000 + e));
    double total = 0.0;
    for (std::size_t b = 0; b < examples.size(); b += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, examples.size() - b);
      total += train_step(res.model, std::span(examples).subspan(b, len), opt) * static_cast<double>(len);
    }
    res.epoch_loss.push_back(total / static_cast<double>(examples.size()));
  }
  return res;
}

/// Trains NeuMF, starting from `pretrained` when given and from a fresh
/// initialization otherwise.
inline NcfFit fit(const InteractionMatrix& data, const NcfConfig& cfg,
                  std::optional<NeuMfModel> pretrained = std::nullopt) {
  if (pretrained && pretrained->kind != Kind::neumf) {
    throw std::invalid_argument("ncf::fit: pretrained model must be a fused NeuMF model");
  }
  NeuMfModel init = pretrained ? std::move(*pretrained)
                               : init_model(Kind::neumf, data.n_users(), data.n_items(), cfg);
  return train(std::move(init), data, cfg);
}

/// NeuMF built from trained halves with h = [0.5 h_gmf ; 0.5 h_mlp].
inline NeuMfModel fuse(const NeuMfModel& gmf, const NeuMfModel& mlp, double weight = 0.5) {
  if (gmf.kind != Kind::gmf || mlp.kind != Kind::mlp) throw std::invalid_argument("fuse: expects a GMF and an MLP model");
  NeuMfModel m;
  m.kind = Kind::neumf;
  m.gmf_user = gmf.gmf_user;
  m.gmf_item = gmf.gmf_item;
  m.mlp_user = mlp.mlp_user;
  m.mlp_item = mlp.mlp_item;
  m.mlp_layers = mlp.mlp_layers;
  for (double x : gmf.h) m.h.push_back(weight * x);
  for (double x : mlp.h) m.h.push_back((1.0 - weight) * x);
  m.check();
  return m;
}

struct Pretrained {
  NcfFit gmf;
  NcfFit mlp;
  NeuMfModel fused;
};

/// Trains GMF and MLP separately, then fuses them (not yet fine-tuned).
inline Pretrained pretrain_and_fuse(const InteractionMatrix& data, const NcfConfig& cfg) {
  NcfConfig gcfg = cfg;
  gcfg.seed = derive_seed(cfg.seed, 31);
  NcfConfig mcfg = cfg;
  mcfg.seed = derive_seed(cfg.seed, 32);
  Pretrained p{train(init_model(Kind::gmf, data.n_users(), data.n_items(), gcfg), data, gcfg),
               train(init_model(Kind::mlp, data.n_users(), data.n_items(), mcfg), data, mcfg), {}};
  p.fused = fuse(p.gmf.model, p.mlp.model);
  return p;
}

inline void save(const NeuMfModel& m, const NcfConfig& cfg, const std::filesystem::path& dir) {
  std::vector<neural::NamedTensor> ts;
  if (m.has_gmf()) {
    ts.push_back({"gmf_user", m.gmf_user, ""});
    ts.push_back({"gmf_item", m.gmf_item, ""});
  }
  if (m.has_mlp()) {
    ts.push_back({"mlp_user", m.mlp_user, ""});
    ts.push_back({"mlp_item", m.mlp_item, ""});
    neural::append_layers(ts, "mlp", m.mlp_layers);
  }
  ts.push_back({"h", Matrix2D(m.h.size(), 1, m.h), ""});
  neural::save_weights(dir, ts);
  nlohmann::json manifest{{"model", "ncf"},           {"kind", to_string(m.kind)},
                          {"config", cfg},            {"n_users", m.n_users()},
                          {"n_items", m.n_items()},   {"gmf_width", m.gmf_width()},
                          {"mlp_width", m.mlp_width()}};
  io::write_text(dir / "ncf.json", manifest.dump(1) + "\n");
}

inline NeuMfModel load(const std::filesystem::path& dir, NcfConfig* cfg_out = nullptr) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(io::read_text(dir / "ncf.json"));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("bad ncf.json: " + std::string(e.what()));
  }
  const auto ts = neural::load_weights(dir);
  NeuMfModel m;
  m.kind = kind_from_string(manifest.at("kind").get<std::string>());
  if (m.has_gmf()) {
    m.gmf_user = neural::find_tensor(ts, "gmf_user");
    m.gmf_item = neural::find_tensor(ts, "gmf_item");
  }
  if (m.has_mlp()) {
    m.mlp_user = neural::find_tensor(ts, "mlp_user");
    m.mlp_item = neural::find_tensor(ts, "mlp_item");
    m.mlp_layers = neural::extract_layers(ts, "mlp");
  }
  m.h = neural::find_tensor(ts, "h").data();
  m.check();
  if (cfg_out) *cfg_out = manifest.at("config").get<NcfConfig>();
  return m;
}

}  // namespace irec::ncf
