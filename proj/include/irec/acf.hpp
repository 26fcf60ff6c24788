#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "irec/dataset.hpp"
#include "irec/neural.hpp"

namespace irec::acf {

using neural::DenseLayer;
using neural::DropoutMode;

struct AcfConfig {
  std::size_t hidden_layer = 7;
  double noise_prob = 0.3;
  double dropout_prob = 0.2;
  double learning_rate = 0.001;
  double weight_decay = 2e-5;
  std::size_t batch_size = 256;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;

  void validate() const {
    if (hidden_layer < 1) throw std::invalid_argument("acf: hidden_layer must be >= 1");
    if (!(noise_prob >= 0.0 && noise_prob < 1.0) || !(dropout_prob >= 0.0 && dropout_prob < 1.0)) {
      throw std::invalid_argument("acf: dropout probabilities must lie in [0, 1)");
    }
    if (!(learning_rate > 0.0) || !(weight_decay >= 0.0)) throw std::invalid_argument("acf: bad learning_rate/weight_decay");
    if (epochs < 1 || batch_size < 1) throw std::invalid_argument("acf: epochs and batch_size must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const AcfConfig& c) {
  j = {{"hidden_layer", c.hidden_layer}, {"noise_prob", c.noise_prob},
       {"dropout_prob", c.dropout_prob}, {"learning_rate", c.learning_rate},
       {"weight_decay", c.weight_decay}, {"batch_size", c.batch_size},
       {"epochs", c.epochs},             {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, AcfConfig& c) {
  c.hidden_layer = j.value("hidden_layer", c.hidden_layer);
  c.noise_prob = j.value("noise_prob", c.noise_prob);
  c.dropout_prob = j.value("dropout_prob", c.dropout_prob);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
}

/// User-vector autoencoder: encoder N → hidden (ReLU), decoder hidden → N
/// (sigmoid). Noise dropout masks the input, bottleneck dropout masks the
/// code; both are inverted so inference needs no rescaling.
struct AcfModel {
  DenseLayer encoder;
  DenseLayer decoder;
  double noise_prob = 0.0;
  double dropout_prob = 0.0;

  std::size_t n_items() const { return encoder.in(); }
  std::size_t hidden() const { return encoder.out(); }
  std::vector<DenseLayer> layers() const { return {encoder, decoder}; }

  double weight_norm() const { return encoder.weight.squared_norm() + decoder.weight.squared_norm(); }
};

inline AcfModel init_model(std::size_t n_items, const AcfConfig& cfg) {
  cfg.validate();
  if (n_items < cfg.hidden_layer) throw std::invalid_argument("acf: item count below bottleneck width");
  return {neural::make_dense(n_items, cfg.hidden_layer, neural::Activation::relu, derive_seed(cfg.seed, 21)),
          neural::make_dense(cfg.hidden_layer, n_items, neural::Activation::sigmoid, derive_seed(cfg.seed, 22)),
          cfg.noise_prob, cfg.dropout_prob};
}

namespace detail {

inline std::vector<std::optional<neural::DropoutSpec>> dropout_for(const AcfModel& m, DropoutMode mode) {
  return {neural::DropoutSpec{m.noise_prob, mode}, neural::DropoutSpec{m.dropout_prob, mode}};
}

}  // namespace detail

/// Batch reconstruction (one user vector per row).
inline neural::ForwardResult forward_batch(const AcfModel& m, const Matrix2D& x, DropoutMode mode,
                                           std::uint64_t seed = 0) {
  if (x.cols() != m.n_items()) throw std::invalid_argument("acf: input width does not match item count");
  const auto layers = m.layers();
  const auto drop = detail::dropout_for(m, mode);
  return neural::forward(layers, x, drop, seed);
}

inline std::vector<double> forward_user(const AcfModel& m, std::span<const double> x_u, DropoutMode mode,
                                        std::uint64_t seed = 0) {
  if (x_u.size() != m.n_items()) {
    throw std::invalid_argument("acf: user vector has length " + std::to_string(x_u.size()) +
                                ", model expects " + std::to_string(m.n_items()));
  }
  Matrix2D x(1, x_u.size(), std::vector<double>(x_u.begin(), x_u.end()));
  return forward_batch(m, x, mode, seed).output.data();
}

/// Summed logistic reconstruction loss over items plus
/// weight_decay · (‖W_enc‖² + ‖W_dec‖²).
inline double acf_loss(std::span<const double> x_u, std::span<const double> reconstruction, const AcfModel& m,
                       double weight_decay) {
  if (x_u.size() != reconstruction.size()) throw std::invalid_argument("acf_loss: size mismatch");
  const auto bce = neural::bce_loss(reconstruction, x_u);
  return bce.value * static_cast<double>(x_u.size()) + weight_decay * m.weight_norm();
}

struct AcfGradient {
  double loss = 0.0;  // mean over users of acf_loss
  neural::LayerGrad encoder;
  neural::LayerGrad decoder;
};

/// Loss (1/B) Σ_u Σ_i BCE + wd ‖W‖² for a batch of user rows, with the
/// dropout masks fixed by `seed`.
inline AcfGradient loss_and_gradient(const AcfModel& m, const Matrix2D& x, DropoutMode mode, std::uint64_t seed,
                                     double weight_decay) {
  const auto fr = forward_batch(m, x, mode, seed);
  const auto bce = neural::bce_loss(fr.output.data(), x.data());
  const double per_user_scale = static_cast<double>(m.n_items());  // mean over B·N → mean over B of sums
  AcfGradient g;
  g.loss = bce.value * per_user_scale + weight_decay * m.weight_norm();
  Matrix2D up(fr.output.rows(), fr.output.cols());
  for (std::size_t e = 0; e < up.size(); ++e) up.data()[e] = bce.grad[e] * per_user_scale;
  const auto layers = m.layers();
  auto grads = neural::backward(layers, fr.tape, up);
  g.encoder = std::move(grads.layers[0]);
  g.decoder = std::move(grads.layers[1]);
  for (std::size_t e = 0; e < g.encoder.weight.size(); ++e) {
    g.encoder.weight.data()[e] += 2.0 * weight_decay * m.encoder.weight.data()[e];
  }
  for (std::size_t e = 0; e < g.decoder.weight.size(); ++e) {
    g.decoder.weight.data()[e] += 2.0 * weight_decay * m.decoder.weight.data()[e];
  }
  return g;
}

struct AcfFit {
  AcfModel model;
  std::vector<double> epoch_loss;  // mean per-user loss per epoch
};

inline AcfFit fit(const InteractionMatrix& train, const AcfConfig& cfg) {
  cfg.validate();
  AcfFit res{init_model(train.n_items(), cfg), {}};
  std::vector<Index> users;
  for (std::size_t u = 0; u < train.n_users(); ++u) {
    if (train.rows.row_size(u) > 0) users.push_back(static_cast<Index>(u));
  }
  if (users.empty()) throw std::invalid_argument("acf::fit: empty training matrix");

  using neural::AdamState;
  AcfModel& m = res.model;
  AdamState ew = AdamState::for_size(m.encoder.weight.size(), cfg.learning_rate);
  AdamState eb = AdamState::for_size(m.encoder.bias.size(), cfg.learning_rate);
  AdamState dw = AdamState::for_size(m.decoder.weight.size(), cfg.learning_rate);
  AdamState db = AdamState::for_size(m.decoder.bias.size(), cfg.learning_rate);
  Rng order_rng(derive_seed(cfg.seed, 23));
  const std::size_t n = train.n_items();
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    order_rng.shuffle(users);
    double total = 0.0;
    for (std::size_t b = 0; b < users.size(); b += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, users.size() - b);
      Matrix2D x(len, n);
      for (std::size_t r = 0; r < len; ++r) {
        for (Index i : train.items_of(users[b + r])) x(r, i) = 1.0;
      }
      const auto g = loss_and_gradient(m, x, DropoutMode::train, derive_seed(cfg.seed, (e << 32) + b + 1),
                                       cfg.weight_decay);
      if (!std::isfinite(g.loss)) throw TrainingError("acf: non-finite loss");
      total += g.loss * static_cast<double>(len);
      neural::adam_step(m.encoder.weight.data(), g.encoder.weight.data(), ew);
      neural::adam_step(m.encoder.bias, g.encoder.bias, eb);
      neural::adam_step(m.decoder.weight.data(), g.decoder.weight.data(), dw);
      neural::adam_step(m.decoder.bias, g.decoder.bias, db);
    }
    res.epoch_loss.push_back(total / static_cast<double>(users.size()));
  }
  return res;
}

/// Inference-mode reconstruction of user u restricted to `candidates`.
inline std::vector<double> score_user(const AcfModel& m, const InteractionMatrix& train, std::size_t u,
                                      std::span<const Index> candidates) {
  if (train.n_items() != m.n_items()) throw DimensionMismatch("acf: model trained on a different item universe");
  if (u >= train.n_users()) throw std::out_of_range("acf: user index out of range");
  const auto recon = forward_user(m, train.binary_row(u), DropoutMode::inference);
  std::vector<double> out;
  out.reserve(candidates.size());
  for (Index i : candidates) {
    if (i >= recon.size()) throw std::out_of_range("acf: candidate item out of range");
    out.push_back(recon[i]);
  }
  return out;
}

inline void save(const AcfModel& m, const AcfConfig& cfg, const std::filesystem::path& dir) {
  std::vector<neural::NamedTensor> ts;
  const std::vector<DenseLayer> layers{m.encoder, m.decoder};
  neural::append_layers(ts, "layer", layers);
  neural::save_weights(dir, ts);
  nlohmann::json manifest{{"model", "acf"}, {"config", cfg}, {"n_items", m.n_items()}, {"hidden", m.hidden()}};
  io::write_text(dir / "acf.json", manifest.dump(1) + "\n");
}

inline AcfModel load(const std::filesystem::path& dir, AcfConfig* cfg_out = nullptr) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(io::read_text(dir / "acf.json"));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("bad acf.json: " + std::string(e.what()));
  }
  const auto cfg = manifest.at("config").get<AcfConfig>();
  const auto layers = neural::extract_layers(neural::load_weights(dir), "layer");
  if (layers.size() != 2 || layers[0].in() != manifest.at("n_items").get<std::size_t>()) {
    throw SchemaError("acf weights do not match acf.json");
  }
  if (cfg_out) *cfg_out = cfg;
  return {layers[0], layers[1], cfg.noise_prob, cfg.dropout_prob};
}

}  // namespace irec::acf
