#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "irec/common.hpp"
#include "irec/matrix.hpp"

namespace irec::neural {

enum class Activation { identity, relu, sigmoid };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
  }
  return "identity";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  throw SchemaError("unknown activation '" + s + "'");
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// Fully connected layer computing act(x W + b) for row-vector inputs.
struct DenseLayer {
  Matrix2D weight;  // in × out
  std::vector<double> bias;
  Activation activation = Activation::identity;

  std::size_t in() const { return weight.rows(); }
  std::size_t out() const { return weight.cols(); }
};

/// Glorot/Xavier uniform initialization on ±sqrt(6 / (rows + cols)).
inline Matrix2D xavier_init(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  if (rows < 1 || cols < 1) throw std::invalid_argument("xavier_init: empty shape");
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Rng rng(seed);
  Matrix2D m(rows, cols);
  for (double& x : m.data()) x = rng.uniform(-bound, bound);
  return m;
}

inline DenseLayer make_dense(std::size_t in, std::size_t out, Activation act, std::uint64_t seed) {
  return {xavier_init(in, out, seed), std::vector<double>(out, 0.0), act};
}

enum class DropoutMode { train, inference };

/// Inverted dropout applied to a layer's input.
struct DropoutSpec {
  double probability = 0.0;
  DropoutMode mode = DropoutMode::train;
};

struct LayerCache {
  Matrix2D input;  // after dropout
  Matrix2D mask;   // empty when no dropout was applied
  Matrix2D pre;
  Matrix2D output;
};

struct Tape {
  std::vector<LayerCache> layers;
};

struct ForwardResult {
  Matrix2D output;
  Tape tape;
};

namespace detail {

inline double activate(Activation a, double z) {
  switch (a) {
    case Activation::relu: return z > 0.0 ? z : 0.0;
    case Activation::sigmoid: return sigmoid(z);
    case Activation::identity: break;
  }
  return z;
}

// Derivative expressed through the pre-activation and the output.
inline double activate_grad(Activation a, double z, double y) {
  switch (a) {
    case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::sigmoid: return y * (1.0 - y);
    case Activation::identity: break;
  }
  return 1.0;
}

inline Matrix2D affine(const Matrix2D& x, const DenseLayer& layer) {
  const std::size_t n = x.rows();
  const std::size_t in = layer.in();
  const std::size_t out = layer.out();
  Matrix2D z(n, out);
  for (std::size_t r = 0; r < n; ++r) {
    double* zr = &z(r, 0);
    for (std::size_t c = 0; c < out; ++c) zr[c] = layer.bias[c];
    for (std::size_t p = 0; p < in; ++p) {
      const double xp = x(r, p);
      if (xp == 0.0) continue;
      const double* wp = layer.weight.row(p).data();
      for (std::size_t c = 0; c < out; ++c) zr[c] += xp * wp[c];
    }
  }
  return z;
}

inline void check_chain(std::span<const DenseLayer> layers, std::size_t input_width) {
  std::size_t width = input_width;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].in() != width || layers[l].bias.size() != layers[l].out()) {
      throw std::invalid_argument("layer " + std::to_string(l) + " expects input width " +
                                  std::to_string(layers[l].in()) + ", got " +
                                  std::to_string(width));
    }
    width = layers[l].out();
  }
}

}  // namespace detail

/// Runs the layer stack on a batch (one example per row). dropout[l], when
/// set and in train mode, masks the input of layer l; mask draws come from
/// a generator seeded by (seed, l).
inline ForwardResult forward(std::span<const DenseLayer> layers, const Matrix2D& x,
                             std::span<const std::optional<DropoutSpec>> dropout = {},
                             std::uint64_t seed = 0) {
  detail::check_chain(layers, x.cols());
  if (!dropout.empty() && dropout.size() != layers.size()) {
    throw std::invalid_argument("forward: dropout list must match layer count");
  }
  ForwardResult res;
  res.tape.layers.resize(layers.size());
  Matrix2D cur = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    LayerCache& cache = res.tape.layers[l];
    if (!dropout.empty() && dropout[l] && dropout[l]->mode == DropoutMode::train &&
        dropout[l]->probability > 0.0) {
      const double p = dropout[l]->probability;
      if (!(p < 1.0)) throw std::invalid_argument("dropout probability must be < 1");
      const double keep_scale = 1.0 / (1.0 - p);
      Rng rng(derive_seed(seed, l));
      cache.mask = Matrix2D(cur.rows(), cur.cols());
      for (std::size_t e = 0; e < cur.size(); ++e) {
        const double m = rng.uniform() < p ? 0.0 : keep_scale;
        cache.mask.data()[e] = m;
        cur.data()[e] *= m;
      }
    }
    cache.input = cur;
    cache.pre = detail::affine(cur, layers[l]);
    cache.output = cache.pre;
    for (double& v : cache.output.data()) v = detail::activate(layers[l].activation, v);
    cur = cache.output;
  }
  res.output = std::move(cur);
  return res;
}

/// Inference-mode forward without a tape.
inline Matrix2D infer(std::span<const DenseLayer> layers, const Matrix2D& x) {
  detail::check_chain(layers, x.cols());
  Matrix2D cur = x;
  for (const auto& layer : layers) {
    cur = detail::affine(cur, layer);
    for (double& v : cur.data()) v = detail::activate(layer.activation, v);
  }
  return cur;
}

struct LayerGrad {
  Matrix2D weight;
  std::vector<double> bias;
};

struct Gradients {
  std::vector<LayerGrad> layers;
  Matrix2D input;
};

/// Reverse pass. `upstream` is dLoss/dOutput for the batch.
inline Gradients backward(std::span<const DenseLayer> layers, const Tape& tape,
                          const Matrix2D& upstream) {
  if (tape.layers.size() != layers.size() || layers.empty()) {
    throw std::invalid_argument("backward: tape does not match layers");
  }
  const auto& last = tape.layers.back();
  if (upstream.rows() != last.output.rows() || upstream.cols() != last.output.cols()) {
    throw std::invalid_argument("backward: upstream gradient shape mismatch");
  }
  Gradients g;
  g.layers.resize(layers.size());
  Matrix2D grad = upstream;
  for (std::size_t l = layers.size(); l-- > 0;) {
    const DenseLayer& layer = layers[l];
    const LayerCache& c = tape.layers[l];
    const std::size_t n = grad.rows();
    const std::size_t in = layer.in();
    const std::size_t out = layer.out();
    for (std::size_t e = 0; e < grad.size(); ++e) {
      grad.data()[e] *= detail::activate_grad(layer.activation, c.pre.data()[e], c.output.data()[e]);
    }
    LayerGrad& lg = g.layers[l];
    lg.weight = Matrix2D(in, out);
    lg.bias.assign(out, 0.0);
    Matrix2D down(n, in);
    for (std::size_t r = 0; r < n; ++r) {
      const double* dz = &grad(r, 0);
      for (std::size_t c2 = 0; c2 < out; ++c2) lg.bias[c2] += dz[c2];
      for (std::size_t p = 0; p < in; ++p) {
        const double xp = c.input(r, p);
        double* gw = &lg.weight(p, 0);
        const double* w = layer.weight.row(p).data();
        double acc = 0.0;
        for (std::size_t c2 = 0; c2 < out; ++c2) {
          gw[c2] += xp * dz[c2];
          acc += dz[c2] * w[c2];
        }
        down(r, p) = acc;
      }
    }
    if (c.mask.size() != 0) {
      for (std::size_t e = 0; e < down.size(); ++e) down.data()[e] *= c.mask.data()[e];
    }
    grad = std::move(down);
  }
  g.input = std::move(grad);
  return g;
}

inline constexpr double kBceClamp = 1e-12;

struct Loss {
  double value = 0.0;
  std::vector<double> grad;  // w.r.t. predictions
};

/// Mean binary cross-entropy with predictions clamped to
/// [kBceClamp, 1 - kBceClamp]. Gradient is zero where the clamp is active.
inline Loss bce_loss(std::span<const double> predicted, std::span<const double> labels) {
  if (predicted.size() != labels.size() || predicted.empty()) {
    throw std::invalid_argument("bce_loss: size mismatch");
  }
  const double n = static_cast<double>(predicted.size());
  Loss out;
  out.grad.resize(predicted.size());
  for (std::size_t k = 0; k < predicted.size(); ++k) {
    const double y = labels[k];
    if (y != 0.0 && y != 1.0) throw std::invalid_argument("bce_loss: label outside {0,1}");
    const double raw = predicted[k];
    const double p = std::clamp(raw, kBceClamp, 1.0 - kBceClamp);
    out.value -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    const bool clamped = raw < kBceClamp || raw > 1.0 - kBceClamp;
    out.grad[k] = clamped ? 0.0 : (-y / p + (1.0 - y) / (1.0 - p)) / n;
  }
  out.value /= n;
  return out;
}

/// Adam moments for one flat parameter tensor.
struct AdamState {
  std::int64_t step_count = 0;
  std::vector<double> m;
  std::vector<double> v;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double learning_rate = 1e-3;

  static AdamState for_size(std::size_t n, double learning_rate) {
    AdamState s;
    s.m.assign(n, 0.0);
    s.v.assign(n, 0.0);
    s.learning_rate = learning_rate;
    return s;
  }
};

namespace detail {

inline void adam_update(double& param, double g, double& m, double& v, const AdamState& s,
                        double c1, double c2) {
  m = s.beta1 * m + (1.0 - s.beta1) * g;
  v = s.beta2 * v + (1.0 - s.beta2) * g * g;
  param -= s.learning_rate * (m / c1) / (std::sqrt(v / c2) + s.epsilon);
}

}  // namespace detail

/// Bias-corrected Adam step over a dense tensor.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& s) {
  if (params.size() != grads.size() || s.m.size() != params.size() || s.v.size() != params.size()) {
    throw std::invalid_argument("adam_step: shape mismatch");
  }
  for (double g : grads) {
    if (!std::isfinite(g)) throw TrainingError("adam_step: non-finite gradient");
  }
  ++s.step_count;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step_count));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step_count));
  for (std::size_t k = 0; k < params.size(); ++k) {
    detail::adam_update(params[k], grads[k], s.m[k], s.v[k], s, c1, c2);
  }
}

/// Gradient rows accumulated for an embedding table. Rows are kept in
/// first-touch order so reductions are deterministic.
class SparseRowGrad {
 public:
  explicit SparseRowGrad(std::size_t cols) : cols_(cols) {}

  // The span stays valid only until a call that touches a new row.
  std::span<double> row(Index r) {
    auto [it, inserted] = slot_.try_emplace(r, rows_.size());
    if (inserted) {
      rows_.push_back(r);
      values_.resize(values_.size() + cols_, 0.0);
    }
    return {values_.data() + it->second * cols_, cols_};
  }

  std::span<const double> row_at(std::size_t slot) const {
    return {values_.data() + slot * cols_, cols_};
  }

  const std::vector<Index>& rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  Matrix2D dense(std::size_t n_rows) const {
    Matrix2D d(n_rows, cols_);
    for (std::size_t s = 0; s < rows_.size(); ++s) {
      auto src = row_at(s);
      std::copy(src.begin(), src.end(), d.row(rows_[s]).begin());
    }
    return d;
  }

 private:
  std::size_t cols_;
  std::vector<Index> rows_;
  std::vector<double> values_;
  std::unordered_map<Index, std::size_t> slot_;
};

/// Lazy Adam for embedding tables: only rows present in `grad` are
/// updated; the step counter advances once per call.
inline void adam_step_rows(Matrix2D& params, const SparseRowGrad& grad, AdamState& s) {
  if (s.m.size() != params.size() || grad.cols() != params.cols()) {
    throw std::invalid_argument("adam_step_rows: shape mismatch");
  }
  for (std::size_t k = 0; k < grad.rows().size(); ++k) {
    for (double g : grad.row_at(k)) {
      if (!std::isfinite(g)) throw TrainingError("adam_step_rows: non-finite gradient");
    }
  }
  ++s.step_count;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step_count));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step_count));
  const std::size_t cols = params.cols();
  for (std::size_t k = 0; k < grad.rows().size(); ++k) {
    const std::size_t base = static_cast<std::size_t>(grad.rows()[k]) * cols;
    auto g = grad.row_at(k);
    for (std::size_t c = 0; c < cols; ++c) {
      detail::adam_update(params.data()[base + c], g[c], s.m[base + c], s.v[base + c], s, c1, c2);
    }
  }
}

/// A named tensor for serialization.
struct NamedTensor {
  std::string name;
  Matrix2D value;
  std::string activation;  // empty for non-layer tensors
};

/// Writes weights.json (shapes and activations in order) and weights.bin
/// (little-endian f64, concatenated in manifest order).
inline void save_weights(const std::filesystem::path& dir, const std::vector<NamedTensor>& tensors) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = nlohmann::json::array();
  std::vector<double> blob;
  for (const auto& t : tensors) {
    nlohmann::json e{{"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()}};
    if (!t.activation.empty()) e["activation"] = t.activation;
    manifest.push_back(e);
    blob.insert(blob.end(), t.value.data().begin(), t.value.data().end());
  }
  io::write_text(dir / "weights.json", nlohmann::json{{"tensors", manifest}}.dump(1) + "\n");
  io::write_pod_vector(dir / "weights.bin", blob);
}

inline std::vector<NamedTensor> load_weights(const std::filesystem::path& dir) {
  std::vector<NamedTensor> out;
  const auto blob = io::read_pod_vector<double>(dir / "weights.bin");
  std::size_t offset = 0;
  try {
    const auto manifest = nlohmann::json::parse(io::read_text(dir / "weights.json"));
    for (const auto& e : manifest.at("tensors")) {
      const auto rows = e.at("rows").get<std::size_t>();
      const auto cols = e.at("cols").get<std::size_t>();
      if (offset + rows * cols > blob.size()) throw SchemaError("weights.bin is truncated");
      std::vector<double> data(blob.begin() + static_cast<std::ptrdiff_t>(offset),
                               blob.begin() + static_cast<std::ptrdiff_t>(offset + rows * cols));
      offset += rows * cols;
      out.push_back({e.at("name").get<std::string>(), Matrix2D(rows, cols, std::move(data)),
                     e.value("activation", std::string{})});
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("bad weights.json: " + std::string(e.what()));
  }
  if (offset != blob.size()) throw SchemaError("weights.bin size does not match manifest");
  return out;
}

/// Flattens layers into tensors named prefix.{l}.weight / prefix.{l}.bias.
inline void append_layers(std::vector<NamedTensor>& out, const std::string& prefix,
                          std::span<const DenseLayer> layers) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string base = prefix + "." + std::to_string(l);
    out.push_back({base + ".weight", layers[l].weight, to_string(layers[l].activation)});
    out.push_back({base + ".bias", Matrix2D(1, layers[l].bias.size(), layers[l].bias), ""});
  }
}

/// Looks a tensor up by name.
inline const Matrix2D& find_tensor(const std::vector<NamedTensor>& ts, const std::string& name) {
  for (const auto& t : ts) {
    if (t.name == name) return t.value;
  }
  throw SchemaError("missing tensor '" + name + "'");
}

inline std::vector<DenseLayer> extract_layers(const std::vector<NamedTensor>& ts,
                                              const std::string& prefix) {
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0;; ++l) {
    const std::string base = prefix + "." + std::to_string(l);
    auto it = std::find_if(ts.begin(), ts.end(),
                           [&](const NamedTensor& t) { return t.name == base + ".weight"; });
    if (it == ts.end()) break;
    const Matrix2D& b = find_tensor(ts, base + ".bias");
    layers.push_back({it->value, b.data(), activation_from_string(it->activation)});
  }
  return layers;
}

}  // namespace irec::neural
