#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "irec/common.hpp"
#include "irec/matrix.hpp"

namespace irec {

/// User factors P (M×k) and item factors Q (N×k); score(u, i) = p_u · q_i.
struct FactorModel {
  Matrix2D P;
  Matrix2D Q;

  std::size_t k() const { return P.cols(); }
  std::size_t n_users() const { return P.rows(); }
  std::size_t n_items() const { return Q.rows(); }
};

inline FactorModel init_factors(std::size_t n_users, std::size_t n_items, std::size_t k,
                                std::uint64_t seed, double scale = 0.01) {
  FactorModel m{Matrix2D(n_users, k), Matrix2D(n_items, k)};
  Rng pr(derive_seed(seed, 1));
  for (double& x : m.P.data()) x = pr.uniform(-scale, scale);
  Rng qr(derive_seed(seed, 2));
  for (double& x : m.Q.data()) x = qr.uniform(-scale, scale);
  return m;
}

inline double score(const FactorModel& m, std::size_t u, std::size_t i) {
  if (u >= m.n_users() || i >= m.n_items()) {
    throw std::out_of_range("score: (" + std::to_string(u) + ", " + std::to_string(i) +
                            ") outside " + std::to_string(m.n_users()) + "x" +
                            std::to_string(m.n_items()));
  }
  return dot(m.P.row(u), m.Q.row(i));
}

/// Writes `<manifest_name>` (caller metadata plus shapes) with P.bin/Q.bin.
inline void save_factors(const FactorModel& m, const std::filesystem::path& dir,
                         const std::string& manifest_name, nlohmann::json manifest) {
  std::filesystem::create_directories(dir);
  manifest["n_users"] = m.n_users();
  manifest["n_items"] = m.n_items();
  manifest["k"] = m.k();
  io::write_text(dir / manifest_name, manifest.dump(1) + "\n");
  io::write_pod_vector(dir / "P.bin", m.P.data());
  io::write_pod_vector(dir / "Q.bin", m.Q.data());
}

inline FactorModel load_factors(const std::filesystem::path& dir, const std::string& manifest_name,
                                nlohmann::json* manifest_out = nullptr) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(dir / manifest_name));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("bad " + manifest_name + ": " + e.what());
  }
  const auto m = j.at("n_users").get<std::size_t>();
  const auto n = j.at("n_items").get<std::size_t>();
  const auto k = j.at("k").get<std::size_t>();
  auto p = io::read_pod_vector<double>(dir / "P.bin");
  auto q = io::read_pod_vector<double>(dir / "Q.bin");
  if (p.size() != m * k || q.size() != n * k) {
    throw SchemaError("factor files do not match " + manifest_name);
  }
  if (manifest_out) *manifest_out = j;
  return {Matrix2D(m, k, std::move(p)), Matrix2D(n, k, std::move(q))};
}

}  // namespace irec
