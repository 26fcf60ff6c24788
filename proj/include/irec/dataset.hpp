#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "irec/common.hpp"

namespace irec {

/// One transaction line: `count` purchases of an item by a user.
struct InteractionRecord {
  std::string user_key;
  std::string item_key;
  std::int64_t count = 1;
  std::optional<std::int64_t> timestamp;
};

/// Column names used when reading a transaction CSV. The count and time
/// columns are optional; when absent from the header every row counts
/// once and no timestamps are recorded.
struct CsvSchema {
  std::string user_col = "user";
  std::string item_col = "item";
  std::string count_col = "count";
  std::string time_col = "timestamp";

  static CsvSchema from_json(const nlohmann::json& j) {
    CsvSchema s;
    s.user_col = j.value("user_col", s.user_col);
    s.item_col = j.value("item_col", s.item_col);
    s.count_col = j.value("count_col", s.count_col);
    s.time_col = j.value("time_col", s.time_col);
    return s;
  }
};

struct IngestResult {
  std::vector<InteractionRecord> records;
  std::size_t rows_read = 0;
  std::size_t skipped = 0;
};

namespace detail {

// Splits one CSV line, honouring double-quoted fields.
inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::optional<std::int64_t> parse_int(std::string_view s) {
  s = trim(s);
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace detail

/// Reads a header-prefixed transaction CSV. Rows with an empty key, an
/// unparsable or non-positive count, or an unparsable timestamp are
/// dropped and counted in `skipped`.
inline IngestResult ingest_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot read input file: " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw SchemaError("input file is empty: " + path.string());
  if (line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);

  const auto header = detail::split_csv_line(line);
  auto column = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (detail::trim(header[c]) == name) return c;
    }
    return std::nullopt;
  };
  const auto user_c = column(schema.user_col);
  if (!user_c) throw SchemaError("missing required column '" + schema.user_col + "'");
  const auto item_c = column(schema.item_col);
  if (!item_c) throw SchemaError("missing required column '" + schema.item_col + "'");
  const auto count_c = schema.count_col.empty() ? std::nullopt : column(schema.count_col);
  const auto time_c = schema.time_col.empty() ? std::nullopt : column(schema.time_col);

  IngestResult result;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++result.rows_read;
    const auto fields = detail::split_csv_line(line);
    auto field = [&](std::size_t c) -> std::string_view {
      return c < fields.size() ? detail::trim(fields[c]) : std::string_view{};
    };

    InteractionRecord rec;
    rec.user_key = std::string(field(*user_c));
    rec.item_key = std::string(field(*item_c));
    if (rec.user_key.empty() || rec.item_key.empty()) {
      ++result.skipped;
      continue;
    }
    if (count_c) {
      const auto n = detail::parse_int(field(*count_c));
      if (!n || *n <= 0) {
        ++result.skipped;
        continue;
      }
      rec.count = *n;
    }
    if (time_c && !field(*time_c).empty()) {
      const auto t = detail::parse_int(field(*time_c));
      if (!t) {
        ++result.skipped;
        continue;
      }
      rec.timestamp = *t;
    }
    result.records.push_back(std::move(rec));
  }
  return result;
}

/// Bidirectional map between external keys and dense indices.
class IdMap {
 public:
  Index intern(const std::string& key) {
    auto [it, inserted] = index_.try_emplace(key, static_cast<Index>(keys_.size()));
    if (inserted) keys_.push_back(key);
    return it->second;
  }

  std::optional<Index> find(const std::string& key) const {
    auto it = index_.find(key);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& key(Index i) const { return keys_.at(i); }
  std::size_t size() const { return keys_.size(); }
  const std::vector<std::string>& keys() const { return keys_; }

  static IdMap from_keys(std::vector<std::string> keys) {
    IdMap m;
    for (auto& k : keys) {
      if (m.find(k)) throw SchemaError("duplicate key in id map: " + k);
      m.intern(k);
    }
    return m;
  }

  friend bool operator==(const IdMap& a, const IdMap& b) { return a.keys_ == b.keys_; }

 private:
  std::vector<std::string> keys_;
  std::unordered_map<std::string, Index> index_;
};

/// Compressed sparse rows with double values.
struct Csr {
  std::size_t n_rows = 0;
  std::size_t n_cols = 0;
  std::vector<std::size_t> row_ptr{0};
  std::vector<Index> cols;
  std::vector<double> values;

  std::size_t nnz() const { return cols.size(); }
  std::span<const Index> row_cols(std::size_t r) const {
    return {cols.data() + row_ptr[r], row_ptr[r + 1] - row_ptr[r]};
  }
  std::span<const double> row_values(std::size_t r) const {
    return {values.data() + row_ptr[r], row_ptr[r + 1] - row_ptr[r]};
  }
  std::size_t row_size(std::size_t r) const { return row_ptr[r + 1] - row_ptr[r]; }

  Csr transpose() const {
    Csr t;
    t.n_rows = n_cols;
    t.n_cols = n_rows;
    t.row_ptr.assign(n_cols + 1, 0);
    for (Index c : cols) ++t.row_ptr[c + 1];
    for (std::size_t c = 0; c < n_cols; ++c) t.row_ptr[c + 1] += t.row_ptr[c];
    t.cols.resize(nnz());
    t.values.resize(nnz());
    std::vector<std::size_t> next(t.row_ptr.begin(), t.row_ptr.end() - 1);
    for (std::size_t r = 0; r < n_rows; ++r) {
      for (std::size_t p = row_ptr[r]; p < row_ptr[r + 1]; ++p) {
        const std::size_t dst = next[cols[p]]++;
        t.cols[dst] = static_cast<Index>(r);
        t.values[dst] = values[p];
      }
    }
    return t;
  }

  friend bool operator==(const Csr&, const Csr&) = default;
};

/// Sparse user×item purchase-count matrix. Rows are sorted by item
/// index. `timestamps` and `sequence` run parallel to the CSR entries;
/// `sequence` is the input position of the last record that touched the
/// cell and breaks timestamp ties.
struct InteractionMatrix {
  static constexpr std::int64_t kNoTimestamp = std::numeric_limits<std::int64_t>::min();

  Csr rows;
  std::vector<std::int64_t> timestamps;
  std::vector<std::uint64_t> sequence;
  bool has_timestamps = false;
  IdMap user_ids;
  IdMap item_ids;

  std::size_t n_users() const { return rows.n_rows; }
  std::size_t n_items() const { return rows.n_cols; }
  std::size_t nnz() const { return rows.nnz(); }

  double sparsity() const {
    const double cells = static_cast<double>(n_users()) * static_cast<double>(n_items());
    return cells == 0.0 ? 0.0 : 1.0 - static_cast<double>(nnz()) / cells;
  }

  std::span<const Index> items_of(std::size_t u) const { return rows.row_cols(u); }
  std::span<const double> counts_of(std::size_t u) const { return rows.row_values(u); }

  bool contains(std::size_t u, Index i) const {
    auto r = items_of(u);
    return std::binary_search(r.begin(), r.end(), i);
  }

  /// Binary interaction vector of user u.
  std::vector<double> binary_row(std::size_t u) const {
    std::vector<double> x(n_items(), 0.0);
    for (Index i : items_of(u)) x[i] = 1.0;
    return x;
  }
};

/// Aggregates records into a matrix. Indices follow first appearance;
/// duplicate pairs are summed and keep their latest timestamp.
inline InteractionMatrix build_matrix(const std::vector<InteractionRecord>& records) {
  if (records.empty()) throw std::invalid_argument("build_matrix: no records");

  struct Cell {
    double count = 0.0;
    std::int64_t time = InteractionMatrix::kNoTimestamp;
    std::uint64_t seq = 0;
  };
  InteractionMatrix m;
  std::vector<std::unordered_map<Index, Cell>> acc;
  for (std::uint64_t seq = 0; seq < records.size(); ++seq) {
    const auto& r = records[seq];
    if (r.count < 1 || r.user_key.empty() || r.item_key.empty()) {
      throw std::invalid_argument("build_matrix: invalid record for user '" + r.user_key + "'");
    }
    const Index u = m.user_ids.intern(r.user_key);
    const Index i = m.item_ids.intern(r.item_key);
    if (u >= acc.size()) acc.resize(u + 1);
    Cell& c = acc[u][i];
    c.count += static_cast<double>(r.count);
    c.seq = seq;
    if (r.timestamp) {
      m.has_timestamps = true;
      c.time = std::max(c.time, *r.timestamp);
    }
  }

  m.rows.n_rows = m.user_ids.size();
  m.rows.n_cols = m.item_ids.size();
  m.rows.row_ptr.assign(1, 0);
  for (auto& row : acc) {
    std::vector<std::pair<Index, Cell>> sorted(row.begin(), row.end());
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [i, c] : sorted) {
      m.rows.cols.push_back(i);
      m.rows.values.push_back(c.count);
      m.timestamps.push_back(c.time);
      m.sequence.push_back(c.seq);
    }
    m.rows.row_ptr.push_back(m.rows.cols.size());
  }
  if (!m.has_timestamps) m.timestamps.assign(m.nnz(), InteractionMatrix::kNoTimestamp);
  return m;
}

/// Writes one CSV row per cell (header user,item,count[,timestamp]).
inline void write_csv(const InteractionMatrix& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + path.string());
  // Emit cells in input order so re-ingesting reproduces the sequence.
  std::vector<std::pair<std::uint64_t, std::pair<std::size_t, std::size_t>>> order;
  for (std::size_t u = 0; u < m.n_users(); ++u) {
    for (std::size_t p = m.rows.row_ptr[u]; p < m.rows.row_ptr[u + 1]; ++p) {
      order.push_back({m.sequence[p], {u, p}});
    }
  }
  std::sort(order.begin(), order.end());
  out << "user,item,count" << (m.has_timestamps ? ",timestamp" : "") << "\n";
  for (const auto& [seq, up] : order) {
    const auto [u, p] = up;
    out << detail::csv_escape(m.user_ids.key(static_cast<Index>(u))) << ','
        << detail::csv_escape(m.item_ids.key(m.rows.cols[p])) << ','
        << static_cast<std::int64_t>(m.rows.values[p]);
    if (m.has_timestamps) {
      out << ',';
      if (m.timestamps[p] != InteractionMatrix::kNoTimestamp) out << m.timestamps[p];
    }
    out << '\n';
  }
}

// Snapshot layout: meta.json, rows.bin (packed u32 item + f64 count per
// entry in CSR order), order.bin (i64 timestamp + u64 sequence per entry).
inline void save_snapshot(const InteractionMatrix& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta;
  meta["format"] = "implicit-rec-matrix/1";
  meta["n_users"] = m.n_users();
  meta["n_items"] = m.n_items();
  meta["nnz"] = m.nnz();
  meta["has_timestamps"] = m.has_timestamps;
  meta["row_ptr"] = m.rows.row_ptr;
  meta["user_ids"] = m.user_ids.keys();
  meta["item_ids"] = m.item_ids.keys();
  io::write_text(dir / "meta.json", meta.dump(1) + "\n");

  std::vector<char> rows(m.nnz() * 12);
  std::vector<char> order(m.nnz() * 16);
  for (std::size_t p = 0; p < m.nnz(); ++p) {
    std::memcpy(&rows[p * 12], &m.rows.cols[p], 4);
    std::memcpy(&rows[p * 12 + 4], &m.rows.values[p], 8);
    std::memcpy(&order[p * 16], &m.timestamps[p], 8);
    std::memcpy(&order[p * 16 + 8], &m.sequence[p], 8);
  }
  io::write_pod_vector(dir / "rows.bin", rows);
  io::write_pod_vector(dir / "order.bin", order);
}

inline InteractionMatrix load_snapshot(const std::filesystem::path& dir) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(io::read_text(dir / "meta.json"));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("bad snapshot meta.json: " + std::string(e.what()));
  }
  InteractionMatrix m;
  m.rows.n_rows = meta.at("n_users").get<std::size_t>();
  m.rows.n_cols = meta.at("n_items").get<std::size_t>();
  m.rows.row_ptr = meta.at("row_ptr").get<std::vector<std::size_t>>();
  m.has_timestamps = meta.value("has_timestamps", false);
  m.user_ids = IdMap::from_keys(meta.at("user_ids").get<std::vector<std::string>>());
  m.item_ids = IdMap::from_keys(meta.at("item_ids").get<std::vector<std::string>>());
  const auto nnz = meta.at("nnz").get<std::size_t>();

  const auto rows = io::read_pod_vector<char>(dir / "rows.bin");
  if (rows.size() != nnz * 12 || m.rows.row_ptr.size() != m.n_users() + 1 ||
      m.rows.row_ptr.back() != nnz || m.user_ids.size() != m.n_users() ||
      m.item_ids.size() != m.n_items()) {
    throw SchemaError("inconsistent snapshot in " + dir.string());
  }
  m.rows.cols.resize(nnz);
  m.rows.values.resize(nnz);
  for (std::size_t p = 0; p < nnz; ++p) {
    std::memcpy(&m.rows.cols[p], &rows[p * 12], 4);
    std::memcpy(&m.rows.values[p], &rows[p * 12 + 4], 8);
    if (m.rows.cols[p] >= m.n_items()) throw SchemaError("item index out of range in snapshot");
  }
  m.timestamps.assign(nnz, InteractionMatrix::kNoTimestamp);
  m.sequence.resize(nnz);
  if (std::filesystem::exists(dir / "order.bin")) {
    const auto order = io::read_pod_vector<char>(dir / "order.bin");
    if (order.size() != nnz * 16) throw SchemaError("inconsistent order.bin in " + dir.string());
    for (std::size_t p = 0; p < nnz; ++p) {
      std::memcpy(&m.timestamps[p], &order[p * 16], 8);
      std::memcpy(&m.sequence[p], &order[p * 16 + 8], 8);
    }
  } else {
    for (std::size_t p = 0; p < nnz; ++p) m.sequence[p] = p;
  }
  return m;
}

/// Leave-one-out evaluation split. test_positives[t] and test_negatives[t]
/// describe the t-th tested user.
struct LeaveOneOutSplit {
  InteractionMatrix train;
  std::vector<std::pair<Index, Index>> test_positives;
  std::vector<std::vector<Index>> test_negatives;
  std::vector<Index> excluded_users;
  std::size_t n_neg = 0;
};

namespace detail {

// The r-th (0-based) item not in `sorted_seen`.
inline Index nth_unseen(std::span<const Index> sorted_seen, std::uint64_t r) {
  std::uint64_t x = r;
  for (Index s : sorted_seen) {
    if (s <= x) {
      ++x;
    } else {
      break;
    }
  }
  return static_cast<Index>(x);
}

}  // namespace detail

/// Draws `count` distinct items outside `sorted_seen` uniformly without
/// replacement (Floyd's algorithm over the complement). Result is sorted.
inline std::vector<Index> sample_unseen(std::span<const Index> sorted_seen, std::size_t n_items,
                                        std::size_t count, Rng& rng) {
  const std::uint64_t pool = n_items - sorted_seen.size();
  if (count > pool) throw std::invalid_argument("sample_unseen: pool too small");
  std::unordered_set<std::uint64_t> chosen;
  std::vector<Index> out;
  out.reserve(count);
  for (std::uint64_t j = pool - count; j < pool; ++j) {
    std::uint64_t t = rng.index(j + 1);
    if (!chosen.insert(t).second) {
      chosen.insert(j);
      t = j;
    }
    out.push_back(detail::nth_unseen(sorted_seen, t));
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Holds out each eligible user's latest interaction (timestamp, then input
/// order) and samples `n_neg` negatives per tested user with a generator
/// seeded by (seed, user index).
inline LeaveOneOutSplit leave_one_out_split(const InteractionMatrix& m, std::size_t n_neg,
                                            std::uint64_t seed) {
  if (n_neg < 1) throw std::invalid_argument("leave_one_out_split: n_neg must be >= 1");
  LeaveOneOutSplit split;
  split.n_neg = n_neg;
  split.train.rows.n_rows = m.n_users();
  split.train.rows.n_cols = m.n_items();
  split.train.rows.row_ptr.assign(1, 0);
  split.train.has_timestamps = m.has_timestamps;
  split.train.user_ids = m.user_ids;
  split.train.item_ids = m.item_ids;

  for (std::size_t u = 0; u < m.n_users(); ++u) {
    const std::size_t begin = m.rows.row_ptr[u];
    const std::size_t end = m.rows.row_ptr[u + 1];
    std::size_t held = end;
    if (end - begin >= 2) {
      if (m.n_items() - (end - begin) < n_neg) {
        throw std::invalid_argument("leave_one_out_split: user '" +
                                    m.user_ids.key(static_cast<Index>(u)) + "' has only " +
                                    std::to_string(m.n_items() - (end - begin)) +
                                    " non-interacted items, need " + std::to_string(n_neg));
      }
      held = begin;
      for (std::size_t p = begin + 1; p < end; ++p) {
        if (std::pair(m.timestamps[p], m.sequence[p]) >
            std::pair(m.timestamps[held], m.sequence[held])) {
          held = p;
        }
      }
      Rng rng(derive_seed(seed, u));
      split.test_positives.emplace_back(static_cast<Index>(u), m.rows.cols[held]);
      split.test_negatives.push_back(sample_unseen(m.items_of(u), m.n_items(), n_neg, rng));
    } else {
      split.excluded_users.push_back(static_cast<Index>(u));
    }
    for (std::size_t p = begin; p < end; ++p) {
      if (p == held) continue;
      split.train.rows.cols.push_back(m.rows.cols[p]);
      split.train.rows.values.push_back(m.rows.values[p]);
      split.train.timestamps.push_back(m.timestamps[p]);
      split.train.sequence.push_back(m.sequence[p]);
    }
    split.train.rows.row_ptr.push_back(split.train.rows.cols.size());
  }
  return split;
}

inline void save_split(const LeaveOneOutSplit& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_snapshot(s.train, dir / "train");
  nlohmann::json j;
  j["n_neg"] = s.n_neg;
  j["excluded_users"] = s.excluded_users;
  auto& cases = j["test"] = nlohmann::json::array();
  for (std::size_t t = 0; t < s.test_positives.size(); ++t) {
    cases.push_back({{"user", s.test_positives[t].first},
                     {"item", s.test_positives[t].second},
                     {"negatives", s.test_negatives[t]}});
  }
  io::write_text(dir / "test.json", j.dump() + "\n");
}

inline LeaveOneOutSplit load_split(const std::filesystem::path& dir) {
  LeaveOneOutSplit s;
  s.train = load_snapshot(dir / "train");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(dir / "test.json"));
    s.n_neg = j.at("n_neg").get<std::size_t>();
    s.excluded_users = j.at("excluded_users").get<std::vector<Index>>();
    for (const auto& c : j.at("test")) {
      s.test_positives.emplace_back(c.at("user").get<Index>(), c.at("item").get<Index>());
      s.test_negatives.push_back(c.at("negatives").get<std::vector<Index>>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("bad split test.json: " + std::string(e.what()));
  }
  return s;
}

/// BPR training triple: user u prefers observed item i over unobserved j.
struct Triplet {
  Index u;
  Index i;
  Index j;
  friend bool operator==(const Triplet&, const Triplet&) = default;
};

/// Users with at least one interaction; throws if any of them has
/// interacted with every item (no negative can be drawn).
inline std::vector<Index> users_with_negatives(const InteractionMatrix& train) {
  std::vector<Index> users;
  for (std::size_t u = 0; u < train.n_users(); ++u) {
    const std::size_t deg = train.rows.row_size(u);
    if (deg == 0) continue;
    if (deg >= train.n_items()) {
      throw std::invalid_argument("user '" + train.user_ids.key(static_cast<Index>(u)) +
                                  "' has interacted with every item; no negative exists");
    }
    users.push_back(static_cast<Index>(u));
  }
  if (users.empty()) throw std::invalid_argument("training matrix has no interactions");
  return users;
}

/// Uniform non-interacted item for user u by rejection.
inline Index sample_negative(const InteractionMatrix& train, std::size_t u, Rng& rng) {
  for (;;) {
    const auto j = static_cast<Index>(rng.index(train.n_items()));
    if (!train.contains(u, j)) return j;
  }
}

inline std::vector<Triplet> sample_triplets(const InteractionMatrix& train, std::size_t n,
                                            std::uint64_t seed) {
  const auto users = users_with_negatives(train);
  Rng rng(seed);
  std::vector<Triplet> out;
  out.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    const Index u = users[rng.index(users.size())];
    const auto row = train.items_of(u);
    const Index i = row[rng.index(row.size())];
    out.push_back({u, i, sample_negative(train, u, rng)});
  }
  return out;
}

}  // namespace irec
