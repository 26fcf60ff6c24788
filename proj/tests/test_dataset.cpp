#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "irec/dataset.hpp"
#include "support.hpp"

namespace irec {
namespace {

using testing::Cell;
using testing::from_cells;
using testing::TempDir;

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

InteractionRecord rec(std::string u, std::string i, std::int64_t c, std::optional<std::int64_t> t = {}) {
  return {std::move(u), std::move(i), c, t};
}

TEST(IngestCsv, ParsesEveryDataRow) {
  TempDir dir("ingest");
  write_file(dir / "a.csv", "user,item,count\nu1,p1,2\nu1,p2,1\nu2,p1,1\n");
  const auto r = ingest_csv(dir / "a.csv", {});
  ASSERT_EQ(r.records.size(), 3u);
  EXPECT_EQ(r.skipped, 0u);
  EXPECT_EQ(r.records[0].user_key, "u1");
  EXPECT_EQ(r.records[0].item_key, "p1");
  EXPECT_EQ(r.records[0].count, 2);
  EXPECT_EQ(r.records[2].user_key, "u2");
}

TEST(IngestCsv, EmptyKeyIsSkippedAndCounted) {
  TempDir dir("ingest");
  write_file(dir / "a.csv", "user,item,count\nu1,,3\nu2,p1,1\n");
  const auto r = ingest_csv(dir / "a.csv", {});
  EXPECT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.skipped, 1u);
  EXPECT_EQ(r.rows_read, 2u);
}

TEST(IngestCsv, NonPositiveAndGarbageCountsAreSkipped) {
  TempDir dir("ingest");
  write_file(dir / "a.csv", "user,item,count\nu1,p1,0\nu1,p2,-4\nu1,p3,abc\nu1,p4,2\n");
  const auto r = ingest_csv(dir / "a.csv", {});
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.records[0].item_key, "p4");
  EXPECT_EQ(r.skipped, 3u);
}

TEST(IngestCsv, MissingCountColumnMeansOnePurchasePerRow) {
  TempDir dir("ingest");
  const std::string text = "item,user\np1,a\np2,a\np1,b\np3,c\np1,a\n";
  write_file(dir / "a.csv", text);
  const auto r = ingest_csv(dir / "a.csv", {});

  // Independent line scan of the same text.
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) ++lines;
  }
  ASSERT_EQ(r.records.size(), lines);
  for (const auto& x : r.records) EXPECT_EQ(x.count, 1);
  EXPECT_EQ(r.records[3].user_key, "c");
  EXPECT_EQ(r.records[3].item_key, "p3");
}

TEST(IngestCsv, CustomColumnsAndQuotedFields) {
  TempDir dir("ingest");
  write_file(dir / "a.csv", "\xEF\xBB\xBF" "cust,\"sku\",qty,ts\n\"Smith, J\",\"p\"\"1\",2,100\n");
  CsvSchema s;
  s.user_col = "cust";
  s.item_col = "sku";
  s.count_col = "qty";
  s.time_col = "ts";
  const auto r = ingest_csv(dir / "a.csv", s);
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.records[0].user_key, "Smith, J");
  EXPECT_EQ(r.records[0].item_key, "p\"1");
  EXPECT_EQ(r.records[0].count, 2);
  EXPECT_EQ(r.records[0].timestamp, 100);
}

TEST(IngestCsv, MissingRequiredColumnIsASchemaError) {
  TempDir dir("ingest");
  write_file(dir / "a.csv", "customer,item\nu1,p1\n");
  try {
    ingest_csv(dir / "a.csv", {});
    FAIL() << "expected SchemaError";
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("'user'"), std::string::npos);
  }
  EXPECT_THROW(ingest_csv(dir / "missing.csv", {}), SchemaError);
}

TEST(BuildMatrix, DuplicatePairsAreSummed) {
  const auto m = build_matrix({rec("u1", "p1", 2), rec("u1", "p1", 3)});
  ASSERT_EQ(m.nnz(), 1u);
  EXPECT_EQ(m.counts_of(0)[0], 5.0);
}

TEST(BuildMatrix, ShapeAndSparsity) {
  const auto m = build_matrix({rec("u1", "p1", 1), rec("u2", "p2", 1)});
  EXPECT_EQ(m.n_users(), 2u);
  EXPECT_EQ(m.n_items(), 2u);
  EXPECT_EQ(m.nnz(), 2u);
  EXPECT_DOUBLE_EQ(m.sparsity(), 0.5);
}

TEST(BuildMatrix, FirstSeenIndicesAndLatestTimestamp) {
  const auto m = build_matrix({rec("b", "y", 1, 7), rec("a", "x", 1, 3), rec("b", "y", 1, 5), rec("b", "x", 1)});
  EXPECT_EQ(m.user_ids.key(0), "b");
  EXPECT_EQ(m.item_ids.key(0), "y");
  EXPECT_EQ(*m.user_ids.find("a"), 1u);
  ASSERT_EQ(m.items_of(0).size(), 2u);
  EXPECT_EQ(m.counts_of(0)[0], 2.0);
  EXPECT_EQ(m.timestamps[0], 7);
  EXPECT_TRUE(m.has_timestamps);
}

TEST(BuildMatrix, NnzEqualsDistinctPairs) {
  Rng rng(42);
  std::vector<InteractionRecord> records;
  std::set<std::pair<std::uint64_t, std::uint64_t>> pairs;
  for (int t = 0; t < 1000; ++t) {
    const auto u = rng.index(50);
    const auto i = rng.index(80);
    pairs.insert({u, i});
    records.push_back(rec("u" + std::to_string(u), "i" + std::to_string(i), 1 + static_cast<std::int64_t>(rng.index(4))));
  }
  const auto m = build_matrix(records);
  EXPECT_EQ(m.nnz(), pairs.size());
  for (std::size_t u = 0; u < m.n_users(); ++u) {
    auto row = m.items_of(u);
    EXPECT_TRUE(std::is_sorted(row.begin(), row.end()));
    for (double c : m.counts_of(u)) EXPECT_GE(c, 1.0);
  }
}

TEST(BuildMatrix, RejectsEmptyInput) { EXPECT_THROW(build_matrix({}), std::invalid_argument); }

// Compares two matrices up to relabeling of users and items by key.
void expect_same_cells(const InteractionMatrix& a, const InteractionMatrix& b) {
  auto cells = [](const InteractionMatrix& m) {
    std::map<std::pair<std::string, std::string>, std::pair<double, std::int64_t>> out;
    for (std::size_t u = 0; u < m.n_users(); ++u) {
      for (std::size_t p = m.rows.row_ptr[u]; p < m.rows.row_ptr[u + 1]; ++p) {
        out[{m.user_ids.key(static_cast<Index>(u)), m.item_ids.key(m.rows.cols[p])}] = {m.rows.values[p],
                                                                                         m.timestamps[p]};
      }
    }
    return out;
  };
  EXPECT_EQ(cells(a), cells(b));
}

TEST(BuildMatrix, CsvRoundTrip) {
  TempDir dir("roundtrip");
  const auto m = testing::planted_blocks(30, 40, 4, 6, 0.8, 3);
  write_csv(m, dir / "m.csv");
  const auto back = build_matrix(ingest_csv(dir / "m.csv", {}).records);
  EXPECT_EQ(back.n_users(), m.n_users());
  EXPECT_EQ(back.nnz(), m.nnz());
  expect_same_cells(m, back);
}

TEST(Snapshot, RoundTripIsExact) {
  TempDir dir("snap");
  const auto m = build_matrix({rec("u1", "p1", 2, 10), rec("u2", "p2", 1), rec("u1", "p3", 4, 12)});
  save_snapshot(m, dir.path());
  const auto back = load_snapshot(dir.path());
  EXPECT_EQ(back.rows, m.rows);
  EXPECT_EQ(back.timestamps, m.timestamps);
  EXPECT_EQ(back.sequence, m.sequence);
  EXPECT_EQ(back.user_ids, m.user_ids);
  EXPECT_EQ(back.item_ids, m.item_ids);
  EXPECT_EQ(back.has_timestamps, m.has_timestamps);
  // rows.bin is packed u32 + f64 per entry.
  EXPECT_EQ(std::filesystem::file_size(dir / "rows.bin"), m.nnz() * 12);
}

TEST(LeaveOneOut, HoldsOutLatestInteraction) {
  // A second user introduces an item u never bought, so one negative exists.
  const auto m = build_matrix({rec("u", "p2", 1, 9), rec("u", "p1", 1, 5), rec("v", "p3", 1, 1)});
  const auto s = leave_one_out_split(m, 1, 7);
  ASSERT_EQ(s.test_positives.size(), 1u);
  EXPECT_EQ(m.item_ids.key(s.test_positives[0].second), "p2");
  const auto train_row = s.train.items_of(0);
  ASSERT_EQ(train_row.size(), 1u);
  EXPECT_EQ(m.item_ids.key(train_row[0]), "p1");
  ASSERT_EQ(s.test_negatives[0].size(), 1u);
  EXPECT_EQ(m.item_ids.key(s.test_negatives[0][0]), "p3");
}

TEST(LeaveOneOut, TiesAndMissingTimestampsUseFileOrder) {
  const auto tied = build_matrix({rec("u", "a", 1, 4), rec("u", "b", 1, 4), rec("u", "c", 1, 1), rec("v", "d", 1)});
  EXPECT_EQ(tied.item_ids.key(leave_one_out_split(tied, 1, 0).test_positives[0].second), "b");
  const auto untimed = build_matrix({rec("u", "a", 1), rec("u", "b", 1), rec("u", "a", 1), rec("v", "d", 1)});
  // "a" was touched last (third row).
  EXPECT_EQ(untimed.item_ids.key(leave_one_out_split(untimed, 1, 0).test_positives[0].second), "a");
}

TEST(LeaveOneOut, SingleInteractionUserIsExcludedAndKept) {
  const auto m = from_cells(2, 5, {{0, 0}, {0, 1}, {1, 3}});
  const auto s = leave_one_out_split(m, 2, 1);
  ASSERT_EQ(s.excluded_users, std::vector<Index>{1});
  ASSERT_EQ(s.test_positives.size(), 1u);
  EXPECT_EQ(s.test_positives[0].first, 0u);
  ASSERT_EQ(s.train.items_of(1).size(), 1u);
  EXPECT_EQ(s.train.items_of(1)[0], 3u);
}

TEST(LeaveOneOut, NegativesAreDistinctAndOutsideHistory) {
  Rng rng(5);
  std::vector<Cell> cells;
  std::set<Index> bought;
  while (bought.size() < 30) bought.insert(static_cast<Index>(rng.index(500)));
  for (Index i : bought) cells.push_back({0, i, 1.0, static_cast<std::int64_t>(rng.index(1000))});
  const auto m = from_cells(1, 500, cells);
  const auto s = leave_one_out_split(m, 100, 11);
  ASSERT_EQ(s.test_negatives.size(), 1u);
  const auto& neg = s.test_negatives[0];
  ASSERT_EQ(neg.size(), 100u);
  std::set<Index> distinct(neg.begin(), neg.end());
  EXPECT_EQ(distinct.size(), 100u);
  for (Index j : neg) {
    EXPECT_LT(j, 500u);
    EXPECT_EQ(bought.count(j), 0u);
  }
}

TEST(LeaveOneOut, PoolSmallerThanNegativeCountThrows) {
  const auto m = from_cells(1, 5, {{0, 0}, {0, 1}, {0, 2}});
  EXPECT_THROW(leave_one_out_split(m, 3, 0), std::invalid_argument);
  EXPECT_NO_THROW(leave_one_out_split(m, 2, 0));
  EXPECT_THROW(leave_one_out_split(m, 0, 0), std::invalid_argument);
}

TEST(LeaveOneOut, DeterministicAndLossless) {
  const auto m = testing::planted_blocks(40, 120, 4, 8, 0.8, 9);
  const auto a = leave_one_out_split(m, 20, 3);
  const auto b = leave_one_out_split(m, 20, 3);
  EXPECT_EQ(a.test_positives, b.test_positives);
  EXPECT_EQ(a.test_negatives, b.test_negatives);
  EXPECT_EQ(a.train.rows, b.train.rows);
  EXPECT_NE(a.test_negatives, leave_one_out_split(m, 20, 4).test_negatives);

  std::set<std::pair<std::size_t, Index>> original;
  std::set<std::pair<std::size_t, Index>> rebuilt;
  for (std::size_t u = 0; u < m.n_users(); ++u) {
    for (Index i : m.items_of(u)) original.insert({u, i});
    for (Index i : a.train.items_of(u)) rebuilt.insert({u, i});
  }
  for (const auto& [u, i] : a.test_positives) rebuilt.insert({u, i});
  EXPECT_EQ(original, rebuilt);
}

TEST(LeaveOneOut, SaveLoadRoundTrip) {
  TempDir dir("split");
  const auto m = testing::planted_blocks(20, 60, 2, 5, 0.9, 1);
  const auto s = leave_one_out_split(m, 10, 2);
  save_split(s, dir.path());
  const auto back = load_split(dir.path());
  EXPECT_EQ(back.n_neg, 10u);
  EXPECT_EQ(back.test_positives, s.test_positives);
  EXPECT_EQ(back.test_negatives, s.test_negatives);
  EXPECT_EQ(back.excluded_users, s.excluded_users);
  EXPECT_EQ(back.train.rows, s.train.rows);
}

TEST(SampleUnseen, UniformOverComplement) {
  // Every non-seen item should be drawn equally often.
  const std::vector<Index> seen{1, 4, 5};
  std::vector<double> hits(10, 0.0);
  Rng rng(77);
  const int draws = 20000;
  for (int t = 0; t < draws; ++t) {
    for (Index j : sample_unseen(seen, 10, 3, rng)) hits[j] += 1.0;
  }
  for (Index s : seen) EXPECT_EQ(hits[s], 0.0);
  const double expected = draws * 3.0 / 7.0;
  const double sd = std::sqrt(draws * (3.0 / 7.0) * (4.0 / 7.0));
  for (Index j = 0; j < 10; ++j) {
    if (std::find(seen.begin(), seen.end(), j) != seen.end()) continue;
    EXPECT_NEAR(hits[j], expected, 4.0 * sd) << "item " << j;
  }
}

TEST(SampleTriplets, ForcedStructure) {
  const auto m = from_cells(1, 3, {{0, 0}});
  for (const auto& t : sample_triplets(m, 200, 1)) {
    EXPECT_EQ(t.u, 0u);
    EXPECT_EQ(t.i, 0u);
    EXPECT_TRUE(t.j == 1 || t.j == 2);
  }
}

TEST(SampleTriplets, UserMarginalIsUniform) {
  const auto m = testing::planted_blocks(100, 200, 5, 10, 0.7, 4);
  const auto ts = sample_triplets(m, 10000, 8);
  std::vector<double> count(100, 0.0);
  for (const auto& t : ts) {
    count[t.u] += 1.0;
    ASSERT_TRUE(m.contains(t.u, t.i));
    ASSERT_FALSE(m.contains(t.u, t.j));
  }
  // Pearson chi-square against uniform, 99 degrees of freedom: mean 99,
  // sd sqrt(198) ≈ 14; 3σ gives a bound of about 141.
  double chi2 = 0.0;
  for (double c : count) chi2 += (c - 100.0) * (c - 100.0) / 100.0;
  EXPECT_LT(chi2, 99.0 + 3.0 * std::sqrt(198.0));
}

TEST(SampleTriplets, DeterministicGivenSeed) {
  const auto m = testing::planted_blocks(30, 50, 3, 5, 0.8, 2);
  EXPECT_EQ(sample_triplets(m, 500, 3), sample_triplets(m, 500, 3));
  EXPECT_NE(sample_triplets(m, 500, 3), sample_triplets(m, 500, 4));
}

TEST(SampleTriplets, UserWithEveryItemIsNamed) {
  auto m = from_cells(2, 2, {{0, 0}, {1, 0}, {1, 1}});
  try {
    sample_triplets(m, 10, 0);
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("'u1'"), std::string::npos);
  }
}

}  // namespace
}  // namespace irec
