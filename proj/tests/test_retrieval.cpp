#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "gcml/retrieval.hpp"
#include "oracles.hpp"

using namespace gcml;

namespace {

Tensor<float> random_rows(std::size_t m, std::size_t d, Prng& rng) {
  Tensor<float> t({m, d});
  for (auto& v : t.data()) v = static_cast<float>(rng.normal());
  return t;
}

std::vector<long> iota_ids(std::size_t m, long offset = 0) {
  std::vector<long> ids(m);
  for (std::size_t i = 0; i < m; ++i) ids[i] = offset + static_cast<long>(i);
  return ids;
}

// Percent of queries whose first n full-sort results contain a label match.
std::vector<double> recall_oracle(const oracle::Vec& db, const std::vector<long>& ids, const std::vector<int>& labels,
                                  const oracle::Vec& queries, const std::vector<int>& qlabels, int d,
                                  const std::vector<int>& ns) {
  std::vector<double> out;
  for (int n : ns) {
    int hits = 0;
    for (std::size_t q = 0; q < qlabels.size(); ++q) {
      const oracle::Vec one(queries.begin() + q * d, queries.begin() + (q + 1) * d);
      const auto ranking = oracle::full_ranking(db, ids, one, d);
      bool hit = false;
      for (int r = 0; r < n && r < static_cast<int>(ranking.size()); ++r) {
        const auto pos = std::find(ids.begin(), ids.end(), ranking[r].second) - ids.begin();
        hit = hit || labels[pos] == qlabels[q];
      }
      hits += hit;
    }
    out.push_back(100.0 * hits / static_cast<double>(qlabels.size()));
  }
  return out;
}

Dataset toy(int views) {
  SyntheticSpec s;
  s.num_classes = 3;
  s.instances_per_class = 3;
  s.views_per_instance = views;
  s.image_size = 16;
  return generate_synthetic(s);
}

Dataset view(const Dataset& data, int v) {
  Dataset out;
  for (const auto& s : data)
    if (s.meta.view_id == v) out.push_back(s);
  return out;
}

}  // namespace

TEST(Index, RowsAreNormalizedAndIdsUnique) {
  Tensor<float> e({3, 2}, std::vector<float>{3, 4, 0, 0, -1, 0});
  const long ids[] = {7, 8, 9};
  const int labels[] = {0, 1, 2};
  const auto index = build_index(e, ids, labels);
  EXPECT_FLOAT_EQ(index.row(0)[0], 0.6f);
  EXPECT_FLOAT_EQ(index.row(0)[1], 0.8f);
  EXPECT_EQ(index.row(1)[0], 0.0f);
  EXPECT_EQ(index.label_of(9), 2);
  const long dup[] = {7, 7, 9};
  EXPECT_THROW(build_index(e, dup, labels), RetrievalError);
}

TEST(Index, QueryMatchesFullSortOracle) {
  Prng rng(50);
  const std::size_t m = 50, d = 16;
  const auto ids = iota_ids(m, 100);
  std::vector<int> labels(m, 0);
  const auto index = build_index(random_rows(m, d, rng), ids, labels);
  const oracle::Vec db(index.rows.begin(), index.rows.end());
  const auto queries = random_rows(5, d, rng);
  for (std::size_t q = 0; q < 5; ++q) {
    const std::span<const float> qv(queries.values().data() + q * d, d);
    const auto want = oracle::full_ranking(db, ids, oracle::Vec(qv.begin(), qv.end()), static_cast<int>(d));
    for (std::size_t n : {1ul, 5ul, 50ul, 60ul}) {
      const auto got = query(index, qv, n, static_cast<long>(q));
      ASSERT_EQ(got.ranked_ids.size(), std::min(n, m));
      EXPECT_EQ(got.query_id, static_cast<long>(q));
      for (std::size_t r = 0; r < got.ranked_ids.size(); ++r) {
        EXPECT_EQ(got.ranked_ids[r], want[r].second);
        EXPECT_NEAR(got.distances[r], want[r].first, 1e-12);
      }
    }
  }
}

TEST(Index, TiesAreBrokenByAscendingId) {
  Tensor<float> e({4, 2}, std::vector<float>{1, 0, 0, 1, 1, 0, 1, 0});
  const long ids[] = {5, 1, 2, 9};
  const int labels[] = {0, 0, 0, 0};
  const auto index = build_index(e, ids, labels);
  const float q[] = {1, 0};
  EXPECT_EQ(query(index, q, 4).ranked_ids, (std::vector<long>{2, 5, 9, 1}));
}

TEST(Index, EdgeCases) {
  Tensor<float> one({1, 2}, std::vector<float>{0, 1});
  const long id[] = {3};
  const int label[] = {4};
  const auto index = build_index(one, id, label);
  const float q[] = {1, 0};
  const auto r = query(index, q, 10);
  ASSERT_EQ(r.ranked_ids, std::vector<long>{3});
  EXPECT_NEAR(r.distances[0], 2.0, 1e-12);
  EXPECT_THROW(query(index, q, 0), RetrievalError);
  const float wrong_dim[] = {1, 0, 0};
  EXPECT_THROW(query(index, wrong_dim, 1), RetrievalError);
  const auto empty = build_index(Tensor<float>({0, 2}), std::span<const long>{}, std::span<const int>{});
  EXPECT_EQ(empty.size(), 0u);
  EXPECT_THROW(query(empty, q, 1), RetrievalError);
}

TEST(Recall, FirstPositiveAtRankSix) {
  // Database on a line; the single positive for the query sits at rank 6.
  std::vector<float> rows;
  for (int i = 0; i < 10; ++i) {
    const double a = 0.1 * i;
    rows.push_back(static_cast<float>(std::cos(a)));
    rows.push_back(static_cast<float>(std::sin(a)));
  }
  const auto ids = iota_ids(10);
  std::vector<int> labels(10, 0);
  labels[5] = 1;
  const auto index = build_index(Tensor<float>({10, 2}, rows), ids, labels);
  const float q[] = {1, 0};
  const std::vector<RetrievalResult> results{query(index, q, 10, 0)};
  EXPECT_EQ(results[0].ranked_ids[5], 5);
  const int qlabels[] = {1};
  const int ns[] = {1, 5, 6, 10};
  EXPECT_EQ(recall_at_n(index, results, qlabels, ns), (std::vector<double>{0, 0, 100, 100}));
}

TEST(Recall, MatchesCountingOracleAndIsMonotone) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Prng rng(700 + seed);
    const std::size_t m = 45, d = 6, nq = 20;
    const auto ids = iota_ids(m);
    std::vector<int> labels(m);
    for (std::size_t i = 0; i < m; ++i) labels[i] = static_cast<int>(i % 9);
    const auto index = build_index(random_rows(m, d, rng), ids, labels);
    const auto queries = random_rows(nq, d, rng);
    std::vector<int> qlabels;
    std::vector<RetrievalResult> results;
    oracle::Vec qv;
    for (std::size_t q = 0; q < nq; ++q) {
      qlabels.push_back(static_cast<int>(rng.below(9)));
      std::span<const float> row(queries.values().data() + q * d, d);
      results.push_back(query(index, row, m, static_cast<long>(q)));
      qv.insert(qv.end(), row.begin(), row.end());
    }
    const std::vector<int> ns{1, 2, 5, 10, 20, 45};
    const auto got = recall_at_n(index, results, qlabels, ns);
    EXPECT_EQ(got, recall_oracle(oracle::Vec(index.rows.begin(), index.rows.end()), ids, labels, qv, qlabels,
                                 static_cast<int>(d), ns));
    EXPECT_TRUE(std::is_sorted(got.begin(), got.end()));
    EXPECT_EQ(got.back(), 100.0);
  }
}

TEST(Recall, QueriesWithoutPositivesAreRejected) {
  Tensor<float> e({2, 1}, std::vector<float>{1, -1});
  const long ids[] = {0, 1};
  const int labels[] = {0, 0};
  const auto index = build_index(e, ids, labels);
  const float q[] = {1};
  const int qlabels[] = {3};
  const int ns[] = {1};
  EXPECT_THROW(recall_at_n(index, {query(index, q, 2)}, qlabels, ns), RetrievalError);
}

TEST(Recall, TsvRoundTrip) {
  const std::vector<RecallTable> tables{{"p4m", {1, 5}, {50, 87.5}}, {"plain+aug", {1, 5}, {12.25, 40}}};
  std::stringstream ss;
  write_recall_tsv(ss, tables);
  EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')), "method\tn\trecall_percent");
  const auto back = read_recall_tsv(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].method, "plain+aug");
  EXPECT_EQ(back[1].recall, (std::vector<double>{12.25, 40}));
}

TEST(Protocol, TurnsAreSeededDraws) {
  const auto a = draw_turns(200, 9), b = draw_turns(200, 9);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, draw_turns(200, 10));
  Prng rng(9);
  for (int t : a) {
    EXPECT_EQ(t, static_cast<int>(rng.below(4)));
    EXPECT_GE(t, 0);
    EXPECT_LT(t, 4);
  }
}

TEST(Protocol, ZeroTurnsReproduceTheUnrotatedTable) {
  ModelConfig c;
  c.variant = Variant::plain;
  c.stages = {{1, 4}, {1, 8}};
  c.input_size = 16;
  c.num_classes = 3;
  c.embed_dim = 8;
  Model<float> model(c);
  const auto data = toy(2);
  model.forward_embed(stack_images(data));
  const auto db = view(data, 0), queries = view(data, 1);
  const std::vector<int> turns(queries.size(), 0);
  const int ns[] = {1, 5};
  const auto r = rotated_protocol(model, db, queries, turns, ns, "plain");
  EXPECT_EQ(r.rotated.recall, r.unrotated.recall);
  EXPECT_EQ(r.rotated.method, "plain");
  EXPECT_EQ(model.mode(), Mode::train);
}

TEST(Protocol, GroupModelTablesAgreeUnderRotation) {
  ModelConfig c;
  c.variant = Variant::p4m;
  c.stages = {{1, 4}, {1, 8}};
  c.input_size = 16;
  c.num_classes = 3;
  c.embed_dim = 8;
  Model<float> model(c);
  const auto data = toy(2);
  model.forward_embed(stack_images(data));
  const auto db = view(data, 0), queries = view(data, 1);
  const int ns[] = {1, 2, 5};
  const auto r = rotated_protocol(model, db, queries, std::uint64_t{2024}, ns, "p4m");
  EXPECT_EQ(r.turns, draw_turns(queries.size(), 2024));
  EXPECT_EQ(r.rotated.recall, r.unrotated.recall);
}
