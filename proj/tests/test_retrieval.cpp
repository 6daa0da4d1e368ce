#include <gtest/gtest.h>

#include <algorithm>
#include <memory>
#include <numeric>

#include "dsah/formats.hpp"
#include "dsah/retrieval.hpp"
#include "test_support.hpp"

using namespace dsah;
using dsah::testing::random_matrix;

namespace {

Matrix random_codes(std::size_t n, std::size_t c, SeededRng& rng) {
  return sign_codes(random_matrix(n, c, rng));
}

std::size_t unpacked_distance(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
  std::size_t d = 0;
  for (std::size_t k = 0; k < a.cols(); ++k) d += a(i, k) != b(j, k);
  return d;
}

// AP as sum over relevant ranks of (relevant in prefix) / rank, recounted
// from scratch each time.
double naive_ap(const std::vector<bool>& rel, std::size_t limit) {
  limit = std::min(limit, rel.size());
  double sum = 0.0;
  std::size_t found = 0;
  for (std::size_t p = 0; p < limit; ++p) {
    if (!rel[p]) continue;
    std::size_t prefix = 0;
    for (std::size_t t = 0; t <= p; ++t) prefix += rel[t];
    sum += static_cast<double>(prefix) / static_cast<double>(p + 1);
    ++found;
  }
  return found ? sum / static_cast<double>(found) : 0.0;
}

std::vector<LabelSet> labels_of(std::initializer_list<std::size_t> l) {
  std::vector<LabelSet> out;
  for (auto v : l) out.push_back({v});
  return out;
}

double ap_of(std::initializer_list<bool> rel, std::optional<std::size_t> k = std::nullopt) {
  const auto buf = std::make_unique<bool[]>(rel.size());
  std::copy(rel.begin(), rel.end(), buf.get());
  return average_precision(std::span<const bool>(buf.get(), rel.size()), k);
}

}  // namespace

TEST(PackedCodes, RoundTripAllWidths) {
  SeededRng rng(1);
  for (std::size_t c = 1; c <= 70; ++c) {
    const Matrix codes = random_codes(5, c, rng);
    const auto p = PackedCodes::pack(codes);
    EXPECT_EQ(p.stride(), (c + 7) / 8);
    EXPECT_EQ(p.unpack(), codes);
  }
  EXPECT_EQ(PackedCodes::pack(Matrix{{1, -1, -1}}).bytes()[0], 0x80);
  EXPECT_THROW(PackedCodes::pack(Matrix{{1, 0}}), std::invalid_argument);
  EXPECT_THROW(PackedCodes(2, 8, std::vector<std::uint8_t>(3)), DimensionError);
}

TEST(Hamming, HandCases) {
  const auto p = PackedCodes::pack(Matrix{{1, 1, 1, 1}, {-1, -1, -1, -1}, {1, -1, 1, -1}});
  EXPECT_EQ(hamming_distance(p.row(0), p.row(0)), 0u);
  EXPECT_EQ(hamming_distance(p.row(0), p.row(1)), 4u);
  EXPECT_EQ(hamming_distance(p.row(0), p.row(2)), 2u);
  const auto wide = PackedCodes::pack(Matrix(1, 12, 1.0));
  EXPECT_THROW(hamming_distance(p.row(0), wide.row(0)), DimensionError);
}

TEST(Hamming, MatchesUnpackedComparison) {
  SeededRng rng(2);
  for (std::size_t c : {12u, 24u, 32u, 48u, 64u, 100u, 130u}) {
    const Matrix a = random_codes(10, c, rng);
    const Matrix b = random_codes(10, c, rng);
    const auto pa = PackedCodes::pack(a);
    const auto pb = PackedCodes::pack(b);
    for (std::size_t i = 0; i < 10; ++i) {
      for (std::size_t j = 0; j < 10; ++j) {
        const auto d = hamming_distance(pa.row(i), pb.row(j));
        ASSERT_EQ(d, unpacked_distance(a, i, b, j));
        ASSERT_EQ(d, hamming_distance(pb.row(j), pa.row(i)));
      }
    }
  }
}

TEST(Ranking, MatchesStableSortOracle) {
  SeededRng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t c = 4 + rng.below(20);
    const Matrix dbm = random_codes(40, c, rng);
    const CodeDatabase db(dbm, std::vector<LabelSet>(40, LabelSet{0}));
    const Matrix q = random_codes(1, c, rng);
    const auto pq = PackedCodes::pack(q);
    std::vector<std::size_t> idx(40);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](auto x, auto y) {
      return unpacked_distance(dbm, x, q, 0) < unpacked_distance(dbm, y, q, 0);
    });
    const auto order = rank_by_hamming(db, pq.row(0));
    EXPECT_EQ(order, idx);
    for (std::size_t r = 1; r < order.size(); ++r) {
      EXPECT_LE(hamming_distance(db.codes.row(order[r - 1]), pq.row(0)),
                hamming_distance(db.codes.row(order[r]), pq.row(0)));
    }
  }
  EXPECT_THROW(rank_by_hamming(CodeDatabase{}, std::span<const std::uint8_t>{}), std::invalid_argument);
}

TEST(AveragePrecision, HandCases) {
  EXPECT_DOUBLE_EQ(ap_of({true, false, true}), (1.0 + 2.0 / 3.0) / 2.0);
  EXPECT_DOUBLE_EQ(ap_of({false, true}), 0.5);
  EXPECT_EQ(ap_of({false, false}), 0.0);
  EXPECT_EQ(ap_of({true, true, true}), 1.0);
  EXPECT_EQ(ap_of({false, false, true}, 2), 0.0);
  EXPECT_DOUBLE_EQ(ap_of({false, true, true}, 2), 0.5);
}

TEST(AveragePrecision, MatchesNaiveOracle) {
  SeededRng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(30);
    std::vector<bool> rel(n);
    const auto buf = std::make_unique<bool[]>(n);
    for (std::size_t i = 0; i < n; ++i) buf[i] = rel[i] = rng.uniform() < 0.3;
    const std::size_t k = 1 + rng.below(n + 5);
    const std::span<const bool> span(buf.get(), n);
    EXPECT_DOUBLE_EQ(average_precision(span, k), naive_ap(rel, k));
    EXPECT_DOUBLE_EQ(average_precision(span), naive_ap(rel, n));
  }
}

TEST(Evaluate, HandWorksheet) {
  const std::string dir = DSAH_FIXTURE_DIR "/worksheet/";
  const CodeDatabase db(load_codes(dir + "db_codes.txt"), parse_labels(detail::read_file(dir + "db_labels.csv")));
  const CodeDatabase qs(load_codes(dir + "query_codes.txt"),
                        parse_labels(detail::read_file(dir + "query_labels.csv")));
  const auto rep = evaluate(db, qs);
  EXPECT_NEAR(rep.map, 57.0 / 100.0, 1e-12);
  EXPECT_NEAR(rep.precision_r2, 53.0 / 150.0, 1e-12);
  EXPECT_NEAR(rep.recall_r2, 11.0 / 20.0, 1e-12);
  EXPECT_NEAR(rep.f_measure_r2, 583.0 / 1355.0, 1e-12);
}

TEST(Evaluate, SelfRetrievalIsPerfect) {
  const Matrix codes{{1, 1, 1, 1, 1, 1}, {-1, -1, -1, -1, -1, -1}, {1, 1, 1, -1, -1, -1}};
  const CodeDatabase db(codes, labels_of({0, 1, 2}));
  const auto rep = evaluate(db, db);
  EXPECT_EQ(rep.map, 1.0);
  EXPECT_EQ(rep.precision_r2, 1.0);
  EXPECT_EQ(rep.recall_r2, 1.0);
  EXPECT_EQ(rep.f_measure_r2, 1.0);
}

TEST(Evaluate, QueryWithoutRelevantItems) {
  const CodeDatabase db(Matrix{{1, 1}, {-1, -1}}, labels_of({0, 1}));
  const CodeDatabase qs(Matrix{{1, 1}}, labels_of({5}));
  const auto rep = evaluate(db, qs);
  EXPECT_EQ(rep.map, 0.0);
  EXPECT_EQ(rep.precision_r2, 0.0);
  EXPECT_EQ(rep.recall_r2, 0.0);
  EXPECT_EQ(rep.f_measure_r2, 0.0);
}

TEST(Evaluate, ErrorsOnEmptyOrMismatched) {
  const CodeDatabase db(Matrix{{1, 1}}, labels_of({0}));
  const CodeDatabase wide(Matrix{{1, 1, 1}}, labels_of({0}));
  EXPECT_THROW(evaluate(db, wide), DimensionError);
  EXPECT_THROW(evaluate(db, CodeDatabase{}), std::invalid_argument);
  EXPECT_THROW(evaluate(CodeDatabase{}, db), std::invalid_argument);
  EXPECT_THROW(CodeDatabase(Matrix{{1, 1}}, labels_of({0, 1})), DimensionError);
}

TEST(Evaluate, RandomProperties) {
  SeededRng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 30;
    const std::size_t c = 8;
    const auto dbl = dsah::testing::random_labeled(n, 4, 1, rng, true).labels;
    const auto ql = dsah::testing::random_labeled(6, 4, 1, rng, true).labels;
    const Matrix dbm = random_codes(n, c, rng);
    const CodeDatabase db(dbm, dbl);
    const CodeDatabase qs(random_codes(6, c, rng), ql);
    const auto rep = evaluate(db, qs);

    for (double v : {rep.map, rep.precision_r2, rep.recall_r2, rep.f_measure_r2}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    const double pr = rep.precision_r2 + rep.recall_r2;
    if (pr > 0.0) {
      EXPECT_NEAR(rep.f_measure_r2, 2 * rep.precision_r2 * rep.recall_r2 / pr, 1e-15);
    }

    ASSERT_EQ(rep.pr_curve.size(), n);
    for (std::size_t r = 1; r < n; ++r) EXPECT_GE(rep.pr_curve[r].first, rep.pr_curve[r - 1].first);
    EXPECT_NEAR(rep.pr_curve.back().first, 1.0, 1e-12);

    // Radius metrics depend only on the set of database items, not their order.
    const auto perm = rng.permutation(n);
    Matrix shuffled(n, c);
    std::vector<LabelSet> shuffled_labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::copy(dbm.row(perm[i]).begin(), dbm.row(perm[i]).end(), shuffled.row(i).begin());
      shuffled_labels[i] = dbl[perm[i]];
    }
    const auto rep2 = evaluate(CodeDatabase(shuffled, shuffled_labels), qs);
    EXPECT_NEAR(rep2.precision_r2, rep.precision_r2, 1e-15);
    EXPECT_NEAR(rep2.recall_r2, rep.recall_r2, 1e-15);
    EXPECT_NEAR(rep2.pr_curve.back().second, rep.pr_curve.back().second, 1e-15);
  }
}

TEST(Evaluate, TopKTruncatesAveragePrecision) {
  const CodeDatabase db(Matrix{{1, 1}, {1, -1}, {-1, -1}}, labels_of({1, 1, 0}));
  const CodeDatabase qs(Matrix{{1, 1}}, labels_of({0}));
  EXPECT_DOUBLE_EQ(evaluate(db, qs).map, 1.0 / 3.0);
  EXPECT_EQ(evaluate(db, qs, 2).map, 0.0);
}
