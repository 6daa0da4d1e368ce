#pragma once

// Hamming-space retrieval and the metric suite: MAP (optionally top-K),
// precision / recall / F-measure at Hamming radius 2, and an averaged
// precision-recall curve over rank cutoffs.

#include <bit>
#include <cstdint>
#include <cstring>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dsah/dataio.hpp"
#include "dsah/encoder.hpp"
#include "dsah/numerics.hpp"
#include "dsah/trainer.hpp"

namespace dsah {

// Row-major bit-packed +-1 codes: ceil(bits/8) bytes per row, bit set for
// +1, most significant bit first. Padding bits are zero.
class PackedCodes {
 public:
  PackedCodes() = default;
  PackedCodes(std::size_t rows, std::size_t bits)
      : rows_(rows), bits_(bits), stride_((bits + 7) / 8), bytes_(rows * stride_, 0) {}
  PackedCodes(std::size_t rows, std::size_t bits, std::vector<std::uint8_t> bytes)
      : rows_(rows), bits_(bits), stride_((bits + 7) / 8), bytes_(std::move(bytes)) {
    if (bytes_.size() != rows_ * stride_) throw DimensionError("PackedCodes: byte count mismatch");
  }

  static PackedCodes pack(const Matrix& codes) {
    PackedCodes p(codes.rows(), codes.cols());
    for (std::size_t i = 0; i < codes.rows(); ++i) {
      for (std::size_t j = 0; j < codes.cols(); ++j) {
        const double v = codes(i, j);
        if (v != 1.0 && v != -1.0) {
          throw std::invalid_argument("PackedCodes::pack: entries must be +1 or -1");
        }
        if (v > 0.0) p.bytes_[i * p.stride_ + j / 8] |= static_cast<std::uint8_t>(0x80u >> (j % 8));
      }
    }
    return p;
  }

  Matrix unpack() const {
    Matrix out(rows_, bits_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < bits_; ++j)
        out(i, j) = (bytes_[i * stride_ + j / 8] & (0x80u >> (j % 8))) ? 1.0 : -1.0;
    return out;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t bits() const noexcept { return bits_; }
  std::size_t stride() const noexcept { return stride_; }
  std::span<const std::uint8_t> row(std::size_t i) const noexcept {
    return {bytes_.data() + i * stride_, stride_};
  }
  std::span<const std::uint8_t> bytes() const noexcept { return bytes_; }

  friend bool operator==(const PackedCodes&, const PackedCodes&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t bits_ = 0;
  std::size_t stride_ = 0;
  std::vector<std::uint8_t> bytes_;
};

inline std::size_t hamming_distance(std::span<const std::uint8_t> a,
                                    std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) {
    throw DimensionError("hamming_distance: code widths differ (" + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()) + " bytes)");
  }
  std::size_t dist = 0;
  std::size_t i = 0;
  for (; i + 8 <= a.size(); i += 8) {
    std::uint64_t x = 0;
    std::uint64_t y = 0;
    std::memcpy(&x, a.data() + i, 8);
    std::memcpy(&y, b.data() + i, 8);
    dist += static_cast<std::size_t>(std::popcount(x ^ y));
  }
  for (; i < a.size(); ++i) {
    dist += static_cast<std::size_t>(std::popcount(static_cast<unsigned>(a[i] ^ b[i])));
  }
  return dist;
}

struct CodeDatabase {
  PackedCodes codes;
  std::vector<LabelSet> labels;

  CodeDatabase() = default;
  CodeDatabase(PackedCodes c, std::vector<LabelSet> l) : codes(std::move(c)), labels(std::move(l)) {
    if (codes.rows() != labels.size()) {
      throw DimensionError("CodeDatabase: " + std::to_string(codes.rows()) + " codes but " +
                           std::to_string(labels.size()) + " label rows");
    }
  }
  CodeDatabase(const Matrix& signs, std::vector<LabelSet> l)
      : CodeDatabase(PackedCodes::pack(signs), std::move(l)) {}

  std::size_t size() const noexcept { return codes.rows(); }
  std::size_t bits() const noexcept { return codes.bits(); }
};

inline std::vector<std::size_t> hamming_distances(const CodeDatabase& db,
                                                  std::span<const std::uint8_t> query) {
  std::vector<std::size_t> dist(db.size());
  for (std::size_t i = 0; i < db.size(); ++i) dist[i] = hamming_distance(db.codes.row(i), query);
  return dist;
}

namespace detail {

// Counting sort on distance; equal distances keep ascending index order.
inline std::vector<std::size_t> order_by_distance(const std::vector<std::size_t>& dist,
                                                  std::size_t bits) {
  std::vector<std::size_t> start(bits + 2, 0);
  for (auto d : dist) ++start[d + 1];
  for (std::size_t b = 1; b < start.size(); ++b) start[b] += start[b - 1];
  std::vector<std::size_t> order(dist.size());
  for (std::size_t i = 0; i < dist.size(); ++i) order[start[dist[i]]++] = i;
  return order;
}

}  // namespace detail

// Database indices by ascending Hamming distance, ties by ascending index.
inline std::vector<std::size_t> rank_by_hamming(const CodeDatabase& db,
                                                std::span<const std::uint8_t> query) {
  if (db.size() == 0) throw std::invalid_argument("rank_by_hamming: empty database");
  return detail::order_by_distance(hamming_distances(db, query), db.bits());
}

// Mean of precision@i over relevant positions i within the first top_k
// entries; 0 when none are relevant.
inline double average_precision(std::span<const bool> relevance,
                                std::optional<std::size_t> top_k = std::nullopt) {
  const std::size_t limit = top_k ? std::min(*top_k, relevance.size()) : relevance.size();
  double hits = 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < limit; ++i) {
    if (!relevance[i]) continue;
    hits += 1.0;
    sum += hits / static_cast<double>(i + 1);
  }
  return hits > 0.0 ? sum / hits : 0.0;
}

struct MetricsReport {
  double map = 0.0;
  double precision_r2 = 0.0;
  double recall_r2 = 0.0;
  double f_measure_r2 = 0.0;
  std::vector<std::pair<double, double>> pr_curve;  // (recall, precision) per rank cutoff
};

inline constexpr std::size_t kLookupRadius = 2;

inline MetricsReport evaluate(const CodeDatabase& db, const CodeDatabase& queries,
                              std::optional<std::size_t> top_k = std::nullopt) {
  if (queries.size() == 0) throw std::invalid_argument("evaluate: empty query set");
  if (db.size() == 0) throw std::invalid_argument("evaluate: empty database");
  if (db.bits() != queries.bits()) {
    throw DimensionError("evaluate: database has " + std::to_string(db.bits()) +
                         "-bit codes, queries have " + std::to_string(queries.bits()));
  }
  const std::size_t n = db.size();
  MetricsReport rep;
  std::vector<double> curve_p(n, 0.0);
  std::vector<double> curve_r(n, 0.0);
  auto relevance = std::make_unique<bool[]>(n);

  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto code = queries.codes.row(q);
    const auto dist = hamming_distances(db, code);
    const auto order = detail::order_by_distance(dist, db.bits());
    std::size_t total_relevant = 0;
    std::size_t retrieved = 0;
    std::size_t retrieved_relevant = 0;
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t i = order[r];
      relevance[r] = labels_intersect(queries.labels[q], db.labels[i]);
      total_relevant += relevance[r];
      if (dist[i] <= kLookupRadius) {
        ++retrieved;
        retrieved_relevant += relevance[r];
      }
    }
    rep.map += average_precision(std::span<const bool>(relevance.get(), n), top_k);
    if (retrieved > 0) {
      rep.precision_r2 += static_cast<double>(retrieved_relevant) / static_cast<double>(retrieved);
    }
    if (total_relevant > 0) {
      rep.recall_r2 += static_cast<double>(retrieved_relevant) / static_cast<double>(total_relevant);
    }
    std::size_t hits = 0;
    for (std::size_t r = 0; r < n; ++r) {
      hits += relevance[r];
      curve_p[r] += static_cast<double>(hits) / static_cast<double>(r + 1);
      if (total_relevant > 0) {
        curve_r[r] += static_cast<double>(hits) / static_cast<double>(total_relevant);
      }
    }
  }
  const auto nq = static_cast<double>(queries.size());
  rep.map /= nq;
  rep.precision_r2 /= nq;
  rep.recall_r2 /= nq;
  const double pr = rep.precision_r2 + rep.recall_r2;
  rep.f_measure_r2 = pr > 0.0 ? 2.0 * rep.precision_r2 * rep.recall_r2 / pr : 0.0;
  rep.pr_curve.reserve(n);
  for (std::size_t r = 0; r < n; ++r) rep.pr_curve.emplace_back(curve_r[r] / nq, curve_p[r] / nq);
  return rep;
}

// Database = the learned codes H; queries encoded by the network.
inline MetricsReport evaluate_asymmetric(const TrainState& st, const Dataset& train,
                                         const Dataset& queries,
                                         std::optional<std::size_t> top_k = std::nullopt) {
  const CodeDatabase db(st.H, train.labels);
  const CodeDatabase qdb(encode_binary(st.theta1, queries.features), queries.labels);
  return evaluate(db, qdb, top_k);
}

// Database and queries both encoded by the network.
inline MetricsReport evaluate_symmetric(const TrainState& st, const Dataset& train,
                                        const Dataset& queries,
                                        std::optional<std::size_t> top_k = std::nullopt) {
  const CodeDatabase db(encode_binary(st.theta1, train.features), train.labels);
  const CodeDatabase qdb(encode_binary(st.theta1, queries.features), queries.labels);
  return evaluate(db, qdb, top_k);
}

}  // namespace dsah
