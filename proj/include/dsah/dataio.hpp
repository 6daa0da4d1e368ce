#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dsah/numerics.hpp"

namespace dsah {

// Sorted, duplicate-free class ids of one sample.
using LabelSet = std::vector<std::size_t>;

class DataError : public std::runtime_error {
 public:
  enum class Kind { io, malformed_row, label_out_of_range, row_count_mismatch, invalid };

  DataError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

inline bool labels_intersect(const LabelSet& a, const LabelSet& b) {
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i == *j) return true;
    if (*i < *j) ++i; else ++j;
  }
  return false;
}

struct Dataset {
  Matrix features;
  std::vector<LabelSet> labels;
  std::size_t num_classes = 0;

  std::size_t n() const noexcept { return features.rows(); }
  std::size_t d() const noexcept { return features.cols(); }
  std::size_t k() const noexcept { return num_classes; }

  void validate() const {
    if (labels.size() != features.rows()) {
      throw DataError(DataError::Kind::row_count_mismatch,
                      "dataset: " + std::to_string(features.rows()) + " feature rows but " +
                          std::to_string(labels.size()) + " label rows");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const auto& l = labels[i];
      if (l.empty()) {
        throw DataError(DataError::Kind::malformed_row,
                        "dataset: sample " + std::to_string(i) + " has no label");
      }
      if (!std::is_sorted(l.begin(), l.end()) ||
          std::adjacent_find(l.begin(), l.end()) != l.end()) {
        throw DataError(DataError::Kind::malformed_row,
                        "dataset: sample " + std::to_string(i) + " label set not canonical");
      }
      if (l.back() >= num_classes) {
        throw DataError(DataError::Kind::label_out_of_range,
                        "dataset: sample " + std::to_string(i) + " has label " +
                            std::to_string(l.back()) + " >= k=" + std::to_string(num_classes));
      }
    }
    if (!features.all_finite()) {
      throw DataError(DataError::Kind::malformed_row, "dataset: non-finite feature value");
    }
  }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset out;
    out.num_classes = num_classes;
    out.features = Matrix(idx.size(), d());
    out.labels.reserve(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      auto src = features.row(idx[r]);
      std::copy(src.begin(), src.end(), out.features.row(r).begin());
      out.labels.push_back(labels[idx[r]]);
    }
    return out;
  }
};

// Intra-class (Y) and inter-class (R) indicator matrices, scaled by
// sqrt(beta1) and sqrt(beta2).
struct DualLabels {
  Matrix Y;
  Matrix R;
  double beta1 = 0.0;
  double beta2 = 0.0;
};

inline DualLabels build_dual_labels(const Dataset& ds, double beta1, double beta2) {
  if (beta1 < 0.0 || beta2 < 0.0) {
    throw std::invalid_argument("build_dual_labels: beta1 and beta2 must be nonnegative");
  }
  const double y = std::sqrt(beta1);
  const double r = std::sqrt(beta2);
  DualLabels out{Matrix(ds.n(), ds.k()), Matrix(ds.n(), ds.k(), r), beta1, beta2};
  for (std::size_t i = 0; i < ds.n(); ++i) {
    for (std::size_t j : ds.labels[i]) {
      out.Y(i, j) = y;
      out.R(i, j) = 0.0;
    }
  }
  return out;
}

// |kappa(i)|: number of training samples (self included) sharing at least
// one label with sample i.
inline std::vector<std::size_t> class_mate_counts(const Dataset& ds) {
  const std::size_t n = ds.n();
  std::vector<std::size_t> out(n, 0);
  const bool single_label = std::all_of(ds.labels.begin(), ds.labels.end(),
                                        [](const LabelSet& l) { return l.size() == 1; });
  if (single_label) {
    std::vector<std::size_t> per_class(ds.k(), 0);
    for (const auto& l : ds.labels) ++per_class[l.front()];
    for (std::size_t i = 0; i < n; ++i) out[i] = per_class[ds.labels[i].front()];
    return out;
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (labels_intersect(ds.labels[i], ds.labels[j])) ++out[i];
  return out;
}

struct BatchGraph {
  std::vector<std::size_t> batch_indices;
  Matrix affinity;                // m x m, {0,1}, unit diagonal
  std::vector<double> degrees;    // row sums of affinity
  Matrix indicator;               // n x m, 1/|kappa(i)| where labels intersect
  std::vector<std::size_t> kappa_sizes;

  std::size_t m() const noexcept { return batch_indices.size(); }
};

inline BatchGraph build_batch_graph(const Dataset& ds, std::span<const std::size_t> batch,
                                    const std::vector<std::size_t>& kappa) {
  if (batch.empty()) throw std::invalid_argument("build_batch_graph: empty batch");
  if (kappa.size() != ds.n()) throw DimensionError("build_batch_graph: kappa size mismatch");
  const std::size_t m = batch.size();
  std::vector<bool> seen(ds.n(), false);
  for (std::size_t idx : batch) {
    if (idx >= ds.n()) throw std::out_of_range("build_batch_graph: index out of range");
    if (seen[idx]) throw std::invalid_argument("build_batch_graph: duplicate index");
    seen[idx] = true;
  }

  BatchGraph g;
  g.batch_indices.assign(batch.begin(), batch.end());
  g.kappa_sizes = kappa;
  g.affinity = Matrix(m, m);
  g.degrees.assign(m, 0.0);
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = 0; b < m; ++b) {
      const bool similar = a == b || labels_intersect(ds.labels[batch[a]], ds.labels[batch[b]]);
      g.affinity(a, b) = similar ? 1.0 : 0.0;
      g.degrees[a] += g.affinity(a, b);
    }
  }
  g.indicator = Matrix(ds.n(), m);
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const double w = 1.0 / static_cast<double>(kappa[i]);
    for (std::size_t b = 0; b < m; ++b) {
      if (labels_intersect(ds.labels[i], ds.labels[batch[b]])) g.indicator(i, b) = w;
    }
  }
  return g;
}

inline BatchGraph build_batch_graph(const Dataset& ds, std::span<const std::size_t> batch) {
  return build_batch_graph(ds, batch, class_mate_counts(ds));
}

// Shuffle [0, n) and slice into consecutive batches of size m; the last
// batch holds the remainder.
inline std::vector<std::vector<std::size_t>> sample_epoch_batches(std::size_t n, std::size_t m,
                                                                  SeededRng& rng) {
  if (m == 0) throw std::invalid_argument("sample_epoch_batches: batch size must be positive");
  if (m > n) throw std::invalid_argument("sample_epoch_batches: batch size exceeds n");
  const auto perm = rng.permutation(n);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += m) {
    const std::size_t stop = std::min(n, start + m);
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                     perm.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  return out;
}

// k Gaussian clusters around random unit-norm centers; samples are grouped
// by class in ascending order.
inline Dataset make_synthetic_clusters(std::size_t k, std::size_t per_class, std::size_t d,
                                       double spread, SeededRng& rng) {
  if (k == 0 || per_class == 0 || d == 0) {
    throw std::invalid_argument("make_synthetic_clusters: counts must be positive");
  }
  Matrix centers(k, d);
  for (std::size_t c = 0; c < k; ++c) {
    double norm = 0.0;
    do {
      for (auto& v : centers.row(c)) v = rng.normal();
      norm = 0.0;
      for (double v : centers.row(c)) norm += v * v;
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (auto& v : centers.row(c)) v /= norm;
  }
  Dataset ds;
  ds.num_classes = k;
  ds.features = Matrix(k * per_class, d);
  ds.labels.reserve(k * per_class);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t s = 0; s < per_class; ++s) {
      auto row = ds.features.row(c * per_class + s);
      for (std::size_t j = 0; j < d; ++j) row[j] = centers(c, j) + spread * rng.normal();
      ds.labels.push_back({c});
    }
  }
  return ds;
}

// Per-class split: round(fraction * class size) samples of each class go to
// the query side. Multi-label samples are bucketed by their smallest label.
inline std::pair<Dataset, Dataset> split_stratified(const Dataset& ds, double query_fraction,
                                                    SeededRng& rng) {
  if (!(query_fraction >= 0.0 && query_fraction < 1.0)) {
    throw std::invalid_argument("split_stratified: fraction must be in [0, 1)");
  }
  std::vector<std::vector<std::size_t>> buckets(ds.k());
  for (std::size_t i = 0; i < ds.n(); ++i) buckets[ds.labels[i].front()].push_back(i);
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> query_idx;
  for (auto& b : buckets) {
    rng.shuffle(b);
    const auto q = static_cast<std::size_t>(std::llround(query_fraction * static_cast<double>(b.size())));
    query_idx.insert(query_idx.end(), b.begin(), b.begin() + static_cast<std::ptrdiff_t>(q));
    train_idx.insert(train_idx.end(), b.begin() + static_cast<std::ptrdiff_t>(q), b.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(query_idx.begin(), query_idx.end());
  return {ds.subset(train_idx), ds.subset(query_idx)};
}

// ---------------------------------------------------------------------------
// File formats
//
// Features: CSV (one sample per row, no header) or binary:
//   "DSAHFEAT" | u32 n | u32 d | n*d f64, all little-endian.
// Labels: one CSV row per sample, semicolon-separated class ids.
// ---------------------------------------------------------------------------

inline constexpr std::string_view kFeatureMagic = "DSAHFEAT";

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataError::Kind::io, "cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::vector<std::string_view> lines(std::string_view text) {
  std::vector<std::string_view> out;
  for (auto l : split(text, '\n')) {
    l = trim(l);
    if (!l.empty()) out.push_back(l);
  }
  return out;
}

inline double parse_double(std::string_view s, const std::string& where) {
  s = trim(s);
  std::string tmp(s);
  char* end = nullptr;
  const double v = std::strtod(tmp.c_str(), &end);
  if (tmp.empty() || end != tmp.c_str() + tmp.size() || !std::isfinite(v)) {
    throw DataError(DataError::Kind::malformed_row, where + ": bad number '" + tmp + "'");
  }
  return v;
}

inline std::size_t parse_index(std::string_view s, const std::string& where) {
  s = trim(s);
  std::string tmp(s);
  if (tmp.empty() || !std::all_of(tmp.begin(), tmp.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw DataError(DataError::Kind::malformed_row, where + ": bad label '" + tmp + "'");
  }
  return static_cast<std::size_t>(std::stoull(tmp));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(std::string_view in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{static_cast<unsigned char>(in[at + i])} << (8 * i);
  return v;
}

inline double get_f64(std::string_view in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{static_cast<unsigned char>(in[at + i])} << (8 * i);
  return std::bit_cast<double>(v);
}

inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  std::snprintf(buf.data(), buf.size(), "%.17g", v);
  return buf.data();
}

inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(DataError::Kind::io, "cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError(DataError::Kind::io, "write failed for '" + path + "'");
}

}  // namespace detail

inline Matrix parse_features(std::string_view text, const std::string& name = "features") {
  if (text.size() >= kFeatureMagic.size() && text.substr(0, kFeatureMagic.size()) == kFeatureMagic) {
    if (text.size() < 16) throw DataError(DataError::Kind::malformed_row, name + ": truncated header");
    const std::size_t n = detail::get_u32(text, 8);
    const std::size_t d = detail::get_u32(text, 12);
    if (text.size() != 16 + 8 * n * d) {
      throw DataError(DataError::Kind::malformed_row,
                      name + ": payload size does not match header n=" + std::to_string(n) +
                          " d=" + std::to_string(d));
    }
    Matrix out(n, d);
    auto dst = out.data();
    for (std::size_t i = 0; i < n * d; ++i) dst[i] = detail::get_f64(text, 16 + 8 * i);
    if (!out.all_finite()) throw DataError(DataError::Kind::malformed_row, name + ": non-finite value");
    return out;
  }
  const auto rows = detail::lines(text);
  std::vector<double> values;
  std::size_t d = 0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto fields = detail::split(rows[r], ',');
    const std::string where = name + " row " + std::to_string(r + 1);
    if (r == 0) d = fields.size();
    if (fields.size() != d) {
      throw DataError(DataError::Kind::malformed_row,
                      where + ": expected " + std::to_string(d) + " columns, got " +
                          std::to_string(fields.size()));
    }
    for (auto f : fields) values.push_back(detail::parse_double(f, where));
  }
  return Matrix(rows.size(), d, std::move(values));
}

inline std::vector<LabelSet> parse_labels(std::string_view text, const std::string& name = "labels") {
  std::vector<LabelSet> out;
  const auto rows = detail::lines(text);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::string where = name + " row " + std::to_string(r + 1);
    LabelSet set;
    for (auto f : detail::split(rows[r], ';')) set.push_back(detail::parse_index(f, where));
    std::sort(set.begin(), set.end());
    set.erase(std::unique(set.begin(), set.end()), set.end());
    out.push_back(std::move(set));
  }
  return out;
}

// Loads and validates a dataset. Without `num_classes`, k is one more than
// the largest label id seen.
inline Dataset load_dataset(const std::string& features_path, const std::string& labels_path,
                            std::optional<std::size_t> num_classes = std::nullopt) {
  Dataset ds;
  ds.features = parse_features(detail::read_file(features_path), features_path);
  ds.labels = parse_labels(detail::read_file(labels_path), labels_path);
  if (num_classes) {
    ds.num_classes = *num_classes;
  } else {
    for (const auto& l : ds.labels)
      if (!l.empty()) ds.num_classes = std::max(ds.num_classes, l.back() + 1);
  }
  ds.validate();
  return ds;
}

inline std::string features_to_csv(const Matrix& x) {
  std::string out;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      if (j) out.push_back(',');
      out += detail::format_double(x(i, j));
    }
    out.push_back('\n');
  }
  return out;
}

inline std::string features_to_binary(const Matrix& x) {
  std::string out(kFeatureMagic);
  detail::put_u32(out, static_cast<std::uint32_t>(x.rows()));
  detail::put_u32(out, static_cast<std::uint32_t>(x.cols()));
  for (double v : x.data()) detail::put_f64(out, v);
  return out;
}

inline std::string labels_to_csv(const std::vector<LabelSet>& labels) {
  std::string out;
  for (const auto& l : labels) {
    for (std::size_t i = 0; i < l.size(); ++i) {
      if (i) out.push_back(';');
      out += std::to_string(l[i]);
    }
    out.push_back('\n');
  }
  return out;
}

}  // namespace dsah
