#pragma once

// Text and binary artifact formats.
//
//   codes (text)    one sample per line, c entries of 1 / -1 separated by spaces
//   codes (packed)  "DSAHCODE" | u32 n | u32 c | n * ceil(c/8) bytes, MSB first, bit=1 <=> +1
//   history         CSV iter,r_intra,r_inter,p,q,j_total
//   metrics         CSV metric,value
//   pr curve        CSV recall,precision
//   config          "key = value" per line, '#' starts a comment

#include <string>
#include <string_view>
#include <vector>

#include "dsah/dataio.hpp"
#include "dsah/objective.hpp"
#include "dsah/retrieval.hpp"
#include "dsah/trainer.hpp"

namespace dsah {

inline constexpr std::string_view kCodesMagic = "DSAHCODE";

inline std::string codes_to_text(const Matrix& codes) {
  std::string out;
  out.reserve(codes.rows() * codes.cols() * 3);
  for (std::size_t i = 0; i < codes.rows(); ++i) {
    for (std::size_t j = 0; j < codes.cols(); ++j) {
      if (j) out.push_back(' ');
      out += codes(i, j) > 0.0 ? "1" : "-1";
    }
    out.push_back('\n');
  }
  return out;
}

inline std::string codes_to_packed(const PackedCodes& codes) {
  std::string out(kCodesMagic);
  detail::put_u32(out, static_cast<std::uint32_t>(codes.rows()));
  detail::put_u32(out, static_cast<std::uint32_t>(codes.bits()));
  for (auto b : codes.bytes()) out.push_back(static_cast<char>(b));
  return out;
}

// Accepts either codes format.
inline PackedCodes parse_codes(std::string_view bytes, const std::string& name = "codes") {
  if (bytes.size() >= kCodesMagic.size() && bytes.substr(0, kCodesMagic.size()) == kCodesMagic) {
    if (bytes.size() < 16) throw DataError(DataError::Kind::malformed_row, name + ": truncated header");
    const std::size_t n = detail::get_u32(bytes, 8);
    const std::size_t c = detail::get_u32(bytes, 12);
    const std::size_t stride = (c + 7) / 8;
    if (c == 0 || bytes.size() != 16 + n * stride) {
      throw DataError(DataError::Kind::malformed_row, name + ": payload size does not match header");
    }
    std::vector<std::uint8_t> raw(bytes.begin() + 16, bytes.end());
    const auto pad_mask = static_cast<std::uint8_t>(c % 8 == 0 ? 0 : (0xFFu >> (c % 8)));
    for (std::size_t i = 0; i < n; ++i) {
      if (raw[i * stride + stride - 1] & pad_mask) {
        throw DataError(DataError::Kind::malformed_row, name + ": nonzero padding bits");
      }
    }
    return PackedCodes(n, c, std::move(raw));
  }
  const auto rows = detail::lines(bytes);
  std::vector<double> values;
  std::size_t c = 0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::string where = name + " row " + std::to_string(r + 1);
    std::vector<std::string_view> fields;
    for (auto f : detail::split(rows[r], ' '))
      if (!f.empty()) fields.push_back(f);
    if (r == 0) c = fields.size();
    if (fields.size() != c || c == 0) {
      throw DataError(DataError::Kind::malformed_row, where + ": inconsistent code width");
    }
    for (auto f : fields) {
      if (f == "1" || f == "+1") values.push_back(1.0);
      else if (f == "-1") values.push_back(-1.0);
      else throw DataError(DataError::Kind::malformed_row, where + ": entry '" + std::string(f) + "' is not +-1");
    }
  }
  return PackedCodes::pack(Matrix(rows.size(), c, std::move(values)));
}

inline PackedCodes load_codes(const std::string& path) {
  return parse_codes(detail::read_file(path), path);
}

inline std::string history_to_csv(const std::vector<LossBreakdown>& history) {
  std::string out = "iter,r_intra,r_inter,p,q,j_total\n";
  for (std::size_t i = 0; i < history.size(); ++i) {
    const auto& h = history[i];
    out += std::to_string(i + 1);
    for (double v : {h.r_intra, h.r_inter, h.p, h.q, h.j_total}) {
      out.push_back(',');
      out += detail::format_double(v);
    }
    out.push_back('\n');
  }
  return out;
}

inline std::string metrics_to_csv(const MetricsReport& m) {
  std::string out = "metric,value\n";
  out += "map," + detail::format_double(m.map) + "\n";
  out += "precision_r2," + detail::format_double(m.precision_r2) + "\n";
  out += "recall_r2," + detail::format_double(m.recall_r2) + "\n";
  out += "f_measure_r2," + detail::format_double(m.f_measure_r2) + "\n";
  return out;
}

inline std::string pr_curve_to_csv(const MetricsReport& m) {
  std::string out = "recall,precision\n";
  for (const auto& [r, p] : m.pr_curve) {
    out += detail::format_double(r) + "," + detail::format_double(p) + "\n";
  }
  return out;
}

namespace detail {

inline std::vector<std::size_t> parse_widths(std::string_view s) {
  std::vector<std::size_t> out;
  if (trim(s).empty()) return out;
  for (auto f : split(s, ',')) out.push_back(parse_index(f, "hidden"));
  return out;
}

}  // namespace detail

// Applies "key = value" lines on top of `base`. Unknown keys are errors.
inline TrainConfig parse_config(std::string_view text, TrainConfig base = {}) {
  auto as_count = [](std::string_view v, const std::string& key) {
    return detail::parse_index(v, "config key '" + key + "'");
  };
  auto as_real = [](std::string_view v, const std::string& key) {
    return detail::parse_double(v, "config key '" + key + "'");
  };
  std::size_t line_no = 0;
  for (auto raw : detail::split(text, '\n')) {
    ++line_no;
    auto line = raw.substr(0, raw.find('#'));
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key(detail::trim(line.substr(0, eq)));
    const auto value = detail::trim(line.substr(eq + 1));
    if (key == "bits") base.bits = as_count(value, key);
    else if (key == "batch_size") base.batch_size = as_count(value, key);
    else if (key == "outer_iters") base.outer_iters = as_count(value, key);
    else if (key == "inner_iters") base.inner_iters = as_count(value, key);
    else if (key == "lr") base.lr = as_real(value, key);
    else if (key == "alpha1") base.alpha1 = as_real(value, key);
    else if (key == "alpha2") base.alpha2 = as_real(value, key);
    else if (key == "beta1") base.beta1 = as_real(value, key);
    else if (key == "beta2") base.beta2 = as_real(value, key);
    else if (key == "weight_decay") base.weight_decay = as_real(value, key);
    else if (key == "hidden") base.hidden = detail::parse_widths(value);
    else if (key == "mode") base.mode = parse_mode(value);
    else if (key == "variant") base.variant = parse_variant(value);
    else if (key == "seed") base.seed = as_count(value, key);
    else throw std::invalid_argument("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
  }
  return base;
}

inline std::string config_to_text(const TrainConfig& c) {
  std::string hidden;
  for (std::size_t i = 0; i < c.hidden.size(); ++i) {
    if (i) hidden.push_back(',');
    hidden += std::to_string(c.hidden[i]);
  }
  std::string out;
  out += "bits = " + std::to_string(c.bits) + "\n";
  out += "batch_size = " + std::to_string(c.batch_size) + "\n";
  out += "outer_iters = " + std::to_string(c.outer_iters) + "\n";
  out += "inner_iters = " + std::to_string(c.inner_iters) + "\n";
  out += "lr = " + detail::format_double(c.lr) + "\n";
  out += "alpha1 = " + detail::format_double(c.alpha1) + "\n";
  out += "alpha2 = " + detail::format_double(c.alpha2) + "\n";
  out += "beta1 = " + detail::format_double(c.beta1) + "\n";
  out += "beta2 = " + detail::format_double(c.beta2) + "\n";
  out += "weight_decay = " + detail::format_double(c.weight_decay) + "\n";
  out += "hidden = " + hidden + "\n";
  out += "mode = " + std::string(to_string(c.mode)) + "\n";
  out += "variant = " + std::string(to_string(c.variant)) + "\n";
  out += "seed = " + std::to_string(c.seed) + "\n";
  return out;
}

}  // namespace dsah
