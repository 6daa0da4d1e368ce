#pragma once

// Multilayer perceptron phi(x; theta): ReLU hidden layers, linear output.
// The output-layer gradient is supplied by the caller, so any objective
// defined on the outputs can drive training.

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dsah/dataio.hpp"
#include "dsah/numerics.hpp"

namespace dsah {

struct EncoderParams {
  std::vector<std::size_t> dims;          // [d, h1, ..., c]
  std::vector<Matrix> weights;            // weights[l] is dims[l] x dims[l+1]
  std::vector<std::vector<double>> biases;

  std::size_t num_layers() const noexcept { return weights.size(); }
  std::size_t input_dim() const noexcept { return dims.front(); }
  std::size_t output_dim() const noexcept { return dims.back(); }

  friend bool operator==(const EncoderParams&, const EncoderParams&) = default;
};

struct ForwardTrace {
  Matrix input;
  std::vector<Matrix> pre;   // per layer, before activation
  std::vector<Matrix> post;  // per layer, after activation (== pre for the last layer)

  std::size_t num_layers() const noexcept { return pre.size(); }
  const Matrix& outputs() const { return post.back(); }
};

struct EncoderGrads {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> biases;
};

// Glorot-uniform weights, zero biases.
inline EncoderParams init_params(const std::vector<std::size_t>& dims, SeededRng& rng) {
  if (dims.size() < 2) throw std::invalid_argument("init_params: need at least two layer dims");
  for (auto d : dims)
    if (d == 0) throw std::invalid_argument("init_params: layer dims must be positive");
  EncoderParams p;
  p.dims = dims;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const double a = std::sqrt(6.0 / static_cast<double>(dims[l] + dims[l + 1]));
    Matrix w(dims[l], dims[l + 1]);
    for (auto& v : w.data()) v = rng.uniform(-a, a);
    p.weights.push_back(std::move(w));
    p.biases.emplace_back(dims[l + 1], 0.0);
  }
  return p;
}

inline ForwardTrace forward(const EncoderParams& params, const Matrix& batch) {
  if (batch.cols() != params.input_dim()) {
    throw DimensionError("forward: batch has " + std::to_string(batch.cols()) +
                         " columns, encoder expects " + std::to_string(params.input_dim()));
  }
  ForwardTrace t;
  t.input = batch;
  const Matrix* x = &t.input;
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    Matrix z = matmul(*x, params.weights[l]);
    for (std::size_t i = 0; i < z.rows(); ++i) {
      auto r = z.row(i);
      for (std::size_t j = 0; j < r.size(); ++j) r[j] += params.biases[l][j];
    }
    const bool last = l + 1 == params.num_layers();
    Matrix a = last ? z : detail::map(z, [](double v) { return v > 0.0 ? v : 0.0; });
    t.pre.push_back(std::move(z));
    t.post.push_back(std::move(a));
    x = &t.post.back();
  }
  return t;
}

inline EncoderGrads backward(const EncoderParams& params, const ForwardTrace& trace,
                             const Matrix& grad_output) {
  if (trace.num_layers() != params.num_layers()) {
    throw DimensionError("backward: trace/parameter layer count mismatch");
  }
  if (!grad_output.same_shape(trace.outputs())) {
    throw DimensionError("backward: grad_output is " + detail::shape(grad_output) +
                         ", outputs are " + detail::shape(trace.outputs()));
  }
  const std::size_t layers = params.num_layers();
  EncoderGrads g;
  g.weights.resize(layers);
  g.biases.resize(layers);
  Matrix delta = grad_output;  // dL/d(pre-activation) of the current layer
  for (std::size_t l = layers; l-- > 0;) {
    const Matrix& in = l == 0 ? trace.input : trace.post[l - 1];
    g.weights[l] = matmul_tn(in, delta);
    g.biases[l] = column_sums(delta);
    if (l == 0) break;
    Matrix back = matmul(delta, transpose(params.weights[l]));
    const Matrix& z = trace.pre[l - 1];
    auto b = back.data();
    auto zz = z.data();
    for (std::size_t i = 0; i < b.size(); ++i)
      if (!(zz[i] > 0.0)) b[i] = 0.0;
    delta = std::move(back);
  }
  return g;
}

// params <- params - lr * (grads + weight_decay * weights); biases are not decayed.
inline EncoderParams sgd_step(EncoderParams params, const EncoderGrads& grads, double lr,
                              double weight_decay = 5e-4) {
  if (!(lr > 0.0)) throw std::invalid_argument("sgd_step: lr must be positive");
  if (grads.weights.size() != params.num_layers()) {
    throw DimensionError("sgd_step: gradient layer count mismatch");
  }
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    auto w = params.weights[l].data();
    auto gw = grads.weights[l].data();
    if (w.size() != gw.size()) throw DimensionError("sgd_step: weight gradient shape mismatch");
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * (gw[i] + weight_decay * w[i]);
    auto& b = params.biases[l];
    const auto& gb = grads.biases[l];
    if (b.size() != gb.size()) throw DimensionError("sgd_step: bias gradient shape mismatch");
    for (std::size_t i = 0; i < b.size(); ++i) b[i] -= lr * gb[i];
  }
  return params;
}

// sign(x) with sign(0) = +1.
inline Matrix sign_codes(const Matrix& x) {
  return detail::map(x, [](double v) { return v >= 0.0 ? 1.0 : -1.0; });
}

inline Matrix encode_binary(const EncoderParams& params, const Matrix& features) {
  return sign_codes(forward(params, features).outputs());
}

// ---------------------------------------------------------------------------
// Checkpoint: "DSAHNET1" | u32 dim count | u32 dims... | per layer: weights
// (row-major f64) then biases (f64). Little-endian throughout.
// ---------------------------------------------------------------------------

inline constexpr std::string_view kCheckpointMagic = "DSAHNET1";

inline std::string checkpoint_bytes(const EncoderParams& p) {
  std::string out(kCheckpointMagic);
  detail::put_u32(out, static_cast<std::uint32_t>(p.dims.size()));
  for (auto d : p.dims) detail::put_u32(out, static_cast<std::uint32_t>(d));
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    for (double v : p.weights[l].data()) detail::put_f64(out, v);
    for (double v : p.biases[l]) detail::put_f64(out, v);
  }
  return out;
}

inline EncoderParams parse_checkpoint(std::string_view bytes) {
  auto fail = [](const std::string& why) {
    return DataError(DataError::Kind::malformed_row, "checkpoint: " + why);
  };
  if (bytes.size() < 12 || bytes.substr(0, 8) != kCheckpointMagic) throw fail("bad magic");
  const std::size_t count = detail::get_u32(bytes, 8);
  if (count < 2 || bytes.size() < 12 + 4 * count) throw fail("truncated header");
  EncoderParams p;
  std::size_t at = 12;
  for (std::size_t i = 0; i < count; ++i, at += 4) {
    p.dims.push_back(detail::get_u32(bytes, at));
    if (p.dims.back() == 0) throw fail("zero layer width");
  }
  std::size_t expected = at;
  for (std::size_t l = 0; l + 1 < count; ++l) expected += 8 * (p.dims[l] * p.dims[l + 1] + p.dims[l + 1]);
  if (bytes.size() != expected) throw fail("payload size does not match dims");
  for (std::size_t l = 0; l + 1 < count; ++l) {
    Matrix w(p.dims[l], p.dims[l + 1]);
    for (auto& v : w.data()) { v = detail::get_f64(bytes, at); at += 8; }
    std::vector<double> b(p.dims[l + 1]);
    for (auto& v : b) { v = detail::get_f64(bytes, at); at += 8; }
    p.weights.push_back(std::move(w));
    p.biases.push_back(std::move(b));
  }
  return p;
}

inline void save_checkpoint(const EncoderParams& p, const std::string& path) {
  detail::write_file(path, checkpoint_bytes(p));
}

inline EncoderParams load_checkpoint(const std::string& path) {
  return parse_checkpoint(detail::read_file(path));
}

}  // namespace dsah
