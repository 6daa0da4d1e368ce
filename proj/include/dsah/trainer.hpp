#pragma once

// Alternating minimization of the hashing objective:
//   1. closed-form regression matrices M1, M2
//   2. gradient steps on the two encoders over one epoch of disjoint batches
//   3. discrete, column-balanced update of the code matrix H
//
// DSAH-1 trains two independent encoders; DSAH-2 shares one parameter set.

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dsah/dataio.hpp"
#include "dsah/encoder.hpp"
#include "dsah/numerics.hpp"
#include "dsah/objective.hpp"

namespace dsah {

enum class Mode { dsah1, dsah2 };
enum class Variant { full, A, B, C, D };

inline std::string_view to_string(Mode m) { return m == Mode::dsah1 ? "dsah1" : "dsah2"; }

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::A: return "A";
    case Variant::B: return "B";
    case Variant::C: return "C";
    case Variant::D: return "D";
  }
  return "?";
}

inline Mode parse_mode(std::string_view s) {
  if (s == "dsah1") return Mode::dsah1;
  if (s == "dsah2") return Mode::dsah2;
  throw std::invalid_argument("unknown mode '" + std::string(s) + "' (expected dsah1|dsah2)");
}

inline Variant parse_variant(std::string_view s) {
  if (s == "full") return Variant::full;
  if (s == "A") return Variant::A;
  if (s == "B") return Variant::B;
  if (s == "C") return Variant::C;
  if (s == "D") return Variant::D;
  throw std::invalid_argument("unknown variant '" + std::string(s) + "' (expected full|A|B|C|D)");
}

struct TrainConfig {
  std::size_t bits = 12;                  // c
  std::size_t batch_size = 100;           // m
  std::size_t outer_iters = 15;           // T1
  std::size_t inner_iters = 3;            // T2
  double lr = 1e-3;
  double alpha1 = 1e-2;
  double alpha2 = 1e3;
  double beta1 = 1e2;
  double beta2 = 10.0;
  double weight_decay = 5e-4;
  std::vector<std::size_t> hidden = {256};
  Mode mode = Mode::dsah1;
  Variant variant = Variant::full;
  std::uint64_t seed = 0;

  void validate() const {
    auto bad = [](const std::string& what) { return std::invalid_argument("config: " + what); };
    if (bits < 1) throw bad("bits must be >= 1");
    if (batch_size < 1) throw bad("batch_size must be >= 1");
    if (outer_iters < 1 || inner_iters < 1) throw bad("outer_iters and inner_iters must be >= 1");
    if (!(lr > 0.0)) throw bad("lr must be > 0");
    if (alpha1 < 0.0 || alpha2 < 0.0 || beta1 < 0.0 || beta2 < 0.0) {
      throw bad("alpha1, alpha2, beta1, beta2 must be >= 0");
    }
    if (weight_decay < 0.0) throw bad("weight_decay must be >= 0");
    for (auto h : hidden)
      if (h == 0) throw bad("hidden widths must be positive");
  }

  void validate_for(const Dataset& ds) const {
    validate();
    if (ds.n() == 0) throw std::invalid_argument("config: dataset is empty");
    if (batch_size > ds.n()) {
      throw std::invalid_argument("config: batch_size " + std::to_string(batch_size) +
                                  " exceeds training set size " + std::to_string(ds.n()));
    }
    if (variant != Variant::D && ds.n() % 2 != 0) {
      throw std::invalid_argument("config: the balance constraint needs an even number of "
                                  "training samples (got " + std::to_string(ds.n()) +
                                  "); drop one sample");
    }
  }

  std::vector<std::size_t> layer_dims(std::size_t input_dim) const {
    std::vector<std::size_t> dims{input_dim};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(bits);
    return dims;
  }
};

// Effective loss switches for an ablation variant.
struct VariantSwitches {
  double beta1 = 0.0;
  double beta2 = 0.0;
  bool update_M = true;
  bool balanced = true;
};

inline VariantSwitches apply_variant(const TrainConfig& cfg) {
  VariantSwitches s{cfg.beta1, cfg.beta2, true, true};
  switch (cfg.variant) {
    case Variant::full: break;
    case Variant::A: s.beta1 = 0.0; s.beta2 = 0.0; s.update_M = false; break;
    case Variant::B: s.beta2 = 0.0; break;
    case Variant::C: s.beta1 = 0.0; break;
    case Variant::D: s.balanced = false; break;
  }
  return s;
}

// (L^T L)^-1 L^T for both label matrices, computed once.
struct RegressionSolvers {
  Matrix y_pinv;  // k x n
  Matrix r_pinv;  // k x n
  bool y_ridged = false;
  bool r_ridged = false;
};

inline RegressionSolvers precompute_solvers(const DualLabels& duals) {
  auto pinv = [](const Matrix& L) { return solve_spd(matmul_tn(L, L), transpose(L)); };
  auto y = pinv(duals.Y);
  auto r = pinv(duals.R);
  return {std::move(y.solution), std::move(r.solution), y.ridged, r.ridged};
}

// Per-epoch sums over batches b of S_b tanh(U_b) etc.; together they cover
// every (sample, class-mate) pair exactly once per epoch.
struct EpochAccumulators {
  Matrix s_tanh_u;                 // n x c
  Matrix s_tanh_v;                 // n x c
  std::vector<double> row_mass;    // sum_j S_ij
  std::vector<double> s_tanh_sq;   // sum_j S_ij (||tanh u_j||^2 + ||tanh v_j||^2)
  double p = 0.0;

  EpochAccumulators() = default;
  EpochAccumulators(std::size_t n, std::size_t c)
      : s_tanh_u(n, c), s_tanh_v(n, c), row_mass(n, 0.0), s_tanh_sq(n, 0.0) {}
};

struct TrainState {
  Matrix H;  // n x c over {-1, +1}
  RegressionPair reg;
  EncoderParams theta1;
  std::optional<EncoderParams> theta2_own;  // empty when weights are shared
  Matrix U_cache;  // latest encoder-1 output per training sample (n x c)
  Matrix V_cache;  // latest encoder-2 output per training sample (n x c)
  std::vector<LossBreakdown> history;

  DualLabels duals;
  RegressionSolvers solvers;
  std::vector<std::size_t> kappa;
  EpochAccumulators epoch;
  SeededRng rng{0};

  bool shared() const noexcept { return !theta2_own.has_value(); }
  const EncoderParams& theta2() const { return theta2_own ? *theta2_own : theta1; }
  EncoderParams& theta2() { return theta2_own ? *theta2_own : theta1; }
};

// Each column: +1 on a random half of the rows, -1 elsewhere.
inline Matrix random_balanced_codes(std::size_t n, std::size_t c, SeededRng& rng) {
  Matrix H(n, c, -1.0);
  for (std::size_t j = 0; j < c; ++j) {
    const auto perm = rng.permutation(n);
    for (std::size_t r = 0; r < n / 2; ++r) H(perm[r], j) = 1.0;
  }
  return H;
}

inline TrainState init_state(const Dataset& ds, const TrainConfig& cfg) {
  cfg.validate_for(ds);
  const auto sw = apply_variant(cfg);
  TrainState st;
  st.rng = SeededRng(cfg.seed);
  st.H = random_balanced_codes(ds.n(), cfg.bits, st.rng);
  const auto dims = cfg.layer_dims(ds.d());
  st.theta1 = init_params(dims, st.rng);
  if (cfg.mode == Mode::dsah1) st.theta2_own = init_params(dims, st.rng);
  st.duals = build_dual_labels(ds, sw.beta1, sw.beta2);
  st.solvers = precompute_solvers(st.duals);
  st.reg = {Matrix(ds.k(), cfg.bits), Matrix(ds.k(), cfg.bits)};
  st.kappa = class_mate_counts(ds);
  st.U_cache = Matrix(ds.n(), cfg.bits);
  st.V_cache = Matrix(ds.n(), cfg.bits);
  st.epoch = EpochAccumulators(ds.n(), cfg.bits);
  return st;
}

// M1 = sqrt(b1) (Y^T Y)^-1 Y^T H,  M2 = sqrt(b2) (R^T R)^-1 R^T H
inline RegressionPair update_M(const Matrix& H, const DualLabels& duals,
                               const RegressionSolvers& solvers) {
  return {scale(matmul(solvers.y_pinv, H), std::sqrt(duals.beta1)),
          scale(matmul(solvers.r_pinv, H), std::sqrt(duals.beta2))};
}

namespace detail {

inline void require_finite(const Matrix& m, const char* what) {
  if (!m.all_finite()) {
    throw NumericalError(std::string("training diverged: non-finite ") + what +
                         " (try a smaller learning rate)");
  }
}

}  // namespace detail

// T2 rounds of: encoder-1 step on dJ/dU, then encoder-2 step on dJ/dV.
// With shared weights both steps land on the same parameters in turn.
// Returns the final (U, V) for the batch.
inline std::pair<Matrix, Matrix> inner_network_update(TrainState& st, const BatchGraph& g,
                                                      const Matrix& batch_features,
                                                      const TrainConfig& cfg) {
  Matrix V = forward(st.theta2(), batch_features).outputs();
  Matrix U;
  for (std::size_t t = 0; t < cfg.inner_iters; ++t) {
    auto trace_u = forward(st.theta1, batch_features);
    U = trace_u.outputs();
    detail::require_finite(U, "encoder output");
    const Matrix gu = grad_U(U, V, st.H, g, cfg.alpha1, cfg.alpha2);
    detail::require_finite(gu, "gradient of U");
    const auto grads_u = backward(st.theta1, trace_u, gu);
    st.theta1 = sgd_step(std::move(st.theta1), grads_u, cfg.lr, cfg.weight_decay);

    auto trace_v = forward(st.theta2(), batch_features);
    V = trace_v.outputs();
    detail::require_finite(V, "encoder output");
    const Matrix gv = grad_V(U, V, st.H, g, cfg.alpha1, cfg.alpha2);
    detail::require_finite(gv, "gradient of V");
    const auto grads_v = backward(st.theta2(), trace_v, gv);
    st.theta2() = sgd_step(std::move(st.theta2()), grads_v, cfg.lr, cfg.weight_decay);
  }
  U = forward(st.theta1, batch_features).outputs();
  V = forward(st.theta2(), batch_features).outputs();
  detail::require_finite(U, "encoder output");
  detail::require_finite(V, "encoder output");
  return {std::move(U), std::move(V)};
}

inline void accumulate_batch(EpochAccumulators& acc, const BatchGraph& g, const Matrix& U,
                             const Matrix& V) {
  const Matrix tu = tanh_elem(U);
  const Matrix tv = tanh_elem(V);
  axpy(acc.s_tanh_u, 1.0, matmul(g.indicator, tu));
  axpy(acc.s_tanh_v, 1.0, matmul(g.indicator, tv));
  std::vector<double> sq(g.m(), 0.0);
  for (std::size_t j = 0; j < g.m(); ++j) {
    for (double x : tu.row(j)) sq[j] += x * x;
    for (double x : tv.row(j)) sq[j] += x * x;
  }
  for (std::size_t i = 0; i < g.indicator.rows(); ++i) {
    for (std::size_t j = 0; j < g.m(); ++j) {
      const double s = g.indicator(i, j);
      acc.row_mass[i] += s;
      acc.s_tanh_sq[i] += s * sq[j];
    }
  }
  acc.p += loss_P(U, V, g);
}

// Q = alpha2 (S tanh U + S tanh V) + sqrt(b1) Y M1 - sqrt(b2) R M2
inline Matrix code_scores(const Matrix& s_tanh_u, const Matrix& s_tanh_v, const DualLabels& duals,
                          const RegressionPair& reg, double alpha2) {
  Matrix q = scale(add(s_tanh_u, s_tanh_v), alpha2);
  axpy(q, std::sqrt(duals.beta1), matmul(duals.Y, reg.M1));
  axpy(q, -std::sqrt(duals.beta2), matmul(duals.R, reg.M2));
  return q;
}

// Maximizes tr(H^T Q). Balanced: +1 on the n/2 largest entries of each
// column (ties to the smaller row index). Unbalanced: sign(Q), sign(0)=+1.
inline Matrix codes_from_scores(const Matrix& q, bool balanced) {
  if (!balanced) return sign_codes(q);
  if (q.rows() % 2 != 0) {
    throw std::invalid_argument("codes_from_scores: balanced codes need an even row count");
  }
  Matrix H(q.rows(), q.cols(), -1.0);
  for (std::size_t j = 0; j < q.cols(); ++j)
    for (std::size_t i : column_topk_indices(q, j, q.rows() / 2)) H(i, j) = 1.0;
  return H;
}

inline Matrix update_H(const TrainState& st, const TrainConfig& cfg) {
  const Matrix q = code_scores(st.epoch.s_tanh_u, st.epoch.s_tanh_v, st.duals, st.reg, cfg.alpha2);
  return codes_from_scores(q, apply_variant(cfg).balanced);
}

// Full objective after an outer iteration: R on the whole training set,
// P and Q summed over the epoch's batches.
inline LossBreakdown epoch_objective(const TrainState& st, const TrainConfig& cfg) {
  const auto [intra, inter] = loss_R(st.H, st.duals, st.reg);
  double q = 0.0;
  const auto& acc = st.epoch;
  for (std::size_t i = 0; i < st.H.rows(); ++i) {
    auto h = st.H.row(i);
    double hh = 0.0;
    double cross = 0.0;
    for (std::size_t k = 0; k < h.size(); ++k) {
      hh += h[k] * h[k];
      cross += h[k] * (acc.s_tanh_u(i, k) + acc.s_tanh_v(i, k));
    }
    q += 2.0 * acc.row_mass[i] * hh - 2.0 * cross + acc.s_tanh_sq[i];
  }
  return LossBreakdown::compose(intra, inter, acc.p, q, cfg.alpha1, cfg.alpha2);
}

using TrainObserver = std::function<void(const TrainState&, std::size_t outer_iter)>;

inline void run_outer_iteration(TrainState& st, const Dataset& ds, const TrainConfig& cfg) {
  const auto sw = apply_variant(cfg);
  if (sw.update_M) st.reg = update_M(st.H, st.duals, st.solvers);
  st.epoch = EpochAccumulators(ds.n(), cfg.bits);
  for (const auto& batch : sample_epoch_batches(ds.n(), cfg.batch_size, st.rng)) {
    const BatchGraph g = build_batch_graph(ds, batch, st.kappa);
    const Matrix xb = ds.subset(batch).features;
    auto [U, V] = inner_network_update(st, g, xb, cfg);
    accumulate_batch(st.epoch, g, U, V);
    for (std::size_t r = 0; r < batch.size(); ++r) {
      std::copy(U.row(r).begin(), U.row(r).end(), st.U_cache.row(batch[r]).begin());
      std::copy(V.row(r).begin(), V.row(r).end(), st.V_cache.row(batch[r]).begin());
    }
  }
  st.H = update_H(st, cfg);
  st.history.push_back(epoch_objective(st, cfg));
  if (!std::isfinite(st.history.back().j_total)) {
    throw NumericalError("training diverged: objective is not finite");
  }
}

inline TrainState train(const Dataset& ds, const TrainConfig& cfg,
                        const TrainObserver& observer = {}) {
  TrainState st = init_state(ds, cfg);
  for (std::size_t it = 0; it < cfg.outer_iters; ++it) {
    run_outer_iteration(st, ds, cfg);
    if (observer) observer(st, it);
  }
  return st;
}

}  // namespace dsah
