#pragma once

// Loss terms of the hashing objective
//
//   J = (r_intra - r_inter) + alpha1 * P + alpha2 * Q
//
// and their exact gradients with respect to the two encoders' outputs.
// U, V are the m x c outputs of the two encoders on one batch; H is the full
// n x c code matrix; the graph's indicator S is n x m and already carries
// the 1/|kappa(i)| balance weights.

#include <cmath>
#include <utility>

#include "dsah/dataio.hpp"
#include "dsah/numerics.hpp"

namespace dsah {

struct RegressionPair {
  Matrix M1;  // k x c, intra-class
  Matrix M2;  // k x c, inter-class
};

struct LossBreakdown {
  double r_intra = 0.0;
  double r_inter = 0.0;
  double p = 0.0;
  double q = 0.0;
  double j_total = 0.0;
  double alpha1 = 0.0;
  double alpha2 = 0.0;

  static LossBreakdown compose(double r_intra, double r_inter, double p, double q,
                               double alpha1, double alpha2) {
    return {r_intra, r_inter, p, q, (r_intra - r_inter) + alpha1 * p + alpha2 * q, alpha1, alpha2};
  }
};

// (||sqrt(b1) H - Y M1||_F^2, ||sqrt(b2) H - R M2||_F^2)
inline std::pair<double, double> loss_R(const Matrix& H, const DualLabels& duals,
                                        const RegressionPair& reg) {
  if (duals.Y.rows() != H.rows() || duals.R.rows() != H.rows()) {
    throw DimensionError("loss_R: label rows differ from code rows");
  }
  if (reg.M1.rows() != duals.Y.cols() || reg.M2.rows() != duals.R.cols() ||
      reg.M1.cols() != H.cols() || reg.M2.cols() != H.cols()) {
    throw DimensionError("loss_R: regression matrices must be k x c");
  }
  auto residual = [&](double beta, const Matrix& L, const Matrix& M) {
    const double s = std::sqrt(beta);
    const Matrix fit = matmul(L, M);
    double total = 0.0;
    auto h = H.data();
    auto f = fit.data();
    for (std::size_t i = 0; i < h.size(); ++i) {
      const double e = s * h[i] - f[i];
      total += e * e;
    }
    return total;
  };
  return {residual(duals.beta1, duals.Y, reg.M1), residual(duals.beta2, duals.R, reg.M2)};
}

namespace detail {

inline void require_batch_shapes(const Matrix& U, const Matrix& V, const BatchGraph& g,
                                 const char* op) {
  if (!U.same_shape(V)) {
    throw DimensionError(std::string(op) + ": U is " + shape(U) + ", V is " + shape(V));
  }
  if (U.rows() != g.m() || g.affinity.rows() != g.m() || g.affinity.cols() != g.m()) {
    throw DimensionError(std::string(op) + ": batch size does not match graph");
  }
}

inline void require_code_shapes(const Matrix& H, const Matrix& U, const BatchGraph& g,
                                const char* op) {
  if (g.indicator.rows() != H.rows() || g.indicator.cols() != U.rows() || H.cols() != U.cols()) {
    throw DimensionError(std::string(op) + ": H " + shape(H) + ", S " + shape(g.indicator) +
                         ", U " + shape(U) + " are inconsistent");
  }
}

}  // namespace detail

// sum_ij ||u_i - v_j||^2 W_ij, by direct pairwise summation.
inline double loss_P(const Matrix& U, const Matrix& V, const BatchGraph& g) {
  detail::require_batch_shapes(U, V, g, "loss_P");
  double total = 0.0;
  for (std::size_t i = 0; i < U.rows(); ++i) {
    for (std::size_t j = 0; j < V.rows(); ++j) {
      const double w = g.affinity(i, j);
      if (w == 0.0) continue;
      auto u = U.row(i);
      auto v = V.row(j);
      double d = 0.0;
      for (std::size_t k = 0; k < u.size(); ++k) d += (u[k] - v[k]) * (u[k] - v[k]);
      total += w * d;
    }
  }
  return total;
}

// Same quantity through tr(U^T D U + V^T D V - 2 U^T W V) for symmetric W.
inline double loss_P_trace(const Matrix& U, const Matrix& V, const BatchGraph& g) {
  detail::require_batch_shapes(U, V, g, "loss_P_trace");
  double quad = 0.0;
  for (std::size_t i = 0; i < U.rows(); ++i) {
    double su = 0.0;
    double sv = 0.0;
    for (double x : U.row(i)) su += x * x;
    for (double x : V.row(i)) sv += x * x;
    quad += g.degrees[i] * (su + sv);
  }
  const Matrix wv = matmul(g.affinity, V);
  double cross = 0.0;
  auto u = U.data();
  auto w = wv.data();
  for (std::size_t i = 0; i < u.size(); ++i) cross += u[i] * w[i];
  return quad - 2.0 * cross;
}

// sum_ij S_ij (||h_i - tanh(u_j)||^2 + ||h_i - tanh(v_j)||^2)
inline double loss_Q(const Matrix& H, const Matrix& U, const Matrix& V, const BatchGraph& g) {
  detail::require_batch_shapes(U, V, g, "loss_Q");
  detail::require_code_shapes(H, U, g, "loss_Q");
  const Matrix tu = tanh_elem(U);
  const Matrix tv = tanh_elem(V);
  double total = 0.0;
  for (std::size_t i = 0; i < H.rows(); ++i) {
    auto h = H.row(i);
    for (std::size_t j = 0; j < g.m(); ++j) {
      const double s = g.indicator(i, j);
      if (s == 0.0) continue;
      double d = 0.0;
      for (std::size_t k = 0; k < h.size(); ++k) {
        const double a = h[k] - tu(j, k);
        const double b = h[k] - tv(j, k);
        d += a * a + b * b;
      }
      total += s * d;
    }
  }
  return total;
}

// Element-wise quantization baseline: sum_i ||h_i - u_i||^2.
inline double loss_one_to_one(const Matrix& H_batch, const Matrix& U) {
  detail::require_same_shape(H_batch, U, "loss_one_to_one");
  double total = 0.0;
  auto h = H_batch.data();
  auto u = U.data();
  for (std::size_t i = 0; i < h.size(); ++i) total += (h[i] - u[i]) * (h[i] - u[i]);
  return total;
}

namespace detail {

// Gradient of alpha1 * P + alpha2 * Q with respect to `self`, where `other`
// is the opposite encoder's output. W is symmetric, so the same expression
// serves both U and V.
inline Matrix output_gradient(const Matrix& self, const Matrix& other, const Matrix& H,
                              const BatchGraph& g, double alpha1, double alpha2) {
  const std::size_t m = self.rows();
  const std::size_t c = self.cols();
  Matrix grad(m, c);
  if (alpha1 != 0.0) {
    const Matrix wo = matmul_tn(g.affinity, other);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < c; ++k)
        grad(i, k) = 2.0 * alpha1 * (g.degrees[i] * self(i, k) - wo(i, k));
  }
  if (alpha2 != 0.0) {
    const Matrix t = tanh_elem(self);
    const Matrix sth = matmul_tn(g.indicator, H);  // S^T H, m x c
    const std::vector<double> mass = column_sums(g.indicator);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t k = 0; k < c; ++k) {
        const double tk = t(i, k);
        grad(i, k) += 2.0 * alpha2 * (mass[i] * tk - sth(i, k)) * (1.0 - tk * tk);
      }
    }
  }
  return grad;
}

}  // namespace detail

inline Matrix grad_U(const Matrix& U, const Matrix& V, const Matrix& H, const BatchGraph& g,
                     double alpha1, double alpha2) {
  detail::require_batch_shapes(U, V, g, "grad_U");
  detail::require_code_shapes(H, U, g, "grad_U");
  return detail::output_gradient(U, V, H, g, alpha1, alpha2);
}

inline Matrix grad_V(const Matrix& U, const Matrix& V, const Matrix& H, const BatchGraph& g,
                     double alpha1, double alpha2) {
  detail::require_batch_shapes(U, V, g, "grad_V");
  detail::require_code_shapes(H, V, g, "grad_V");
  return detail::output_gradient(V, U, H, g, alpha1, alpha2);
}

// All terms on one batch.
inline LossBreakdown evaluate_objective(const Matrix& H, const DualLabels& duals,
                                        const RegressionPair& reg, const Matrix& U,
                                        const Matrix& V, const BatchGraph& g, double alpha1,
                                        double alpha2) {
  const auto [intra, inter] = loss_R(H, duals, reg);
  return LossBreakdown::compose(intra, inter, loss_P(U, V, g), loss_Q(H, U, V, g), alpha1, alpha2);
}

}  // namespace dsah
