/*
 * Copyright 2026 The MRD Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef MRD_PSI_HPP
#define MRD_PSI_HPP

#include <cmath>
#include <vector>

#include "mrd/kernels.hpp"

namespace mrd {

/// Expectations of kernel quantities under a factorized Gaussian q(X):
///   psi0 = tr E[K_ff],  psi1 = E[K_fu] (n x m),  psi2 = E[K_uf K_fu] (m x m).
struct PsiStatistics {
  double psi0 = 0.0;
  Matrix psi1;
  Matrix psi2;
};

/// dL/d(psi0, psi1, psi2) for some scalar L.
struct PsiAdjoint {
  double d_psi0 = 0.0;
  Matrix d_psi1;
  Matrix d_psi2;
};

struct PsiGradient {
  Matrix d_means;
  Matrix d_vars;
  Matrix d_Z;
  double d_variance = 0.0;
  Vector d_weights;
};

namespace detail {

/// Rows per accumulation block. Fixed so sums over points are grouped the same
/// way regardless of the worker count.
inline constexpr Index kPsiBlock = 32;

inline void check_psi_inputs(const KernelSpec &k, const Matrix &mu, const Matrix &S, const Matrix &Z) {
  if (k.family != KernelFamily::eq_ard && k.family != KernelFamily::linear_ard) {
    throw UsageError("psi statistics are only available for eq_ard and linear_ard, got " +
                     to_string(k.family));
  }
  k.validate();
  if (mu.rows() != S.rows() || mu.cols() != S.cols()) {
    throw InputError("posterior means and variances differ in shape");
  }
  if (mu.cols() != k.input_dim() || Z.cols() != k.input_dim()) {
    throw InputError("latent dimensionality does not match kernel weights");
  }
  if ((S.array() < 0.0).any()) {
    throw InputError("posterior variances must be non-negative");
  }
}

/// psi2 contribution of rows [begin, end) for the EQ-ARD kernel.
inline Matrix eq_psi2_block(const KernelSpec &k, const Matrix &mu, const Matrix &S, const Matrix &Z,
                            Index begin, Index end) {
  const Index m = Z.rows();
  const Index q = Z.cols();
  const Vector &w = k.weights;
  const double s4 = k.variance * k.variance;
  Matrix out = Matrix::Zero(m, m);
  Vector zbar(q);
  for (Index i = begin; i < end; ++i) {
    Vector inv_den(q);
    double log_pref = std::log(s4);
    for (Index j = 0; j < q; ++j) {
      const double D = 2.0 * w(j) * S(i, j) + 1.0;
      inv_den(j) = 1.0 / D;
      log_pref -= 0.5 * std::log(D);
    }
    for (Index a = 0; a < m; ++a) {
      for (Index b = 0; b <= a; ++b) {
        double e = log_pref;
        for (Index j = 0; j < q; ++j) {
          const double dz = Z(a, j) - Z(b, j);
          const double c = mu(i, j) - 0.5 * (Z(a, j) + Z(b, j));
          e -= w(j) * (0.25 * dz * dz + c * c * inv_den(j));
        }
        const double v = std::exp(e);
        out(a, b) += v;
        if (a != b) {
          out(b, a) += v;
        }
      }
    }
  }
  return out;
}

inline PsiStatistics eq_psi(const KernelSpec &k, const Matrix &mu, const Matrix &S, const Matrix &Z) {
  const Index n = mu.rows();
  const Index m = Z.rows();
  const Index q = Z.cols();
  const Vector &w = k.weights;
  PsiStatistics out;
  out.psi0 = static_cast<double>(n) * k.variance;
  out.psi1.resize(n, m);
  for (Index i = 0; i < n; ++i) {
    double log_pref = std::log(k.variance);
    for (Index j = 0; j < q; ++j) {
      log_pref -= 0.5 * std::log(w(j) * S(i, j) + 1.0);
    }
    for (Index a = 0; a < m; ++a) {
      double e = log_pref;
      for (Index j = 0; j < q; ++j) {
        const double d = mu(i, j) - Z(a, j);
        e -= 0.5 * w(j) * d * d / (w(j) * S(i, j) + 1.0);
      }
      out.psi1(i, a) = std::exp(e);
    }
  }
  const Index blocks = (n + kPsiBlock - 1) / kPsiBlock;
  std::vector<Matrix> partial(static_cast<size_t>(blocks));
  parallel_for(blocks, [&](Index blk) {
    partial[static_cast<size_t>(blk)] =
        eq_psi2_block(k, mu, S, Z, blk * kPsiBlock, std::min(n, (blk + 1) * kPsiBlock));
  });
  out.psi2 = Matrix::Zero(m, m);
  for (const auto &p : partial) {
    out.psi2 += p;
  }
  return out;
}

inline PsiStatistics linear_psi(const KernelSpec &k, const Matrix &mu, const Matrix &S, const Matrix &Z) {
  const Vector &w = k.weights;
  PsiStatistics out;
  out.psi0 = k.variance * ((mu.array().square() + S.array()).matrix() * w).sum();
  const Matrix ZW = Z * w.asDiagonal();
  out.psi1 = k.variance * mu * ZW.transpose();
  Matrix C = mu.transpose() * mu;
  C.diagonal() += S.colwise().sum().transpose();
  out.psi2 = k.variance * k.variance * ZW * C * ZW.transpose();
  return out;
}

inline void eq_psi2_gradient_block(const KernelSpec &k, const Matrix &mu, const Matrix &S,
                                   const Matrix &Z, const Matrix &H, Index begin, Index end,
                                   PsiGradient &g) {
  const Index m = Z.rows();
  const Index q = Z.cols();
  const Vector &w = k.weights;
  const double s4 = k.variance * k.variance;
  for (Index i = begin; i < end; ++i) {
    Vector D(q);
    double log_pref = std::log(s4);
    for (Index j = 0; j < q; ++j) {
      D(j) = 2.0 * w(j) * S(i, j) + 1.0;
      log_pref -= 0.5 * std::log(D(j));
    }
    for (Index a = 0; a < m; ++a) {
      for (Index b = 0; b <= a; ++b) {
        const double h = (a == b) ? H(a, a) : H(a, b) + H(b, a);
        if (h == 0.0) {
          continue;
        }
        double e = log_pref;
        for (Index j = 0; j < q; ++j) {
          const double dz = Z(a, j) - Z(b, j);
          const double c = mu(i, j) - 0.5 * (Z(a, j) + Z(b, j));
          e -= w(j) * (0.25 * dz * dz + c * c / D(j));
        }
        const double hv = h * std::exp(e);
        g.d_variance += 2.0 * hv / k.variance;
        for (Index j = 0; j < q; ++j) {
          const double wj = w(j);
          const double dz = Z(a, j) - Z(b, j);
          const double c = mu(i, j) - 0.5 * (Z(a, j) + Z(b, j));
          const double Dj = D(j);
          g.d_means(i, j) += hv * (-2.0 * wj * c / Dj);
          g.d_vars(i, j) += hv * (-wj / Dj + 2.0 * wj * wj * c * c / (Dj * Dj));
          g.d_weights(j) += hv * (-S(i, j) / Dj - 0.25 * dz * dz - c * c / (Dj * Dj));
          g.d_Z(a, j) += hv * (-0.5 * wj * dz + wj * c / Dj);
          g.d_Z(b, j) += hv * (0.5 * wj * dz + wj * c / Dj);
        }
      }
    }
  }
}

inline PsiGradient eq_psi_gradients(const KernelSpec &k, const Matrix &mu, const Matrix &S,
                                    const Matrix &Z, const PsiAdjoint &adj) {
  const Index n = mu.rows();
  const Index m = Z.rows();
  const Index q = Z.cols();
  const Vector &w = k.weights;
  PsiGradient g;
  g.d_means = Matrix::Zero(n, q);
  g.d_vars = Matrix::Zero(n, q);
  g.d_Z = Matrix::Zero(m, q);
  g.d_weights = Vector::Zero(q);
  g.d_variance = adj.d_psi0 * static_cast<double>(n);

  if (adj.d_psi1.size() > 0) {
    for (Index i = 0; i < n; ++i) {
      double log_pref = std::log(k.variance);
      for (Index j = 0; j < q; ++j) {
        log_pref -= 0.5 * std::log(w(j) * S(i, j) + 1.0);
      }
      for (Index a = 0; a < m; ++a) {
        const double G = adj.d_psi1(i, a);
        if (G == 0.0) {
          continue;
        }
        double e = log_pref;
        for (Index j = 0; j < q; ++j) {
          const double d = mu(i, j) - Z(a, j);
          e -= 0.5 * w(j) * d * d / (w(j) * S(i, j) + 1.0);
        }
        const double gv = G * std::exp(e);
        g.d_variance += gv / k.variance;
        for (Index j = 0; j < q; ++j) {
          const double wj = w(j);
          const double den = wj * S(i, j) + 1.0;
          const double d = mu(i, j) - Z(a, j);
          g.d_means(i, j) -= gv * wj * d / den;
          g.d_Z(a, j) += gv * wj * d / den;
          g.d_vars(i, j) += gv * (-0.5 * wj / den + 0.5 * wj * wj * d * d / (den * den));
          g.d_weights(j) += gv * (-0.5 * S(i, j) / den - 0.5 * d * d / (den * den));
        }
      }
    }
  }

  if (adj.d_psi2.size() > 0) {
    const Index blocks = (n + kPsiBlock - 1) / kPsiBlock;
    std::vector<PsiGradient> partial(static_cast<size_t>(blocks));
    parallel_for(blocks, [&](Index blk) {
      PsiGradient &p = partial[static_cast<size_t>(blk)];
      p.d_means = Matrix::Zero(n, q);
      p.d_vars = Matrix::Zero(n, q);
      p.d_Z = Matrix::Zero(m, q);
      p.d_weights = Vector::Zero(q);
      eq_psi2_gradient_block(k, mu, S, Z, adj.d_psi2, blk * kPsiBlock,
                             std::min(n, (blk + 1) * kPsiBlock), p);
    });
    for (const auto &p : partial) {
      g.d_means += p.d_means;
      g.d_vars += p.d_vars;
      g.d_Z += p.d_Z;
      g.d_weights += p.d_weights;
      g.d_variance += p.d_variance;
    }
  }
  return g;
}

inline PsiGradient linear_psi_gradients(const KernelSpec &k, const Matrix &mu, const Matrix &S,
                                        const Matrix &Z, const PsiAdjoint &adj) {
  const Index n = mu.rows();
  const Index m = Z.rows();
  const Index q = Z.cols();
  const Vector &w = k.weights;
  const double v = k.variance;
  PsiGradient g;
  g.d_means = Matrix::Zero(n, q);
  g.d_vars = Matrix::Zero(n, q);
  g.d_Z = Matrix::Zero(m, q);
  g.d_weights = Vector::Zero(q);

  // psi0 = v sum_ij w_j (mu_ij^2 + s_ij)
  const Matrix second = mu.array().square() + S.array();
  g.d_means += adj.d_psi0 * v * 2.0 * mu * w.asDiagonal();
  g.d_vars += Matrix(adj.d_psi0 * v * Matrix::Ones(n, 1) * w.transpose());
  g.d_weights += adj.d_psi0 * v * second.colwise().sum().transpose();
  g.d_variance += adj.d_psi0 * (second * w).sum();

  if (adj.d_psi1.size() > 0) {
    const Matrix &G = adj.d_psi1;
    const Matrix GZ = G * Z;
    g.d_means += v * GZ * w.asDiagonal();
    g.d_Z += v * G.transpose() * mu * w.asDiagonal();
    g.d_weights += v * mu.cwiseProduct(GZ).colwise().sum().transpose();
    g.d_variance += (G.array() * (mu * w.asDiagonal() * Z.transpose()).array()).sum();
  }

  if (adj.d_psi2.size() > 0) {
    const Matrix &H = adj.d_psi2;
    const Matrix A = Z * w.asDiagonal();
    Matrix C = mu.transpose() * mu;
    C.diagonal() += S.colwise().sum().transpose();
    const double v2 = v * v;
    const Matrix dA = v2 * (H + H.transpose()) * A * C;
    const Matrix dC = v2 * A.transpose() * H * A;
    g.d_means += mu * (dC + dC.transpose());
    g.d_vars.rowwise() += dC.diagonal().transpose();
    g.d_Z += dA * w.asDiagonal();
    g.d_weights += Z.cwiseProduct(dA).colwise().sum().transpose();
    g.d_variance += 2.0 * v * (H.array() * (A * C * A.transpose()).array()).sum();
  }
  return g;
}

} // namespace detail

/// Closed-form psi statistics for eq_ard and linear_ard kernels.
inline PsiStatistics psi_statistics(const KernelSpec &k, const Matrix &means, const Matrix &vars,
                                    const Matrix &Z) {
  detail::check_psi_inputs(k, means, vars, Z);
  if (k.family == KernelFamily::eq_ard) {
    return detail::eq_psi(k, means, vars, Z);
  }
  return detail::linear_psi(k, means, vars, Z);
}

/// Vector-Jacobian product through psi_statistics: maps dL/d(psi0, psi1,
/// psi2) to dL/d(means, vars, Z, variance, weights). Empty `d_psi1` or
/// `d_psi2` are treated as zero.
inline PsiGradient psi_gradients(const KernelSpec &k, const Matrix &means, const Matrix &vars,
                                 const Matrix &Z, const PsiAdjoint &adj) {
  detail::check_psi_inputs(k, means, vars, Z);
  if (adj.d_psi1.size() > 0 && (adj.d_psi1.rows() != means.rows() || adj.d_psi1.cols() != Z.rows())) {
    throw InputError("psi1 adjoint has the wrong shape");
  }
  if (adj.d_psi2.size() > 0 && (adj.d_psi2.rows() != Z.rows() || adj.d_psi2.cols() != Z.rows())) {
    throw InputError("psi2 adjoint has the wrong shape");
  }
  if (k.family == KernelFamily::eq_ard) {
    return detail::eq_psi_gradients(k, means, vars, Z, adj);
  }
  return detail::linear_psi_gradients(k, means, vars, Z, adj);
}

} // namespace mrd

#endif
