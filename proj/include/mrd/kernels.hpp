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

#ifndef MRD_KERNELS_HPP
#define MRD_KERNELS_HPP

#include <cmath>
#include <string>
#include <vector>

#include "mrd/linalg.hpp"

namespace mrd {

enum class KernelFamily { eq_ard, linear_ard, temporal_eq, temporal_matern32 };

inline std::string to_string(KernelFamily f) {
  switch (f) {
  case KernelFamily::eq_ard:
    return "eq_ard";
  case KernelFamily::linear_ard:
    return "linear_ard";
  case KernelFamily::temporal_eq:
    return "temporal_eq";
  case KernelFamily::temporal_matern32:
    return "temporal_matern32";
  }
  return "unknown";
}

inline KernelFamily kernel_family_from_string(const std::string &name) {
  if (name == "eq_ard" || name == "eq" || name == "rbf") {
    return KernelFamily::eq_ard;
  }
  if (name == "linear_ard" || name == "linear") {
    return KernelFamily::linear_ard;
  }
  if (name == "temporal_eq") {
    return KernelFamily::temporal_eq;
  }
  if (name == "temporal_matern32" || name == "matern32") {
    return KernelFamily::temporal_matern32;
  }
  throw InputError("unknown kernel family '" + name + "'");
}

inline bool is_temporal(KernelFamily f) {
  return f == KernelFamily::temporal_eq || f == KernelFamily::temporal_matern32;
}

/// Covariance function and its hyperparameters.
///
/// ARD families:
///   eq_ard     k(a, b) = variance * exp(-1/2 sum_j w_j (a_j - b_j)^2)
///   linear_ard k(a, b) = variance * sum_j w_j a_j b_j
/// Temporal families act on scalar timestamps with length-scale l:
///   temporal_eq       k(t, t') = variance * exp(-r^2 / (2 l^2))
///   temporal_matern32 k(t, t') = variance * (1 + sqrt(3) r / l) exp(-sqrt(3) r / l)
struct KernelSpec {
  KernelFamily family = KernelFamily::eq_ard;
  double variance = 1.0;
  Vector weights;
  double temporal_lengthscale = 1.0;

  static KernelSpec eq_ard(double variance, Vector weights) {
    return {KernelFamily::eq_ard, variance, std::move(weights), 1.0};
  }
  static KernelSpec linear_ard(double variance, Vector weights) {
    return {KernelFamily::linear_ard, variance, std::move(weights), 1.0};
  }
  static KernelSpec temporal(KernelFamily family, double variance, double lengthscale) {
    return {family, variance, Vector(), lengthscale};
  }

  Index input_dim() const { return weights.size(); }

  void validate() const {
    if (!(variance > 0.0) || !std::isfinite(variance)) {
      throw InputError("kernel variance must be positive and finite");
    }
    if (is_temporal(family)) {
      if (!(temporal_lengthscale > 0.0) || !std::isfinite(temporal_lengthscale)) {
        throw InputError("temporal length-scale must be positive and finite");
      }
      return;
    }
    if (weights.size() > 0 && (weights.array() < 0.0).any()) {
      throw InputError("ARD weights must be non-negative");
    }
    if (!weights.allFinite()) {
      throw InputError("ARD weights must be finite");
    }
  }
};

struct GramMatrix {
  Matrix values;
  double jitter_applied = 0.0;
};

namespace detail {

inline void check_ard_inputs(const KernelSpec &k, const Matrix &A, const Matrix &B) {
  if (is_temporal(k.family)) {
    if (A.cols() != 1 || B.cols() != 1) {
      throw InputError("temporal kernels take one-column time inputs");
    }
    return;
  }
  if (A.cols() != k.input_dim() || B.cols() != k.input_dim()) {
    throw InputError("input has " + std::to_string(A.cols()) + "/" + std::to_string(B.cols()) +
                     " columns but kernel has " + std::to_string(k.input_dim()) + " weights");
  }
}

/// sum_j w_j (a_ij - b_rj)^2 for every pair.
inline Matrix weighted_sq_dist(const Matrix &A, const Matrix &B, const Vector &w) {
  const Vector sw = w.array().sqrt();
  const Matrix As = A * sw.asDiagonal();
  const Matrix Bs = B * sw.asDiagonal();
  Matrix D = (-2.0 * As * Bs.transpose()).eval();
  D.colwise() += As.rowwise().squaredNorm();
  D.rowwise() += Bs.rowwise().squaredNorm().transpose();
  return D.cwiseMax(0.0);
}

inline double temporal_value(const KernelSpec &k, double r) {
  const double l = k.temporal_lengthscale;
  if (k.family == KernelFamily::temporal_eq) {
    return k.variance * std::exp(-0.5 * r * r / (l * l));
  }
  const double a = std::sqrt(3.0) * std::abs(r) / l;
  return k.variance * (1.0 + a) * std::exp(-a);
}

/// d k / d lengthscale
inline double temporal_dlengthscale(const KernelSpec &k, double r) {
  const double l = k.temporal_lengthscale;
  if (k.family == KernelFamily::temporal_eq) {
    return k.variance * std::exp(-0.5 * r * r / (l * l)) * r * r / (l * l * l);
  }
  const double a = std::sqrt(3.0) * std::abs(r) / l;
  return k.variance * a * a * std::exp(-a) / l;
}

} // namespace detail

/// Gram matrix k(A, B). Rows of A and B are input points.
inline GramMatrix cov_matrix(const KernelSpec &k, const Matrix &A, const Matrix &B) {
  k.validate();
  detail::check_ard_inputs(k, A, B);
  GramMatrix out;
  switch (k.family) {
  case KernelFamily::eq_ard: {
    if (A.cols() == 0) {
      out.values = Matrix::Constant(A.rows(), B.rows(), k.variance);
    } else {
      out.values = k.variance * (-0.5 * detail::weighted_sq_dist(A, B, k.weights)).array().exp();
    }
    break;
  }
  case KernelFamily::linear_ard:
    out.values = k.variance * A * k.weights.asDiagonal() * B.transpose();
    break;
  case KernelFamily::temporal_eq:
  case KernelFamily::temporal_matern32: {
    out.values.resize(A.rows(), B.rows());
    for (Index i = 0; i < A.rows(); ++i) {
      for (Index r = 0; r < B.rows(); ++r) {
        out.values(i, r) = detail::temporal_value(k, A(i, 0) - B(r, 0));
      }
    }
    break;
  }
  }
  return out;
}

/// Symmetric Gram matrix k(A, A); the lower triangle mirrors the upper exactly.
inline GramMatrix cov_matrix(const KernelSpec &k, const Matrix &A) {
  GramMatrix out = cov_matrix(k, A, A);
  out.values.triangularView<Eigen::StrictlyLower>() = out.values.transpose();
  return out;
}

/// Cross-covariance of a temporal kernel between two labelled time series.
/// Entries for points in different sequences are exactly zero.
inline GramMatrix temporal_cross_cov(const KernelSpec &k, const Vector &t1,
                                     const std::vector<int> &seq1, const Vector &t2,
                                     const std::vector<int> &seq2) {
  if (!is_temporal(k.family)) {
    throw UsageError("temporal_cov needs a temporal kernel family, got " + to_string(k.family));
  }
  k.validate();
  if (static_cast<Index>(seq1.size()) != t1.size() || static_cast<Index>(seq2.size()) != t2.size()) {
    throw InputError("timestamps and sequence labels differ in length");
  }
  if (!t1.allFinite() || !t2.allFinite()) {
    throw InputError("timestamps must be finite");
  }
  GramMatrix out;
  out.values = Matrix::Zero(t1.size(), t2.size());
  for (Index i = 0; i < t1.size(); ++i) {
    for (Index r = 0; r < t2.size(); ++r) {
      if (seq1[i] == seq2[r]) {
        out.values(i, r) = detail::temporal_value(k, t1(i) - t2(r));
      }
    }
  }
  return out;
}

inline GramMatrix temporal_cov(const KernelSpec &k, const Vector &t, const std::vector<int> &seq_ids) {
  return temporal_cross_cov(k, t, seq_ids, t, seq_ids);
}

/// Vector-Jacobian product of a Gram matrix: given G = dL/dK for K = k(A, B),
/// the gradient of L with respect to each kernel argument.
struct KernelGradient {
  Matrix d_A;
  Matrix d_B;
  double d_variance = 0.0;
  Vector d_weights;
  double d_lengthscale = 0.0;
};

inline KernelGradient kernel_gradients(const KernelSpec &k, const Matrix &A, const Matrix &B,
                                       const Matrix &G) {
  const Matrix K = cov_matrix(k, A, B).values;
  if (G.rows() != K.rows() || G.cols() != K.cols()) {
    throw InputError("adjoint shape does not match the Gram matrix");
  }
  KernelGradient out;
  out.d_variance = (G.array() * K.array()).sum() / k.variance;
  switch (k.family) {
  case KernelFamily::eq_ard: {
    const Index q = A.cols();
    const Matrix GK = G.cwiseProduct(K);
    out.d_A = Matrix::Zero(A.rows(), q);
    out.d_B = Matrix::Zero(B.rows(), q);
    out.d_weights = Vector::Zero(q);
    const Vector row_sum = GK.rowwise().sum();
    const Vector col_sum = GK.colwise().sum().transpose();
    // d/da_ij of K_ir = -w_j (a_ij - b_rj) K_ir
    const Matrix GKB = GK * B;
    const Matrix GKtA = GK.transpose() * A;
    for (Index j = 0; j < q; ++j) {
      const double w = k.weights(j);
      out.d_A.col(j) = -w * (A.col(j).cwiseProduct(row_sum) - GKB.col(j));
      out.d_B.col(j) = w * (GKtA.col(j) - B.col(j).cwiseProduct(col_sum));
      // d/dw_j of K_ir = -1/2 (a_ij - b_rj)^2 K_ir
      double s = 0.0;
      for (Index r = 0; r < B.rows(); ++r) {
        const double b = B(r, j);
        s += (GK.col(r).array() * (A.col(j).array() - b).square()).sum();
      }
      out.d_weights(j) = -0.5 * s;
    }
    break;
  }
  case KernelFamily::linear_ard: {
    const Vector &w = k.weights;
    out.d_A = k.variance * G * B * w.asDiagonal();
    out.d_B = k.variance * G.transpose() * A * w.asDiagonal();
    out.d_weights = k.variance * (A.cwiseProduct(G * B)).colwise().sum().transpose();
    break;
  }
  case KernelFamily::temporal_eq:
  case KernelFamily::temporal_matern32: {
    out.d_A = Matrix::Zero(A.rows(), 1);
    out.d_B = Matrix::Zero(B.rows(), 1);
    double dl = 0.0;
    const double l = k.temporal_lengthscale;
    for (Index i = 0; i < A.rows(); ++i) {
      for (Index r = 0; r < B.rows(); ++r) {
        const double diff = A(i, 0) - B(r, 0);
        dl += G(i, r) * detail::temporal_dlengthscale(k, diff);
        double dk_dr;
        if (k.family == KernelFamily::temporal_eq) {
          dk_dr = -K(i, r) * diff / (l * l);
        } else {
          const double a = std::sqrt(3.0) * diff / l;
          dk_dr = -k.variance * 3.0 * diff / (l * l) * std::exp(-std::abs(a));
        }
        out.d_A(i, 0) += G(i, r) * dk_dr;
        out.d_B(r, 0) -= G(i, r) * dk_dr;
      }
    }
    out.d_lengthscale = dl;
    break;
  }
  }
  return out;
}

/// Gradient of L w.r.t. temporal kernel parameters, G = dL/dK_t with K_t from
/// temporal_cov(k, t, seq_ids).
inline KernelGradient temporal_cov_gradients(const KernelSpec &k, const Vector &t,
                                             const std::vector<int> &seq_ids, const Matrix &G) {
  const Matrix K = temporal_cov(k, t, seq_ids).values;
  KernelGradient out;
  out.d_variance = (G.array() * K.array()).sum() / k.variance;
  double dl = 0.0;
  for (Index i = 0; i < t.size(); ++i) {
    for (Index r = 0; r < t.size(); ++r) {
      if (seq_ids[i] == seq_ids[r]) {
        dl += G(i, r) * detail::temporal_dlengthscale(k, t(i) - t(r));
      }
    }
  }
  out.d_lengthscale = dl;
  return out;
}

} // namespace mrd

#endif
