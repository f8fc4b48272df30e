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

#ifndef MRD_BOUND_HPP
#define MRD_BOUND_HPP

#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

#include "mrd/latent.hpp"
#include "mrd/psi.hpp"

namespace mrd {

/// One observation space: centered outputs, its kernel, inducing inputs and
/// noise precision beta.
struct ViewModel {
  Matrix data;
  KernelSpec kernel;
  Matrix inducing;
  double noise_precision = 1.0;

  Index rows() const { return data.rows(); }
  Index outputs() const { return data.cols(); }
  Index num_inducing() const { return inducing.rows(); }

  void validate(Index q) const {
    if (!(noise_precision > 0.0) || !std::isfinite(noise_precision)) {
      throw InputError("noise precision must be positive and finite");
    }
    if (inducing.cols() != q) {
      throw InputError("inducing inputs have " + std::to_string(inducing.cols()) +
                       " columns, latent space has " + std::to_string(q));
    }
    if (inducing.rows() < 1) {
      throw InputError("a view needs at least one inducing point");
    }
    if (!data.allFinite()) {
      throw InputError("view data contains NaN or Inf");
    }
    kernel.validate();
  }
};

struct BoundValue {
  double total = 0.0;
  std::vector<double> per_view;
  double kl_term = 0.0;
};

/// Sufficient statistics of one view's collapsed bound. Test-time inference
/// augments these with extra rows without revisiting the training data.
struct ViewStats {
  double n = 0.0;  ///< number of rows
  double p = 0.0;  ///< number of output columns
  double yy = 0.0; ///< ||Y||_F^2
  double psi0 = 0.0;
  Matrix c;    ///< psi1^T Y (m x p)
  Matrix psi2; ///< m x m
};

struct ViewStatsAdjoint {
  double d_psi0 = 0.0;
  Matrix d_c;
  Matrix d_psi2;
  Matrix d_Kuu; ///< w.r.t. the unjittered K_uu
  double d_beta = 0.0;
};

inline ViewStats make_view_stats(const Matrix &Y, const PsiStatistics &psi) {
  ViewStats s;
  s.n = static_cast<double>(Y.rows());
  s.p = static_cast<double>(Y.cols());
  s.yy = Y.squaredNorm();
  s.psi0 = psi.psi0;
  s.c = psi.psi1.transpose() * Y;
  s.psi2 = psi.psi2;
  return s;
}

/// Collapsed per-view bound summed over output dimensions:
///   -(np/2) log 2pi + (np/2) log beta + (p/2)(log|K| - log|K + beta Phi|)
///   - 1/2 sum_d y_d^T W y_d - p beta psi0 / 2 + (p beta / 2) tr(K^{-1} Phi)
/// with W = beta I - beta^2 Psi (beta Phi + K)^{-1} Psi^T. Everything is
/// evaluated in the whitened basis of L = chol(K): with Phi_w = L^{-1} Phi L^{-T}
/// and A = I + beta Phi_w, K + beta Phi = L A L^T and A has eigenvalues >= 1,
/// so a nearly singular K_uu costs one factor of its condition number in the
/// adjoints rather than two.
inline double collapsed_view_bound(const ViewStats &s, const JitteredCholesky &Kchol,
                                   double beta, ViewStatsAdjoint *adj = nullptr) {
  const Index m = Kchol.size();
  const Matrix T = Kchol.solve_lower(s.psi2);
  const Matrix Phi_w = symmetrize(Kchol.solve_lower(T.transpose()));
  Matrix A = beta * Phi_w;
  A.diagonal().array() += 1.0;
  Eigen::LLT<Matrix> Achol(A);
  if (Achol.info() != Eigen::Success) {
    throw NumericalError("factorization of I + beta * psi2 in the whitened basis failed");
  }
  const double logdetA = 2.0 * Achol.matrixLLT().diagonal().array().log().sum();
  const Matrix c_w = Kchol.solve_lower(s.c);
  const Matrix LAc = Achol.matrixL().solve(c_w);
  const double trace_Phi_w = Phi_w.trace();
  const double log2pi = std::log(2.0 * std::numbers::pi);

  const double value = -0.5 * s.n * s.p * log2pi + 0.5 * s.n * s.p * std::log(beta) - 0.5 * s.p * logdetA -
                       0.5 * beta * s.yy + 0.5 * beta * beta * LAc.squaredNorm() - 0.5 * s.p * beta * s.psi0 +
                       0.5 * s.p * beta * trace_Phi_w;

  if (adj != nullptr) {
    const Matrix Ainv = Achol.solve(Matrix::Identity(m, m));
    const Matrix a_w = Achol.solve(c_w);
    // dL/dP with P = K + beta Phi, whitened: L^T dP L
    const Matrix dP_w = -0.5 * s.p * Ainv - 0.5 * beta * beta * a_w * a_w.transpose();
    Matrix dPhi_w = beta * dP_w;
    dPhi_w.diagonal().array() += 0.5 * s.p * beta;
    Matrix dK_w = dP_w - 0.5 * s.p * beta * Phi_w;
    dK_w.diagonal().array() += 0.5 * s.p;
    adj->d_c = beta * beta * Kchol.solve_upper(a_w);
    adj->d_psi0 = -0.5 * s.p * beta;
    adj->d_psi2 = Kchol.unwhiten(dPhi_w);
    adj->d_Kuu = Kchol.chain_adjoint(Kchol.unwhiten(dK_w));
    adj->d_beta = 0.5 * s.n * s.p / beta - 0.5 * s.yy + beta * (c_w.array() * a_w.array()).sum() -
                  0.5 * s.p * s.psi0 + 0.5 * s.p * trace_Phi_w + (dP_w.array() * Phi_w.array()).sum();
  }
  return value;
}

struct ViewGradient {
  Matrix d_means;
  Matrix d_vars;
  Matrix d_Z;
  double d_variance = 0.0;
  Vector d_weights;
  double d_beta = 0.0;
};

/// L^(k) evaluated at posterior marginals (means, vars).
inline double view_bound(const ViewModel &view, const Matrix &means, const Matrix &vars,
                         ViewGradient *grad = nullptr) {
  view.validate(means.cols());
  if (view.rows() != means.rows()) {
    throw InputError("view has " + std::to_string(view.rows()) + " rows, posterior has " +
                     std::to_string(means.rows()));
  }
  const PsiStatistics psi = psi_statistics(view.kernel, means, vars, view.inducing);
  const Matrix Kuu = cov_matrix(view.kernel, view.inducing).values;
  const JitteredCholesky Kchol(Kuu, "K_uu");
  const ViewStats stats = make_view_stats(view.data, psi);
  if (grad == nullptr) {
    return collapsed_view_bound(stats, Kchol, view.noise_precision);
  }
  ViewStatsAdjoint adj;
  const double value = collapsed_view_bound(stats, Kchol, view.noise_precision, &adj);
  PsiAdjoint padj;
  padj.d_psi0 = adj.d_psi0;
  padj.d_psi1 = view.data * adj.d_c.transpose();
  padj.d_psi2 = adj.d_psi2;
  const PsiGradient pg = psi_gradients(view.kernel, means, vars, view.inducing, padj);
  const KernelGradient kg = kernel_gradients(view.kernel, view.inducing, view.inducing, adj.d_Kuu);
  grad->d_means = pg.d_means;
  grad->d_vars = pg.d_vars;
  grad->d_Z = pg.d_Z + kg.d_A + kg.d_B;
  grad->d_variance = pg.d_variance + kg.d_variance;
  grad->d_weights = pg.d_weights + kg.d_weights;
  grad->d_beta = adj.d_beta;
  return value;
}

struct BoundGradient {
  Matrix d_means;
  Matrix d_vars;    ///< diagonal posterior: w.r.t. variances
  Matrix d_lambdas; ///< coupled posterior: w.r.t. lambdas
  std::vector<ViewGradient> views;
  double d_temporal_variance = 0.0;
  double d_temporal_lengthscale = 0.0;
};

namespace detail {

inline void check_consistent(const std::vector<ViewModel> &views, const LatentPosterior &post,
                             const LatentPrior &prior) {
  if (views.empty()) {
    throw InputError("at least one view is required");
  }
  const Index n = posterior_means(post).rows();
  const Index q = posterior_means(post).cols();
  for (size_t k = 0; k < views.size(); ++k) {
    if (views[k].rows() != n) {
      throw AlignmentError("view " + std::to_string(k) + " has " + std::to_string(views[k].rows()) +
                           " rows, posterior has " + std::to_string(n));
    }
    views[k].validate(q);
  }
  prior.validate(n);
  const bool coupled = std::holds_alternative<CoupledLatentPosterior>(post);
  if (coupled != (prior.kind == PriorKind::temporal)) {
    throw UsageError("temporal priors pair with coupled posteriors, standard-normal with diagonal");
  }
}

} // namespace detail

/// Collapsed bound sum_k L^(k) - KL(q(X) || p(X)), optionally with its gradient
/// w.r.t. every natural (constrained) parameter.
inline BoundValue total_bound(const std::vector<ViewModel> &views, const LatentPosterior &post,
                              const LatentPrior &prior, BoundGradient *grad = nullptr) {
  detail::check_consistent(views, post, prior);
  const Index K = static_cast<Index>(views.size());
  BoundValue out;
  out.per_view.assign(views.size(), 0.0);

  Matrix means;
  Matrix vars;
  std::optional<CoupledFactors> factors;
  if (const auto *diag = std::get_if<DiagLatentPosterior>(&post)) {
    diag->validate();
    means = diag->means;
    vars = diag->variances;
    out.kl_term = kl_standard_normal(*diag);
  } else {
    const auto &coupled = std::get<CoupledLatentPosterior>(post);
    factors.emplace(coupled, prior.gram().values);
    means = coupled.means;
    vars = factors->variances();
    out.kl_term = kl_temporal(coupled, *factors);
  }

  std::vector<ViewGradient> vgrads(grad ? views.size() : 0);
  parallel_for(K, [&](Index k) {
    const auto ku = static_cast<size_t>(k);
    out.per_view[ku] = view_bound(views[ku], means, vars, grad ? &vgrads[ku] : nullptr);
  });
  out.total = 0.0;
  for (double v : out.per_view) {
    out.total += v;
  }
  out.total -= out.kl_term;

  if (grad != nullptr) {
    const Index n = means.rows();
    const Index q = means.cols();
    Matrix d_means = Matrix::Zero(n, q);
    Matrix d_vars = Matrix::Zero(n, q);
    for (const auto &vg : vgrads) {
      d_means += vg.d_means;
      d_vars += vg.d_vars;
    }
    grad->views = std::move(vgrads);
    if (const auto *diag = std::get_if<DiagLatentPosterior>(&post)) {
      const DiagKLGradient kg = kl_standard_normal_gradient(*diag);
      grad->d_means = d_means - kg.d_means;
      grad->d_vars = d_vars - kg.d_vars;
      grad->d_lambdas.resize(0, 0);
    } else {
      const auto &coupled = std::get<CoupledLatentPosterior>(post);
      const TemporalGradient tg = coupled_gradient(coupled, *factors, d_vars, -1.0);
      grad->d_means = d_means + tg.d_means;
      grad->d_lambdas = tg.d_lambdas;
      grad->d_vars.resize(0, 0);
      const KernelGradient kt =
          temporal_cov_gradients(prior.temporal_kernel, prior.timestamps, prior.seq_ids, tg.d_Kt);
      grad->d_temporal_variance = kt.d_variance;
      grad->d_temporal_lengthscale = kt.d_lengthscale;
    }
  }
  return out;
}

/// Gaussian q(U) for one view: column d of `mean` is the mean of u_d; all
/// output dimensions share `cov`.
struct InducingPosterior {
  Matrix mean;
  Matrix cov;
};

/// Optimal q(U) of the collapse: cov = K P^{-1} K, mean = beta K P^{-1} psi1^T Y
/// with P = K + beta psi2.
inline InducingPosterior optimal_inducing_posterior(const ViewModel &view, const Matrix &means,
                                                    const Matrix &vars) {
  const PsiStatistics psi = psi_statistics(view.kernel, means, vars, view.inducing);
  const Matrix Kuu = cov_matrix(view.kernel, view.inducing).values;
  const JitteredCholesky Kchol(Kuu, "K_uu");
  Matrix Kj = Kuu;
  Kj.diagonal().array() += Kchol.jitter_applied();
  const double beta = view.noise_precision;
  Eigen::LLT<Matrix> Pchol(symmetrize(beta * psi.psi2 + Kj));
  if (Pchol.info() != Eigen::Success) {
    throw NumericalError("factorization of K_uu + beta * psi2 failed");
  }
  InducingPosterior q;
  q.cov = symmetrize(Kj * Pchol.solve(Kj));
  q.mean = beta * Kj * Pchol.solve(psi.psi1.transpose() * view.data);
  return q;
}

/// The bound before collapsing q(U): E_Q[log p(Y|F)] - KL(q(U) || p(U)) per
/// view, minus KL(q(X) || p(X)). Expectations are analytic.
inline double uncollapsed_bound(const std::vector<ViewModel> &views, const LatentPosterior &post,
                                const LatentPrior &prior, const std::vector<InducingPosterior> &qU) {
  detail::check_consistent(views, post, prior);
  if (qU.size() != views.size()) {
    throw InputError("one q(U) per view is required");
  }
  Matrix means;
  Matrix vars;
  double kl = 0.0;
  if (const auto *diag = std::get_if<DiagLatentPosterior>(&post)) {
    means = diag->means;
    vars = diag->variances;
    kl = kl_standard_normal(*diag);
  } else {
    const auto &coupled = std::get<CoupledLatentPosterior>(post);
    CoupledFactors f(coupled, prior.gram().values);
    means = coupled.means;
    vars = f.variances();
    kl = kl_temporal(coupled, f);
  }
  const double log2pi = std::log(2.0 * std::numbers::pi);
  double total = -kl;
  for (size_t k = 0; k < views.size(); ++k) {
    const ViewModel &v = views[k];
    const InducingPosterior &qu = qU[k];
    const Index m = v.num_inducing();
    const Index p = v.outputs();
    const double n = static_cast<double>(v.rows());
    if (qu.mean.rows() != m || qu.mean.cols() != p || qu.cov.rows() != m || qu.cov.cols() != m) {
      throw InputError("q(U) moments have the wrong shape for view " + std::to_string(k));
    }
    const PsiStatistics psi = psi_statistics(v.kernel, means, vars, v.inducing);
    const Matrix Kuu = cov_matrix(v.kernel, v.inducing).values;
    const JitteredCholesky Kchol(Kuu, "K_uu");
    const double beta = v.noise_precision;
    const Matrix Kinv_m = Kchol.solve(qu.mean);
    const Matrix Kinv_S = Kchol.solve(qu.cov);
    const Matrix Kinv_Phi = Kchol.solve(psi.psi2);
    Eigen::LLT<Matrix> Schol(symmetrize(qu.cov));
    if (Schol.info() != Eigen::Success) {
      throw InputError("q(U) covariance is not positive definite");
    }
    const double logdetS = 2.0 * Schol.matrixLLT().diagonal().array().log().sum();
    double expected_sq = v.data.squaredNorm();
    expected_sq -= 2.0 * (v.data.array() * (psi.psi1 * Kinv_m).array()).sum();
    expected_sq += static_cast<double>(p) * (psi.psi0 - Kinv_Phi.trace());
    expected_sq += (Kinv_m.array() * (psi.psi2 * Kinv_m).array()).sum();
    expected_sq += static_cast<double>(p) * (Kinv_Phi * Kinv_S).trace();
    const double ell = -0.5 * n * static_cast<double>(p) * (log2pi - std::log(beta)) - 0.5 * beta * expected_sq;
    const double klu = 0.5 * (static_cast<double>(p) * Kinv_S.trace() + (qu.mean.array() * Kinv_m.array()).sum() -
                              static_cast<double>(m * p) +
                              static_cast<double>(p) * (Kchol.log_det() - logdetS));
    total += ell - klu;
  }
  return total;
}

} // namespace mrd

#endif
