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

#ifndef MRD_LATENT_HPP
#define MRD_LATENT_HPP

#include <cmath>
#include <utility>
#include <variant>
#include <vector>

#include "mrd/kernels.hpp"

namespace mrd {

/// q(X) = prod_i N(x_i | mu_i, diag(s_i)).
struct DiagLatentPosterior {
  Matrix means;
  Matrix variances;

  Index rows() const { return means.rows(); }
  Index dims() const { return means.cols(); }

  void validate() const {
    if (means.rows() != variances.rows() || means.cols() != variances.cols()) {
      throw InputError("posterior means and variances differ in shape");
    }
    if (!means.allFinite() || !variances.allFinite()) {
      throw InputError("posterior parameters must be finite");
    }
    if (variances.size() > 0 && !(variances.array() > 0.0).all()) {
      throw InputError("posterior variances must be strictly positive");
    }
  }
};

/// q(X) = prod_j N(x_j | mu_j, S_j) with S_j = (K_t^{-1} + diag(lambda_j))^{-1}.
/// One lambda column per latent dimension.
struct CoupledLatentPosterior {
  Matrix means;
  Matrix lambdas;

  Index rows() const { return means.rows(); }
  Index dims() const { return means.cols(); }

  void validate() const {
    if (means.rows() != lambdas.rows() || means.cols() != lambdas.cols()) {
      throw InputError("posterior means and lambdas differ in shape");
    }
    if (!means.allFinite() || !lambdas.allFinite()) {
      throw InputError("posterior parameters must be finite");
    }
    if (lambdas.size() > 0 && !(lambdas.array() > 0.0).all()) {
      throw InputError("reparameterization lambdas must be strictly positive");
    }
  }
};

using LatentPosterior = std::variant<DiagLatentPosterior, CoupledLatentPosterior>;

inline const Matrix &posterior_means(const LatentPosterior &p) {
  return std::visit([](const auto &v) -> const Matrix & { return v.means; }, p);
}
inline Matrix &posterior_means(LatentPosterior &p) {
  return std::visit([](auto &v) -> Matrix & { return v.means; }, p);
}

enum class PriorKind { standard_normal, temporal };

struct LatentPrior {
  PriorKind kind = PriorKind::standard_normal;
  KernelSpec temporal_kernel = KernelSpec::temporal(KernelFamily::temporal_eq, 1.0, 1.0);
  Vector timestamps;
  std::vector<int> seq_ids;

  static LatentPrior standard_normal() { return {}; }

  static LatentPrior temporal(KernelSpec kernel, Vector t, std::vector<int> seq = {}) {
    LatentPrior p;
    p.kind = PriorKind::temporal;
    p.temporal_kernel = std::move(kernel);
    if (seq.empty()) {
      seq.assign(static_cast<size_t>(t.size()), 0);
    }
    p.timestamps = std::move(t);
    p.seq_ids = std::move(seq);
    return p;
  }

  void validate(Index n) const {
    if (kind == PriorKind::standard_normal) {
      return;
    }
    if (timestamps.size() != n) {
      throw InputError("temporal prior needs one timestamp per point (" + std::to_string(n) +
                       "), got " + std::to_string(timestamps.size()));
    }
    if (static_cast<Index>(seq_ids.size()) != n) {
      throw InputError("temporal prior needs one sequence label per point");
    }
    temporal_kernel.validate();
    if (!is_temporal(temporal_kernel.family)) {
      throw InputError("temporal prior needs a temporal kernel family");
    }
  }

  GramMatrix gram() const { return temporal_cov(temporal_kernel, timestamps, seq_ids); }
};

/// KL(q(X) || N(0, I)) = 1/2 sum_ij (s_ij + mu_ij^2 - 1 - ln s_ij).
inline double kl_standard_normal(const DiagLatentPosterior &post) {
  post.validate();
  return 0.5 * (post.variances.array() + post.means.array().square() - 1.0 -
                post.variances.array().log())
                   .sum();
}

struct DiagKLGradient {
  Matrix d_means;
  Matrix d_vars;
};

inline DiagKLGradient kl_standard_normal_gradient(const DiagLatentPosterior &post) {
  return {post.means, 0.5 * (1.0 - post.variances.array().inverse()).matrix()};
}

/// KL(q(X) || N(0, prior_var I)) for the test-time factorized posterior.
inline double kl_isotropic(const DiagLatentPosterior &post, double prior_var) {
  post.validate();
  const auto s = post.variances.array() / prior_var;
  return 0.5 * (s + post.means.array().square() / prior_var - 1.0 - s.log()).sum();
}

inline DiagKLGradient kl_isotropic_gradient(const DiagLatentPosterior &post, double prior_var) {
  return {post.means / prior_var,
          0.5 * (1.0 / prior_var - post.variances.array().inverse()).matrix()};
}

/// Per-dimension covariances implied by a coupled posterior, built against the
/// jittered K_t. S_j = K - V^T V with V = chol(B)^{-1} D K, B = I + D K D and
/// D = diag(sqrt(lambda_j)); no inverse of K_t is formed for S_j.
class CoupledFactors {
public:
  CoupledFactors(const CoupledLatentPosterior &post, const Matrix &Kt)
      : chol_(Kt, "temporal prior K_t") {
    post.validate();
    const Index n = post.rows();
    if (Kt.rows() != n) {
      throw InputError("K_t size does not match posterior rows");
    }
    K_ = Kt;
    K_.diagonal().array() += chol_.jitter_applied();
    const Index q = post.dims();
    S_.resize(static_cast<size_t>(q));
    Binv_.resize(static_cast<size_t>(q));
    logdetB_.resize(static_cast<size_t>(q));
    vars_.resize(n, q);
    for (Index j = 0; j < q; ++j) {
      const Vector d = post.lambdas.col(j).array().sqrt();
      Matrix B = d.asDiagonal() * K_ * d.asDiagonal();
      B.diagonal().array() += 1.0;
      Eigen::LLT<Matrix> llt(B);
      if (llt.info() != Eigen::Success) {
        throw NumericalError("coupled posterior: factorization of I + D K D failed");
      }
      const Matrix V = llt.matrixL().solve(d.asDiagonal() * K_);
      S_[static_cast<size_t>(j)] = K_ - V.transpose() * V;
      Binv_[static_cast<size_t>(j)] = llt.solve(Matrix::Identity(n, n));
      logdetB_[static_cast<size_t>(j)] = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
      vars_.col(j) = S_[static_cast<size_t>(j)].diagonal();
    }
  }

  const Matrix &S(Index j) const { return S_[static_cast<size_t>(j)]; }
  const Matrix &variances() const { return vars_; }
  const JitteredCholesky &prior_chol() const { return chol_; }
  const Matrix &Binv(Index j) const { return Binv_[static_cast<size_t>(j)]; }
  double logdetB(Index j) const { return logdetB_[static_cast<size_t>(j)]; }
  const Matrix &jittered_prior() const { return K_; }

private:
  JitteredCholesky chol_;
  Matrix K_;
  std::vector<Matrix> S_;
  std::vector<Matrix> Binv_;
  std::vector<double> logdetB_;
  Matrix vars_;
};

/// sum_j KL(N(mu_j, S_j) || N(0, K_t)); each term is
/// 1/2 [tr(B^{-1}) - n + log|B| + mu_j^T K_t^{-1} mu_j].
inline double kl_temporal(const CoupledLatentPosterior &post, const CoupledFactors &f) {
  const Index n = post.rows();
  double total = 0.0;
  for (Index j = 0; j < post.dims(); ++j) {
    const Vector mu = post.means.col(j);
    const double quad = mu.dot(f.prior_chol().solve(mu).col(0));
    total += 0.5 * (f.Binv(j).trace() - static_cast<double>(n) + f.logdetB(j) + quad);
  }
  return total;
}

inline double kl_temporal(const CoupledLatentPosterior &post, const Matrix &Kt) {
  return kl_temporal(post, CoupledFactors(post, Kt));
}

struct TemporalGradient {
  Matrix d_means;
  Matrix d_lambdas;
  Matrix d_Kt; ///< w.r.t. the unjittered K_t
};

/// Gradient of [data(marginal variances) - KL_temporal] given `d_vars`, the
/// derivative of the data terms w.r.t. the marginal variances diag(S_j)
/// (n x q; may be empty). `kl_sign` is the coefficient of the KL term.
inline TemporalGradient coupled_gradient(const CoupledLatentPosterior &post, const CoupledFactors &f,
                                         const Matrix &d_vars, double kl_sign) {
  const Index n = post.rows();
  const Index q = post.dims();
  TemporalGradient g;
  g.d_means = Matrix::Zero(n, q);
  g.d_lambdas = Matrix::Zero(n, q);
  Matrix dK = Matrix::Zero(n, n);
  for (Index j = 0; j < q; ++j) {
    const Matrix &S = f.S(j);
    const Vector lam = post.lambdas.col(j);
    const Vector d = lam.array().sqrt();
    const Matrix &Binv = f.Binv(j);
    const Vector alpha = f.prior_chol().solve(post.means.col(j));
    const Matrix SS = S.cwiseProduct(S);

    // KL part
    const Matrix GB = 0.5 * (Binv - Binv * Binv);
    g.d_means.col(j) += kl_sign * alpha;
    g.d_lambdas.col(j) += kl_sign * 0.5 * SS * lam;
    dK += kl_sign * (d.asDiagonal() * GB * d.asDiagonal() - 0.5 * alpha * alpha.transpose());

    if (d_vars.size() > 0) {
      const Vector gv = d_vars.col(j);
      g.d_lambdas.col(j) -= SS * gv;
      Matrix IminusSL = -S * lam.asDiagonal();
      IminusSL.diagonal().array() += 1.0;
      dK += IminusSL.transpose() * gv.asDiagonal() * IminusSL;
    }
  }
  g.d_Kt = f.prior_chol().chain_adjoint(symmetrize(dK));
  return g;
}

/// Means and per-point marginal variances (n x q) fed to the psi statistics.
inline std::pair<Matrix, Matrix> marginal_moments(const DiagLatentPosterior &post) {
  post.validate();
  return {post.means, post.variances};
}

inline std::pair<Matrix, Matrix> marginal_moments(const CoupledLatentPosterior &post, const Matrix &Kt) {
  CoupledFactors f(post, Kt);
  return {post.means, f.variances()};
}

} // namespace mrd

#endif
