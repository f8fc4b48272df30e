// Independent reference implementations used as test oracles. Everything here
// is written with explicit loops or dense linear algebra and shares no code
// with the library beyond Eigen.
#pragma once

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

enum class Family { eq, linear };

struct Kernel {
  Family family = Family::eq;
  double variance = 1.0;
  Vector weights;

  double operator()(const Vector &a, const Vector &b) const {
    double s = 0.0;
    for (Index j = 0; j < weights.size(); ++j) {
      if (family == Family::eq) {
        s += weights(j) * (a(j) - b(j)) * (a(j) - b(j));
      } else {
        s += weights(j) * a(j) * b(j);
      }
    }
    return family == Family::eq ? variance * std::exp(-0.5 * s) : variance * s;
  }

  Matrix gram(const Matrix &A, const Matrix &B) const {
    Matrix K(A.rows(), B.rows());
    for (Index i = 0; i < A.rows(); ++i) {
      for (Index r = 0; r < B.rows(); ++r) {
        K(i, r) = (*this)(A.row(i).transpose(), B.row(r).transpose());
      }
    }
    return K;
  }
};

/// K + 1e-6 * mean(diag K) * I, the library's first jitter level.
inline Matrix jittered(const Matrix &K) {
  Matrix J = K;
  J.diagonal().array() += 1e-6 * K.diagonal().mean();
  return J;
}

struct Psi {
  double psi0 = 0.0;
  Matrix psi1;
  Matrix psi2;
};

/// Monte-Carlo psi statistics from `samples` draws of X ~ prod_i N(mu_i, diag(S_i)),
/// taken as antithetic pairs mu +- e.
inline Psi monte_carlo_psi(const Kernel &k, const Matrix &mu, const Matrix &S, const Matrix &Z,
                           long samples, std::uint64_t seed) {
  const Index n = mu.rows();
  const Index q = mu.cols();
  const Index m = Z.rows();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Psi out;
  out.psi1 = Matrix::Zero(n, m);
  out.psi2 = Matrix::Zero(m, m);
  Vector e(q);
  Vector x(q);
  Vector kx(m);
  for (long s = 0; s < samples / 2; ++s) {
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < q; ++j) {
        e(j) = std::sqrt(S(i, j)) * nd(rng);
      }
      for (const double sign : {1.0, -1.0}) {
        x = mu.row(i).transpose() + sign * e;
        out.psi0 += k(x, x);
        for (Index a = 0; a < m; ++a) {
          kx(a) = k(x, Z.row(a).transpose());
        }
        out.psi1.row(i) += kx.transpose();
        out.psi2 += kx * kx.transpose();
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(2 * (samples / 2));
  out.psi0 *= inv;
  out.psi1 *= inv;
  out.psi2 *= inv;
  return out;
}

/// Closed-form psi statistics written entry by entry.
inline Psi direct_psi(const Kernel &k, const Matrix &mu, const Matrix &S, const Matrix &Z) {
  const Index n = mu.rows();
  const Index q = mu.cols();
  const Index m = Z.rows();
  Psi out;
  out.psi1 = Matrix::Zero(n, m);
  out.psi2 = Matrix::Zero(m, m);
  const Vector &w = k.weights;
  const double v = k.variance;
  if (k.family == Family::eq) {
    out.psi0 = static_cast<double>(n) * v;
    for (Index i = 0; i < n; ++i) {
      for (Index a = 0; a < m; ++a) {
        double p = v;
        for (Index j = 0; j < q; ++j) {
          const double d = w(j) * S(i, j) + 1.0;
          p *= std::exp(-0.5 * w(j) * std::pow(mu(i, j) - Z(a, j), 2) / d) / std::sqrt(d);
        }
        out.psi1(i, a) = p;
        for (Index b = 0; b < m; ++b) {
          double p2 = v * v;
          for (Index j = 0; j < q; ++j) {
            const double d = 2.0 * w(j) * S(i, j) + 1.0;
            const double zbar = 0.5 * (Z(a, j) + Z(b, j));
            p2 *= std::exp(-0.25 * w(j) * std::pow(Z(a, j) - Z(b, j), 2) -
                           w(j) * std::pow(mu(i, j) - zbar, 2) / d) /
                  std::sqrt(d);
          }
          out.psi2(a, b) += p2;
        }
      }
    }
  } else {
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < q; ++j) {
        out.psi0 += v * w(j) * (mu(i, j) * mu(i, j) + S(i, j));
      }
      for (Index a = 0; a < m; ++a) {
        double s = 0.0;
        for (Index j = 0; j < q; ++j) {
          s += w(j) * mu(i, j) * Z(a, j);
        }
        out.psi1(i, a) = v * s;
      }
      for (Index a = 0; a < m; ++a) {
        for (Index b = 0; b < m; ++b) {
          double s = 0.0;
          for (Index j = 0; j < q; ++j) {
            for (Index l = 0; l < q; ++l) {
              const double exx = mu(i, j) * mu(i, l) + (j == l ? S(i, j) : 0.0);
              s += w(j) * w(l) * Z(a, j) * Z(b, l) * exx;
            }
          }
          out.psi2(a, b) += v * v * s;
        }
      }
    }
  }
  return out;
}

inline double log_det(const Matrix &A) {
  return Eigen::PartialPivLU<Matrix>(A).matrixLU().diagonal().array().abs().log().sum();
}

using MatrixL = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;

inline long double log_det(const MatrixL &A) {
  return Eigen::PartialPivLU<MatrixL>(A).matrixLU().diagonal().array().abs().log().sum();
}

/// Single-view Bayesian GP-LVM bound written with the n x n matrix W, in
/// extended precision so that nearly singular K_uu do not limit the oracle.
inline double single_view_bound(const Matrix &Y, const Kernel &k, const Matrix &mu, const Matrix &S,
                                 const Matrix &Z, double beta_d) {
  const Index n = Y.rows();
  const Psi psi = direct_psi(k, mu, S, Z);
  const long double beta = beta_d;
  const MatrixL Kuu = jittered(k.gram(Z, Z)).cast<long double>();
  const MatrixL psi1 = psi.psi1.cast<long double>();
  const MatrixL psi2 = psi.psi2.cast<long double>();
  const MatrixL A = beta * psi2 + Kuu;
  const MatrixL Ainv = A.inverse();
  const MatrixL W =
      beta * MatrixL::Identity(n, n) - beta * beta * psi1 * Ainv * psi1.transpose();
  const long double trK = (Kuu.inverse() * psi2).trace();
  const long double ld = 0.5L * (log_det(Kuu) - log_det(A));
  const long double nn = static_cast<long double>(n);
  long double total = 0.0L;
  for (Index d = 0; d < Y.cols(); ++d) {
    const Eigen::Matrix<long double, Eigen::Dynamic, 1> y = Y.col(d).cast<long double>();
    total += 0.5L * nn * std::log(beta) - 0.5L * nn * std::log(2.0L * std::numbers::pi_v<long double>) + ld -
             0.5L * y.dot(W * y) - 0.5L * beta * static_cast<long double>(psi.psi0) + 0.5L * beta * trK;
  }
  return static_cast<double>(total);
}

inline double kl_diag_standard_normal(const Matrix &mu, const Matrix &S) {
  double kl = 0.0;
  for (Index i = 0; i < mu.rows(); ++i) {
    for (Index j = 0; j < mu.cols(); ++j) {
      kl += 0.5 * (S(i, j) + mu(i, j) * mu(i, j) - 1.0 - std::log(S(i, j)));
    }
  }
  return kl;
}

/// KL(N(m0, S0) || N(m1, S1)) with dense inverses.
inline double gaussian_kl(const Vector &m0, const Matrix &S0, const Vector &m1, const Matrix &S1) {
  const Matrix S1inv = S1.inverse();
  const Vector d = m1 - m0;
  return 0.5 * ((S1inv * S0).trace() + d.dot(S1inv * d) - static_cast<double>(m0.size()) + log_det(S1) -
                log_det(S0));
}

/// log N(vec Y | 0, K + I / beta) summed over independent columns.
inline double dense_gp_log_likelihood(const Matrix &Y, const Matrix &K, double beta) {
  const Index n = Y.rows();
  const Matrix C = K + Matrix::Identity(n, n) / beta;
  const Matrix Cinv = C.inverse();
  const double ld = log_det(C);
  double total = 0.0;
  for (Index d = 0; d < Y.cols(); ++d) {
    total += -0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi) - 0.5 * ld -
             0.5 * Y.col(d).dot(Cinv * Y.col(d));
  }
  return total;
}

/// Sparse-GP predictor at deterministic inputs: mean k_*^T B, variance
/// k(x,x) - k_*^T (K^{-1} - P^{-1}) k_* + 1/beta per point.
struct SparsePredictor {
  Kernel kernel;
  Matrix Z;
  Matrix B;      ///< m x p
  Matrix Kinv;   ///< m x m
  Matrix Pinv;   ///< m x m
  double beta = 1.0;

  static SparsePredictor fit(const Kernel &k, const Matrix &Y, const Matrix &mu, const Matrix &S,
                             const Matrix &Z, double beta) {
    const Psi psi = direct_psi(k, mu, S, Z);
    SparsePredictor sp;
    sp.kernel = k;
    sp.Z = Z;
    sp.beta = beta;
    const Matrix Kuu = jittered(k.gram(Z, Z));
    sp.Kinv = Kuu.inverse();
    sp.Pinv = (beta * psi.psi2 + Kuu).inverse();
    sp.B = beta * sp.Pinv * psi.psi1.transpose() * Y;
    return sp;
  }

  Vector kstar(const Vector &x) const {
    Vector kx(Z.rows());
    for (Index a = 0; a < Z.rows(); ++a) {
      kx(a) = kernel(x, Z.row(a).transpose());
    }
    return kx;
  }
  Vector mean(const Vector &x) const { return B.transpose() * kstar(x); }
  double variance(const Vector &x) const {
    const Vector kx = kstar(x);
    return kernel(x, x) - kx.dot((Kinv - Pinv) * kx) + 1.0 / beta;
  }
};

/// Monte-Carlo predictive mean and variance at one uncertain input
/// x ~ N(mu, diag(s)): E[f] = E_x[m(x)], Var[f] = E_x[v(x)] + Var_x[m(x)].
/// Draws come in antithetic pairs mu +- e.
inline std::pair<Vector, Vector> monte_carlo_prediction(const SparsePredictor &sp, const Vector &mu,
                                                        const Vector &s, long samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  const Index p = sp.B.cols();
  Vector sum_m = Vector::Zero(p);
  Vector sum_m2 = Vector::Zero(p);
  double sum_v = 0.0;
  Vector e(mu.size());
  for (long t = 0; t < samples / 2; ++t) {
    for (Index j = 0; j < mu.size(); ++j) {
      e(j) = std::sqrt(s(j)) * nd(rng);
    }
    for (const double sign : {1.0, -1.0}) {
      const Vector x = mu + sign * e;
      const Vector kx = sp.kstar(x);
      const Vector mx = sp.B.transpose() * kx;
      sum_m += mx;
      sum_m2 += mx.cwiseProduct(mx);
      sum_v += sp.kernel(x, x) - kx.dot((sp.Kinv - sp.Pinv) * kx) + 1.0 / sp.beta;
    }
  }
  const double inv = 1.0 / static_cast<double>(2 * (samples / 2));
  const Vector mean = sum_m * inv;
  const Vector var = (sum_v * inv) * Vector::Ones(p) + sum_m2 * inv - mean.cwiseProduct(mean);
  return {mean, var};
}

} // namespace oracle
