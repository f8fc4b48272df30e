#include <cstdlib>

#include <gtest/gtest.h>

#include "mrd/psi.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace mrd;
using namespace testing_support;

namespace {

oracle::Kernel to_oracle(const KernelSpec &k) {
  return {k.family == KernelFamily::eq_ard ? oracle::Family::eq : oracle::Family::linear, k.variance, k.weights};
}

KernelSpec random_kernel(KernelFamily fam, Index q, std::mt19937_64 &rng) {
  Vector w = uniform(q, 1, rng, 0.3, 1.5);
  const double v = uniform(1, 1, rng, 0.5, 2.0)(0);
  return fam == KernelFamily::eq_ard ? KernelSpec::eq_ard(v, w) : KernelSpec::linear_ard(v, w);
}

double max_rel_entry_error(const Matrix &a, const Matrix &ref, double min_magnitude) {
  double worst = 0.0;
  for (Index j = 0; j < ref.cols(); ++j) {
    for (Index i = 0; i < ref.rows(); ++i) {
      if (std::abs(ref(i, j)) > min_magnitude) {
        worst = std::max(worst, std::abs(a(i, j) - ref(i, j)) / std::abs(ref(i, j)));
      }
    }
  }
  return worst;
}

} // namespace

TEST(PsiStatistics, EqPsi0IsNTimesVariance) {
  std::mt19937_64 rng(11);
  const KernelSpec k = random_kernel(KernelFamily::eq_ard, 3, rng);
  const PsiStatistics s = psi_statistics(k, randn(7, 3, rng), uniform(7, 3, rng, 0.1, 1.0), randn(4, 3, rng));
  EXPECT_NEAR(s.psi0, 7.0 * k.variance, 1e-12);
}

TEST(PsiStatistics, ZeroVarianceCollapsesToKernelQuantities) {
  std::mt19937_64 rng(12);
  for (auto fam : {KernelFamily::eq_ard, KernelFamily::linear_ard}) {
    const KernelSpec k = random_kernel(fam, 2, rng);
    const Matrix mu = randn(5, 2, rng);
    const Matrix Z = randn(3, 2, rng);
    const PsiStatistics s = psi_statistics(k, mu, Matrix::Zero(5, 2), Z);
    const Matrix Kfu = cov_matrix(k, mu, Z).values;
    EXPECT_LE((s.psi1 - Kfu).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((s.psi2 - Kfu.transpose() * Kfu).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(s.psi0, cov_matrix(k, mu).values.trace(), 1e-12);
  }
}

TEST(PsiStatistics, MatchesEntrywiseClosedForm) {
  std::mt19937_64 rng(13);
  for (auto fam : {KernelFamily::eq_ard, KernelFamily::linear_ard}) {
    for (int rep = 0; rep < 5; ++rep) {
      const KernelSpec k = random_kernel(fam, 3, rng);
      const Matrix mu = randn(40, 3, rng);
      const Matrix S = uniform(40, 3, rng, 0.05, 1.0);
      const Matrix Z = randn(5, 3, rng);
      const PsiStatistics s = psi_statistics(k, mu, S, Z);
      const oracle::Psi ref = oracle::direct_psi(to_oracle(k), mu, S, Z);
      EXPECT_LE(rel_error(s.psi0, ref.psi0), 1e-12);
      EXPECT_LE(max_rel_error(s.psi1, ref.psi1, 1e-12), 1e-10);
      EXPECT_LE(max_rel_error(s.psi2, ref.psi2, 1e-12), 1e-10);
    }
  }
}

TEST(PsiStatistics, MatchesMonteCarloEq) {
  std::mt19937_64 rng(14);
  const KernelSpec k = random_kernel(KernelFamily::eq_ard, 2, rng);
  const Matrix mu = randn(3, 2, rng, 0.7);
  const Matrix S = uniform(3, 2, rng, 0.05, 0.5);
  const Matrix Z = randn(2, 2, rng, 0.7);
  const PsiStatistics s = psi_statistics(k, mu, S, Z);
  const oracle::Psi mc = oracle::monte_carlo_psi(to_oracle(k), mu, S, Z, 1000000, 99);
  EXPECT_LE(rel_error(s.psi0, mc.psi0), 0.01);
  EXPECT_LE(max_rel_entry_error(s.psi1, mc.psi1, 1e-3), 0.01);
  EXPECT_LE(max_rel_entry_error(s.psi2, mc.psi2, 1e-3), 0.01);
}

TEST(PsiStatistics, MatchesMonteCarloLinear) {
  std::mt19937_64 rng(15);
  const KernelSpec k = random_kernel(KernelFamily::linear_ard, 2, rng);
  const Matrix mu = randn(3, 2, rng);
  const Matrix S = uniform(3, 2, rng, 0.01, 0.2);
  const Matrix Z = randn(2, 2, rng);
  const PsiStatistics s = psi_statistics(k, mu, S, Z);
  const oracle::Psi mc = oracle::monte_carlo_psi(to_oracle(k), mu, S, Z, 1000000, 98);
  EXPECT_LE(rel_error(s.psi0, mc.psi0), 0.01);
  EXPECT_LE(max_rel_entry_error(s.psi1, mc.psi1, 1e-3), 0.01);
  EXPECT_LE(max_rel_entry_error(s.psi2, mc.psi2, 1e-3), 0.01);
}

TEST(PsiStatistics, Psi2IsSymmetricPsd) {
  std::mt19937_64 rng(16);
  for (auto fam : {KernelFamily::eq_ard, KernelFamily::linear_ard}) {
    for (int rep = 0; rep < 10; ++rep) {
      const KernelSpec k = random_kernel(fam, 4, rng);
      const PsiStatistics s =
          psi_statistics(k, randn(20, 4, rng), uniform(20, 4, rng, 0.0, 2.0), randn(8, 4, rng, 2.0));
      EXPECT_LE((s.psi2 - s.psi2.transpose()).cwiseAbs().maxCoeff(), 1e-12 * s.psi2.cwiseAbs().maxCoeff());
      Eigen::SelfAdjointEigenSolver<Matrix> eig(s.psi2);
      EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-8 * s.psi2.trace());
      EXPECT_GE(s.psi0, 0.0);
    }
  }
}

TEST(PsiStatistics, UnsupportedFamilyIsUsageError) {
  const KernelSpec k = KernelSpec::temporal(KernelFamily::temporal_eq, 1.0, 1.0);
  EXPECT_THROW(psi_statistics(k, Matrix::Zero(2, 1), Matrix::Zero(2, 1), Matrix::Zero(1, 1)), UsageError);
}

TEST(PsiStatistics, ResultIndependentOfWorkerCount) {
  std::mt19937_64 rng(17);
  const KernelSpec k = random_kernel(KernelFamily::eq_ard, 3, rng);
  const Matrix mu = randn(150, 3, rng);
  const Matrix S = uniform(150, 3, rng, 0.1, 1.0);
  const Matrix Z = randn(10, 3, rng);
  setenv("MRD_THREADS", "1", 1);
  const PsiStatistics a = psi_statistics(k, mu, S, Z);
  setenv("MRD_THREADS", "3", 1);
  const PsiStatistics b = psi_statistics(k, mu, S, Z);
  unsetenv("MRD_THREADS");
  EXPECT_EQ(a.psi0, b.psi0);
  EXPECT_TRUE(a.psi1 == b.psi1);
  EXPECT_TRUE(a.psi2 == b.psi2);
}

namespace {

double contract(const PsiStatistics &s, const PsiAdjoint &adj) {
  double v = adj.d_psi0 * s.psi0;
  if (adj.d_psi1.size() > 0) {
    v += (adj.d_psi1.array() * s.psi1.array()).sum();
  }
  if (adj.d_psi2.size() > 0) {
    v += (adj.d_psi2.array() * s.psi2.array()).sum();
  }
  return v;
}

void check_psi_gradients(const KernelSpec &k, const Matrix &mu, const Matrix &S, const Matrix &Z,
                         const PsiAdjoint &adj, double tol) {
  const PsiGradient g = psi_gradients(k, mu, S, Z, adj);
  const double h = 1e-6;
  const auto at = [&](const KernelSpec &kk, const Matrix &m, const Matrix &s, const Matrix &z) {
    return contract(psi_statistics(kk, m, s, z), adj);
  };
  EXPECT_LE(max_rel_error(g.d_means, central_difference([&](const Matrix &m) { return at(k, m, S, Z); }, mu, h),
                          1e-4),
            tol);
  EXPECT_LE(max_rel_error(g.d_vars, central_difference([&](const Matrix &s) { return at(k, mu, s, Z); }, S, h),
                          1e-4),
            tol);
  EXPECT_LE(max_rel_error(g.d_Z, central_difference([&](const Matrix &z) { return at(k, mu, S, z); }, Z, h), 1e-4),
            tol);
  const double fdv = central_difference(
      [&](double v) {
        KernelSpec kk = k;
        kk.variance = v;
        return at(kk, mu, S, Z);
      },
      k.variance, h);
  EXPECT_LE(rel_error(g.d_variance, fdv, 1e-4), tol);
  const Matrix fdw = central_difference(
      [&](const Matrix &w) {
        KernelSpec kk = k;
        kk.weights = w;
        return at(kk, mu, S, Z);
      },
      Matrix(k.weights), h);
  EXPECT_LE(max_rel_error(g.d_weights, fdw, 1e-4), tol);
}

} // namespace

TEST(PsiGradients, MatchCentralDifferences) {
  std::mt19937_64 rng(18);
  for (auto fam : {KernelFamily::eq_ard, KernelFamily::linear_ard}) {
    for (int rep = 0; rep < 4; ++rep) {
      const KernelSpec k = random_kernel(fam, 2, rng);
      const Matrix mu = randn(4, 2, rng);
      const Matrix S = uniform(4, 2, rng, 0.1, 1.0);
      const Matrix Z = randn(3, 2, rng);
      PsiAdjoint adj;
      adj.d_psi0 = 0.7;
      adj.d_psi1 = randn(4, 3, rng);
      const Matrix G = randn(3, 3, rng);
      adj.d_psi2 = G + G.transpose();
      check_psi_gradients(k, mu, S, Z, adj, 1e-6);
    }
  }
}

TEST(PsiGradients, NonSymmetricPsi2AdjointIsHandled) {
  std::mt19937_64 rng(19);
  const KernelSpec k = random_kernel(KernelFamily::eq_ard, 2, rng);
  PsiAdjoint adj;
  adj.d_psi2 = randn(3, 3, rng);
  check_psi_gradients(k, randn(4, 2, rng), uniform(4, 2, rng, 0.1, 1.0), randn(3, 2, rng), adj, 1e-6);
}

TEST(PsiGradients, ZeroVariancePsi1GradientEqualsKernelInputGradient) {
  std::mt19937_64 rng(20);
  for (auto fam : {KernelFamily::eq_ard, KernelFamily::linear_ard}) {
    const KernelSpec k = random_kernel(fam, 2, rng);
    const Matrix mu = randn(4, 2, rng);
    const Matrix Z = randn(3, 2, rng);
    PsiAdjoint adj;
    adj.d_psi1 = randn(4, 3, rng);
    const PsiGradient g = psi_gradients(k, mu, Matrix::Zero(4, 2), Z, adj);
    const KernelGradient kg = kernel_gradients(k, mu, Z, adj.d_psi1);
    EXPECT_LE((g.d_means - kg.d_A).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((g.d_Z - kg.d_B).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(PsiGradients, EqPsi0DoesNotDependOnInducingInputs) {
  std::mt19937_64 rng(21);
  const KernelSpec k = random_kernel(KernelFamily::eq_ard, 2, rng);
  PsiAdjoint adj;
  adj.d_psi0 = 1.0;
  const PsiGradient g = psi_gradients(k, randn(4, 2, rng), uniform(4, 2, rng, 0.1, 1.0), randn(3, 2, rng), adj);
  EXPECT_EQ(g.d_Z.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.d_means.cwiseAbs().maxCoeff(), 0.0);
}
