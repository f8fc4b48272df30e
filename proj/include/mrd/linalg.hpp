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

#ifndef MRD_LINALG_HPP
#define MRD_LINALG_HPP

#include <Eigen/Dense>

#include <cmath>
#include <cstdlib>
#include <exception>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "mrd/errors.hpp"

namespace mrd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

namespace jitter {
/// First relative jitter, as a fraction of the mean diagonal.
inline constexpr double kInitial = 1e-6;
inline constexpr double kGrowth = 10.0;
inline constexpr double kMaximum = 1e-2;
} // namespace jitter

/// Cholesky factor of `K + jitter * I`.
///
/// The jitter is `rel * mean(diag(K))` where `rel` starts at 1e-6 and grows
/// by 10x on failure up to 1e-2. Because the jitter depends on the diagonal
/// of K, `chain_adjoint` maps a gradient with respect to the jittered matrix
/// back to the unjittered one.
class JitteredCholesky {
public:
  JitteredCholesky() = default;

  explicit JitteredCholesky(const Matrix &K, const std::string &what = "matrix") {
    if (K.rows() != K.cols()) {
      throw InputError(what + ": Cholesky needs a square matrix");
    }
    const Index n = K.rows();
    if (n == 0) {
      return;
    }
    double scale = K.diagonal().mean();
    if (!std::isfinite(scale)) {
      throw NumericalError(what + ": non-finite diagonal");
    }
    if (scale <= 0.0) {
      scale = 1.0;
    }
    for (double rel = jitter::kInitial; rel <= jitter::kMaximum * (1.0 + 1e-12);
         rel *= jitter::kGrowth) {
      Matrix A = K;
      A.diagonal().array() += rel * scale;
      llt_.compute(A);
      if (llt_.info() == Eigen::Success && llt_.matrixLLT().diagonal().allFinite()) {
        relative_ = rel;
        jitter_ = rel * scale;
        ok_ = true;
        break;
      }
    }
    if (!ok_) {
      throw NumericalError(what + ": Cholesky failed after jitter escalation to 1e-2");
    }
  }

  Index size() const { return llt_.rows(); }
  double jitter_applied() const { return jitter_; }
  double relative_jitter() const { return relative_; }

  Matrix L() const { return llt_.matrixL(); }

  template <typename Rhs> Matrix solve(const Eigen::MatrixBase<Rhs> &B) const {
    return llt_.solve(B.derived());
  }

  /// L^{-1} B
  template <typename Rhs> Matrix solve_lower(const Eigen::MatrixBase<Rhs> &B) const {
    return llt_.matrixL().solve(B.derived());
  }

  /// L^{-T} B
  template <typename Rhs> Matrix solve_upper(const Eigen::MatrixBase<Rhs> &B) const {
    return llt_.matrixU().solve(B.derived());
  }

  /// L^{-T} M L^{-1} for symmetric M, the inverse of the whitening map.
  Matrix unwhiten(const Matrix &M) const {
    const Matrix X = solve_upper(M);
    return symmetrize_(solve_upper(X.transpose()));
  }

  Matrix inverse() const {
    return llt_.solve(Matrix::Identity(size(), size()));
  }

  double log_det() const {
    if (size() == 0) {
      return 0.0;
    }
    return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
  }

  /// Gradient w.r.t. the unjittered matrix given the gradient `G` w.r.t. the
  /// jittered one. The jitter contributes `rel * tr(G) / n` to each diagonal
  /// entry.
  Matrix chain_adjoint(const Matrix &G) const {
    Matrix out = G;
    if (size() > 0) {
      out.diagonal().array() += relative_ * G.trace() / static_cast<double>(size());
    }
    return out;
  }

private:
  static Matrix symmetrize_(const Matrix &M) { return 0.5 * (M + M.transpose()); }

  Eigen::LLT<Matrix> llt_;
  double jitter_ = 0.0;
  double relative_ = 0.0;
  bool ok_ = false;
};

/// Worker cap from MRD_THREADS; 0 or unset means hardware concurrency.
inline unsigned worker_count() {
  unsigned hw = std::thread::hardware_concurrency();
  if (hw == 0) {
    hw = 1;
  }
  if (const char *env = std::getenv("MRD_THREADS")) {
    char *end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) {
      return static_cast<unsigned>(v) < hw ? static_cast<unsigned>(v) : hw;
    }
  }
  return hw;
}

/// Runs `task(i)` for i in [0, count). Tasks must write to disjoint outputs;
/// callers reduce results in index order so the outcome does not depend on
/// how tasks were distributed.
inline void parallel_for(Index count, const std::function<void(Index)> &task) {
  const unsigned workers = worker_count();
  if (workers <= 1 || count <= 1) {
    for (Index i = 0; i < count; ++i) {
      task(i);
    }
    return;
  }
  const unsigned used = static_cast<unsigned>(std::min<Index>(workers, count));
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(used);
  pool.reserve(used);
  for (unsigned w = 0; w < used; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (Index i = w; i < count; i += used) {
          task(i);
        }
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto &t : pool) {
    t.join();
  }
  for (auto &e : errors) {
    if (e) {
      std::rethrow_exception(e);
    }
  }
}

inline bool all_finite(const Matrix &M) { return M.allFinite(); }

inline Matrix symmetrize(const Matrix &M) { return 0.5 * (M + M.transpose()); }

} // namespace mrd

#endif
