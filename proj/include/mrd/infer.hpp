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

#ifndef MRD_INFER_HPP
#define MRD_INFER_HPP

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mrd/model.hpp"

namespace mrd {

/// Test rows for a subset of views, keyed by view index, in the original
/// (uncentered) units. All matrices have the same number of rows.
using ObservedViews = std::map<Index, Matrix>;

struct TestPosterior {
  DiagLatentPosterior marginals;                ///< per-point means and variances (n* x q)
  std::optional<CoupledLatentPosterior> joint;  ///< train + test, dynamical inference only
  std::vector<Index> init_rows;                 ///< training row each point started from
  std::vector<double> bounds;                   ///< final objective per point (or one joint value)

  Index rows() const { return marginals.means.rows(); }
};

struct InferOptions {
  int max_iters = 300;
  double grad_tol = 1e-6;
  double init_variance = 0.5;
};

namespace detail {

struct ObservedCentered {
  std::vector<Index> views;
  std::vector<Matrix> data;
  Index rows = 0;
};

inline ObservedCentered center_observed(const MrdModel &model, const ObservedViews &observed) {
  if (observed.empty()) {
    throw InputError("no observed views given");
  }
  ObservedCentered out;
  out.rows = observed.begin()->second.rows();
  for (const auto &[k, Y] : observed) {
    if (k < 0 || k >= model.num_views()) {
      throw InputError("view index " + std::to_string(k) + " out of range");
    }
    const ViewModel &v = model.views[static_cast<size_t>(k)];
    if (Y.rows() != out.rows) {
      throw AlignmentError("observed views have different row counts");
    }
    if (Y.cols() != v.outputs()) {
      throw InputError("observed view " + model.view_names[static_cast<size_t>(k)] + " has " +
                       std::to_string(Y.cols()) + " columns, model expects " + std::to_string(v.outputs()));
    }
    if (!Y.allFinite()) {
      throw InputError("observed view " + model.view_names[static_cast<size_t>(k)] + " contains NaN or Inf");
    }
    out.views.push_back(k);
    Matrix c = Y;
    c.rowwise() -= model.offsets[static_cast<size_t>(k)].transpose();
    out.data.push_back(std::move(c));
  }
  return out;
}

/// Training row closest to each test row, with each view's squared distance
/// scaled by its column count and variance. Ties go to the lowest index.
inline std::vector<Index> nearest_training_rows(const MrdModel &model, const ObservedCentered &obs) {
  std::vector<Index> out(static_cast<size_t>(obs.rows), 0);
  const Index n = model.rows();
  Matrix dist = Matrix::Zero(obs.rows, n);
  for (size_t e = 0; e < obs.views.size(); ++e) {
    const Matrix &Y = model.views[static_cast<size_t>(obs.views[e])].data;
    const double scale = static_cast<double>(Y.size()) * view_variance(Y) / static_cast<double>(Y.rows());
    const Matrix &T = obs.data[e];
    const Matrix cross = T * Y.transpose();
    const Vector tn = T.rowwise().squaredNorm();
    const Vector yn = Y.rowwise().squaredNorm();
    for (Index i = 0; i < obs.rows; ++i) {
      for (Index r = 0; r < n; ++r) {
        dist(i, r) += (tn(i) + yn(r) - 2.0 * cross(i, r)) / scale;
      }
    }
  }
  for (Index i = 0; i < obs.rows; ++i) {
    Index best = 0;
    for (Index r = 1; r < n; ++r) {
      if (dist(i, r) < dist(i, best)) {
        best = r;
      }
    }
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

/// Prior variance of a single test point: the stationary variance of the
/// temporal kernel, or 1.
inline double test_prior_variance(const MrdModel &model) {
  return model.dynamical() ? model.prior.temporal_kernel.variance : 1.0;
}

inline void require_trained(const MrdModel &model) {
  if (!model.trained) {
    throw UsageError("inference needs a trained model");
  }
}

/// Training-time statistics of the observed views, frozen, plus the
/// objective for a single test point in (means, log variances).
class FrozenStatistics {
public:
  FrozenStatistics(const MrdModel &model, const std::vector<Index> &view_ids) {
    const auto [means, vars] = model.latent_moments();
    for (Index k : view_ids) {
      const ViewModel &v = model.views[static_cast<size_t>(k)];
      const PsiStatistics psi = psi_statistics(v.kernel, means, vars, v.inducing);
      entries_.push_back({&v, make_view_stats(v.data, psi),
                          JitteredCholesky(cov_matrix(v.kernel, v.inducing).values, "K_uu")});
    }
  }

  /// `rows[e]` is the centered 1 x p_k test row of the e-th view.
  Objective point_objective(std::vector<Matrix> rows, double prior_var) const {
    return [this, rows = std::move(rows), prior_var](const Vector &x, Vector &grad) {
      const Index q = x.size() / 2;
      const Matrix mu = x.head(q).transpose();
      const Matrix s = transform(Transform::log, x.tail(q)).transpose();
      const DiagLatentPosterior point{mu, s};
      double value = -kl_isotropic(point, prior_var);
      const DiagKLGradient klg = kl_isotropic_gradient(point, prior_var);
      Matrix d_mu = -klg.d_means;
      Matrix d_s = -klg.d_vars;
      for (size_t e = 0; e < entries_.size(); ++e) {
        const Entry &f = entries_[e];
        const Matrix &y = rows[e];
        const PsiStatistics ps = psi_statistics(f.view->kernel, mu, s, f.view->inducing);
        ViewStats aug = f.stats;
        aug.n += 1.0;
        aug.yy += y.squaredNorm();
        aug.psi0 += ps.psi0;
        aug.c += ps.psi1.transpose() * y;
        aug.psi2 += ps.psi2;
        ViewStatsAdjoint adj;
        value += collapsed_view_bound(aug, f.chol, f.view->noise_precision, &adj);
        PsiAdjoint padj;
        padj.d_psi0 = adj.d_psi0;
        padj.d_psi1 = y * adj.d_c.transpose();
        padj.d_psi2 = adj.d_psi2;
        const PsiGradient pg = psi_gradients(f.view->kernel, mu, s, f.view->inducing, padj);
        d_mu += pg.d_means;
        d_s += pg.d_vars;
      }
      grad.resize(2 * q);
      grad.head(q) = d_mu.transpose();
      grad.tail(q) = (d_s.array() * s.array()).matrix().transpose();
      return value;
    };
  }

private:
  struct Entry {
    const ViewModel *view;
    ViewStats stats;
    JitteredCholesky chol;
  };
  std::vector<Entry> entries_;
};

} // namespace detail

/// Infers q(x*) for every test row independently by maximizing the augmented
/// bound: the observed views' training statistics are held fixed and the
/// test row's statistics are added, with all model parameters frozen.
inline TestPosterior infer_latent(const MrdModel &model, const ObservedViews &observed,
                                  const InferOptions &opt = {}) {
  detail::require_trained(model);
  const detail::ObservedCentered obs = detail::center_observed(model, observed);
  const Index q = model.q;
  const Index ns = obs.rows;
  TestPosterior out;
  out.marginals.means.resize(ns, q);
  out.marginals.variances.resize(ns, q);
  out.bounds.assign(static_cast<size_t>(ns), 0.0);
  if (ns == 0) {
    return out;
  }
  out.init_rows = detail::nearest_training_rows(model, obs);

  const auto [train_means, train_vars] = model.latent_moments();
  const detail::FrozenStatistics frozen(model, obs.views);
  const double prior_var = detail::test_prior_variance(model);

  parallel_for(ns, [&](Index i) {
    ParamLayout layout;
    layout.add(groups::means, q, Transform::identity);
    layout.add(groups::log_variances, q, Transform::log);
    ParamVector x0{Vector::Zero(2 * q), layout};
    x0.set_constrained(groups::means, train_means.row(out.init_rows[static_cast<size_t>(i)]).transpose());
    x0.set_constrained(groups::log_variances, Vector::Constant(q, opt.init_variance));
    std::vector<Matrix> rows;
    for (const auto &Y : obs.data) {
      rows.push_back(Y.row(i));
    }
    const Objective objective = frozen.point_objective(rows, prior_var);
    OptConfig cfg;
    cfg.max_iters = opt.max_iters;
    cfg.grad_tol = opt.grad_tol;
    const OptResult r = maximize(objective, x0, cfg);
    out.marginals.means.row(i) = r.x.constrained(groups::means).transpose();
    out.marginals.variances.row(i) = r.x.constrained(groups::log_variances).transpose();
    out.bounds[static_cast<size_t>(i)] = r.trace.objective.back();
  });
  return out;
}

namespace detail {

/// Coupled train + test posterior problem for dynamical inference. The free
/// parameters are the test rows' means and log lambdas.
struct DynamicalProblem {
  Index n = 0;
  Index ns = 0;
  Index q = 0;
  CoupledLatentPosterior train;
  Matrix Kt;
  std::vector<ViewModel> views;
  std::vector<Index> view_rows;
  ParamLayout layout;

  DynamicalProblem(const MrdModel &model, const ObservedCentered &obs, const Vector &test_times,
                   const std::vector<int> &test_seq)
      : n(model.rows()), ns(obs.rows), q(model.q), train(std::get<CoupledLatentPosterior>(model.posterior)),
        views(model.views), view_rows(model.views.size(), model.rows()) {
    Vector times(n + ns);
    times << model.prior.timestamps, test_times;
    std::vector<int> seq = model.prior.seq_ids;
    seq.insert(seq.end(), test_seq.begin(), test_seq.end());
    Kt = LatentPrior::temporal(model.prior.temporal_kernel, times, seq).gram().values;
    // Observed views see train and test rows; the rest only training rows.
    for (size_t e = 0; e < obs.views.size(); ++e) {
      const auto k = static_cast<size_t>(obs.views[e]);
      Matrix Y(n + ns, views[k].outputs());
      Y << views[k].data, obs.data[e];
      views[k].data = std::move(Y);
      view_rows[k] = n + ns;
    }
    layout.add(groups::means, ns * q, Transform::identity);
    layout.add(groups::log_lambdas, ns * q, Transform::log);
  }

  ParamVector start(const Matrix &means, const Matrix &lambdas) const {
    ParamVector x{Vector::Zero(layout.total_size()), layout};
    x.set_constrained(groups::means, flatten(means));
    x.set_constrained(groups::log_lambdas, flatten(lambdas));
    return x;
  }

  CoupledLatentPosterior assemble(const Vector &x) const {
    const Index N = n + ns;
    CoupledLatentPosterior post;
    post.means.resize(N, q);
    post.lambdas.resize(N, q);
    post.means.topRows(n) = train.means;
    post.lambdas.topRows(n) = train.lambdas;
    post.means.bottomRows(ns) = unflatten(x.head(ns * q), ns, q);
    post.lambdas.bottomRows(ns) = unflatten(transform(Transform::log, x.tail(ns * q)), ns, q);
    return post;
  }

  Objective objective() const {
    return [this](const Vector &x, Vector &grad) {
      const Index N = n + ns;
      const CoupledLatentPosterior post = assemble(x);
      const CoupledFactors factors(post, Kt);
      const Matrix &vars = factors.variances();
      std::vector<double> values(views.size(), 0.0);
      std::vector<ViewGradient> vg(views.size());
      parallel_for(static_cast<Index>(views.size()), [&](Index k) {
        const auto ku = static_cast<size_t>(k);
        const Index r = view_rows[ku];
        values[ku] = view_bound(views[ku], post.means.topRows(r), vars.topRows(r), &vg[ku]);
      });
      Matrix d_means = Matrix::Zero(N, q);
      Matrix d_vars = Matrix::Zero(N, q);
      double value = -kl_temporal(post, factors);
      for (size_t k = 0; k < views.size(); ++k) {
        const Index r = view_rows[k];
        value += values[k];
        d_means.topRows(r) += vg[k].d_means;
        d_vars.topRows(r) += vg[k].d_vars;
      }
      const TemporalGradient tg = coupled_gradient(post, factors, d_vars, -1.0);
      d_means += tg.d_means;
      grad.resize(2 * ns * q);
      grad.head(ns * q) = flatten(d_means.bottomRows(ns));
      grad.tail(ns * q) = flatten(tg.d_lambdas.bottomRows(ns).cwiseProduct(post.lambdas.bottomRows(ns)));
      return value;
    };
  }
};

} // namespace detail

/// Dynamical test-time inference: a coupled posterior over training and test
/// rows under the temporal prior, optimizing only the test rows' means and
/// lambdas. Test rows form one new sequence unless `test_seq` says otherwise.
inline TestPosterior infer_latent_dynamical(const MrdModel &model, const ObservedViews &observed,
                                            const Vector &test_times, std::vector<int> test_seq = {},
                                            const InferOptions &opt = {}) {
  detail::require_trained(model);
  if (!model.dynamical()) {
    throw UsageError("dynamical inference needs a model trained with a temporal prior");
  }
  const detail::ObservedCentered obs = detail::center_observed(model, observed);
  const Index ns = obs.rows;
  const Index q = model.q;
  if (test_times.size() != ns) {
    throw AlignmentError("test timestamps have " + std::to_string(test_times.size()) + " rows, observed views have " +
                         std::to_string(ns));
  }
  if (test_seq.empty()) {
    const int fresh = *std::max_element(model.prior.seq_ids.begin(), model.prior.seq_ids.end()) + 1;
    test_seq.assign(static_cast<size_t>(ns), fresh);
  } else if (static_cast<Index>(test_seq.size()) != ns) {
    throw AlignmentError("test sequence labels do not match the observed rows");
  }
  TestPosterior out;
  out.marginals.means.resize(ns, q);
  out.marginals.variances.resize(ns, q);
  if (ns == 0) {
    return out;
  }
  out.init_rows = detail::nearest_training_rows(model, obs);
  const detail::DynamicalProblem problem(model, obs, test_times, test_seq);
  Matrix mu0(ns, q);
  for (Index i = 0; i < ns; ++i) {
    mu0.row(i) = problem.train.means.row(out.init_rows[static_cast<size_t>(i)]);
  }
  OptConfig cfg;
  cfg.max_iters = opt.max_iters;
  cfg.grad_tol = opt.grad_tol;
  const OptResult r = maximize(problem.objective(), problem.start(mu0, Matrix::Ones(ns, q)), cfg);
  const CoupledLatentPosterior post = problem.assemble(r.x.values);
  const CoupledFactors factors(post, problem.Kt);
  out.marginals.means = post.means.bottomRows(ns);
  out.marginals.variances = factors.variances().bottomRows(ns);
  out.bounds = {r.trace.objective.back()};
  out.joint = post;
  return out;
}

inline PredictiveMoments predict_view(const MrdModel &model, const DiagLatentPosterior &post, Index k,
                                      bool cross_covariance = false) {
  detail::require_trained(model);
  if (post.means.cols() != model.q) {
    throw InputError("test posterior has the wrong latent dimensionality");
  }
  return make_predictor(model, k).predict(post.means, post.variances, cross_covariance);
}

inline PredictiveMoments predict_view(const MrdModel &model, const TestPosterior &post, Index k,
                                      bool cross_covariance = false) {
  return predict_view(model, post.marginals, k, cross_covariance);
}

/// Elementwise sign of the predictive mean of view k, ties mapped to +1.
inline Matrix predict_labels(const MrdModel &model, const TestPosterior &post, Index k, double threshold = 0.0) {
  const Matrix mean = predict_view(model, post, k).mean;
  return (mean.array() >= threshold).select(Matrix::Ones(mean.rows(), mean.cols()),
                                            -Matrix::Ones(mean.rows(), mean.cols()));
}

/// Column of the largest predictive mean per row of view k, i.e. the class
/// under a one-hot label coding.
inline std::vector<int> predict_classes(const MrdModel &model, const TestPosterior &post, Index k) {
  const Matrix mean = predict_view(model, post, k).mean;
  std::vector<int> out(static_cast<size_t>(mean.rows()), 0);
  for (Index i = 0; i < mean.rows(); ++i) {
    Index arg = 0;
    mean.row(i).maxCoeff(&arg);
    out[static_cast<size_t>(i)] = static_cast<int>(arg);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Hybrid prediction

/// How the dimensions private to the target views are filled in.
enum class FillMode {
  nearest_neighbour, ///< copy from the training neighbour (the default)
  blend,             ///< weight test and neighbour values by relative relevance
  prior,             ///< take the prior N(0, 1)
};

inline std::string to_string(FillMode m) {
  switch (m) {
  case FillMode::nearest_neighbour:
    return "nearest_neighbour";
  case FillMode::blend:
    return "blend";
  case FillMode::prior:
    return "prior";
  }
  return "unknown";
}

inline FillMode fill_mode_from_string(const std::string &s) {
  if (s == "nearest_neighbour" || s == "nn") {
    return FillMode::nearest_neighbour;
  }
  if (s == "blend") {
    return FillMode::blend;
  }
  if (s == "prior") {
    return FillMode::prior;
  }
  throw InputError("unknown fill mode " + s);
}

struct HybridOptions {
  Index k_nn = 1;
  FillMode fill = FillMode::nearest_neighbour;
  InferOptions infer;
};

struct HybridCandidate {
  Index neighbour = 0;                 ///< training row
  double distance = 0.0;               ///< in the shared dimensions
  DiagLatentPosterior posterior;       ///< 1 x q hybrid posterior
  std::map<Index, Matrix> predictions; ///< target view -> 1 x p predictive mean
  std::map<Index, Matrix> variances;   ///< target view -> 1 x p predictive variance
};

struct HybridResult {
  TestPosterior test;
  std::vector<std::vector<HybridCandidate>> candidates; ///< per test row, by neighbour rank

  /// Rank-`rank` predictions of view k stacked over test rows.
  Matrix predictions(Index k, size_t rank = 0) const {
    if (candidates.empty()) {
      return Matrix();
    }
    const Matrix &first = candidates.front().at(rank).predictions.at(k);
    Matrix out(static_cast<Index>(candidates.size()), first.cols());
    for (size_t i = 0; i < candidates.size(); ++i) {
      out.row(static_cast<Index>(i)) = candidates[i].at(rank).predictions.at(k);
    }
    return out;
  }
};

/// Given test rows for the views in `observed` (set A), predicts the
/// `targets` views (set B): infer q(x*), rank training points by distance in
/// the shared dimensions, and replace the B-private dimensions of x* with
/// each neighbour's.
inline HybridResult hybrid_predict(const MrdModel &model, const ObservedViews &observed, const Segmentation &seg,
                                   const std::vector<Index> &targets, const HybridOptions &opt = {}) {
  detail::require_trained(model);
  if (seg.shared.empty()) {
    throw InputError("degenerate segmentation: no latent dimension is shared between the view sets");
  }
  if (opt.k_nn < 1 || opt.k_nn > model.rows()) {
    throw InputError("K_nn = " + std::to_string(opt.k_nn) + " must lie in [1, " + std::to_string(model.rows()) + "]");
  }
  if (targets.empty()) {
    throw InputError("no target views given");
  }
  HybridResult out;
  out.test = infer_latent(model, observed, opt.infer);
  const auto [train_means, train_vars] = model.latent_moments();
  const Index ns = out.test.rows();
  const Index n = model.rows();
  const Index q = model.q;

  // Relative relevance of A and B per dimension, for the blend mode.
  Vector relevance_A = Vector::Zero(q);
  Vector relevance_B = Vector::Zero(q);
  for (const auto &[k, Y] : observed) {
    relevance_A = relevance_A.cwiseMax(seg.normalized_weights.row(k).transpose());
  }
  for (Index k : targets) {
    relevance_B = relevance_B.cwiseMax(seg.normalized_weights.row(k).transpose());
  }

  std::vector<ViewPredictor> predictors;
  for (Index k : targets) {
    predictors.push_back(make_predictor(model, k));
  }
  out.candidates.resize(static_cast<size_t>(ns));
  for (Index i = 0; i < ns; ++i) {
    std::vector<std::pair<double, Index>> ranked;
    ranked.reserve(static_cast<size_t>(n));
    for (Index r = 0; r < n; ++r) {
      double d = 0.0;
      for (Index j : seg.shared) {
        const double diff = out.test.marginals.means(i, j) - train_means(r, j);
        d += diff * diff;
      }
      ranked.emplace_back(d, r);
    }
    std::partial_sort(ranked.begin(), ranked.begin() + opt.k_nn, ranked.end());
    for (Index c = 0; c < opt.k_nn; ++c) {
      const auto [d2, r] = ranked[static_cast<size_t>(c)];
      HybridCandidate cand;
      cand.neighbour = r;
      cand.distance = std::sqrt(d2);
      cand.posterior.means = out.test.marginals.means.row(i);
      cand.posterior.variances = out.test.marginals.variances.row(i);
      const auto fill = [&](Index j) {
        switch (opt.fill) {
        case FillMode::nearest_neighbour:
          cand.posterior.means(0, j) = train_means(r, j);
          cand.posterior.variances(0, j) = train_vars(r, j);
          break;
        case FillMode::blend: {
          const double total = relevance_A(j) + relevance_B(j);
          const double a = total > 0.0 ? relevance_A(j) / total : 0.0;
          cand.posterior.means(0, j) = a * out.test.marginals.means(i, j) + (1.0 - a) * train_means(r, j);
          cand.posterior.variances(0, j) =
              a * out.test.marginals.variances(i, j) + (1.0 - a) * train_vars(r, j);
          break;
        }
        case FillMode::prior:
          cand.posterior.means(0, j) = 0.0;
          cand.posterior.variances(0, j) = 1.0;
          break;
        }
      };
      for (Index j : seg.private_B) {
        fill(j);
      }
      if (opt.fill == FillMode::blend) {
        for (Index j : seg.shared) {
          fill(j);
        }
      }
      for (size_t t = 0; t < targets.size(); ++t) {
        const PredictiveMoments pm = predictors[t].predict(cand.posterior.means, cand.posterior.variances);
        cand.predictions[targets[t]] = pm.mean;
        cand.variances[targets[t]] = pm.variance;
      }
      out.candidates[static_cast<size_t>(i)].push_back(std::move(cand));
    }
  }
  return out;
}

} // namespace mrd

#endif
