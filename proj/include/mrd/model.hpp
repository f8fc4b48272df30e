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

#ifndef MRD_MODEL_HPP
#define MRD_MODEL_HPP

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "mrd/bound.hpp"
#include "mrd/optim.hpp"

namespace mrd {

/// K views aligned by row, with optional timestamps and sequence labels.
/// `offsets[k]` holds the column means removed at ingestion (zeros when the
/// data were not centered).
struct MultiViewDataset {
  std::vector<Matrix> views;
  std::vector<std::string> view_names;
  std::optional<Vector> timestamps;
  std::optional<std::vector<int>> seq_ids;
  std::vector<Vector> offsets;

  Index rows() const { return views.empty() ? 0 : views.front().rows(); }
  Index num_views() const { return static_cast<Index>(views.size()); }
  Index total_columns() const {
    Index p = 0;
    for (const auto &v : views) {
      p += v.cols();
    }
    return p;
  }

  void validate() const {
    if (views.empty()) {
      throw InputError("dataset has no views");
    }
    if (view_names.size() != views.size() || offsets.size() != views.size()) {
      throw InputError("dataset view names/offsets do not match the number of views");
    }
    std::string counts;
    bool aligned = true;
    for (size_t k = 0; k < views.size(); ++k) {
      counts += (k ? ", " : "") + view_names[k] + "=" + std::to_string(views[k].rows());
      aligned = aligned && views[k].rows() == rows();
    }
    if (!aligned) {
      throw AlignmentError("views have different row counts: " + counts);
    }
    for (size_t k = 0; k < views.size(); ++k) {
      if (!views[k].allFinite()) {
        throw InputError("view " + view_names[k] + " contains NaN or Inf");
      }
      if (offsets[k].size() != views[k].cols()) {
        throw InputError("offset length does not match view " + view_names[k]);
      }
    }
    if (timestamps && timestamps->size() != rows()) {
      throw AlignmentError("timestamps have " + std::to_string(timestamps->size()) + " rows, views have " +
                           std::to_string(rows()));
    }
    if (seq_ids && static_cast<Index>(seq_ids->size()) != rows()) {
      throw AlignmentError("sequence labels have " + std::to_string(seq_ids->size()) + " rows, views have " +
                           std::to_string(rows()));
    }
  }

  /// Builds a dataset from raw views, optionally removing column means.
  static MultiViewDataset from_views(std::vector<Matrix> raw, std::vector<std::string> names = {},
                                     bool center = true) {
    MultiViewDataset ds;
    if (names.empty()) {
      for (size_t k = 0; k < raw.size(); ++k) {
        names.push_back("view" + std::to_string(k));
      }
    }
    ds.view_names = std::move(names);
    ds.views = std::move(raw);
    for (auto &v : ds.views) {
      Vector mean = Vector::Zero(v.cols());
      if (center && v.rows() > 0) {
        mean = v.colwise().mean().transpose();
        v.rowwise() -= mean.transpose();
      }
      ds.offsets.push_back(mean);
    }
    ds.validate();
    return ds;
  }

  /// Views with the centering offsets added back.
  Matrix raw_view(Index k) const {
    Matrix out = views[static_cast<size_t>(k)];
    out.rowwise() += offsets[static_cast<size_t>(k)].transpose();
    return out;
  }
};

/// A fitted (or freshly initialized) MRD model.
struct MrdModel {
  std::vector<ViewModel> views;
  std::vector<std::string> view_names;
  std::vector<Vector> offsets;
  LatentPosterior posterior = DiagLatentPosterior{};
  LatentPrior prior;
  Index q = 0;
  bool tie_inducing = false;
  bool trained = false;
  std::vector<double> bound_trace;
  std::string termination;

  Index rows() const { return posterior_means(posterior).rows(); }
  Index num_views() const { return static_cast<Index>(views.size()); }
  bool dynamical() const { return prior.kind == PriorKind::temporal; }

  void validate() const {
    if (views.empty()) {
      throw InputError("model has no views");
    }
    if (view_names.size() != views.size() || offsets.size() != views.size()) {
      throw InputError("model view metadata does not match the number of views");
    }
    if (posterior_means(posterior).cols() != q) {
      throw InputError("posterior has the wrong latent dimensionality");
    }
    for (const auto &v : views) {
      v.validate(q);
      if (v.rows() != rows()) {
        throw AlignmentError("view rows do not match the posterior");
      }
    }
    if (tie_inducing) {
      for (const auto &v : views) {
        if (v.inducing != views.front().inducing) {
          throw InputError("tied inducing inputs differ between views");
        }
      }
    }
  }

  BoundValue bound(BoundGradient *grad = nullptr) const { return total_bound(views, posterior, prior, grad); }

  /// Training posterior means and per-point marginal variances.
  std::pair<Matrix, Matrix> latent_moments() const {
    if (const auto *d = std::get_if<DiagLatentPosterior>(&posterior)) {
      return marginal_moments(*d);
    }
    return marginal_moments(std::get<CoupledLatentPosterior>(posterior), prior.gram().values);
  }

  Index view_index(const std::string &name) const {
    for (size_t k = 0; k < view_names.size(); ++k) {
      if (view_names[k] == name) {
        return static_cast<Index>(k);
      }
    }
    throw InputError("unknown view " + name);
  }
};

struct InitOptions {
  Index q = 0; ///< 0 selects min(10, n - 1)
  Index m = 0; ///< 0 selects min(50, n)
  PriorKind prior = PriorKind::standard_normal;
  std::vector<KernelFamily> kernels; ///< one per view; empty means eq_ard everywhere
  KernelFamily temporal_family = KernelFamily::temporal_eq;
  double temporal_lengthscale = 0.0; ///< 0 selects a tenth of the time range
  bool tie_inducing = false;
  std::uint64_t seed = 0;
};

namespace detail {

/// First q principal-component scores of the column-standardized,
/// concatenated views, each rescaled to unit variance.
inline Matrix pca_scores(const MultiViewDataset &ds, Index q) {
  const Index n = ds.rows();
  Matrix Y(n, ds.total_columns());
  Index c = 0;
  for (const auto &v : ds.views) {
    Y.middleCols(c, v.cols()) = v;
    c += v.cols();
  }
  Y.rowwise() -= Y.colwise().mean();
  const Vector sd = (Y.array().square().colwise().sum() / static_cast<double>(n)).sqrt().max(1e-8).transpose();
  Y = Y * sd.cwiseInverse().asDiagonal();
  Eigen::BDCSVD<Matrix> svd(Y, Eigen::ComputeThinU);
  Matrix scores = svd.matrixU().leftCols(q) * svd.singularValues().head(q).asDiagonal();
  for (Index j = 0; j < q; ++j) {
    // Fix the sign so the largest-magnitude entry is positive.
    Index imax = 0;
    scores.col(j).cwiseAbs().maxCoeff(&imax);
    if (scores(imax, j) < 0.0) {
      scores.col(j) *= -1.0;
    }
    const double s = std::sqrt(scores.col(j).squaredNorm() / static_cast<double>(n));
    if (s > 1e-12) {
      scores.col(j) /= s;
    }
  }
  return scores;
}

/// m distinct row indices in [0, n), drawn by a seeded partial shuffle.
inline std::vector<Index> random_subset(Index n, Index m, std::mt19937_64 &rng) {
  std::vector<Index> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  for (Index i = 0; i < m; ++i) {
    const auto span = static_cast<std::uint64_t>(n - i);
    const Index j = i + static_cast<Index>(rng() % span);
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  idx.resize(static_cast<size_t>(m));
  return idx;
}

inline double view_variance(const Matrix &Y) {
  if (Y.rows() == 0) {
    return 1.0;
  }
  const Matrix c = Y.rowwise() - Y.colwise().mean();
  return std::max(c.squaredNorm() / static_cast<double>(Y.size()), 1e-8);
}

} // namespace detail

inline MrdModel init_model(const MultiViewDataset &ds, const InitOptions &opt) {
  ds.validate();
  const Index n = ds.rows();
  const Index q = opt.q > 0 ? opt.q : std::max<Index>(1, std::min<Index>(10, n - 1));
  const Index m = opt.m > 0 ? opt.m : std::min<Index>(50, n);
  if (q < 1 || q > std::min(n - 1, ds.total_columns())) {
    throw InputError("q = " + std::to_string(q) + " must lie in [1, min(n - 1, total columns) = " +
                     std::to_string(std::min(n - 1, ds.total_columns())) + "]");
  }
  if (m < 1 || m > n) {
    throw InputError("m = " + std::to_string(m) + " must lie in [1, n = " + std::to_string(n) + "]");
  }
  if (!opt.kernels.empty() && static_cast<Index>(opt.kernels.size()) != ds.num_views()) {
    throw InputError("one kernel family per view is required");
  }

  MrdModel model;
  model.q = q;
  model.view_names = ds.view_names;
  model.offsets = ds.offsets;
  model.tie_inducing = opt.tie_inducing;
  const Matrix means = detail::pca_scores(ds, q);

  std::mt19937_64 rng(opt.seed);
  std::vector<Index> shared_subset;
  if (opt.tie_inducing) {
    shared_subset = detail::random_subset(n, m, rng);
  }
  for (Index k = 0; k < ds.num_views(); ++k) {
    const auto ku = static_cast<size_t>(k);
    ViewModel v;
    v.data = ds.views[ku];
    const KernelFamily fam = opt.kernels.empty() ? KernelFamily::eq_ard : opt.kernels[ku];
    if (fam != KernelFamily::eq_ard && fam != KernelFamily::linear_ard) {
      throw InputError("view kernels must be eq_ard or linear_ard");
    }
    const double var = detail::view_variance(v.data);
    v.kernel = {fam, var, Vector::Constant(q, 1.0 / static_cast<double>(q)), 1.0};
    const std::vector<Index> subset = opt.tie_inducing ? shared_subset : detail::random_subset(n, m, rng);
    v.inducing.resize(m, q);
    for (Index i = 0; i < m; ++i) {
      v.inducing.row(i) = means.row(subset[static_cast<size_t>(i)]);
    }
    v.noise_precision = 100.0 / var;
    model.views.push_back(std::move(v));
  }

  if (opt.prior == PriorKind::temporal) {
    if (!ds.timestamps) {
      throw InputError("a temporal prior needs timestamps");
    }
    const Vector &t = *ds.timestamps;
    double l = opt.temporal_lengthscale;
    if (l <= 0.0) {
      const double range = n > 1 ? t.maxCoeff() - t.minCoeff() : 1.0;
      l = range > 0.0 ? 0.1 * range : 1.0;
    }
    if (!is_temporal(opt.temporal_family)) {
      throw InputError("temporal prior needs a temporal kernel family");
    }
    std::vector<int> seq = ds.seq_ids ? *ds.seq_ids : std::vector<int>(static_cast<size_t>(n), 0);
    model.prior = LatentPrior::temporal(KernelSpec::temporal(opt.temporal_family, 1.0, l), t, seq);
    model.posterior = CoupledLatentPosterior{means, Matrix::Ones(n, q)};
  } else {
    model.prior = LatentPrior::standard_normal();
    model.posterior = DiagLatentPosterior{means, Matrix::Constant(n, q, 0.5)};
  }
  model.validate();
  return model;
}

inline MrdModel init_model(const MultiViewDataset &ds, Index q, Index m, PriorKind prior, std::uint64_t seed) {
  InitOptions opt;
  opt.q = q;
  opt.m = m;
  opt.prior = prior;
  opt.seed = seed;
  return init_model(ds, opt);
}

// ---------------------------------------------------------------------------
// Flat parameterization

namespace groups {
inline const std::string means = "means";
inline const std::string log_variances = "log_variances";
inline const std::string log_lambdas = "log_lambdas";
inline const std::string inducing_tied = "inducing";
inline const std::string temporal_log_variance = "temporal_log_variance";
inline const std::string temporal_log_lengthscale = "temporal_log_lengthscale";
inline std::string inducing(Index k) { return "inducing[" + std::to_string(k) + "]"; }
inline std::string log_kernel_variance(Index k) { return "log_kernel_variance[" + std::to_string(k) + "]"; }
inline std::string log_weights(Index k) { return "log_weights[" + std::to_string(k) + "]"; }
inline std::string log_beta(Index k) { return "log_beta[" + std::to_string(k) + "]"; }
} // namespace groups

namespace detail {

inline Vector flatten(const Matrix &M) { return Eigen::Map<const Vector>(M.data(), M.size()); }

inline Matrix unflatten(const Eigen::Ref<const Vector> &v, Index rows, Index cols) {
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

} // namespace detail

inline ParamVector pack_parameters(const MrdModel &model) {
  ParamVector p;
  const Index n = model.rows();
  const Index q = model.q;
  p.layout.add(groups::means, n * q, Transform::identity);
  const bool coupled = std::holds_alternative<CoupledLatentPosterior>(model.posterior);
  p.layout.add(coupled ? groups::log_lambdas : groups::log_variances, n * q, Transform::log);
  if (model.tie_inducing) {
    p.layout.add(groups::inducing_tied, model.views.front().inducing.size(), Transform::identity);
  }
  for (Index k = 0; k < model.num_views(); ++k) {
    const ViewModel &v = model.views[static_cast<size_t>(k)];
    if (!model.tie_inducing) {
      p.layout.add(groups::inducing(k), v.inducing.size(), Transform::identity);
    }
    p.layout.add(groups::log_kernel_variance(k), 1, Transform::log);
    p.layout.add(groups::log_weights(k), q, Transform::log);
    p.layout.add(groups::log_beta(k), 1, Transform::log);
  }
  if (model.dynamical()) {
    p.layout.add(groups::temporal_log_variance, 1, Transform::log);
    p.layout.add(groups::temporal_log_lengthscale, 1, Transform::log);
  }
  p.values = Vector::Zero(p.layout.total_size());
  p.set_constrained(groups::means, detail::flatten(posterior_means(model.posterior)));
  if (coupled) {
    p.set_constrained(groups::log_lambdas, detail::flatten(std::get<CoupledLatentPosterior>(model.posterior).lambdas));
  } else {
    p.set_constrained(groups::log_variances,
                      detail::flatten(std::get<DiagLatentPosterior>(model.posterior).variances));
  }
  if (model.tie_inducing) {
    p.set_constrained(groups::inducing_tied, detail::flatten(model.views.front().inducing));
  }
  for (Index k = 0; k < model.num_views(); ++k) {
    const ViewModel &v = model.views[static_cast<size_t>(k)];
    if (!model.tie_inducing) {
      p.set_constrained(groups::inducing(k), detail::flatten(v.inducing));
    }
    p.set_constrained(groups::log_kernel_variance(k), Vector::Constant(1, v.kernel.variance));
    // Weights live on the log scale; exact zeros are floored so the
    // transform stays defined.
    p.set_constrained(groups::log_weights(k), v.kernel.weights.cwiseMax(1e-300));
    p.set_constrained(groups::log_beta(k), Vector::Constant(1, v.noise_precision));
  }
  if (model.dynamical()) {
    p.set_constrained(groups::temporal_log_variance, Vector::Constant(1, model.prior.temporal_kernel.variance));
    p.set_constrained(groups::temporal_log_lengthscale,
                      Vector::Constant(1, model.prior.temporal_kernel.temporal_lengthscale));
  }
  return p;
}

/// Writes a parameter vector produced by pack_parameters back into a model,
/// leaving the groups named in `keep` untouched.
inline void unpack_parameters(MrdModel &model, const ParamVector &p, const std::set<std::string> &keep = {}) {
  const auto take = [&](const std::string &name) { return keep.count(name) == 0; };
  const Index n = model.rows();
  const Index q = model.q;
  if (take(groups::means)) {
    posterior_means(model.posterior) = detail::unflatten(p.constrained(groups::means), n, q);
  }
  if (auto *c = std::get_if<CoupledLatentPosterior>(&model.posterior)) {
    if (take(groups::log_lambdas)) {
      c->lambdas = detail::unflatten(p.constrained(groups::log_lambdas), n, q);
    }
  } else if (take(groups::log_variances)) {
    std::get<DiagLatentPosterior>(model.posterior).variances =
        detail::unflatten(p.constrained(groups::log_variances), n, q);
  }
  for (Index k = 0; k < model.num_views(); ++k) {
    ViewModel &v = model.views[static_cast<size_t>(k)];
    const std::string z = model.tie_inducing ? groups::inducing_tied : groups::inducing(k);
    if (take(z)) {
      v.inducing = detail::unflatten(p.constrained(z), v.num_inducing(), q);
    }
    if (take(groups::log_kernel_variance(k))) {
      v.kernel.variance = p.constrained(groups::log_kernel_variance(k))(0);
    }
    if (take(groups::log_weights(k))) {
      v.kernel.weights = p.constrained(groups::log_weights(k));
    }
    if (take(groups::log_beta(k))) {
      v.noise_precision = p.constrained(groups::log_beta(k))(0);
    }
  }
  if (model.dynamical()) {
    if (take(groups::temporal_log_variance)) {
      model.prior.temporal_kernel.variance = p.constrained(groups::temporal_log_variance)(0);
    }
    if (take(groups::temporal_log_lengthscale)) {
      model.prior.temporal_kernel.temporal_lengthscale = p.constrained(groups::temporal_log_lengthscale)(0);
    }
  }
}

/// Gradient of the bound in the unconstrained coordinates of `layout`.
inline Vector flatten_gradient(const MrdModel &model, const BoundGradient &g, const ParamLayout &layout) {
  Vector out = Vector::Zero(layout.total_size());
  const auto put = [&](const std::string &name, const Vector &v) {
    const ParamSlice &s = layout.find(name);
    out.segment(s.offset, s.size) += v;
  };
  put(groups::means, detail::flatten(g.d_means));
  if (const auto *c = std::get_if<CoupledLatentPosterior>(&model.posterior)) {
    put(groups::log_lambdas, detail::flatten(g.d_lambdas.cwiseProduct(c->lambdas)));
  } else {
    const auto &d = std::get<DiagLatentPosterior>(model.posterior);
    put(groups::log_variances, detail::flatten(g.d_vars.cwiseProduct(d.variances)));
  }
  for (Index k = 0; k < model.num_views(); ++k) {
    const ViewModel &v = model.views[static_cast<size_t>(k)];
    const ViewGradient &vg = g.views[static_cast<size_t>(k)];
    put(model.tie_inducing ? groups::inducing_tied : groups::inducing(k), detail::flatten(vg.d_Z));
    put(groups::log_kernel_variance(k), Vector::Constant(1, vg.d_variance * v.kernel.variance));
    put(groups::log_weights(k), vg.d_weights.cwiseProduct(v.kernel.weights));
    put(groups::log_beta(k), Vector::Constant(1, vg.d_beta * v.noise_precision));
  }
  if (model.dynamical()) {
    put(groups::temporal_log_variance,
        Vector::Constant(1, g.d_temporal_variance * model.prior.temporal_kernel.variance));
    put(groups::temporal_log_lengthscale,
        Vector::Constant(1, g.d_temporal_lengthscale * model.prior.temporal_kernel.temporal_lengthscale));
  }
  return out;
}

/// Bound and gradient as an optimizer objective over pack_parameters(model).
/// Groups in `keep` are read from `model` rather than from the iterate.
inline Objective bound_objective(const MrdModel &model, const ParamLayout &layout,
                                 const std::set<std::string> &keep = {}) {
  return [work = model, layout, keep](const Vector &x, Vector &grad) mutable {
    ParamVector p{x, layout};
    unpack_parameters(work, p, keep);
    BoundGradient g;
    const double value = work.bound(&g).total;
    grad = flatten_gradient(work, g, layout);
    return value;
  };
}

// ---------------------------------------------------------------------------
// Training

struct TrainSchedule {
  int phase1_iters = 100; ///< posterior and inducing inputs only
  int phase2_iters = 1000; ///< everything
  OptConfig opt;           ///< grad_tol, memory, line search, extra frozen groups
  bool freeze_linear_variance = true;
};

inline std::set<std::string> hyperparameter_groups(const MrdModel &model) {
  std::set<std::string> out;
  for (Index k = 0; k < model.num_views(); ++k) {
    out.insert(groups::log_kernel_variance(k));
    out.insert(groups::log_weights(k));
    out.insert(groups::log_beta(k));
  }
  if (model.dynamical()) {
    out.insert(groups::temporal_log_variance);
    out.insert(groups::temporal_log_lengthscale);
  }
  return out;
}

/// Two-phase maximization of the bound. The returned model carries the
/// concatenated accepted-iterate bound trace.
inline MrdModel train(const MrdModel &start, const TrainSchedule &schedule) {
  start.validate();
  MrdModel model = start;
  ParamVector p = pack_parameters(model);
  std::set<std::string> always_frozen = schedule.opt.frozen_groups;
  if (schedule.freeze_linear_variance) {
    for (Index k = 0; k < model.num_views(); ++k) {
      if (model.views[static_cast<size_t>(k)].kernel.family == KernelFamily::linear_ard) {
        always_frozen.insert(groups::log_kernel_variance(k));
      }
    }
  }
  std::vector<double> trace;
  std::string termination = "not_run";
  const auto run_phase = [&](int iters, std::set<std::string> frozen) {
    if (iters <= 0) {
      return;
    }
    OptConfig cfg = schedule.opt;
    cfg.max_iters = iters;
    cfg.frozen_groups = std::move(frozen);
    const OptResult r = maximize(bound_objective(model, p.layout, cfg.frozen_groups), p, cfg);
    const size_t first = trace.empty() ? 0 : 1;
    trace.insert(trace.end(), r.trace.objective.begin() + static_cast<long>(first), r.trace.objective.end());
    termination = to_string(r.trace.termination);
    unpack_parameters(model, r.x, cfg.frozen_groups);
    p = pack_parameters(model);
  };
  std::set<std::string> phase1 = always_frozen;
  const auto hyper = hyperparameter_groups(model);
  phase1.insert(hyper.begin(), hyper.end());
  run_phase(schedule.phase1_iters, phase1);
  run_phase(schedule.phase2_iters, always_frozen);
  if (schedule.phase1_iters > 0 || schedule.phase2_iters > 0) {
    model.bound_trace.insert(model.bound_trace.end(), trace.begin(), trace.end());
    model.termination = termination;
    model.trained = true;
  }
  return model;
}

// ---------------------------------------------------------------------------
// Relevance analysis

/// Each view's ARD weights scaled so the row maximum is 1 (K x q).
inline Matrix normalize_weights(const Matrix &W) {
  Matrix out = W;
  for (Index k = 0; k < W.rows(); ++k) {
    const double mx = W.row(k).maxCoeff();
    if (mx > 0.0) {
      out.row(k) /= mx;
    } else {
      out.row(k).setZero();
    }
  }
  return out;
}

inline Matrix weight_matrix(const MrdModel &model) {
  Matrix W(model.num_views(), model.q);
  for (Index k = 0; k < model.num_views(); ++k) {
    W.row(k) = model.views[static_cast<size_t>(k)].kernel.weights.transpose();
  }
  return W;
}

inline Matrix normalize_weights(const MrdModel &model) { return normalize_weights(weight_matrix(model)); }

struct Segmentation {
  std::vector<Index> shared;
  std::vector<Index> private_A;
  std::vector<Index> private_B;
  std::vector<Index> irrelevant;
  Matrix normalized_weights;
};

/// Thresholds normalized weights: a dimension is relevant to a view set when
/// its largest normalized weight over the set is at least epsilon.
inline Segmentation segment(const Matrix &normalized, const std::vector<Index> &set_A,
                            const std::vector<Index> &set_B, double epsilon = 1e-3) {
  if (set_A.empty() || set_B.empty()) {
    throw InputError("both view sets must be non-empty");
  }
  for (Index a : set_A) {
    if (std::find(set_B.begin(), set_B.end(), a) != set_B.end()) {
      throw InputError("view sets overlap at view " + std::to_string(a));
    }
  }
  for (const auto *set : {&set_A, &set_B}) {
    for (Index k : *set) {
      if (k < 0 || k >= normalized.rows()) {
        throw InputError("view index " + std::to_string(k) + " out of range");
      }
    }
  }
  Segmentation s;
  s.normalized_weights = normalized;
  const auto set_max = [&](const std::vector<Index> &set, Index j) {
    double mx = 0.0;
    for (Index k : set) {
      mx = std::max(mx, normalized(k, j));
    }
    return mx;
  };
  for (Index j = 0; j < normalized.cols(); ++j) {
    const bool in_A = set_max(set_A, j) >= epsilon;
    const bool in_B = set_max(set_B, j) >= epsilon;
    if (in_A && in_B) {
      s.shared.push_back(j);
    } else if (in_A) {
      s.private_A.push_back(j);
    } else if (in_B) {
      s.private_B.push_back(j);
    } else {
      s.irrelevant.push_back(j);
    }
  }
  return s;
}

inline Segmentation segment(const MrdModel &model, const std::vector<Index> &set_A, const std::vector<Index> &set_B,
                            double epsilon = 1e-3) {
  return segment(normalize_weights(model), set_A, set_B, epsilon);
}

/// Splits every view into views of `group_size` consecutive columns (the last
/// may be narrower), preserving row alignment and column order.
inline MultiViewDataset make_fully_independent(const MultiViewDataset &ds, Index group_size = 1) {
  if (ds.views.empty() || ds.total_columns() == 0) {
    throw InputError("cannot split an empty dataset");
  }
  if (group_size < 1) {
    throw InputError("group size must be at least 1");
  }
  MultiViewDataset out;
  out.timestamps = ds.timestamps;
  out.seq_ids = ds.seq_ids;
  for (size_t k = 0; k < ds.views.size(); ++k) {
    const Matrix &v = ds.views[k];
    for (Index c = 0; c < v.cols(); c += group_size) {
      const Index w = std::min(group_size, v.cols() - c);
      out.views.push_back(v.middleCols(c, w));
      out.offsets.push_back(ds.offsets[k].segment(c, w));
      out.view_names.push_back(w == v.cols() ? ds.view_names[k]
                                             : ds.view_names[k] + "[" + std::to_string(c) + "]");
    }
  }
  out.validate();
  return out;
}

/// Seeded k-means (k-means++ seeding, several restarts, Lloyd iterations).
/// Equidistant points go to the lowest cluster index.
inline std::vector<int> kmeans(const Matrix &points, int k, std::uint64_t seed, int restarts = 10,
                               int max_iters = 100) {
  const Index n = points.rows();
  if (k < 1 || k > n) {
    throw InputError("k = " + std::to_string(k) + " must lie in [1, " + std::to_string(n) + "]");
  }
  std::mt19937_64 rng(seed);
  std::vector<int> best_assign(static_cast<size_t>(n), 0);
  double best_cost = std::numeric_limits<double>::infinity();
  const auto assign_points = [&](const Matrix &C, std::vector<int> &assign) {
    double cost = 0.0;
    for (Index i = 0; i < n; ++i) {
      int arg = 0;
      double dmin = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = (points.row(i) - C.row(c)).squaredNorm();
        if (d < dmin) {
          dmin = d;
          arg = c;
        }
      }
      assign[static_cast<size_t>(i)] = arg;
      cost += dmin;
    }
    return cost;
  };
  for (int r = 0; r < restarts; ++r) {
    Matrix C(k, points.cols());
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    C.row(0) = points.row(static_cast<Index>(rng() % static_cast<std::uint64_t>(n)));
    Vector d2(n);
    for (int c = 1; c < k; ++c) {
      for (Index i = 0; i < n; ++i) {
        double dmin = std::numeric_limits<double>::infinity();
        for (int e = 0; e < c; ++e) {
          dmin = std::min(dmin, (points.row(i) - C.row(e)).squaredNorm());
        }
        d2(i) = dmin;
      }
      const double total = d2.sum();
      Index pick = 0;
      if (total > 0.0) {
        double target = unif(rng) * total;
        for (Index i = 0; i < n; ++i) {
          target -= d2(i);
          if (target <= 0.0 || i == n - 1) {
            pick = i;
            break;
          }
        }
      } else {
        pick = static_cast<Index>(rng() % static_cast<std::uint64_t>(n));
      }
      C.row(c) = points.row(pick);
    }
    std::vector<int> assign(static_cast<size_t>(n), 0);
    double cost = assign_points(C, assign);
    for (int it = 0; it < max_iters; ++it) {
      Matrix sum = Matrix::Zero(k, points.cols());
      std::vector<int> count(static_cast<size_t>(k), 0);
      for (Index i = 0; i < n; ++i) {
        sum.row(assign[static_cast<size_t>(i)]) += points.row(i);
        ++count[static_cast<size_t>(assign[static_cast<size_t>(i)])];
      }
      for (int c = 0; c < k; ++c) {
        if (count[static_cast<size_t>(c)] > 0) {
          C.row(c) = sum.row(c) / count[static_cast<size_t>(c)];
        }
      }
      std::vector<int> next(static_cast<size_t>(n), 0);
      const double next_cost = assign_points(C, next);
      const bool same = next == assign;
      assign = std::move(next);
      cost = next_cost;
      if (same) {
        break;
      }
    }
    if (r == 0 || cost < best_cost - 1e-12 * std::abs(best_cost)) {
      best_cost = cost;
      best_assign = assign;
    }
  }
  // Relabel clusters by first appearance so the output is canonical.
  std::vector<int> relabel(static_cast<size_t>(k), -1);
  int next_label = 0;
  for (auto &a : best_assign) {
    if (relabel[static_cast<size_t>(a)] < 0) {
      relabel[static_cast<size_t>(a)] = next_label++;
    }
    a = relabel[static_cast<size_t>(a)];
  }
  return best_assign;
}

/// Concatenates the normalized weight vectors of each view group and
/// clusters the groups.
inline std::vector<int> cluster_weight_groups(const Matrix &normalized, const std::vector<std::vector<Index>> &grouping,
                                              int k_clusters, std::uint64_t seed) {
  if (grouping.empty()) {
    throw InputError("grouping is empty");
  }
  if (k_clusters < 1 || k_clusters > static_cast<int>(grouping.size())) {
    throw InputError("k_clusters = " + std::to_string(k_clusters) + " exceeds the number of groups (" +
                     std::to_string(grouping.size()) + ")");
  }
  std::vector<int> seen(static_cast<size_t>(normalized.rows()), 0);
  const size_t width = grouping.front().size();
  for (const auto &g : grouping) {
    if (g.size() != width || g.empty()) {
      throw InputError("view groups must be non-empty and of equal size");
    }
    for (Index k : g) {
      if (k < 0 || k >= normalized.rows()) {
        throw InputError("view index " + std::to_string(k) + " out of range");
      }
      ++seen[static_cast<size_t>(k)];
    }
  }
  if (std::any_of(seen.begin(), seen.end(), [](int c) { return c != 1; })) {
    throw InputError("view groups must partition the views");
  }
  const Index q = normalized.cols();
  Matrix points(static_cast<Index>(grouping.size()), static_cast<Index>(width) * q);
  for (size_t g = 0; g < grouping.size(); ++g) {
    for (size_t e = 0; e < width; ++e) {
      points.block(static_cast<Index>(g), static_cast<Index>(e) * q, 1, q) = normalized.row(grouping[g][e]);
    }
  }
  return kmeans(points, k_clusters, seed);
}

inline std::vector<int> cluster_weight_groups(const MrdModel &model, const std::vector<std::vector<Index>> &grouping,
                                              int k_clusters, std::uint64_t seed) {
  return cluster_weight_groups(normalize_weights(model), grouping, k_clusters, seed);
}

/// Adjusted Rand index between two labelings of the same items.
inline double adjusted_rand_index(const std::vector<int> &a, const std::vector<int> &b) {
  if (a.size() != b.size()) {
    throw InputError("labelings differ in length");
  }
  const auto n = static_cast<double>(a.size());
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ca;
  std::map<int, double> cb;
  for (size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1.0;
    ca[a[i]] += 1.0;
    cb[b[i]] += 1.0;
  }
  const auto choose2 = [](double x) { return 0.5 * x * (x - 1.0); };
  double sum_joint = 0.0;
  for (const auto &[key, c] : joint) {
    sum_joint += choose2(c);
  }
  double sum_a = 0.0;
  double sum_b = 0.0;
  for (const auto &[key, c] : ca) {
    sum_a += choose2(c);
  }
  for (const auto &[key, c] : cb) {
    sum_b += choose2(c);
  }
  const double expected = sum_a * sum_b / choose2(n);
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) {
    return 1.0;
  }
  return (sum_joint - expected) / (max_index - expected);
}

// ---------------------------------------------------------------------------
// Prediction core

struct PredictiveMoments {
  Matrix mean;             ///< n* x p, de-centered
  Matrix variance;         ///< n* x p, per-point per-dimension predictive variance
  Vector shared_variance;  ///< n*, the dimension-independent part including 1/beta
  Matrix cross_covariance; ///< n* x n* dimension-independent covariance, when requested
};

/// The posterior over one view's mapping implied by the training q(X), ready
/// to push new (possibly uncertain) latent points through.
class ViewPredictor {
public:
  ViewPredictor(const ViewModel &view, const Matrix &means, const Matrix &vars, Vector offset)
      : kernel_(view.kernel), Z_(view.inducing), beta_(view.noise_precision), offset_(std::move(offset)),
        chol_(cov_matrix(view.kernel, view.inducing).values, "K_uu") {
    const PsiStatistics psi = psi_statistics(view.kernel, means, vars, view.inducing);
    const Index m = Z_.rows();
    const Matrix T = chol_.solve_lower(psi.psi2);
    Matrix A = beta_ * symmetrize(chol_.solve_lower(T.transpose()));
    A.diagonal().array() += 1.0;
    Eigen::LLT<Matrix> Achol(A);
    if (Achol.info() != Eigen::Success) {
      throw NumericalError("predictor: factorization of the whitened system failed");
    }
    const Matrix Ainv = Achol.solve(Matrix::Identity(m, m));
    // B = beta P^{-1} psi1^T Y,  W = K^{-1} - P^{-1} = L^{-T}(I - A^{-1})L^{-1}
    B_ = beta_ * chol_.solve_upper(Achol.solve(chol_.solve_lower(psi.psi1.transpose() * view.data)));
    W_ = chol_.unwhiten(Matrix::Identity(m, m) - Ainv);
  }

  Index outputs() const { return B_.cols(); }
  const Matrix &weights() const { return B_; }

  /// Mean at deterministic latent points.
  Matrix mean(const Matrix &X) const {
    Matrix out = cov_matrix(kernel_, X, Z_).values * B_;
    out.rowwise() += offset_.transpose();
    return out;
  }

  PredictiveMoments predict(const Matrix &means, const Matrix &vars, bool cross = false) const {
    const Index ns = means.rows();
    const Index p = B_.cols();
    PredictiveMoments out;
    out.mean.resize(ns, p);
    out.variance.resize(ns, p);
    out.shared_variance.resize(ns);
    Matrix psi1_all(ns, Z_.rows());
    for (Index i = 0; i < ns; ++i) {
      const PsiStatistics s = psi_statistics(kernel_, means.row(i), vars.row(i), Z_);
      psi1_all.row(i) = s.psi1;
      out.mean.row(i) = s.psi1 * B_;
      const Matrix C = s.psi2 - s.psi1.transpose() * s.psi1;
      out.variance.row(i) = (B_.array() * (C * B_).array()).colwise().sum();
      out.shared_variance(i) = s.psi0 - (W_.array() * s.psi2.array()).sum() + 1.0 / beta_;
      out.variance.row(i).array() += out.shared_variance(i);
    }
    out.mean.rowwise() += offset_.transpose();
    if (cross) {
      out.cross_covariance.resize(ns, ns);
      const Matrix WPsi = psi1_all * W_ * psi1_all.transpose();
      for (Index i = 0; i < ns; ++i) {
        for (Index j = 0; j < ns; ++j) {
          out.cross_covariance(i, j) = i == j ? out.shared_variance(i)
                                              : expected_cross_kernel(means.row(i), vars.row(i), means.row(j),
                                                                      vars.row(j)) -
                                                    WPsi(i, j);
        }
      }
    }
    return out;
  }

private:
  /// E k(x_i, x_j) for independent Gaussian x_i, x_j.
  double expected_cross_kernel(const Eigen::RowVectorXd &mi, const Eigen::RowVectorXd &si,
                               const Eigen::RowVectorXd &mj, const Eigen::RowVectorXd &sj) const {
    const Vector &w = kernel_.weights;
    if (kernel_.family == KernelFamily::linear_ard) {
      return kernel_.variance * (mi.array() * w.transpose().array() * mj.array()).sum();
    }
    double log_k = std::log(kernel_.variance);
    for (Index d = 0; d < w.size(); ++d) {
      const double denom = 1.0 + w(d) * (si(d) + sj(d));
      log_k += -0.5 * std::log(denom) - 0.5 * w(d) * (mi(d) - mj(d)) * (mi(d) - mj(d)) / denom;
    }
    return std::exp(log_k);
  }

  KernelSpec kernel_;
  Matrix Z_;
  double beta_;
  Vector offset_;
  JitteredCholesky chol_;
  Matrix B_;
  Matrix W_;
};

inline ViewPredictor make_predictor(const MrdModel &model, Index k) {
  if (k < 0 || k >= model.num_views()) {
    throw InputError("view index " + std::to_string(k) + " out of range");
  }
  const auto [means, vars] = model.latent_moments();
  return ViewPredictor(model.views[static_cast<size_t>(k)], means, vars, model.offsets[static_cast<size_t>(k)]);
}

/// Posterior-GP mean of view k at deterministic latent points, de-centered.
inline Matrix sample_outputs(const MrdModel &model, const Matrix &X, Index k) {
  if (!model.trained) {
    throw UsageError("sample_outputs needs a trained model");
  }
  if (X.cols() != model.q) {
    throw InputError("latent points have " + std::to_string(X.cols()) + " columns, model has q = " +
                     std::to_string(model.q));
  }
  return make_predictor(model, k).mean(X);
}

} // namespace mrd

#endif
