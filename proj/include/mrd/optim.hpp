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

#ifndef MRD_OPTIM_HPP
#define MRD_OPTIM_HPP

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mrd/errors.hpp"
#include "mrd/linalg.hpp"

namespace mrd {

/// How a group's constrained values map to the optimizer's unconstrained ones.
enum class Transform { identity, log };

/// constrained -> unconstrained
inline Vector untransform(Transform t, const Vector &constrained) {
  if (t == Transform::identity) {
    return constrained;
  }
  if ((constrained.array() <= 0.0).any() || !constrained.allFinite()) {
    throw InputError("log transform needs strictly positive finite values");
  }
  return constrained.array().log();
}

/// unconstrained -> constrained
inline Vector transform(Transform t, const Vector &unconstrained) {
  if (t == Transform::identity) {
    return unconstrained;
  }
  Vector out = unconstrained.array().exp();
  if (!out.allFinite() || (out.array() <= 0.0).any()) {
    throw NumericalError("log-parameterized value left the representable range");
  }
  return out;
}

struct ParamSlice {
  std::string name;
  Index offset = 0;
  Index size = 0;
  Transform transform = Transform::identity;
};

/// Named, disjoint, contiguous slices covering a flat parameter vector.
class ParamLayout {
public:
  Index add(const std::string &name, Index size, Transform t) {
    if (size < 0) {
      throw InputError("negative slice size for " + name);
    }
    for (const auto &s : slices_) {
      if (s.name == name) {
        throw InputError("duplicate parameter group " + name);
      }
    }
    slices_.push_back({name, total_, size, t});
    total_ += size;
    return slices_.back().offset;
  }

  Index total_size() const { return total_; }
  const std::vector<ParamSlice> &slices() const { return slices_; }

  bool contains(const std::string &name) const {
    return std::any_of(slices_.begin(), slices_.end(), [&](const auto &s) { return s.name == name; });
  }

  const ParamSlice &find(const std::string &name) const {
    for (const auto &s : slices_) {
      if (s.name == name) {
        return s;
      }
    }
    throw InputError("unknown parameter group " + name);
  }

  /// Throws unless the slices tile [0, total_size) exactly.
  void validate() const {
    Index next = 0;
    for (const auto &s : slices_) {
      if (s.offset != next) {
        throw InputError("parameter layout has a gap or overlap at " + s.name);
      }
      next += s.size;
    }
    if (next != total_) {
      throw InputError("parameter layout does not cover the vector");
    }
  }

private:
  std::vector<ParamSlice> slices_;
  Index total_ = 0;
};

/// Flat unconstrained values plus the layout naming their slices.
struct ParamVector {
  Vector values;
  ParamLayout layout;

  auto segment(const std::string &name) { return values.segment(layout.find(name).offset, layout.find(name).size); }
  auto segment(const std::string &name) const {
    return values.segment(layout.find(name).offset, layout.find(name).size);
  }

  /// Stores constrained values for a group, applying its transform.
  void set_constrained(const std::string &name, const Vector &constrained) {
    const ParamSlice &s = layout.find(name);
    if (constrained.size() != s.size) {
      throw InputError("group " + name + " expects " + std::to_string(s.size) + " values");
    }
    values.segment(s.offset, s.size) = untransform(s.transform, constrained);
  }

  Vector constrained(const std::string &name) const {
    const ParamSlice &s = layout.find(name);
    return transform(s.transform, values.segment(s.offset, s.size));
  }
};

/// Objective and gradient with respect to the unconstrained vector. The
/// callback may throw NumericalError for points where it cannot be evaluated.
using Objective = std::function<double(const Vector &x, Vector &grad)>;

struct OptConfig {
  int max_iters = 1000;
  double grad_tol = 1e-6;  ///< on the infinity norm of the free gradient
  int memory = 10;
  double c1 = 1e-4;        ///< sufficient increase
  double c2 = 0.9;         ///< curvature
  int max_line_search = 40;
  std::set<std::string> frozen_groups;
  unsigned long seed = 0;

  void validate() const {
    if (max_iters < 0) {
      throw InputError("max_iters must be non-negative");
    }
    if (!(grad_tol > 0.0)) {
      throw InputError("grad_tol must be positive");
    }
    if (memory < 1) {
      throw InputError("L-BFGS memory must be at least 1");
    }
    if (!(0.0 < c1 && c1 < c2 && c2 < 1.0)) {
      throw InputError("line-search constants need 0 < c1 < c2 < 1");
    }
  }
};

enum class Termination { converged, max_iterations, line_search_failed };

inline std::string to_string(Termination t) {
  switch (t) {
  case Termination::converged:
    return "converged";
  case Termination::max_iterations:
    return "max_iterations";
  case Termination::line_search_failed:
    return "line_search_failed";
  }
  return "unknown";
}

struct OptTrace {
  std::vector<double> objective; ///< starting value, then one per accepted iteration
  std::vector<double> grad_norm; ///< infinity norm of the free gradient, aligned with `objective`
  Termination termination = Termination::max_iterations;
  int iterations = 0;
  int evaluations = 0;
  std::string message;
};

struct OptResult {
  ParamVector x;
  OptTrace trace;
};

namespace detail {

struct LinePoint {
  double step = 0.0;
  double value = 0.0;
  double slope = 0.0; ///< directional derivative
  Vector grad;
  bool ok = false;
};

/// Minimizer of the cubic through (a, fa, da), (b, fb, db), clamped into the
/// interior of [a, b] with a bisection fallback.
inline double cubic_step(double a, double fa, double da, double b, double fb, double db) {
  const double lo = std::min(a, b);
  const double hi = std::max(a, b);
  const double d1 = da + db - 3.0 * (fa - fb) / (a - b);
  const double disc = d1 * d1 - da * db;
  double t = 0.5 * (a + b);
  if (disc >= 0.0) {
    const double d2 = std::copysign(std::sqrt(disc), b - a);
    const double denom = db - da + 2.0 * d2;
    if (denom != 0.0) {
      t = b - (b - a) * (db + d2 - d1) / denom;
    }
  }
  const double margin = 0.1 * (hi - lo);
  if (!std::isfinite(t) || t < lo + margin || t > hi - margin) {
    t = 0.5 * (a + b);
  }
  return t;
}

} // namespace detail

/// Limited-memory quasi-Newton ascent with a strong-Wolfe line search.
/// Parameters of frozen groups never move.
inline OptResult maximize(const Objective &objective, const ParamVector &x0, const OptConfig &cfg) {
  cfg.validate();
  x0.layout.validate();
  const Index n = x0.values.size();
  if (n != x0.layout.total_size()) {
    throw InputError("parameter vector does not match its layout");
  }
  Vector free_mask = Vector::Ones(n);
  for (const auto &name : cfg.frozen_groups) {
    if (x0.layout.contains(name)) {
      const ParamSlice &s = x0.layout.find(name);
      free_mask.segment(s.offset, s.size).setZero();
    }
  }

  OptResult result{x0, {}};
  OptTrace &trace = result.trace;
  Vector &x = result.x.values;

  // Everything below minimizes phi = -objective.
  const auto evaluate = [&](const Vector &at, Vector &g, bool &ok) {
    ++trace.evaluations;
    Vector raw = Vector::Zero(n);
    double v = 0.0;
    try {
      v = objective(at, raw);
    } catch (const NumericalError &) {
      ok = false;
      return std::numeric_limits<double>::infinity();
    }
    ok = std::isfinite(v) && raw.allFinite();
    g = -raw.cwiseProduct(free_mask);
    return ok ? -v : std::numeric_limits<double>::infinity();
  };

  Vector g(n);
  bool ok = false;
  double f = evaluate(x, g, ok);
  if (!ok) {
    throw InputError("objective or gradient is not finite at the starting point");
  }
  trace.objective.push_back(-f);
  trace.grad_norm.push_back(n > 0 ? g.cwiseAbs().maxCoeff() : 0.0);

  std::deque<Vector> s_hist;
  std::deque<Vector> y_hist;
  std::deque<double> rho_hist;

  const auto converged = [&]() { return n == 0 || g.cwiseAbs().maxCoeff() <= cfg.grad_tol; };
  if (converged()) {
    trace.termination = Termination::converged;
    return result;
  }

  while (true) {
    if (trace.iterations >= cfg.max_iters) {
      trace.termination = Termination::max_iterations;
      break;
    }
    // Two-loop recursion.
    Vector d = -g;
    std::vector<double> alpha(s_hist.size());
    for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
      alpha[static_cast<size_t>(i)] = rho_hist[static_cast<size_t>(i)] * s_hist[static_cast<size_t>(i)].dot(d);
      d -= alpha[static_cast<size_t>(i)] * y_hist[static_cast<size_t>(i)];
    }
    if (!s_hist.empty()) {
      d *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    }
    for (size_t i = 0; i < s_hist.size(); ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(d);
      d += s_hist[i] * (alpha[i] - beta);
    }
    d = d.cwiseProduct(free_mask);
    double slope0 = g.dot(d);
    if (!(slope0 < 0.0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      d = -g;
      slope0 = g.dot(d);
    }
    double step = s_hist.empty() ? std::min(1.0, 1.0 / d.cwiseAbs().maxCoeff()) : 1.0;

    // Strong Wolfe line search (bracketing then zoom).
    detail::LinePoint prev{0.0, f, slope0, g, true};
    detail::LinePoint best{};
    bool found = false;
    const auto probe = [&](double a) {
      detail::LinePoint p;
      p.step = a;
      p.value = evaluate(x + a * d, p.grad, p.ok);
      p.slope = p.ok ? p.grad.dot(d) : std::numeric_limits<double>::infinity();
      return p;
    };
    const auto zoom = [&](detail::LinePoint lo, detail::LinePoint hi, int budget) {
      for (int it = 0; it < budget; ++it) {
        double a;
        if (hi.ok && std::isfinite(hi.slope)) {
          a = detail::cubic_step(lo.step, lo.value, lo.slope, hi.step, hi.value, hi.slope);
        } else {
          a = 0.5 * (lo.step + hi.step);
        }
        const detail::LinePoint p = probe(a);
        if (!p.ok || p.value > f + cfg.c1 * a * slope0 || p.value >= lo.value) {
          hi = p;
        } else {
          if (std::abs(p.slope) <= -cfg.c2 * slope0) {
            best = p;
            return true;
          }
          if (p.slope * (hi.step - lo.step) >= 0.0) {
            hi = lo;
          }
          lo = p;
        }
        if (std::abs(hi.step - lo.step) <= 1e-16 * std::max(1.0, std::abs(lo.step))) {
          break;
        }
      }
      // Fall back to the best sufficient-increase point seen.
      if (lo.step > 0.0 && lo.value < f) {
        best = lo;
        return true;
      }
      return false;
    };

    int budget = cfg.max_line_search;
    for (int it = 0; it < budget; ++it) {
      const detail::LinePoint p = probe(step);
      if (!p.ok) {
        found = zoom(prev, p, budget - it);
        break;
      }
      if (p.value > f + cfg.c1 * step * slope0 || (it > 0 && p.value >= prev.value)) {
        found = zoom(prev, p, budget - it);
        break;
      }
      if (std::abs(p.slope) <= -cfg.c2 * slope0) {
        best = p;
        found = true;
        break;
      }
      if (p.slope >= 0.0) {
        found = zoom(p, prev, budget - it);
        break;
      }
      prev = p;
      step *= 2.0;
    }
    if (!found || !(best.value < f)) {
      if (!s_hist.empty()) {
        // Retry once from steepest ascent before giving up.
        s_hist.clear();
        y_hist.clear();
        rho_hist.clear();
        continue;
      }
      trace.termination = Termination::line_search_failed;
      trace.message = "line search could not increase the objective";
      break;
    }

    const Vector s = best.step * d;
    const Vector y = best.grad - g;
    x += s;
    f = best.value;
    g = best.grad;
    ++trace.iterations;
    trace.objective.push_back(-f);
    trace.grad_norm.push_back(g.cwiseAbs().maxCoeff());

    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(y);
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > cfg.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    if (converged()) {
      trace.termination = Termination::converged;
      break;
    }
  }
  return result;
}

struct GradientCheck {
  std::map<std::string, double> group_error; ///< max relative error per group
  double max_error = 0.0;
  Vector analytic;
  Vector numeric;
};

/// Compares the analytic gradient with a finite difference in every
/// coordinate: five-point central differences at `step` and `step / 2`,
/// combined by Richardson extrapolation (sixth order). The relative error of
/// a coordinate is |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline GradientCheck check_gradient(const Objective &objective, const ParamVector &x, double step = 5e-2,
                                    double floor = 1e-3) {
  const Index n = x.values.size();
  GradientCheck out;
  out.analytic = Vector::Zero(n);
  objective(x.values, out.analytic);
  out.numeric = Vector::Zero(n);
  Vector scratch(n);
  Vector xp = x.values;
  for (Index i = 0; i < n; ++i) {
    const double orig = xp(i);
    const auto five_point = [&](double h) {
      double acc = 0.0;
      for (const auto &[offset, coef] : {std::pair{2.0, -1.0}, {1.0, 8.0}, {-1.0, -8.0}, {-2.0, 1.0}}) {
        xp(i) = orig + offset * h;
        acc += coef * objective(xp, scratch);
      }
      xp(i) = orig;
      return acc / (12.0 * h);
    };
    const double coarse = five_point(step);
    const double fine = five_point(0.5 * step);
    out.numeric(i) = (16.0 * fine - coarse) / 15.0;
  }
  for (const auto &s : x.layout.slices()) {
    double worst = 0.0;
    for (Index i = s.offset; i < s.offset + s.size; ++i) {
      const double a = out.analytic(i);
      const double b = out.numeric(i);
      worst = std::max(worst, std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor}));
    }
    out.group_error[s.name] = worst;
    out.max_error = std::max(out.max_error, worst);
  }
  return out;
}

} // namespace mrd

#endif
