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

// Command-line driver: dataset generation, training, relevance analysis,
// prediction and gradient checking on model files.

#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mrd/mrd.hpp"

namespace fs = std::filesystem;
using namespace mrd;

namespace {

struct TrainArgs {
  std::string data;
  Index q = 0;
  Index m = 0;
  std::string prior = "standard_normal";
  std::vector<std::string> kernels;
  std::string temporal_kernel = "temporal_eq";
  double lengthscale = 0.0;
  bool tie_inducing = false;
  std::uint64_t seed = 0;
  std::string iters = "100,1000";
  double epsilon = 1e-3;
  std::string out = ".";
};

void add_train_options(CLI::App *cmd, TrainArgs &a) {
  cmd->add_option("--data", a.data, "dataset manifest")->required();
  cmd->add_option("--q", a.q, "latent dimensionality (default min(10, n - 1))");
  cmd->add_option("--m", a.m, "inducing points per view (default min(50, n))");
  cmd->add_option("--prior", a.prior, "standard_normal or temporal");
  cmd->add_option("--kernel", a.kernels, "view=family (eq_ard | linear_ard); repeatable");
  cmd->add_option("--temporal-kernel", a.temporal_kernel, "temporal_eq or temporal_matern32");
  cmd->add_option("--lengthscale", a.lengthscale, "initial temporal lengthscale (default 0.1 x time range)");
  cmd->add_flag("--tie-inducing", a.tie_inducing, "share one set of inducing inputs across views");
  cmd->add_option("--seed", a.seed, "random seed");
  cmd->add_option("--iters", a.iters, "phase-1,phase-2 iteration counts");
  cmd->add_option("--epsilon", a.epsilon, "relevance threshold for the printed segmentation");
  cmd->add_option("--out", a.out, "output directory");
}

std::pair<int, int> parse_iters(const std::string &s) {
  const auto comma = s.find(',');
  try {
    if (comma == std::string::npos) {
      return {100, std::stoi(s)};
    }
    return {std::stoi(s.substr(0, comma)), std::stoi(s.substr(comma + 1))};
  } catch (const std::exception &) {
    throw InputError("--iters expects 'p1,p2' or a single count, got '" + s + "'");
  }
}

std::pair<std::string, std::string> split_assignment(const std::string &s, const std::string &flag) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == s.size()) {
    throw InputError(flag + " expects name=value, got '" + s + "'");
  }
  return {s.substr(0, eq), s.substr(eq + 1)};
}

Index view_index(const std::vector<std::string> &names, const std::string &name) {
  for (size_t k = 0; k < names.size(); ++k) {
    if (names[k] == name) {
      return static_cast<Index>(k);
    }
  }
  throw InputError("unknown view '" + name + "'");
}

InitOptions init_options(const TrainArgs &a, const DatasetManifest &man, const MultiViewDataset &ds) {
  InitOptions opt;
  opt.q = a.q;
  opt.m = a.m;
  opt.seed = a.seed;
  opt.tie_inducing = a.tie_inducing;
  opt.temporal_lengthscale = a.lengthscale;
  opt.temporal_family = kernel_family_from_string(a.temporal_kernel);
  if (a.prior == "temporal") {
    opt.prior = PriorKind::temporal;
  } else if (a.prior != "standard_normal") {
    throw InputError("--prior must be standard_normal or temporal");
  }
  opt.kernels = man.kernel_list();
  opt.kernels.resize(static_cast<size_t>(ds.num_views()), KernelFamily::eq_ard);
  for (const auto &spec : a.kernels) {
    const auto [view, family] = split_assignment(spec, "--kernel");
    opt.kernels[static_cast<size_t>(view_index(ds.view_names, view))] = kernel_family_from_string(family);
  }
  return opt;
}

std::string join(const std::vector<Index> &v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    s += (i ? " " : "") + std::to_string(v[i]);
  }
  return s;
}

void print_segmentation(const Segmentation &s) {
  std::cout << "shared: " << join(s.shared) << "\n"
            << "private_A: " << join(s.private_A) << "\n"
            << "private_B: " << join(s.private_B) << "\n"
            << "irrelevant: " << join(s.irrelevant) << "\n";
}

/// View sets from names; B defaults to every view not in A.
std::pair<std::vector<Index>, std::vector<Index>> view_sets(const MrdModel &model, std::vector<std::string> a,
                                                            std::vector<std::string> b) {
  if (a.empty()) {
    a.push_back(model.view_names.front());
  }
  std::vector<Index> A;
  std::vector<Index> B;
  for (const auto &n : a) {
    A.push_back(model.view_index(n));
  }
  if (b.empty()) {
    for (Index k = 0; k < model.num_views(); ++k) {
      if (std::find(A.begin(), A.end(), k) == A.end()) {
        B.push_back(k);
      }
    }
  } else {
    for (const auto &n : b) {
      B.push_back(model.view_index(n));
    }
  }
  return {A, B};
}

ObservedViews load_observed(const MrdModel &model, const std::vector<std::string> &specs, bool header) {
  if (specs.empty()) {
    throw InputError("at least one --observed view=path is required");
  }
  ObservedViews obs;
  for (const auto &spec : specs) {
    const auto [view, path] = split_assignment(spec, "--observed");
    obs[model.view_index(view)] = load_csv(path, header);
  }
  return obs;
}

void ensure_dir(const std::string &dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw FileError("cannot create directory " + dir + ": " + ec.message());
  }
}

void write_training_artifacts(const MrdModel &model, const std::string &dir) {
  ensure_dir(dir);
  save_model(model, (fs::path(dir) / "model.mrd").string());
  write_lines((fs::path(dir) / "trace.txt").string(), model.bound_trace);
  const Matrix W = normalize_weights(model);
  write_weights_csv((fs::path(dir) / "weights.csv").string(), W, model.view_names);
  write_weights_svg((fs::path(dir) / "weights.svg").string(), W, model.view_names);
}

MrdModel train_from_args(const TrainArgs &a, const MultiViewDataset &ds, const DatasetManifest &man) {
  const auto [p1, p2] = parse_iters(a.iters);
  TrainSchedule s;
  s.phase1_iters = p1;
  s.phase2_iters = p2;
  s.opt.seed = a.seed;
  return train(init_model(ds, init_options(a, man, ds)), s);
}

int run_toy(Index n, double noise, std::uint64_t seed, const std::string &out) {
  const ToyData toy = gen_toy(n, noise, seed);
  ensure_dir(out);
  const fs::path dir(out);
  write_csv((dir / "y.csv").string(), toy.dataset.raw_view(0));
  write_csv((dir / "z.csv").string(), toy.dataset.raw_view(1));
  write_csv((dir / "times.csv").string(), Matrix(toy.times));
  write_csv((dir / "signals.csv").string(), toy.signals, {"sin", "cos", "cos2"});
  std::ofstream man(dir / "manifest.txt");
  man << "view y y.csv\nview z z.csv\ntimestamps times.csv\ncenter true\n"
      << "kernel y linear_ard\nkernel z linear_ard\n";
  if (!man) {
    throw FileError("cannot write " + (dir / "manifest.txt").string());
  }
  std::cout << "wrote toy dataset (n=" << n << ") to " << out << "\n";
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Manifold relevance determination: multi-view Bayesian GP-LVM"};
  app.require_subcommand(1);

  // toy
  Index toy_n = 100;
  double toy_noise = 0.05;
  std::uint64_t toy_seed = 0;
  std::string toy_out = "toy";
  auto *toy = app.add_subcommand("toy", "generate the two-view toy dataset");
  toy->add_option("--n", toy_n, "number of rows");
  toy->add_option("--noise", toy_noise, "noise standard deviation");
  toy->add_option("--seed", toy_seed, "random seed");
  toy->add_option("--out", toy_out, "output directory");

  // train
  TrainArgs targs;
  auto *train_cmd = app.add_subcommand("train", "train a model and write model.mrd, trace.txt, weights.csv/svg");
  add_train_options(train_cmd, targs);

  // segment
  std::string seg_model;
  std::vector<std::string> seg_a, seg_b;
  double seg_eps = 1e-3;
  auto *seg = app.add_subcommand("segment", "print shared / private / irrelevant dimensions");
  seg->add_option("--model", seg_model, "model file")->required();
  seg->add_option("--a", seg_a, "views in set A (default: first view)");
  seg->add_option("--b", seg_b, "views in set B (default: all others)");
  seg->add_option("--epsilon", seg_eps, "relevance threshold");

  // predict
  std::string pred_model, pred_target, pred_out = "prediction", pred_times;
  std::vector<std::string> pred_obs;
  bool pred_header = false;
  auto *pred = app.add_subcommand("predict", "infer test latents from observed views and predict a view");
  pred->add_option("--model", pred_model, "model file")->required();
  pred->add_option("--observed", pred_obs, "view=path of test rows; repeatable")->required();
  pred->add_option("--target", pred_target, "view to predict")->required();
  pred->add_option("--times", pred_times, "test timestamps (one column) for dynamical inference");
  pred->add_flag("--header", pred_header, "test files have a header row");
  pred->add_option("--out", pred_out, "output prefix (<out>_mean.csv, <out>_var.csv, <out>_latent.csv)");

  // transfer
  std::string tr_model, tr_truth, tr_out = "transfer.csv", tr_fill = "nearest_neighbour";
  std::vector<std::string> tr_obs, tr_targets;
  Index tr_knn = 1;
  double tr_eps = 1e-3;
  bool tr_header = false;
  auto *tr = app.add_subcommand("transfer", "hybrid prediction of views B from views A");
  tr->add_option("--model", tr_model, "model file")->required();
  tr->add_option("--observed", tr_obs, "view=path of test rows for set A; repeatable")->required();
  tr->add_option("--target", tr_targets, "views in set B (default: all unobserved)");
  tr->add_option("--truth", tr_truth, "ground truth for the first target view, for RMSE");
  tr->add_option("--knn", tr_knn, "number of neighbours");
  tr->add_option("--fill", tr_fill, "nearest_neighbour | blend | prior");
  tr->add_option("--epsilon", tr_eps, "relevance threshold");
  tr->add_flag("--header", tr_header, "test files have a header row");
  tr->add_option("--out", tr_out, "predictions of the first target view (rank-1 neighbour)");

  // sample
  std::string smp_model, smp_latent, smp_view, smp_out = "samples.csv";
  auto *smp = app.add_subcommand("sample", "map latent points through a view's posterior mean");
  smp->add_option("--model", smp_model, "model file")->required();
  smp->add_option("--latent", smp_latent, "latent points (n x q csv)")->required();
  smp->add_option("--view", smp_view, "view to generate")->required();
  smp->add_option("--out", smp_out, "output csv");

  // check-grad
  std::string cg_model;
  TrainArgs cg_args;
  double cg_step = 5e-2, cg_floor = 1e-3, cg_tol = 1e-5;
  auto *cg = app.add_subcommand("check-grad", "finite-difference check of the bound gradient");
  cg->add_option("--model", cg_model, "model file (otherwise a fresh model from --data)");
  cg->add_option("--data", cg_args.data, "dataset manifest");
  cg->add_option("--q", cg_args.q, "latent dimensionality");
  cg->add_option("--m", cg_args.m, "inducing points");
  cg->add_option("--prior", cg_args.prior, "standard_normal or temporal");
  cg->add_option("--kernel", cg_args.kernels, "view=family; repeatable");
  cg->add_option("--seed", cg_args.seed, "random seed");
  cg->add_option("--step", cg_step, "finite-difference step in unconstrained coordinates");
  cg->add_option("--floor", cg_floor, "denominator floor of the relative error");
  cg->add_option("--tol", cg_tol, "exit with status 1 if any group exceeds this");

  // fimrd
  TrainArgs fi_args;
  fi_args.q = 10;
  Index fi_group = 1;
  int fi_k = 3;
  auto *fi = app.add_subcommand("fimrd", "fully-independent MRD: one view per output group, then cluster weights");
  add_train_options(fi, fi_args);
  fi->add_option("--group-size", fi_group, "output columns per view");
  fi->add_option("--k", fi_k, "number of clusters");

  // classify
  std::string cl_model, cl_test, cl_input, cl_labels;
  auto *cl = app.add_subcommand("classify", "predict a one-hot label view from an input view");
  cl->add_option("--model", cl_model, "model file")->required();
  cl->add_option("--test", cl_test, "manifest with test rows for the input and label views")->required();
  cl->add_option("--input", cl_input, "observed view")->required();
  cl->add_option("--labels", cl_labels, "label view")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*toy) {
      return run_toy(toy_n, toy_noise, toy_seed, toy_out);
    }
    if (*train_cmd) {
      const DatasetManifest man = parse_manifest(targs.data);
      const MultiViewDataset ds = load_dataset(man);
      const MrdModel model = train_from_args(targs, ds, man);
      write_training_artifacts(model, targs.out);
      std::cout << "bound " << detail::format_double(model.bound().total) << " after " << model.bound_trace.size()
                << " accepted iterates (" << model.termination << ")\n";
      if (model.num_views() >= 2) {
        print_segmentation(segment(model, {0}, view_sets(model, {}, {}).second, targs.epsilon));
      }
      return 0;
    }
    if (*seg) {
      const MrdModel model = load_model(seg_model);
      const auto [A, B] = view_sets(model, seg_a, seg_b);
      print_segmentation(segment(model, A, B, seg_eps));
      return 0;
    }
    if (*pred) {
      const MrdModel model = load_model(pred_model);
      const ObservedViews obs = load_observed(model, pred_obs, pred_header);
      TestPosterior post;
      if (!pred_times.empty()) {
        const Matrix t = load_csv(pred_times, pred_header);
        if (t.cols() != 1) {
          throw InputError("--times must have one column");
        }
        post = infer_latent_dynamical(model, obs, t.col(0));
      } else {
        post = infer_latent(model, obs);
      }
      const PredictiveMoments pm = predict_view(model, post, model.view_index(pred_target));
      write_csv(pred_out + "_mean.csv", pm.mean);
      write_csv(pred_out + "_var.csv", pm.variance);
      write_csv(pred_out + "_latent.csv", post.marginals.means);
      std::cout << "predicted " << pm.mean.rows() << " rows of " << pred_target << "\n";
      return 0;
    }
    if (*tr) {
      const MrdModel model = load_model(tr_model);
      const ObservedViews obs = load_observed(model, tr_obs, tr_header);
      std::vector<Index> A;
      for (const auto &[k, Y] : obs) {
        A.push_back(k);
      }
      std::vector<std::string> a_names;
      for (Index k : A) {
        a_names.push_back(model.view_names[static_cast<size_t>(k)]);
      }
      const auto [setA, setB] = view_sets(model, a_names, tr_targets);
      HybridOptions opt;
      opt.k_nn = tr_knn;
      opt.fill = fill_mode_from_string(tr_fill);
      const Segmentation s = segment(model, setA, setB, tr_eps);
      const HybridResult r = hybrid_predict(model, obs, s, setB, opt);
      const Matrix P = r.predictions(setB.front());
      write_csv(tr_out, P);
      std::cout << "wrote " << P.rows() << " predictions of " << model.view_names[static_cast<size_t>(setB.front())]
                << " to " << tr_out << "\n";
      if (!tr_truth.empty()) {
        const Matrix T = load_csv(tr_truth, tr_header);
        if (T.rows() != P.rows() || T.cols() != P.cols()) {
          throw InputError("--truth has shape " + std::to_string(T.rows()) + "x" + std::to_string(T.cols()) +
                           ", predictions are " + std::to_string(P.rows()) + "x" + std::to_string(P.cols()));
        }
        std::cout << "rmse " << detail::format_double(std::sqrt((P - T).squaredNorm() / static_cast<double>(T.size())))
                  << "\n";
      }
      return 0;
    }
    if (*smp) {
      const MrdModel model = load_model(smp_model);
      const Matrix out = sample_outputs(model, load_csv(smp_latent), model.view_index(smp_view));
      write_csv(smp_out, out);
      std::cout << "wrote " << out.rows() << " rows to " << smp_out << "\n";
      return 0;
    }
    if (*cg) {
      MrdModel model;
      if (!cg_model.empty()) {
        model = load_model(cg_model);
      } else if (!cg_args.data.empty()) {
        const DatasetManifest man = parse_manifest(cg_args.data);
        model = init_model(load_dataset(man), init_options(cg_args, man, load_dataset(man)));
      } else {
        throw InputError("check-grad needs --model or --data");
      }
      const ParamVector p = pack_parameters(model);
      const GradientCheck gc = check_gradient(bound_objective(model, p.layout), p, cg_step, cg_floor);
      bool ok = true;
      for (const auto &slice : p.layout.slices()) {
        const double err = gc.group_error.at(slice.name);
        ok = ok && err <= cg_tol;
        std::cout << slice.name << " " << detail::format_double(err) << "\n";
      }
      std::cout << (ok ? "ok" : "FAILED") << " max " << detail::format_double(gc.max_error) << "\n";
      return ok ? 0 : 1;
    }
    if (*fi) {
      const DatasetManifest man = parse_manifest(fi_args.data);
      const MultiViewDataset full = load_dataset(man);
      const MultiViewDataset ds = make_fully_independent(full, fi_group);
      DatasetManifest fi_man;
      for (const auto &name : ds.view_names) {
        fi_man.views.emplace_back(name, "");
        const auto it = man.kernels.find(name.substr(0, name.find('[')));
        if (it != man.kernels.end()) {
          fi_man.kernels[name] = it->second;
        }
      }
      const MrdModel model = train_from_args(fi_args, ds, fi_man);
      write_training_artifacts(model, fi_args.out);
      std::vector<std::vector<Index>> grouping;
      for (Index k = 0; k < model.num_views(); ++k) {
        grouping.push_back({k});
      }
      const std::vector<int> labels = cluster_weight_groups(model, grouping, fi_k, fi_args.seed);
      std::ofstream out(fs::path(fi_args.out) / "clusters.csv");
      out << "view,cluster\n";
      for (size_t k = 0; k < labels.size(); ++k) {
        out << model.view_names[k] << "," << labels[k] << "\n";
        std::cout << model.view_names[k] << " " << labels[k] << "\n";
      }
      return 0;
    }
    if (*cl) {
      const MrdModel model = load_model(cl_model);
      const MultiViewDataset test = load_dataset(cl_test);
      const Index in = model.view_index(cl_input);
      const Index lab = model.view_index(cl_labels);
      const Index tin = view_index(test.view_names, cl_input);
      const Index tlab = view_index(test.view_names, cl_labels);
      const TestPosterior post = infer_latent(model, {{in, test.raw_view(tin)}});
      const std::vector<int> predicted = predict_classes(model, post, lab);
      const Matrix truth = test.raw_view(tlab);
      const Matrix train_in = model.views[static_cast<size_t>(in)].data;
      const Matrix train_lab = model.views[static_cast<size_t>(lab)].data;
      Matrix test_in = test.raw_view(tin);
      test_in.rowwise() -= model.offsets[static_cast<size_t>(in)].transpose();
      int mrd_correct = 0;
      int nn_correct = 0;
      for (Index i = 0; i < truth.rows(); ++i) {
        Index cls = 0;
        truth.row(i).maxCoeff(&cls);
        mrd_correct += predicted[static_cast<size_t>(i)] == cls;
        Index nn = 0;
        (train_in.rowwise() - test_in.row(i)).rowwise().squaredNorm().minCoeff(&nn);
        Index nn_cls = 0;
        train_lab.row(nn).maxCoeff(&nn_cls);
        nn_correct += nn_cls == cls;
      }
      const double n = static_cast<double>(truth.rows());
      std::cout << "mrd_accuracy " << mrd_correct / n << "\nnn_accuracy " << nn_correct / n << "\n";
      return 0;
    }
  } catch (const mrd::Error &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
