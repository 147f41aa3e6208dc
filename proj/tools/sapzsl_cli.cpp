// sapzsl: train, evaluate and inspect sparse-attribute-propagation ZSL models.
//
// Exit codes: 0 success, 1 selfcheck failure, 2 configuration error,
// 3 data error, 4 inner solver did not converge (outputs still written).

#include <sapzsl/dataio.hpp>
#include <sapzsl/l1solve.hpp>
#include <sapzsl/matcore.hpp>
#include <sapzsl/solver.hpp>
#include <sapzsl/spectral.hpp>
#include <sapzsl/zsleval.hpp>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sapzsl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNotConverged = 4;

struct Options {
  SolverParams params;
  std::string eigen = "dense";
  std::string variant = "full";
  bool no_refit = false;
  bool no_normalize = false;
  std::uint64_t seed = 0;

  std::string manifest;
  std::string out;
  std::string weights;
  double holdout = 0.2;

  SyntheticSpec synth;
  Index pool = 0;

  bool inject_nonmonotone = false;
};

void add_solver_flags(CLI::App* cmd, Options& o) {
  auto& p = o.params;
  cmd->add_option("--lambda1", p.lambda1, "graph smoothness weight")->capture_default_str();
  cmd->add_option("--lambda2", p.lambda2, "attribute sparsity weight")->capture_default_str();
  cmd->add_option("--lambda3", p.lambda3, "projection weight")->capture_default_str();
  cmd->add_option("--lambda4", p.lambda4, "projection ridge")->capture_default_str();
  cmd->add_option("--k-g", p.graph.k_g, "nearest neighbours per image")->capture_default_str();
  cmd->add_option("--m", p.graph.m, "Laplacian eigenvectors kept")->capture_default_str();
  cmd->add_option("--sigma", p.graph.sigma, "Gaussian kernel width")->capture_default_str();
  cmd->add_flag("--dense-graph", p.graph.dense, "connect every pair of images");
  cmd->add_option("--max-iters", p.max_iters, "outer iterations")->capture_default_str();
  cmd->add_option("--rel-tol", p.rel_tol, "relative objective decrease to stop")
      ->capture_default_str();
  cmd->add_option("--inner-tol", p.lasso.tol, "KKT tolerance of the denoising step")
      ->capture_default_str();
  cmd->add_option("--eigen", o.eigen, "eigensolver")
      ->check(CLI::IsMember({"dense", "lanczos"}))
      ->capture_default_str();
  cmd->add_option("--variant", o.variant, "which blocks run")
      ->check(CLI::IsMember({"full", "propagate-only"}))
      ->capture_default_str();
  cmd->add_flag("--no-refit", o.no_refit, "output the loop projection without the unit-L1 refit");
  cmd->add_flag("--no-normalize", o.no_normalize, "use features and attributes as stored");
  cmd->add_option("--workers", p.workers, "worker threads (default: $SAPZSL_WORKERS or 1)")
      ->capture_default_str();
  cmd->add_option("--seed", o.seed, "seed for randomized steps")->capture_default_str();
}

SolverParams resolve(const Options& o) {
  SolverParams p = o.params;
  p.eigen_method = o.eigen == "lanczos" ? EigenMethod::lanczos : EigenMethod::dense;
  p.variant = o.variant == "propagate-only" ? Variant::propagate_only : Variant::propagate_denoise;
  p.refit_normalized = !o.no_refit;
  if (p.workers == 0) throw ConfigError("--workers must be at least 1");
  p.validate();
  return p;
}

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

void write_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

// Training set from a manifest, with the optional unannotated pool appended.
Dataset load_training(const Manifest& mf, bool normalize_data) {
  Dataset ds = load_dataset(mf);
  if (normalize_data) ds = normalize(std::move(ds));
  if (!mf.has("pool_features")) return ds;
  Matrix pool = load_matrix(mf.path("pool_features"));
  if (normalize_data) pool = normalize_columns_l2(std::move(pool));
  return augment_with_pool(std::move(ds), pool);
}

TestSet load_testing(const Manifest& mf, bool normalize_data) {
  TestSet ts = load_test_set(mf);
  if (normalize_data) ts.X = normalize_columns_l2(std::move(ts.X));
  return ts;
}

json params_json(const SolverParams& p) {
  return json{{"lambda1", p.lambda1},     {"lambda2", p.lambda2},
              {"lambda3", p.lambda3},     {"lambda4", p.lambda4},
              {"k_g", p.graph.k_g},       {"m", p.graph.m},
              {"sigma", p.graph.sigma},   {"dense_graph", p.graph.dense},
              {"max_iters", p.max_iters}, {"rel_tol", p.rel_tol},
              {"refit_normalized", p.refit_normalized}};
}

json state_json(const SolverState& s) {
  return json{{"iterations", s.iterations},
              {"converged", s.converged},
              {"objective", s.objective_trace.empty() ? 0.0 : s.objective_trace.back()},
              {"objective_trace", s.objective_trace},
              {"inner_failures", s.inner_failures},
              {"max_inner_kkt", s.max_inner_kkt}};
}

std::string trace_csv(const SolverState& s) {
  std::string out = "iteration,objective\n";
  int it = 0;
  for (const auto& rec : s.steps) {
    if (rec.step == "init" || rec.step == "bpl") out += std::to_string(it++) + "," + fmt(rec.objective) + "\n";
  }
  return out;
}

std::string steps_csv(const SolverState& s) {
  std::string out = "iteration,step,objective\n";
  for (const auto& rec : s.steps) {
    out += std::to_string(rec.iteration) + "," + rec.step + "," + fmt(rec.objective) + "\n";
  }
  return out;
}

// --- commands ----------------------------------------------------------------

int cmd_train(const Options& o) {
  const SolverParams p = resolve(o);
  const Manifest mf = load_manifest(o.manifest);
  const Dataset ds = load_training(mf, !o.no_normalize);

  const auto t0 = std::chrono::steady_clock::now();
  TrainResult tr = train(ds, p);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const fs::path out(o.out);
  fs::create_directories(out);
  save_matrix(out / "W.txt", tr.W);
  save_matrix(out / "Y.txt", tr.state.Y);
  write_file_atomic(out / "trace.csv", trace_csv(tr.state));
  write_file_atomic(out / "steps.csv", steps_csv(tr.state));

  json metrics = state_json(tr.state);
  metrics["params"] = params_json(p);
  metrics["n_images"] = ds.n();
  metrics["n_annotated"] = ds.r();
  if (mf.has("test_features")) {
    const TestSet ts = load_testing(mf, !o.no_normalize);
    metrics["unseen"] = to_json(evaluate_standard(predict(tr.W, ts.X, ds.Z_u), ts.truth, ds.q()));
  }
  write_json(out / "metrics.json", metrics);
  std::cerr << "trained in " << secs << " s, " << tr.state.iterations << " iterations, objective "
            << metrics["objective"].get<double>() << "\n";

  if (tr.state.inner_failures > 0) {
    std::cerr << "warning: " << tr.state.inner_failures
              << " denoising subproblems missed the KKT tolerance (max residual "
              << tr.state.max_inner_kkt << "); best iterate written\n";
    return kExitNotConverged;
  }
  return kExitOk;
}

Matrix load_weights(const std::string& path, const Dataset& ds) {
  const Matrix w = load_matrix(path);
  if (w.rows() != ds.k() || w.cols() != ds.d()) {
    throw DataError("weights " + path + " are " + shape_str(w) + ", expected " +
                    std::to_string(ds.k()) + "x" + std::to_string(ds.d()));
  }
  return w;
}

void emit(const json& j, const std::string& out) {
  if (!out.empty()) write_json(out, j);
  std::cout << j.dump(2) << "\n";
}

int cmd_eval(const Options& o) {
  const Manifest mf = load_manifest(o.manifest);
  const Dataset ds = load_training(mf, !o.no_normalize);
  const TestSet ts = load_testing(mf, !o.no_normalize);
  const Matrix w = load_weights(o.weights, ds);
  const EvalReport r = evaluate_standard(predict(w, ts.X, ds.Z_u), ts.truth, ds.q());
  emit(to_json(r), o.out);
  return kExitOk;
}

int cmd_gzsl_eval(const Options& o) {
  const Manifest mf = load_manifest(o.manifest);
  const Dataset ds = load_training(mf, !o.no_normalize);
  const TestSet ts = load_testing(mf, !o.no_normalize);
  const GeneralizedSplit split = split_generalized(ds, ts, o.holdout, o.seed);
  for (const auto& w : split.warnings) std::cerr << "warning: " << w << "\n";

  // Without --weights the model is trained on the reduced training set, so
  // held-out seen images are never seen in training.
  Matrix w;
  int code = kExitOk;
  if (!o.weights.empty()) {
    w = load_weights(o.weights, ds);
  } else {
    const TrainResult tr = train(split.train, resolve(o));
    w = tr.W;
    if (tr.state.inner_failures > 0) code = kExitNotConverged;
  }
  const EvalReport r = evaluate_generalized(w, split.test.X, split.test.truth,
                                            ds.joint_prototypes(), first_classes(ds.p()));
  for (const auto& msg : r.warnings) std::cerr << "warning: " << msg << "\n";
  emit(to_json(r), o.out);
  return code;
}

int cmd_synth(const Options& o) {
  const SyntheticData syn = make_synthetic(o.synth);
  const fs::path out(o.out);
  const fs::path manifest = save_dataset(out, syn.data, &syn.test);
  save_matrix(out / "W_true.txt", syn.W_true);
  if (o.pool > 0) {
    save_matrix(out / "pool_features.txt",
                make_synthetic_pool(syn, o.pool, o.synth.noise_std, o.synth.seed + 1000));
    write_file_atomic(manifest, read_file(manifest) + "pool_features = pool_features.txt\n");
  }
  std::cout << manifest.string() << "\n";
  return kExitOk;
}

int cmd_refine_tags(const Options& o) {
  const SolverParams p = resolve(o);
  const Manifest mf = load_manifest(o.manifest);
  const Dataset ds = load_training(mf, !o.no_normalize);
  const TrainResult tr = train(ds, p);
  const fs::path out(o.out);
  fs::create_directories(out);
  save_matrix(out / "refined_tags.txt", tr.state.Y);
  write_file_atomic(out / "trace.csv", trace_csv(tr.state));
  write_json(out / "metrics.json", state_json(tr.state));
  return tr.state.inner_failures > 0 ? kExitNotConverged : kExitOk;
}

// --- selfcheck ---------------------------------------------------------------

struct Check {
  std::string name;
  bool pass;
  std::string detail;
};

int cmd_selfcheck(const Options& o) {
  std::vector<Check> checks;
  auto run = [&](const std::string& name, const std::function<std::string(bool&)>& body) {
    bool pass = true;
    std::string detail;
    try {
      detail = body(pass);
    } catch (const std::exception& e) {
      pass = false;
      detail = e.what();
    }
    checks.push_back({name, pass, detail});
  };

  SolverParams p = o.params;
  p.eigen_method = o.eigen == "lanczos" ? EigenMethod::lanczos : EigenMethod::dense;
  p.refit_normalized = !o.no_refit;

  // Training runs on seeded synthetic data; later checks reuse them.
  std::vector<std::pair<Dataset, TrainResult>> runs;
  run("sylvester-precondition", [&](bool& pass) {
    p.validate();
    pass = true;
    return "lambda4 = " + fmt(p.lambda4);
  });
  const bool trainable = checks.back().pass;

  if (trainable) {
    run("descent", [&](bool& pass) {
      double worst = 0.0;
      for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        SyntheticSpec spec;
        spec.seed = seed;
        Dataset ds = make_synthetic(spec).data;
        TrainResult tr = train(ds, p);
        if (o.inject_nonmonotone) {
          tr.state.steps.push_back({tr.state.iterations + 1, "injected",
                                    tr.state.steps.back().objective * 1.01});
        }
        for (std::size_t i = 1; i < tr.state.steps.size(); ++i) {
          const double prev = tr.state.steps[i - 1].objective;
          worst = std::max(worst, (tr.state.steps[i].objective - prev) / std::abs(prev));
        }
        runs.emplace_back(std::move(ds), std::move(tr));
      }
      pass = worst <= 1e-8;
      return "largest relative increase " + fmt(worst);
    });
    run("outer-iterations", [&](bool& pass) {
      int most = 0;
      for (const auto& [ds, tr] : runs) most = std::max(most, tr.state.iterations);
      pass = !runs.empty() && most <= p.max_iters;
      return "at most " + std::to_string(most) + " iterations";
    });
    run("denoising-kkt", [&](bool& pass) {
      double worst = 0.0;
      Index failures = 0;
      for (const auto& [ds, tr] : runs) {
        worst = std::max(worst, tr.state.max_inner_kkt);
        failures += tr.state.inner_failures;
      }
      pass = !runs.empty() && failures == 0;
      return "max KKT residual " + fmt(worst);
    });
    run("sparse-coding-kkt", [&](bool& pass) {
      double worst = 0.0;
      for (const auto& [ds, tr] : runs) {
        // Per attribute row: min ||V a - y||^2 + lambda1 sum_i sqrt(sigma_i) |a_i|.
        const Matrix& v = tr.basis.eigvecs;
        const Matrix alpha = sap_i(tr.state.Y, tr.basis, p.lambda1);
        for (Index j = 0; j < ds.k(); ++j) {
          const QuadLassoProblem q{2.0 * v.transpose() * v,
                                   -2.0 * v.transpose() * tr.state.Y.row(j).transpose(),
                                   p.lambda1 * tr.basis.penalty_weights};
          worst = std::max(worst, kkt_residual(q, alpha.col(j)));
        }
      }
      pass = !runs.empty() && worst <= 1e-10;
      return "max KKT residual " + fmt(worst);
    });
    run("sylvester-residual", [&](bool& pass) {
      double worst = 0.0;
      for (const auto& [ds, tr] : runs) {
        Matrix m1 = tr.state.Y * tr.state.Y.transpose();
        m1.diagonal().array() += p.lambda4;
        const Matrix r = 2.0 * tr.state.Y * ds.X.transpose();
        worst = std::max(worst, sylvester_residual(m1, ds.X * ds.X.transpose(), r, tr.state.W) /
                                    std::max(1.0, r.norm()));
      }
      pass = !runs.empty() && worst <= 1e-8;
      return "max relative residual " + fmt(worst);
    });
    run("norm-bound", [&](bool& pass) {
      double worst = 0.0;
      for (const auto& [ds, tr] : runs) {
        const double bound = projection_norm_bound(tr.state.Y.norm(), ds.X.norm(), p.lambda4);
        worst = std::max(worst, tr.state.W.norm() / bound);
      }
      pass = !runs.empty() && worst <= 1.0;
      return "max ||W|| / bound " + fmt(worst);
    });
    run("perturbation-bound", [&](bool& pass) {
      pass = !runs.empty();
      double worst = 0.0;
      std::mt19937_64 rng(o.seed);
      std::normal_distribution<double> normal;
      for (const auto& [ds, tr] : runs) {
        const Matrix& y = tr.state.Y;
        Matrix dir(y.rows(), y.cols());
        for (Index i = 0; i < dir.size(); ++i) dir.data()[i] = normal(rng);
        double last = std::numeric_limits<double>::infinity();
        for (double scale : {1e-2, 1e-3, 1e-4}) {
          const Matrix dy = dir * (scale * y.norm() / dir.norm());
          const double dw = (bpl(y + dy, ds.X, p.lambda4) - tr.state.W).norm();
          const double bound = perturbation_bound(dy.norm(), y.norm(), ds.X.norm(), p.lambda4);
          worst = std::max(worst, dw / bound);
          pass = pass && dw <= bound && dw < last;
          last = dw;
        }
      }
      return "max ||dW|| / bound " + fmt(worst);
    });
  }

  run("laplacian-factorization", [&](bool& pass) {
    SyntheticSpec spec;
    spec.images_per_class = 6;
    const Dataset ds = make_synthetic(spec).data;  // 48 images
    GraphConfig g;
    g.k_g = 5;
    g.m = 6;
    const Matrix l = normalized_laplacian(build_knn_affinity(ds.X, g));
    const SpectralBasis full = spectral_basis(l, l.rows());
    const Matrix b = full.penalty_weights.asDiagonal() * full.eigvecs.transpose();
    const double err = (b.transpose() * b - l).norm();
    const double top = full.eigvals.maxCoeff();
    pass = err <= 1e-8 && full.eigvals.minCoeff() >= 0.0 && top <= 2.0 + 1e-9;
    return "||B^T B - L|| = " + fmt(err) + ", max eigenvalue " + fmt(top);
  });

  run("lasso-optimality", [&](bool& pass) {
    std::mt19937_64 rng(o.seed + 13);
    std::normal_distribution<double> normal;
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      Matrix a(4, 4);
      for (Index i = 0; i < a.size(); ++i) a.data()[i] = normal(rng);
      QuadLassoProblem q{a.transpose() * a + 0.5 * Matrix::Identity(4, 4), Vector(4), Vector(4)};
      for (Index i = 0; i < 4; ++i) {
        q.g[i] = normal(rng);
        q.weights[i] = std::abs(normal(rng)) * 0.5;
      }
      const LassoSolution s = lasso_cd(q);
      pass = pass && s.converged;
      worst = std::max(worst, kkt_residual(q, s.x));
    }
    pass = pass && worst <= 1e-8;
    return "max KKT residual " + fmt(worst);
  });

  bool all = true;
  json summary = json::array();
  std::printf("%-26s %-6s %s\n", "check", "result", "detail");
  for (const auto& c : checks) {
    all = all && c.pass;
    std::printf("%-26s %-6s %s\n", c.name.c_str(), c.pass ? "PASS" : "FAIL", c.detail.c_str());
    summary.push_back({{"check", c.name}, {"pass", c.pass}, {"detail", c.detail}});
  }
  const json result{{"passed", all}, {"checks", summary}};
  std::cout << result.dump() << "\n";
  if (!o.out.empty()) write_json(o.out, result);
  return all ? kExitOk : kExitCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Zero-shot learning with sparse attribute propagation"};
  app.require_subcommand(1);
  Options o;
  o.params.workers = default_workers();

  auto* train_cmd = app.add_subcommand("train", "learn a projection from a dataset manifest");
  train_cmd->add_option("--manifest", o.manifest, "dataset manifest")->required();
  train_cmd->add_option("--out", o.out, "output directory")->required();
  add_solver_flags(train_cmd, o);

  auto* eval_cmd = app.add_subcommand("eval", "score unseen-class test images");
  eval_cmd->add_option("--manifest", o.manifest, "dataset manifest with a test set")->required();
  eval_cmd->add_option("--weights", o.weights, "trained W matrix file")->required();
  eval_cmd->add_option("--out", o.out, "write metrics JSON here as well");
  eval_cmd->add_flag("--no-normalize", o.no_normalize, "use features as stored");

  auto* gzsl_cmd = app.add_subcommand("gzsl-eval", "generalized protocol with held-out seen images");
  gzsl_cmd->add_option("--manifest", o.manifest, "dataset manifest with a test set")->required();
  gzsl_cmd->add_option("--weights", o.weights,
                       "score this W instead of training on the reduced training set");
  gzsl_cmd->add_option("--holdout", o.holdout, "fraction of each seen class held out")
      ->capture_default_str();
  gzsl_cmd->add_option("--out", o.out, "write metrics JSON here as well");
  add_solver_flags(gzsl_cmd, o);

  auto* synth_cmd = app.add_subcommand("synth", "write a seeded synthetic dataset");
  synth_cmd->add_option("--out", o.out, "output directory")->required();
  synth_cmd->add_option("--d", o.synth.d, "feature dimension")->capture_default_str();
  synth_cmd->add_option("--k", o.synth.k, "attribute dimension")->capture_default_str();
  synth_cmd->add_option("--p", o.synth.p, "seen classes")->capture_default_str();
  synth_cmd->add_option("--q", o.synth.q, "unseen classes")->capture_default_str();
  synth_cmd->add_option("--images-per-class", o.synth.images_per_class)->capture_default_str();
  synth_cmd->add_option("--annotated", o.synth.annotated_per_class, "annotated images per seen class")
      ->capture_default_str();
  synth_cmd->add_option("--noise", o.synth.noise_std, "feature noise std")->capture_default_str();
  synth_cmd->add_option("--seed", o.synth.seed)->capture_default_str();
  synth_cmd->add_option("--pool", o.pool, "unannotated seen-class pool images")->capture_default_str();

  auto* refine_cmd = app.add_subcommand("refine-tags", "denoise and complete per-image tags");
  refine_cmd->add_option("--manifest", o.manifest, "manifest whose attributes hold the tags")
      ->required();
  refine_cmd->add_option("--out", o.out, "output directory")->required();
  add_solver_flags(refine_cmd, o);

  // selfcheck trains on 240-image synthetic sets, so it has its own graph defaults.
  Options check;
  check.params.workers = default_workers();
  check.params.graph.k_g = 10;
  check.params.graph.m = 8;
  auto* check_cmd = app.add_subcommand("selfcheck", "run the numerical invariant suite");
  add_solver_flags(check_cmd, check);
  check_cmd->add_option("--out", check.out, "write the JSON summary here as well");
  check_cmd->add_flag("--inject-nonmonotone", check.inject_nonmonotone,
                      "corrupt the objective trace (tests the harness)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*train_cmd) return cmd_train(o);
    if (*eval_cmd) return cmd_eval(o);
    if (*gzsl_cmd) return cmd_gzsl_eval(o);
    if (*synth_cmd) return cmd_synth(o);
    if (*refine_cmd) return cmd_refine_tags(o);
    if (*check_cmd) return cmd_selfcheck(check);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitConfig;
}
