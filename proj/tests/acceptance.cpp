// Acceptance criteria P1..P9. One PASS/FAIL line per criterion; exit status
// is the number of failures.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <map>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "support.hpp"
#include "walab/averaging.hpp"
#include "walab/data.hpp"
#include "walab/errors.hpp"
#include "walab/harness.hpp"
#include "walab/landscape.hpp"
#include "walab/ndcore.hpp"
#include "walab/nn.hpp"
#include "walab/quadratic.hpp"
#include "walab/rng.hpp"
#include "walab/schedule.hpp"

namespace fs = std::filesystem;
using namespace walab;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Options {
  fs::path work;
  fs::path data_dir;
};

// ---------------------------------------------------------------- P1

Outcome p1_running_average(const Options&) {
  constexpr std::size_t count = 1000, dim = 1000;
  SplitMix64 rng(derive_seed(1, "p1"));
  std::vector<long double> sum(dim, 0.0L);
  auto avg = RunningAverage::empty(LayoutId::flat(dim), dim);
  for (std::size_t k = 0; k < count; ++k) {
    std::vector<double> v(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      v[j] = rng.uniform01();
      sum[j] += v[j];
    }
    avg = running_average_update(avg, WeightVector::from(std::move(v)));
  }
  double worst = 0.0;
  for (std::size_t j = 0; j < dim; ++j) {
    const long double mean = sum[j] / static_cast<long double>(count);
    worst = std::max(worst, static_cast<double>(std::fabs((avg.mean()[j] - mean) / mean)));
  }
  return {worst < 1e-12 && avg.count() == count, fmt::format("max relative error {:.3g} (limit 1e-12)", worst)};
}

// ---------------------------------------------------------------- P2

Outcome p2_gradients(const Options&) {
  using namespace walab::layer;
  using walab::testing::check_gradient;
  using walab::testing::random_batch;
  const std::vector<std::pair<std::string, ModelSpec>> cases{
      {"dense", {"dense", Shape::flat(6), {Dense{6, 3}, SoftmaxXent{}}, 3}},
      {"dense+relu", {"dense+relu", Shape::flat(6), {Dense{6, 5, Activation::relu}, Dense{5, 3}, SoftmaxXent{}}, 3}},
      {"relu", {"relu", Shape::flat(6), {Dense{6, 5}, Relu{}, Dense{5, 3}, SoftmaxXent{}}, 3}},
      {"conv", {"conv", Shape{2, 4, 4}, {Conv2d{2, 3, 3}, Flatten{}, Dense{48, 3}, SoftmaxXent{}}, 3}},
      {"conv+relu",
       {"conv+relu", Shape{2, 4, 4}, {Conv2d{2, 3, 3, Activation::relu}, Flatten{}, Dense{48, 3}, SoftmaxXent{}}, 3}},
      {"conv5", {"conv5", Shape{1, 6, 6}, {Conv2d{1, 2, 5}, Flatten{}, Dense{72, 3}, SoftmaxXent{}}, 3}},
      {"maxpool", {"maxpool", Shape{2, 4, 4}, {Conv2d{2, 2, 3}, MaxPool{2}, Flatten{}, Dense{8, 3}, SoftmaxXent{}}, 3}},
      {"flatten", {"flatten", Shape{2, 2, 2}, {Flatten{}, Dense{8, 3}, SoftmaxXent{}}, 3}},
  };
  bool ok = true;
  std::string detail;
  for (const auto& [name, spec] : cases) {
    const Model m(spec);
    std::vector<std::size_t> all(m.parameter_count());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const auto r = check_gradient(m, m.init_weights(21), random_batch(spec.input_shape, 3, 3, 22), all);
    ok = ok && r.max_rel_err < 1e-6 && 20 * r.kinks <= r.checked + r.kinks;
    detail += fmt::format("{} {:.2g}; ", name, r.max_rel_err);
  }
  const Model cnn(toy_cnn_spec());
  const auto coords = walab::testing::gradient_coordinates(cnn, 5000, 3000);
  const auto r = check_gradient(cnn, cnn.init_weights(30), random_batch(Shape{3, 32, 32}, 10, 2, 31, 0.0, 1.0), coords);
  ok = ok && r.max_rel_err < 1e-6 && 20 * r.kinks <= r.checked + r.kinks;
  detail += fmt::format("toy_cnn {:.2g} over {} coordinates, {} skipped at activation switches (limit 1e-6)",
                        r.max_rel_err, r.checked, r.kinks);
  return {ok, detail};
}

// ---------------------------------------------------------------- P3

Outcome p3_schedule(const Options&) {
  const auto s = ScheduleSpec::backbone(160, 0.05, 0.01, 390);
  double worst = 0.0;
  for (int e = 0; e < 80; ++e) worst = std::max(worst, std::abs(lr_at(s, e * 390) - 0.05));
  for (int e = 144; e < 160; ++e) worst = std::max(worst, std::abs(lr_at(s, e * 390) - 0.01));
  const double mid = lr_at(s, 112 * 390);
  worst = std::max(worst, std::abs(mid - 0.03));
  return {worst <= 1e-12, fmt::format("epoch 112 -> {:.15g}; max deviation {:.3g} (limit 1e-12)", mid, worst)};
}

// ---------------------------------------------------------------- P4

Outcome p4_variance(const Options&) {
  QuadSpec s;
  s.curvatures = {1.0};
  s.noise_std = 1.0;
  s.lr = 0.1;
  s.steps = 2000;
  s.tail_window = 50;
  const auto r = variance_report(s, 200, seed_streams(0).noise);
  const double target = stationary_variance(0.1, 1.0, 1.0);
  const double rel = std::abs(r.mean_iterate_variance / target - 1.0);
  return {r.ratio < 0.5 && rel < 0.05,
          fmt::format("var_tail/var_final {:.4f} (limit 0.5); stationary variance {:.5f} vs {:.5f} ({:.2f}%, limit 5%)",
                      r.ratio, r.mean_iterate_variance, target, 100 * rel)};
}

// ---------------------------------------------------------------- P5, P6

std::map<std::string, double> mean_final(const RunSummary& s) {
  std::map<std::string, std::vector<double>> by;
  for (const auto& m : s.members) by[to_string(m.kind)].push_back(m.final_test_acc);
  std::map<std::string, double> out;
  for (const auto& [k, v] : by) {
    double sum = 0.0;
    for (const double a : v) sum += a;
    out[k] = sum / static_cast<double>(v.size());
  }
  return out;
}

Outcome p5_table3(const Options& o) {
  const fs::path out = o.work / "table3-desk";
  fs::remove_all(out);
  const auto summary = run_plan(preset("table3-desk"), out, RunOptions{o.data_dir, true});
  auto m = mean_final(summary);
  const double sgd = 100 * m["sgd"], swa = 100 * m["swa"], dswa = 100 * m["dswa"];
  return {swa >= sgd + 4.0 && dswa >= swa + 0.5,
          fmt::format("mean TA sgd {:.2f}, swa {:.2f} ({:+.2f}, need +4), dswa {:.2f} ({:+.2f} over swa, need +0.5)",
                      sgd, swa, swa - sgd, dswa, dswa - swa)};
}

// Mean test accuracy per epoch of the rows tagged `tag` in every seed directory under `dir`.
std::map<std::int64_t, double> mean_curve(const fs::path& dir, const std::string& tag) {
  std::map<std::int64_t, std::pair<double, int>> acc;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::map<std::int64_t, double> last;
    for (const auto& r : read_metrics_csv(entry.path() / "metrics.csv")) {
      if (r.controller_tag == tag) last[r.epoch] = r.test_acc;
    }
    for (const auto& [e, a] : last) {
      acc[e].first += a;
      acc[e].second += 1;
    }
  }
  std::map<std::int64_t, double> out;
  for (const auto& [e, p] : acc) out[e] = p.first / p.second;
  return out;
}

Outcome p6_pswa(const Options& o) {
  const fs::path out = o.work / "fig4-desk";
  fs::remove_all(out);
  const Plan plan = preset("fig4-desk");
  const auto& tp = std::get<TrainPlan>(plan);
  (void)run_plan(plan, out, RunOptions{o.data_dir, true});
  const auto sgd = mean_curve(out / "sgd", "sgd");
  const auto pswa = mean_curve(out / "pswa", "pswa");
  bool ok = true;
  std::string detail;
  const auto& a = tp.averaging;
  for (std::int64_t e = a.pswa_start_epoch + a.pswa_period_epochs; e <= 24; e += a.pswa_period_epochs) {
    const double gap = 100 * (pswa.at(e) - sgd.at(e));
    ok = ok && gap >= 0.0;
    detail += fmt::format("epoch {} {:+.2f}; ", e, gap);
  }
  const double final_gap = 100 * (pswa.at(tp.total_epochs) - sgd.at(tp.total_epochs));
  ok = ok && std::abs(final_gap) < 1.0;
  detail += fmt::format("final {:+.2f} (|gap| < 1)", final_gap);
  return {ok, "PSWA - SGD mean TA at window boundaries: " + detail};
}

// ---------------------------------------------------------------- P7

Outcome p7_chains(const Options&) {
  const auto train = synthetic_blobs(4, 64, 8, 5);
  const auto test = synthetic_blobs(4, 32, 8, 5, 6.0, Split::test);
  const Model model(mlp_spec(std::vector<int>{8, 32, 4}));
  const BatchStream stream(train, 32, derive_seed(5, "shuffle"));
  TrainContext ctx{model, stream, test};
  const std::int64_t spe = ctx.steps_per_epoch();
  const auto w0 = model.init_weights(derive_seed(5, "init"));
  const OptimizerConfig opt = SgdConfig{0.9, 5e-4};
  const SwaPlan plan{ScheduleSpec::cyclic_linear(spe, 0.1, 0.02, spe), spe, 6 * spe};
  const std::int64_t start = 3 * spe;

  const auto stage = [&](const WeightVector& w, std::int64_t n, std::int64_t at) {
    SwaPlan p = plan;
    p.total_iters = n;
    return swa_run(ctx, w, p, opt, at).final_weights;
  };
  const auto d = dswa_run(ctx, w0, plan, opt, start);
  const auto d1 = stage(w0, 3 * spe, start);
  const bool dswa_ok = d.final_weights == stage(d1, 3 * spe, start + 3 * spe) && d.iterations == plan.total_iters;

  const auto t = tswa_run(ctx, w0, plan, opt, start);
  auto w = w0;
  for (int s = 0; s < 3; ++s) w = stage(w, 2 * spe, start + s * 2 * spe);
  const bool tswa_ok = t.final_weights == w && t.iterations == plan.total_iters;
  return {dswa_ok && tswa_ok, fmt::format("dswa vs 2 stages {}, tswa vs 3 stages {}",
                                          dswa_ok ? "bit-identical" : "DIFFER", tswa_ok ? "bit-identical" : "DIFFER")};
}

// ---------------------------------------------------------------- P8

Outcome p8_probe(const Options&) {
  const auto train = synthetic_blobs(3, 40, 6, 8);
  const auto test = synthetic_blobs(3, 20, 6, 8, 6.0, Split::test);
  const Model model(mlp_spec(std::vector<int>{6, 12, 3}));
  const auto a = model.init_weights(1);
  const auto b = model.init_weights(2);
  const auto ts = probe_grid();
  const auto r = line_probe(model, a, b, ts, train, test);
  const auto at = [&](double t) {
    return static_cast<std::size_t>(std::find(ts.begin(), ts.end(), t) - ts.begin());
  };
  const auto ea = evaluate(model, a, train).mean();
  const auto eb = evaluate(model, b, train).mean();
  const double endpoint = std::max({std::abs(r.train_loss[at(0.0)] - ea.loss), std::abs(r.train_loss[at(1.0)] - eb.loss),
                                    std::abs(r.test_error[at(0.0)] - (1 - evaluate(model, a, test).mean().accuracy)),
                                    std::abs(r.test_error[at(1.0)] - (1 - evaluate(model, b, test).mean().accuracy))});

  std::vector<double> mirrored;
  for (auto it = ts.rbegin(); it != ts.rend(); ++it) mirrored.push_back(1.0 - *it);
  const auto rev = line_probe(model, b, a, mirrored, train, test);
  double swap = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    swap = std::max(swap, std::abs(r.train_loss[i] - rev.train_loss[ts.size() - 1 - i]));
    swap = std::max(swap, std::abs(r.test_error[i] - rev.test_error[ts.size() - 1 - i]));
  }

  // Linear model with squared loss: L(w) = |Xw - y|^2 / m is a quadratic in t.
  constexpr int m = 12, d = 5;
  SplitMix64 rng(derive_seed(8, "p8"));
  std::vector<double> X(m * d), y(m), wa(d), wb(d);
  for (auto& v : X) v = rng.normal();
  for (auto& v : y) v = rng.normal();
  for (auto& v : wa) v = rng.normal();
  for (auto& v : wb) v = rng.normal();
  const LossEvaluator lsq = [&](const WeightVector& w) {
    double total = 0.0;
    for (int i = 0; i < m; ++i) {
      double p = -y[i];
      for (int j = 0; j < d; ++j) p += X[i * d + j] * w[j];
      total += p * p;
    }
    return Evaluation{total / m, 0.0};
  };
  const auto q = line_probe(lsq, lsq, WeightVector::from(wa), WeightVector::from(wb), ts);
  // exact coefficients: L(t) = |r_a + t (r_b - r_a)|^2 / m with r = Xw - y
  double c0 = 0, c1 = 0, c2 = 0;
  for (int i = 0; i < m; ++i) {
    double ra = -y[i], rb = -y[i];
    for (int j = 0; j < d; ++j) {
      ra += X[i * d + j] * wa[j];
      rb += X[i * d + j] * wb[j];
    }
    c0 += ra * ra / m;
    c1 += 2 * ra * (rb - ra) / m;
    c2 += (rb - ra) * (rb - ra) / m;
  }
  double residual = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    residual = std::max(residual, std::abs(q.train_loss[i] - (c0 + c1 * ts[i] + c2 * ts[i] * ts[i])));
  }
  return {endpoint <= 1e-12 && swap <= 1e-12 && residual < 1e-10,
          fmt::format("endpoints {:.2g}, swap {:.2g} (limit 1e-12); quadratic residual {:.2g} (limit 1e-10)", endpoint,
                      swap, residual)};
}

// ---------------------------------------------------------------- P9

// Every preset, shrunk to seconds of work, run twice into separate directories.
Plan shrink(Plan plan) {
  if (auto* q = std::get_if<QuadPlan>(&plan)) {
    q->seeds = 30;
    q->base.steps = 400;
    return plan;
  }
  auto& p = std::get<TrainPlan>(plan);
  p.dataset.subset_per_class = 20;
  p.total_epochs = 2;
  if (auto* b = std::get_if<sched::Backbone>(&p.schedule)) b->total_epochs = 2;
  p.seeds = std::min(p.seeds, 2);
  p.averaging.swa_epochs = 6;
  p.averaging.pswa_start_epoch = 1;
  p.averaging.pswa_period_epochs = 1;
  p.probe.t_count = 3;
  p.eval.train_eval_samples = 100;
  p.eval.test_eval_samples = 200;
  p.eval.eval_batch = 100;
  return plan;
}

std::map<fs::path, std::string> deterministic_outputs(const fs::path& root) {
  std::map<fs::path, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto name = e.path().filename().string();
    const auto rel = fs::relative(e.path(), root);
    if (name == "metrics.csv") out[rel] = walab::testing::strip_wallclock(walab::testing::read_text(e.path()));
    if (name == "probe.csv" || name == "variance.csv" || name == "config.toml" || e.path().extension() == ".wav") {
      out[rel] = walab::testing::read_text(e.path());
    }
  }
  return out;
}

Outcome p9_determinism(const Options& o) {
  std::vector<std::string> differing;
  std::size_t files = 0;
  for (const auto& name : preset_names()) {
    const Plan plan = shrink(preset(name));
    std::map<fs::path, std::string> runs[2];
    for (int k = 0; k < 2; ++k) {
      const fs::path dir = o.work / "p9" / fmt::format("{}_{}", name, k);
      fs::remove_all(dir);
      (void)run_plan(plan, dir, RunOptions{o.data_dir, true});
      runs[k] = deterministic_outputs(dir);
    }
    if (runs[0] != runs[1]) differing.push_back(name);
    files += runs[0].size();
  }
  return {differing.empty(),
          differing.empty() ? fmt::format("{} presets, {} output files byte-identical (wallclock_s excluded)",
                                           preset_names().size(), files)
                            : fmt::format("outputs differ for: {}", fmt::join(differing, ", "))};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"walab acceptance criteria"};
  std::vector<std::string> only;
  Options options;
  std::string work = "acceptance_work";
  std::string data_dir;
  app.add_option("--only", only, "criteria to run, e.g. P1,P4")->delimiter(',');
  app.add_option("--work", work, "scratch directory for experiment outputs")->capture_default_str();
  app.add_option("--data-dir", data_dir, "dataset root (default $WALAB_DATA_DIR)");
  CLI11_PARSE(app, argc, argv);
  options.work = work;
  options.data_dir = data_dir;
  fs::create_directories(options.work);

  const std::vector<std::pair<std::string, std::function<Outcome(const Options&)>>> criteria{
      {"P1", p1_running_average}, {"P2", p2_gradients}, {"P3", p3_schedule}, {"P4", p4_variance},
      {"P5", p5_table3},          {"P6", p6_pswa},      {"P7", p7_chains},   {"P8", p8_probe},
      {"P9", p9_determinism},
  };
  const std::set<std::string> wanted(only.begin(), only.end());
  int failures = 0;
  for (const auto& [id, run] : criteria) {
    if (!wanted.empty() && !wanted.contains(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome r;
    try {
      r = run(options);
    } catch (const std::exception& e) {
      r = {false, fmt::format("error: {}", e.what())};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    fmt::print("{} {} [{:.1f}s] {}\n", id, r.pass ? "PASS" : "FAIL", s, r.detail);
    std::fflush(stdout);
    failures += r.pass ? 0 : 1;
  }
  return failures;
}
