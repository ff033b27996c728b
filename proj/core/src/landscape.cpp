#include "walab/landscape.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "walab/errors.hpp"
#include "walab/training.hpp"

namespace walab {

std::vector<double> probe_grid(double t_min, double t_max, int count) {
  if (count < 1) throw SpecError("probe needs at least one point");
  if (count > 1 && !(t_min < t_max)) throw SpecError(fmt::format("probe range [{}, {}] is empty", t_min, t_max));
  std::vector<double> ts;
  ts.reserve(static_cast<std::size_t>(count) + 2);
  if (count == 1) {
    ts.push_back(t_min);
  } else {
    const double span = static_cast<double>(count - 1);
    for (int i = 0; i < count; ++i) ts.push_back((t_min * (span - i) + t_max * i) / span);
  }
  ts.push_back(0.0);
  ts.push_back(1.0);
  std::sort(ts.begin(), ts.end());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
  return ts;
}

ProbeResult line_probe(const LossEvaluator& train, const LossEvaluator& test, const WeightVector& w_a,
                       const WeightVector& w_b, std::span<const double> ts) {
  require_same_layout(w_a, w_b, "line_probe");
  if (ts.empty()) throw SpecError("line_probe needs at least one t");
  for (std::size_t i = 1; i < ts.size(); ++i) {
    if (!(ts[i - 1] < ts[i])) throw SpecError("line_probe ts must be strictly increasing");
  }
  ProbeResult result;
  result.ts.assign(ts.begin(), ts.end());
  for (const double t : ts) {
    const WeightVector w = interpolate(w_a, w_b, t);
    result.train_loss.push_back(train(w).loss);
    result.test_error.push_back(1.0 - test(w).accuracy);
  }
  return result;
}

ProbeResult line_probe(const Model& model, const WeightVector& w_a, const WeightVector& w_b,
                       std::span<const double> ts, const Dataset& train_set, const Dataset& test_set,
                       const ProbeOptions& options) {
  const LossEvaluator train = [&](const WeightVector& w) {
    return evaluate(model, w, train_set, options.train_samples, options.eval_batch).mean();
  };
  const LossEvaluator test = [&](const WeightVector& w) {
    return evaluate(model, w, test_set, options.test_samples, options.eval_batch).mean();
  };
  return line_probe(train, test, w_a, w_b, ts);
}

void write_probe_csv(std::ostream& out, const ProbeResult& result) {
  fmt::print(out, "t,train_loss,test_error\n");
  for (std::size_t i = 0; i < result.ts.size(); ++i) {
    fmt::print(out, "{},{},{}\n", result.ts[i], result.train_loss[i], result.test_error[i]);
  }
}

void write_probe_csv(const std::filesystem::path& path, const ProbeResult& result) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError(fmt::format("cannot open {} for writing", path.string()));
  write_probe_csv(out, result);
}

}  // namespace walab
