#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <set>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "walab/errors.hpp"
#include "walab/harness.hpp"

namespace walab {

namespace fs = std::filesystem;

namespace {

std::vector<fs::path> run_dirs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError(fmt::format("{}: not a directory", dir.string()));
  if (fs::exists(dir / "metrics.csv")) return {dir};
  std::vector<fs::path> found;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().filename() == "metrics.csv") found.push_back(entry.path().parent_path());
  }
  if (found.empty()) throw FormatError(fmt::format("{}: no metrics.csv found", dir.string()));
  std::sort(found.begin(), found.end());
  return found;
}

RunCurve load_curve(const fs::path& dir) {
  const auto rows = read_metrics_csv(dir / "metrics.csv");
  if (rows.empty()) throw FormatError(fmt::format("{}: metrics.csv has no rows", dir.string()));
  RunCurve c;
  c.dir = dir;
  c.group = rows.back().controller_tag;
  for (const auto& r : rows) {
    if (!c.epochs.empty() && c.epochs.back() == r.epoch) {
      c.test_acc.back() = r.test_acc;
    } else {
      c.epochs.push_back(r.epoch);
      c.test_acc.push_back(r.test_acc);
    }
  }
  return c;
}

}  // namespace

std::string format_mean_std(double mean, double std) { return fmt::format("{:.2f}±{:.2f}", 100.0 * mean, 100.0 * std); }

Comparison compare_runs(const std::vector<fs::path>& dirs) {
  if (dirs.empty()) throw UsageError("compare needs at least one directory");
  Comparison cmp;
  for (const auto& d : dirs) {
    for (const auto& run : run_dirs(d)) cmp.runs.push_back(load_curve(run));
  }
  std::set<std::int64_t> epochs;
  for (const auto& r : cmp.runs) {
    if (std::find(cmp.groups.begin(), cmp.groups.end(), r.group) == cmp.groups.end()) cmp.groups.push_back(r.group);
    epochs.insert(r.epochs.begin(), r.epochs.end());
  }
  cmp.epochs.assign(epochs.begin(), epochs.end());

  for (const auto& g : cmp.groups) {
    std::vector<double> column;
    for (const auto e : cmp.epochs) {
      double sum = 0.0;
      int n = 0;
      for (const auto& r : cmp.runs) {
        if (r.group != g) continue;
        const auto it = std::find(r.epochs.begin(), r.epochs.end(), e);
        if (it == r.epochs.end()) continue;
        sum += r.test_acc[static_cast<std::size_t>(it - r.epochs.begin())];
        ++n;
      }
      column.push_back(n > 0 ? sum / n : std::numeric_limits<double>::quiet_NaN());
    }
    cmp.table.push_back(std::move(column));

    std::vector<double> finals;
    for (const auto& r : cmp.runs) {
      if (r.group == g) finals.push_back(r.test_acc.back());
    }
    GroupStats s{g, finals.size(), 0.0, 0.0};
    for (const double a : finals) s.mean += a;
    s.mean /= static_cast<double>(finals.size());
    if (finals.size() > 1) {
      double ss = 0.0;
      for (const double a : finals) ss += (a - s.mean) * (a - s.mean);
      s.std = std::sqrt(ss / static_cast<double>(finals.size() - 1));
    }
    cmp.finals.push_back(s);
  }
  return cmp;
}

void write_comparison_csv(std::ostream& out, const Comparison& cmp) {
  out << "epoch";
  for (const auto& g : cmp.groups) out << ',' << g;
  out << '\n';
  for (std::size_t i = 0; i < cmp.epochs.size(); ++i) {
    out << cmp.epochs[i];
    for (const auto& column : cmp.table) {
      out << ',';
      if (!std::isnan(column[i])) fmt::print(out, "{:.6g}", column[i]);
    }
    out << '\n';
  }
}

void print_comparison(std::ostream& out, const Comparison& cmp) {
  fmt::print(out, "{:>6}", "epoch");
  for (const auto& g : cmp.groups) fmt::print(out, " {:>10}", g);
  out << '\n';
  for (std::size_t i = 0; i < cmp.epochs.size(); ++i) {
    fmt::print(out, "{:>6}", cmp.epochs[i]);
    for (const auto& column : cmp.table) {
      if (std::isnan(column[i])) {
        fmt::print(out, " {:>10}", "-");
      } else {
        fmt::print(out, " {:>10.2f}", 100.0 * column[i]);
      }
    }
    out << '\n';
  }
  out << "\nfinal test accuracy (%)\n";
  for (const auto& s : cmp.finals) fmt::print(out, "  {:<10} n={:<3} {}\n", s.group, s.runs, format_mean_std(s.mean, s.std));
}

}  // namespace walab
