#pragma once

// Helpers shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "walab/nn.hpp"
#include "walab/rng.hpp"

namespace walab::testing {

/// Fresh, empty directory under the system temp dir; removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    SplitMix64 rng(static_cast<std::uint64_t>(std::hash<std::string>{}(tag)) ^
                   static_cast<std::uint64_t>(reinterpret_cast<std::uintptr_t>(this)));
    path_ = std::filesystem::temp_directory_path() / ("walab_" + tag + "_" + std::to_string(rng.next() % 1000000));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  [[nodiscard]] std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

/// metrics.csv with the trailing wallclock_s column cut from every line.
inline std::string strip_wallclock(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) {
    out += line.substr(0, line.rfind(','));
    out += '\n';
  }
  return out;
}

/// Batch of `n` samples with inputs ~ U(lo, hi) and labels < classes.
inline Batch random_batch(Shape shape, int classes, std::size_t n, std::uint64_t seed, double lo = -1.0,
                          double hi = 1.0) {
  SplitMix64 rng(seed);
  Batch b;
  b.sample_shape = shape;
  b.inputs.resize(n * shape.size());
  for (auto& v : b.inputs) v = rng.uniform(lo, hi);
  for (std::size_t i = 0; i < n; ++i) b.labels.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(classes))));
  return b;
}

struct GradCheck {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::size_t worst_index = 0;
  // coordinates whose +-h probes cross a ReLU or max-pool switch; central
  // differences are meaningless there, so they are counted and skipped
  std::size_t kinks = 0;
};

/// Relative error of one analytic vs numeric derivative. Derivatives whose
/// magnitude is below `floor` are compared on the absolute scale of `floor`.
inline double relative_error(double analytic, double numeric, double floor = 1e-4) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central differences with step h at the given coordinates.
inline GradCheck check_gradient(const Model& model, const WeightVector& w, const Batch& batch,
                                const std::vector<std::size_t>& coords, double h = 1e-5) {
  const auto analytic = model.backward(w, batch).grad;
  const auto base = model.forward_trace(w, batch).activation_signature;
  WeightVector probe = w;
  GradCheck out;
  for (const std::size_t i : coords) {
    auto values = probe.mutable_values();
    const double orig = values[i];
    values[i] = orig + h;
    const auto up = model.forward_trace(probe, batch);
    values[i] = orig - h;
    const auto down = model.forward_trace(probe, batch);
    values[i] = orig;
    if (up.activation_signature != base || down.activation_signature != base) {
      ++out.kinks;
      continue;
    }
    const double numeric = (up.eval.loss - down.eval.loss) / (2.0 * h);
    const double err = relative_error(analytic[i], numeric);
    if (err > out.max_rel_err) {
      out.max_rel_err = err;
      out.worst_index = i;
    }
    ++out.checked;
  }
  return out;
}

/// Every coordinate of blocks with at most `full_limit` entries, plus
/// `per_block` evenly strided coordinates of larger blocks. Biases are
/// always checked in full.
inline std::vector<std::size_t> gradient_coordinates(const Model& model, std::size_t full_limit = 2000,
                                                     std::size_t per_block = 600) {
  std::vector<std::size_t> coords;
  for (const auto& b : model.blocks()) {
    if (b.weight_count <= full_limit) {
      for (std::size_t j = 0; j < b.weight_count; ++j) coords.push_back(b.offset + j);
    } else {
      const std::size_t stride = b.weight_count / per_block;
      for (std::size_t j = 0; j < per_block; ++j) coords.push_back(b.offset + j * stride + (j * 7919) % stride);
    }
    for (std::size_t j = 0; j < b.bias_count; ++j) coords.push_back(b.offset + b.weight_count + j);
  }
  return coords;
}

}  // namespace walab::testing

namespace walab {

// gtest otherwise dumps the object bytes
inline void PrintTo(const WeightVector& w, std::ostream* os) {
  *os << "WeightVector[" << w.size() << "] {";
  for (std::size_t i = 0; i < std::min<std::size_t>(w.size(), 4); ++i) *os << (i ? ", " : "") << w[i];
  *os << (w.size() > 4 ? ", ...}" : "}");
}

}  // namespace walab
