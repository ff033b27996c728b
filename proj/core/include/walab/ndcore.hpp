#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace walab {

/// Identifies a parameter layout. Two models with the same ordered
/// (layer, parameter shape) list hash to the same id.
struct LayoutId {
  std::uint64_t hash = 0;

  /// Layout of a plain vector of `length` reals with no model attached.
  [[nodiscard]] static LayoutId flat(std::size_t length);

  friend bool operator==(LayoutId, LayoutId) = default;
};

[[nodiscard]] std::string to_string(LayoutId id);

/// Flat, contiguous 64-bit parameter vector bound to a layout. Value type;
/// copies are independent.
class WeightVector {
 public:
  /// Throws SpecError on an empty vector and NumericError on a non-finite entry.
  WeightVector(LayoutId layout, std::vector<double> values);

  [[nodiscard]] static WeightVector zeros(LayoutId layout, std::size_t length);
  /// Vector with LayoutId::flat(values.size()).
  [[nodiscard]] static WeightVector from(std::vector<double> values);

  [[nodiscard]] LayoutId layout() const noexcept { return layout_; }
  [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
  [[nodiscard]] std::span<const double> values() const noexcept { return values_; }
  [[nodiscard]] double operator[](std::size_t i) const noexcept { return values_[i]; }

  /// Direct write access for kernels that fill or update a vector in place.
  /// Callers must restore finiteness (see require_finite) before handing the
  /// vector to anything else.
  [[nodiscard]] std::span<double> mutable_values() noexcept { return values_; }

  /// Throws NumericError naming `context` if any entry is NaN/Inf.
  void require_finite(const char* context) const;

  friend bool operator==(const WeightVector&, const WeightVector&) = default;

 private:
  LayoutId layout_;
  std::vector<double> values_;
};

/// Throws LayoutError unless both vectors share layout id and length.
void require_same_layout(const WeightVector& a, const WeightVector& b, const char* context);

/// a*x + y.
[[nodiscard]] WeightVector axpy(double a, const WeightVector& x, const WeightVector& y);
[[nodiscard]] WeightVector scaled(double a, const WeightVector& x);
/// (1 - t)*a + t*b. t may lie outside [0, 1].
[[nodiscard]] WeightVector interpolate(const WeightVector& a, const WeightVector& b, double t);
[[nodiscard]] double dot(const WeightVector& a, const WeightVector& b);
[[nodiscard]] double l2_norm(const WeightVector& w);

/// Incremental mean of accepted weight vectors. Stores the mean, not the sum.
class RunningAverage {
 public:
  /// count = 0, mean = zeros.
  [[nodiscard]] static RunningAverage empty(LayoutId layout, std::size_t length);
  /// count = 1, mean = seed.
  [[nodiscard]] static RunningAverage seeded(WeightVector seed);

  [[nodiscard]] const WeightVector& mean() const noexcept { return mean_; }
  [[nodiscard]] std::uint64_t count() const noexcept { return count_; }

 private:
  RunningAverage(WeightVector mean, std::uint64_t count) : mean_(std::move(mean)), count_(count) {}

  WeightVector mean_;
  std::uint64_t count_;

  friend RunningAverage running_average_update(const RunningAverage& state, const WeightVector& w);
};

/// mean' = (mean*count + w)/(count + 1), count' = count + 1.
[[nodiscard]] RunningAverage running_average_update(const RunningAverage& state, const WeightVector& w);

// Checkpoint format, little-endian:
//   "WAV1" | u64 length | u64 layout hash | length x f64
[[nodiscard]] std::vector<std::uint8_t> encode_checkpoint(const WeightVector& w);
[[nodiscard]] WeightVector decode_checkpoint(std::span<const std::uint8_t> bytes);
void write_checkpoint(const std::filesystem::path& path, const WeightVector& w);
[[nodiscard]] WeightVector read_checkpoint(const std::filesystem::path& path);

}  // namespace walab
