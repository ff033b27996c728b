#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "walab/nn.hpp"

namespace walab {

enum class Split { train, test };

[[nodiscard]] const char* to_string(Split split);

/// In-memory labelled dataset. Image inputs are pixel/255 in [0, 1];
/// synthetic data is unscaled. Stored as float to keep a full CIFAR-10
/// training split in memory; batches are widened to double.
struct Dataset {
  std::string name;
  Split split = Split::train;
  Shape sample_shape;
  int class_count = 0;
  std::vector<float> inputs;
  std::vector<int> labels;

  [[nodiscard]] std::size_t size() const noexcept { return labels.size(); }

  /// Samples at `indices`, in that order, as a Batch.
  [[nodiscard]] Batch gather(std::span<const std::size_t> indices) const;
  /// Samples [begin, end) in storage order.
  [[nodiscard]] Batch slice(std::size_t begin, std::size_t end) const;
};

/// Reads `data_batch_1..5.bin` (train) or `test_batch.bin` (test) from
/// `dir`: 3073-byte records of one label byte and 3072 pixel bytes stored as
/// R, G, B planes of 32x32. Throws FormatError with the byte offset of the
/// first bad record.
[[nodiscard]] Dataset load_cifar10(const std::filesystem::path& dir, Split split);

/// Reads `{train,t10k}-images-idx3-ubyte` and the matching label file from
/// `dir`. Magic numbers 0x00000803 / 0x00000801, big-endian dimensions.
[[nodiscard]] Dataset load_mnist(const std::filesystem::path& dir, Split split);

/// Gaussian blobs with unit covariance. Class k is centred at
/// (separation / sqrt(2)) * e_k, so every pair of centres is `separation`
/// apart. Requires classes <= dim.
[[nodiscard]] Dataset synthetic_blobs(int classes, int per_class, int dim, std::uint64_t seed,
                                      double separation = 6.0, Split split = Split::train);

/// First `per_class` samples of every class, kept in storage order.
/// Throws SpecError if a class has fewer samples.
[[nodiscard]] Dataset balanced_subset(const Dataset& source, std::size_t per_class);

/// Epoch-wise shuffled mini-batches. The permutation of epoch e is a
/// Fisher-Yates shuffle driven by SplitMix64(derive_seed(seed_base, e)).
class BatchStream {
 public:
  BatchStream(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed_base);

  [[nodiscard]] const Dataset& dataset() const noexcept { return *dataset_; }
  [[nodiscard]] std::size_t batch_size() const noexcept { return batch_size_; }
  [[nodiscard]] std::uint64_t seed_base() const noexcept { return seed_base_; }
  /// ceil(N / batch_size).
  [[nodiscard]] std::size_t steps_per_epoch() const noexcept;

  [[nodiscard]] std::vector<std::size_t> permutation(std::uint64_t epoch) const;
  /// Indices of batch `step` of `epoch`. Throws RangeError if step is out of range.
  [[nodiscard]] std::vector<std::size_t> batch_indices(std::uint64_t epoch, std::size_t step) const;
  [[nodiscard]] Batch next_batch(std::uint64_t epoch, std::size_t step) const;

 private:
  const Dataset* dataset_;
  std::size_t batch_size_;
  std::uint64_t seed_base_;
};

[[nodiscard]] Batch next_batch(const BatchStream& stream, std::uint64_t epoch, std::size_t step);

}  // namespace walab
