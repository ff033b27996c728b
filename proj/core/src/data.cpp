#include "walab/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include <fmt/format.h>

#include "walab/errors.hpp"
#include "walab/rng.hpp"

namespace walab {

namespace {

constexpr std::size_t kCifarPixels = 3072;
constexpr std::size_t kCifarRecord = 1 + kCifarPixels;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("cannot open {}", path.string()), 0);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t big_endian_u32(const std::vector<std::uint8_t>& bytes, std::size_t offset) {
  return (static_cast<std::uint32_t>(bytes[offset]) << 24) | (static_cast<std::uint32_t>(bytes[offset + 1]) << 16) |
         (static_cast<std::uint32_t>(bytes[offset + 2]) << 8) | static_cast<std::uint32_t>(bytes[offset + 3]);
}

void append_cifar_file(const std::filesystem::path& path, Dataset& out) {
  const auto bytes = read_file(path);
  const std::size_t records = bytes.size() / kCifarRecord;
  if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
    throw FormatError(fmt::format("{}: {} bytes is not a whole number of {}-byte records", path.string(),
                                  bytes.size(), kCifarRecord),
                      records * kCifarRecord);
  }
  out.inputs.reserve(out.inputs.size() + records * kCifarPixels);
  out.labels.reserve(out.labels.size() + records);
  for (std::size_t r = 0; r < records; ++r) {
    const std::size_t base = r * kCifarRecord;
    const int label = bytes[base];
    if (label > 9) throw FormatError(fmt::format("{}: label {} out of range", path.string(), label), base);
    out.labels.push_back(label);
    for (std::size_t p = 0; p < kCifarPixels; ++p) {
      out.inputs.push_back(static_cast<float>(bytes[base + 1 + p]) / 255.0f);
    }
  }
}

}  // namespace

const char* to_string(Split split) { return split == Split::train ? "train" : "test"; }

Batch Dataset::gather(std::span<const std::size_t> indices) const {
  const std::size_t dim = sample_shape.size();
  Batch batch;
  batch.sample_shape = sample_shape;
  batch.inputs.resize(indices.size() * dim);
  batch.labels.resize(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    if (src >= size()) throw RangeError(fmt::format("sample index {} out of range for {}", src, name));
    std::copy_n(inputs.begin() + static_cast<std::ptrdiff_t>(src * dim), dim,
                batch.inputs.begin() + static_cast<std::ptrdiff_t>(i * dim));
    batch.labels[i] = labels[src];
  }
  return batch;
}

Batch Dataset::slice(std::size_t begin, std::size_t end) const {
  if (begin >= end || end > size()) throw RangeError(fmt::format("slice [{}, {}) invalid for {}", begin, end, name));
  std::vector<std::size_t> indices(end - begin);
  std::iota(indices.begin(), indices.end(), begin);
  return gather(indices);
}

Dataset load_cifar10(const std::filesystem::path& dir, Split split) {
  Dataset ds;
  ds.name = "cifar10";
  ds.split = split;
  ds.sample_shape = Shape{3, 32, 32};
  ds.class_count = 10;
  if (split == Split::train) {
    for (int i = 1; i <= 5; ++i) append_cifar_file(dir / fmt::format("data_batch_{}.bin", i), ds);
  } else {
    append_cifar_file(dir / "test_batch.bin", ds);
  }
  return ds;
}

Dataset load_mnist(const std::filesystem::path& dir, Split split) {
  const std::string prefix = split == Split::train ? "train" : "t10k";
  const auto image_path = dir / (prefix + "-images-idx3-ubyte");
  const auto label_path = dir / (prefix + "-labels-idx1-ubyte");
  const auto images = read_file(image_path);
  const auto labels = read_file(label_path);

  if (images.size() < 16) throw FormatError(image_path.string() + ": header truncated", images.size());
  if (big_endian_u32(images, 0) != 0x00000803) {
    throw FormatError(fmt::format("{}: bad magic 0x{:08x}", image_path.string(), big_endian_u32(images, 0)), 0);
  }
  if (labels.size() < 8) throw FormatError(label_path.string() + ": header truncated", labels.size());
  if (big_endian_u32(labels, 0) != 0x00000801) {
    throw FormatError(fmt::format("{}: bad magic 0x{:08x}", label_path.string(), big_endian_u32(labels, 0)), 0);
  }
  const std::size_t count = big_endian_u32(images, 4);
  const std::size_t rows = big_endian_u32(images, 8);
  const std::size_t cols = big_endian_u32(images, 12);
  const std::size_t label_count = big_endian_u32(labels, 4);
  if (count == 0 || rows == 0 || cols == 0) throw FormatError(image_path.string() + ": empty image set", 4);
  if (label_count != count) {
    throw FormatError(fmt::format("{}: {} labels for {} images", label_path.string(), label_count, count), 4);
  }
  const std::size_t pixels = rows * cols;
  if (images.size() != 16 + count * pixels) {
    throw FormatError(fmt::format("{}: expected {} bytes, found {}", image_path.string(), 16 + count * pixels,
                                  images.size()),
                      std::min(images.size(), 16 + count * pixels));
  }
  if (labels.size() != 8 + count) {
    throw FormatError(fmt::format("{}: expected {} bytes, found {}", label_path.string(), 8 + count, labels.size()),
                      std::min(labels.size(), 8 + count));
  }

  Dataset ds;
  ds.name = "mnist";
  ds.split = split;
  ds.sample_shape = Shape{1, static_cast<int>(rows), static_cast<int>(cols)};
  ds.class_count = 10;
  ds.inputs.resize(count * pixels);
  ds.labels.resize(count);
  for (std::size_t i = 0; i < count * pixels; ++i) ds.inputs[i] = static_cast<float>(images[16 + i]) / 255.0f;
  for (std::size_t i = 0; i < count; ++i) {
    const int label = labels[8 + i];
    if (label > 9) throw FormatError(fmt::format("{}: label {} out of range", label_path.string(), label), 8 + i);
    ds.labels[i] = label;
  }
  return ds;
}

Dataset synthetic_blobs(int classes, int per_class, int dim, std::uint64_t seed, double separation, Split split) {
  if (classes < 1 || per_class < 1 || dim < 1) throw SpecError("synthetic_blobs counts must be >= 1");
  if (classes > dim) throw SpecError(fmt::format("synthetic_blobs needs dim >= classes ({} < {})", dim, classes));
  Dataset ds;
  ds.name = "blobs";
  ds.split = split;
  ds.sample_shape = Shape::flat(dim);
  ds.class_count = classes;
  ds.inputs.reserve(static_cast<std::size_t>(classes) * per_class * dim);
  ds.labels.reserve(static_cast<std::size_t>(classes) * per_class);
  const double offset = separation / std::sqrt(2.0);
  SplitMix64 rng(derive_seed(seed, split == Split::train ? "blobs/train" : "blobs/test"));
  for (int k = 0; k < classes; ++k) {
    for (int i = 0; i < per_class; ++i) {
      for (int j = 0; j < dim; ++j) {
        const double centre = j == k ? offset : 0.0;
        ds.inputs.push_back(static_cast<float>(centre + rng.normal()));
      }
      ds.labels.push_back(k);
    }
  }
  return ds;
}

Dataset balanced_subset(const Dataset& source, std::size_t per_class) {
  std::vector<std::size_t> taken(static_cast<std::size_t>(source.class_count), 0);
  std::vector<std::size_t> indices;
  indices.reserve(per_class * taken.size());
  for (std::size_t i = 0; i < source.size(); ++i) {
    auto& n = taken[static_cast<std::size_t>(source.labels[i])];
    if (n < per_class) {
      ++n;
      indices.push_back(i);
    }
  }
  for (std::size_t k = 0; k < taken.size(); ++k) {
    if (taken[k] < per_class) {
      throw SpecError(fmt::format("{}: class {} has only {} samples, {} requested", source.name, k, taken[k],
                                  per_class));
    }
  }
  Dataset out;
  out.name = fmt::format("{}[{}/class]", source.name, per_class);
  out.split = source.split;
  out.sample_shape = source.sample_shape;
  out.class_count = source.class_count;
  const std::size_t dim = source.sample_shape.size();
  out.inputs.reserve(indices.size() * dim);
  for (const std::size_t i : indices) {
    const auto first = source.inputs.begin() + static_cast<std::ptrdiff_t>(i * dim);
    out.inputs.insert(out.inputs.end(), first, first + static_cast<std::ptrdiff_t>(dim));
    out.labels.push_back(source.labels[i]);
  }
  return out;
}

BatchStream::BatchStream(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed_base)
    : dataset_(&dataset), batch_size_(batch_size), seed_base_(seed_base) {
  if (batch_size == 0) throw SpecError("batch_size must be positive");
  if (dataset.size() == 0) throw SpecError("cannot stream an empty dataset");
}

std::size_t BatchStream::steps_per_epoch() const noexcept {
  return (dataset_->size() + batch_size_ - 1) / batch_size_;
}

std::vector<std::size_t> BatchStream::permutation(std::uint64_t epoch) const {
  std::vector<std::size_t> perm(dataset_->size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  SplitMix64 rng(derive_seed(seed_base_, epoch));
  for (std::size_t i = perm.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

std::vector<std::size_t> BatchStream::batch_indices(std::uint64_t epoch, std::size_t step) const {
  if (step >= steps_per_epoch()) {
    throw RangeError(fmt::format("step {} out of range (epoch has {} steps)", step, steps_per_epoch()));
  }
  const auto perm = permutation(epoch);
  const std::size_t begin = step * batch_size_;
  const std::size_t end = std::min(begin + batch_size_, perm.size());
  return {perm.begin() + static_cast<std::ptrdiff_t>(begin), perm.begin() + static_cast<std::ptrdiff_t>(end)};
}

Batch BatchStream::next_batch(std::uint64_t epoch, std::size_t step) const {
  return dataset_->gather(batch_indices(epoch, step));
}

Batch next_batch(const BatchStream& stream, std::uint64_t epoch, std::size_t step) {
  return stream.next_batch(epoch, step);
}

}  // namespace walab
