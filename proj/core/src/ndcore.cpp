#include "walab/ndcore.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

#include "walab/errors.hpp"
#include "walab/rng.hpp"

namespace walab {

namespace {

constexpr std::array<char, 4> kMagic{'W', 'A', 'V', '1'};
constexpr std::size_t kHeaderBytes = 4 + 8 + 8;

bool all_finite(std::span<const double> values) {
  for (const double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[offset + i]) << (8 * i);
  return v;
}

}  // namespace

LayoutId LayoutId::flat(std::size_t length) {
  return LayoutId{fnv1a64(fmt::format("flat:{}", length))};
}

std::string to_string(LayoutId id) { return fmt::format("{:016x}", id.hash); }

WeightVector::WeightVector(LayoutId layout, std::vector<double> values)
    : layout_(layout), values_(std::move(values)) {
  if (values_.empty()) throw SpecError("WeightVector must have length > 0");
  require_finite("WeightVector construction");
}

WeightVector WeightVector::zeros(LayoutId layout, std::size_t length) {
  return WeightVector(layout, std::vector<double>(length, 0.0));
}

WeightVector WeightVector::from(std::vector<double> values) {
  const auto layout = LayoutId::flat(values.size());
  return WeightVector(layout, std::move(values));
}

void WeightVector::require_finite(const char* context) const {
  if (!all_finite(values_)) throw NumericError(fmt::format("{}: non-finite value in weight vector", context));
}

void require_same_layout(const WeightVector& a, const WeightVector& b, const char* context) {
  if (a.layout() != b.layout() || a.size() != b.size()) {
    throw LayoutError(fmt::format("{}: layout mismatch ({} len {} vs {} len {})", context, to_string(a.layout()),
                                  a.size(), to_string(b.layout()), b.size()));
  }
}

WeightVector axpy(double a, const WeightVector& x, const WeightVector& y) {
  require_same_layout(x, y, "axpy");
  WeightVector out = y;
  auto dst = out.mutable_values();
  const auto src = x.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = a * src[i] + dst[i];
  out.require_finite("axpy");
  return out;
}

WeightVector scaled(double a, const WeightVector& x) {
  WeightVector out = x;
  for (double& v : out.mutable_values()) v *= a;
  out.require_finite("scaled");
  return out;
}

WeightVector interpolate(const WeightVector& a, const WeightVector& b, double t) {
  require_same_layout(a, b, "interpolate");
  WeightVector out = a;
  auto dst = out.mutable_values();
  const auto src = b.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += t * (src[i] - dst[i]);
  out.require_finite("interpolate");
  return out;
}

double dot(const WeightVector& a, const WeightVector& b) {
  require_same_layout(a, b, "dot");
  const auto x = a.values();
  const auto y = b.values();
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) sum += x[i] * y[i];
  return sum;
}

double l2_norm(const WeightVector& w) {
  // Scaled accumulation so huge/tiny entries do not overflow or underflow.
  double scale = 0.0;
  double ssq = 1.0;
  for (const double v : w.values()) {
    if (v == 0.0) continue;
    const double a = std::fabs(v);
    if (scale < a) {
      ssq = 1.0 + ssq * (scale / a) * (scale / a);
      scale = a;
    } else {
      ssq += (a / scale) * (a / scale);
    }
  }
  return scale * std::sqrt(ssq);
}

RunningAverage RunningAverage::empty(LayoutId layout, std::size_t length) {
  return RunningAverage(WeightVector::zeros(layout, length), 0);
}

RunningAverage RunningAverage::seeded(WeightVector seed) { return RunningAverage(std::move(seed), 1); }

RunningAverage running_average_update(const RunningAverage& state, const WeightVector& w) {
  require_same_layout(state.mean(), w, "running_average_update");
  w.require_finite("running_average_update");
  WeightVector mean = state.mean();
  auto dst = mean.mutable_values();
  const auto src = w.values();
  // mean + (w - mean)/(n + 1): exact when w equals the mean
  const double denom = static_cast<double>(state.count()) + 1.0;
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += (src[i] - dst[i]) / denom;
  mean.require_finite("running_average_update");
  return RunningAverage(std::move(mean), state.count() + 1);
}

std::vector<std::uint8_t> encode_checkpoint(const WeightVector& w) {
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + 8 * w.size());
  out.insert(out.end(), kMagic.begin(), kMagic.end());
  put_u64(out, w.size());
  put_u64(out, w.layout().hash);
  for (const double v : w.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

WeightVector decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes) throw FormatError("checkpoint header truncated", bytes.size());
  if (std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) throw FormatError("bad checkpoint magic", 0);
  const std::uint64_t length = get_u64(bytes, 4);
  const LayoutId layout{get_u64(bytes, 12)};
  if (length == 0) throw FormatError("checkpoint has zero length", 4);
  const std::uint64_t payload = bytes.size() - kHeaderBytes;
  if (payload / 8 != length || payload % 8 != 0) {
    throw FormatError(fmt::format("checkpoint payload holds {} bytes, expected {}", payload, length * 8),
                      kHeaderBytes + std::min<std::uint64_t>(payload, length * 8));
  }
  std::vector<double> values(length);
  for (std::size_t i = 0; i < length; ++i) {
    values[i] = std::bit_cast<double>(get_u64(bytes, kHeaderBytes + 8 * i));
    if (!std::isfinite(values[i])) throw FormatError("non-finite value in checkpoint", kHeaderBytes + 8 * i);
  }
  return WeightVector(layout, std::move(values));
}

void write_checkpoint(const std::filesystem::path& path, const WeightVector& w) {
  const auto bytes = encode_checkpoint(w);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(fmt::format("cannot open {} for writing", path.string()), 0);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(fmt::format("short write to {}", path.string()), 0);
}

WeightVector read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("cannot open checkpoint {}", path.string()), 0);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace walab
