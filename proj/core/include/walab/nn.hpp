#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "walab/ndcore.hpp"

namespace walab {

/// Per-sample tensor shape. Flat vectors are {d, 1, 1}.
struct Shape {
  int channels = 1;
  int height = 1;
  int width = 1;

  [[nodiscard]] static constexpr Shape flat(int dim) { return Shape{dim, 1, 1}; }
  [[nodiscard]] constexpr std::size_t size() const {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  [[nodiscard]] constexpr bool is_flat() const { return height == 1 && width == 1; }

  friend constexpr bool operator==(Shape, Shape) = default;
};

[[nodiscard]] std::string to_string(Shape s);

enum class Activation { none, relu };

namespace layer {

/// Fully connected: out = W x + b, W is [out, in] row-major.
struct Dense {
  int in = 0;
  int out = 0;
  Activation activation = Activation::none;
};

/// 2-D convolution, stride 1, zero "same" padding (kernel must be odd).
/// Weights are [out_channels, in_channels, kernel, kernel] row-major.
struct Conv2d {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  Activation activation = Activation::none;
};

/// Non-overlapping max pooling with a size x size window.
struct MaxPool {
  int size = 2;
};

struct Relu {};
struct Flatten {};

/// Softmax + mean cross-entropy over class logits. Must be last.
struct SoftmaxXent {};

}  // namespace layer

using LayerDesc = std::variant<layer::Dense, layer::Conv2d, layer::MaxPool, layer::Relu, layer::Flatten,
                               layer::SoftmaxXent>;

/// Architecture description. The input layer is implicit in `input_shape`.
struct ModelSpec {
  std::string name;
  Shape input_shape;
  std::vector<LayerDesc> layers;
  int class_count = 0;
};

/// Throws SpecError if shapes do not chain or the head is missing.
void validate(const ModelSpec& spec);

/// Structural layer sequence, starting with "input". Activations fused into
/// conv/dense layers are not listed separately.
[[nodiscard]] std::vector<std::string> layer_kinds(const ModelSpec& spec);
[[nodiscard]] std::size_t parameter_count(const ModelSpec& spec);
[[nodiscard]] LayoutId layout_of(const ModelSpec& spec);

/// The 9-layer toy CNN for 3x32x32 inputs and 10 classes:
/// conv(3->16, 3x3) relu, maxpool 2, conv(16->32, 3x3) relu, maxpool 2,
/// flatten, dense(2048->128) relu, dense(128->10), softmax.
[[nodiscard]] ModelSpec toy_cnn_spec();
/// MLP with ReLU between hidden layers, e.g. {784, 128, 10}.
[[nodiscard]] ModelSpec mlp_spec(std::span<const int> dims);

/// Mini-batch. `inputs` holds size() samples of `sample_shape`, row-major.
struct Batch {
  Shape sample_shape;
  std::vector<double> inputs;
  std::vector<int> labels;

  [[nodiscard]] std::size_t size() const noexcept { return labels.size(); }
};

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Unnormalized totals, for accumulating over many batches in a fixed order.
struct EvalTotals {
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::size_t count = 0;

  EvalTotals& operator+=(const EvalTotals& other) {
    loss_sum += other.loss_sum;
    correct += other.correct;
    count += other.count;
    return *this;
  }
  [[nodiscard]] Evaluation mean() const;
};

struct LossAndGradient {
  double loss = 0.0;
  double accuracy = 0.0;
  WeightVector grad;
  EvalTotals totals;
};

/// Loss plus a hash of every ReLU on/off state and max-pool choice. Weights
/// with equal signatures lie on the same smooth piece of the loss.
struct ForwardTrace {
  Evaluation eval;
  std::uint64_t activation_signature = 0;
};

/// Compiled ModelSpec: resolved shapes and parameter offsets. Immutable; the
/// const member functions are safe to call concurrently.
class Model {
 public:
  explicit Model(ModelSpec spec);

  [[nodiscard]] const ModelSpec& spec() const noexcept { return spec_; }
  [[nodiscard]] LayoutId layout() const noexcept { return layout_; }
  [[nodiscard]] std::size_t parameter_count() const noexcept { return parameter_count_; }

  /// Deterministic He-uniform init: weights ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)), biases 0.
  [[nodiscard]] WeightVector init_weights(std::uint64_t seed) const;

  [[nodiscard]] Evaluation forward_loss(const WeightVector& w, const Batch& batch) const;
  [[nodiscard]] EvalTotals forward_totals(const WeightVector& w, const Batch& batch) const;
  [[nodiscard]] ForwardTrace forward_trace(const WeightVector& w, const Batch& batch) const;
  /// Mean cross-entropy loss and its gradient with respect to w.
  [[nodiscard]] LossAndGradient backward(const WeightVector& w, const Batch& batch) const;

  /// Per-parameter-block view used by tests and diagnostics.
  struct Block {
    std::size_t layer_index;
    std::size_t offset;
    std::size_t weight_count;
    std::size_t bias_count;
    std::size_t fan_in;
  };
  [[nodiscard]] const std::vector<Block>& blocks() const noexcept { return blocks_; }

  struct Resolved {
    Shape in;
    Shape out;
    std::size_t param_offset = 0;
    std::size_t weight_count = 0;
    std::size_t bias_count = 0;
  };
  [[nodiscard]] const std::vector<Resolved>& resolved() const noexcept { return resolved_; }

 private:
  struct Tape;
  void check_inputs(const WeightVector& w, const Batch& batch) const;
  [[nodiscard]] EvalTotals run_forward(const WeightVector& w, const Batch& batch, Tape* tape,
                                       std::uint64_t* signature = nullptr) const;

  ModelSpec spec_;
  std::vector<Resolved> resolved_;
  std::vector<Block> blocks_;
  std::size_t parameter_count_ = 0;
  LayoutId layout_;
};

// Free-function forms.
[[nodiscard]] WeightVector init_weights(const ModelSpec& spec, std::uint64_t seed);
[[nodiscard]] Evaluation forward_loss(const ModelSpec& spec, const WeightVector& w, const Batch& batch);
[[nodiscard]] LossAndGradient backward(const ModelSpec& spec, const WeightVector& w, const Batch& batch);

}  // namespace walab
