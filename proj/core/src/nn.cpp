#include "walab/nn.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>
#include <fmt/format.h>

#include "overloaded.hpp"
#include "walab/errors.hpp"
#include "walab/rng.hpp"

namespace walab {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

// Eigen peels unaligned heads off its reductions, so the summation order
// depends on where a buffer starts. Everything it sees lives in aligned
// storage to keep results independent of the heap layout.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

std::span<const double> aligned_copy(std::span<const double> src, Buffer& dst) {
  dst.assign(src.begin(), src.end());
  return dst;
}

const char* kind_name(const LayerDesc& layer) {
  return std::visit(Overloaded{
                        [](const layer::Dense&) { return "dense"; },
                        [](const layer::Conv2d&) { return "conv"; },
                        [](const layer::MaxPool&) { return "maxpool"; },
                        [](const layer::Relu&) { return "relu"; },
                        [](const layer::Flatten&) { return "flatten"; },
                        [](const layer::SoftmaxXent&) { return "softmax"; },
                    },
                    layer);
}

// Samples per conv GEMM.
constexpr Eigen::Index kConvGroup = 4;

// Fills the H*W columns of one [C, H, W] sample into cols [C*k*k, ld] with
// zero "same" padding.
void im2col(const double* x, int channels, int height, int width, int kernel, double* cols, std::ptrdiff_t ld) {
  const int pad = kernel / 2;
  const int plane = height * width;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        double* row = cols + static_cast<std::ptrdiff_t>((c * kernel + ky) * kernel + kx) * ld;
        const double* src = x + static_cast<std::ptrdiff_t>(c) * plane;
        for (int oy = 0; oy < height; ++oy) {
          const int iy = oy + ky - pad;
          double* out = row + oy * width;
          if (iy < 0 || iy >= height) {
            std::fill(out, out + width, 0.0);
            continue;
          }
          const double* in_row = src + iy * width;
          for (int ox = 0; ox < width; ++ox) {
            const int ix = ox + kx - pad;
            out[ox] = (ix >= 0 && ix < width) ? in_row[ix] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates cols back into dx.
void col2im(const double* cols, int channels, int height, int width, int kernel, double* dx, std::ptrdiff_t ld) {
  const int pad = kernel / 2;
  const int plane = height * width;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const double* row = cols + static_cast<std::ptrdiff_t>((c * kernel + ky) * kernel + kx) * ld;
        double* dst = dx + static_cast<std::ptrdiff_t>(c) * plane;
        for (int oy = 0; oy < height; ++oy) {
          const int iy = oy + ky - pad;
          if (iy < 0 || iy >= height) continue;
          const double* in = row + oy * width;
          double* out_row = dst + iy * width;
          for (int ox = 0; ox < width; ++ox) {
            const int ix = ox + kx - pad;
            if (ix >= 0 && ix < width) out_row[ix] += in[ox];
          }
        }
      }
    }
  }
}

void relu_inplace(std::span<double> values, std::uint64_t* signature) {
  if (signature) {
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      word = (word << 1) | (values[i] > 0.0 ? 1u : 0u);
      if (i % 64 == 63 || i + 1 == values.size()) *signature = splitmix64_mix(*signature ^ word);
    }
  }
  for (double& v : values) v = v > 0.0 ? v : 0.0;
}

// dz = da where out > 0, else 0 (derivative at exactly 0 is 0).
void relu_mask(std::span<double> grad, std::span<const double> out) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(out[i] > 0.0)) grad[i] = 0.0;
  }
}

int argmax_first(const double* row, int n) {
  int best = 0;
  for (int k = 1; k < n; ++k) {
    if (row[k] > row[best]) best = k;
  }
  return best;
}

}  // namespace

std::string to_string(Shape s) { return fmt::format("{}x{}x{}", s.channels, s.height, s.width); }

Evaluation EvalTotals::mean() const {
  if (count == 0) return {};
  const auto n = static_cast<double>(count);
  return Evaluation{loss_sum / n, static_cast<double>(correct) / n};
}

// ---------------------------------------------------------------------------
// Spec validation and resolution

namespace {

struct Resolution {
  std::vector<Model::Resolved> layers;
  std::size_t parameter_count = 0;
  std::string canonical;  // ordered (layer, shape) list, hashed into the layout id
};

Resolution resolve(const ModelSpec& spec) {
  if (spec.class_count < 1) throw SpecError("class_count must be positive");
  if (spec.input_shape.channels < 1 || spec.input_shape.height < 1 || spec.input_shape.width < 1) {
    throw SpecError(fmt::format("invalid input shape {}", to_string(spec.input_shape)));
  }
  if (spec.layers.empty() || !std::holds_alternative<layer::SoftmaxXent>(spec.layers.back())) {
    throw SpecError("model must end with a softmax cross-entropy head");
  }

  Resolution res;
  res.canonical = fmt::format("input:{}", to_string(spec.input_shape));
  Shape shape = spec.input_shape;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    Model::Resolved r;
    r.in = shape;
    r.param_offset = res.parameter_count;
    const auto where = [&](const std::string& msg) {
      return SpecError(fmt::format("layer {} ({}): {}", i, kind_name(spec.layers[i]), msg));
    };
    std::visit(Overloaded{
                   [&](const layer::Dense& d) {
                     if (d.in < 1 || d.out < 1) throw where("dimensions must be positive");
                     if (!shape.is_flat() || static_cast<int>(shape.size()) != d.in) {
                       throw where(fmt::format("expects flat input of {} but gets {}", d.in, to_string(shape)));
                     }
                     r.out = Shape::flat(d.out);
                     r.weight_count = static_cast<std::size_t>(d.in) * static_cast<std::size_t>(d.out);
                     r.bias_count = static_cast<std::size_t>(d.out);
                     res.canonical += fmt::format(";dense:{}x{}:{}", d.out, d.in, static_cast<int>(d.activation));
                   },
                   [&](const layer::Conv2d& c) {
                     if (c.in_channels < 1 || c.out_channels < 1) throw where("channels must be positive");
                     if (c.kernel < 1 || c.kernel % 2 == 0) throw where("kernel must be odd and positive");
                     if (shape.channels != c.in_channels) {
                       throw where(fmt::format("expects {} channels but gets {}", c.in_channels, to_string(shape)));
                     }
                     r.out = Shape{c.out_channels, shape.height, shape.width};
                     r.weight_count = static_cast<std::size_t>(c.out_channels) *
                                      static_cast<std::size_t>(c.in_channels * c.kernel * c.kernel);
                     r.bias_count = static_cast<std::size_t>(c.out_channels);
                     res.canonical += fmt::format(";conv:{}x{}x{}x{}:{}", c.out_channels, c.in_channels, c.kernel,
                                                  c.kernel, static_cast<int>(c.activation));
                   },
                   [&](const layer::MaxPool& p) {
                     if (p.size < 1) throw where("pool size must be positive");
                     if (shape.height % p.size != 0 || shape.width % p.size != 0) {
                       throw where(fmt::format("pool {} does not divide {}", p.size, to_string(shape)));
                     }
                     r.out = Shape{shape.channels, shape.height / p.size, shape.width / p.size};
                     res.canonical += fmt::format(";maxpool:{}", p.size);
                   },
                   [&](const layer::Relu&) {
                     r.out = shape;
                     res.canonical += ";relu";
                   },
                   [&](const layer::Flatten&) {
                     r.out = Shape::flat(static_cast<int>(shape.size()));
                     res.canonical += ";flatten";
                   },
                   [&](const layer::SoftmaxXent&) {
                     if (i + 1 != spec.layers.size()) throw where("softmax head must be the last layer");
                     if (!shape.is_flat() || static_cast<int>(shape.size()) != spec.class_count) {
                       throw where(fmt::format("head expects {} logits but gets {}", spec.class_count,
                                               to_string(shape)));
                     }
                     r.out = shape;
                     res.canonical += fmt::format(";softmax:{}", spec.class_count);
                   },
               },
               spec.layers[i]);
    res.parameter_count += r.weight_count + r.bias_count;
    res.layers.push_back(r);
    shape = r.out;
  }
  if (res.parameter_count == 0) throw SpecError("model has no trainable parameters");
  return res;
}

}  // namespace

void validate(const ModelSpec& spec) { (void)resolve(spec); }

std::vector<std::string> layer_kinds(const ModelSpec& spec) {
  std::vector<std::string> kinds{"input"};
  for (const auto& layer : spec.layers) kinds.emplace_back(kind_name(layer));
  return kinds;
}

std::size_t parameter_count(const ModelSpec& spec) { return resolve(spec).parameter_count; }

LayoutId layout_of(const ModelSpec& spec) { return LayoutId{fnv1a64(resolve(spec).canonical)}; }

ModelSpec toy_cnn_spec() {
  using namespace layer;
  return ModelSpec{
      .name = "toy_cnn",
      .input_shape = Shape{3, 32, 32},
      .layers = {Conv2d{3, 16, 3, Activation::relu}, MaxPool{2}, Conv2d{16, 32, 3, Activation::relu}, MaxPool{2},
                 Flatten{}, Dense{32 * 8 * 8, 128, Activation::relu}, Dense{128, 10, Activation::none},
                 SoftmaxXent{}},
      .class_count = 10,
  };
}

ModelSpec mlp_spec(std::span<const int> dims) {
  if (dims.size() < 2) throw SpecError("mlp_spec needs at least input and output dimensions");
  ModelSpec spec;
  spec.name = "mlp";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) spec.name += i == 1 ? "_" : "x";
    if (i) spec.name += std::to_string(dims[i]);
  }
  spec.input_shape = Shape::flat(dims.front());
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const bool hidden = i + 2 < dims.size();
    spec.layers.emplace_back(layer::Dense{dims[i], dims[i + 1], hidden ? Activation::relu : Activation::none});
  }
  spec.layers.emplace_back(layer::SoftmaxXent{});
  spec.class_count = dims.back();
  validate(spec);
  return spec;
}

// ---------------------------------------------------------------------------
// Model

struct Model::Tape {
  // outputs[l] is the output of layer l; the input of layer 0 is the batch.
  std::vector<Buffer> outputs;
  Buffer input;
  // im2col buffers per conv layer, [N][C*k*k*H*W].
  std::vector<Buffer> cols;
  // argmax source index per pooled output.
  std::vector<std::vector<std::uint32_t>> pool_index;
  // softmax probabilities [N, K].
  Buffer probs;
};

Model::Model(ModelSpec spec) : spec_(std::move(spec)) {
  auto res = resolve(spec_);
  resolved_ = std::move(res.layers);
  parameter_count_ = res.parameter_count;
  layout_ = LayoutId{fnv1a64(res.canonical)};
  for (std::size_t i = 0; i < resolved_.size(); ++i) {
    const auto& r = resolved_[i];
    if (r.weight_count == 0) continue;
    std::size_t fan_in = 0;
    if (const auto* d = std::get_if<layer::Dense>(&spec_.layers[i])) fan_in = static_cast<std::size_t>(d->in);
    if (const auto* c = std::get_if<layer::Conv2d>(&spec_.layers[i])) {
      fan_in = static_cast<std::size_t>(c->in_channels * c->kernel * c->kernel);
    }
    blocks_.push_back(Block{i, r.param_offset, r.weight_count, r.bias_count, fan_in});
  }
}

WeightVector Model::init_weights(std::uint64_t seed) const {
  std::vector<double> values(parameter_count_, 0.0);
  for (const auto& block : blocks_) {
    SplitMix64 rng(derive_seed(seed, block.layer_index));
    const double bound = std::sqrt(6.0 / static_cast<double>(block.fan_in));
    for (std::size_t j = 0; j < block.weight_count; ++j) values[block.offset + j] = rng.uniform(-bound, bound);
  }
  return WeightVector(layout_, std::move(values));
}

void Model::check_inputs(const WeightVector& w, const Batch& batch) const {
  if (w.layout() != layout_ || w.size() != parameter_count_) {
    throw LayoutError(fmt::format("weights (layout {}, len {}) do not match model {} (layout {}, len {})",
                                  to_string(w.layout()), w.size(), spec_.name, to_string(layout_),
                                  parameter_count_));
  }
  if (batch.size() == 0) throw SpecError("batch must contain at least one sample");
  if (batch.sample_shape.size() != spec_.input_shape.size() ||
      batch.inputs.size() != batch.size() * spec_.input_shape.size()) {
    throw LayoutError(fmt::format("batch samples of shape {} do not match model input {}",
                                  to_string(batch.sample_shape), to_string(spec_.input_shape)));
  }
  for (const int label : batch.labels) {
    if (label < 0 || label >= spec_.class_count) throw RangeError(fmt::format("label {} out of range", label));
  }
}

EvalTotals Model::run_forward(const WeightVector& w, const Batch& batch, Tape* tape, std::uint64_t* signature) const {
  const auto n = static_cast<Eigen::Index>(batch.size());
  thread_local Buffer param_buffer;
  const std::span<const double> params = aligned_copy(w.values(), param_buffer);
  thread_local Buffer current;
  thread_local Buffer next;
  current.assign(batch.inputs.begin(), batch.inputs.end());
  if (tape) tape->input = current;
  if (tape) {
    tape->outputs.resize(spec_.layers.size());
    tape->cols.resize(spec_.layers.size());
    tape->pool_index.resize(spec_.layers.size());
  }

  EvalTotals totals;
  for (std::size_t l = 0; l < spec_.layers.size(); ++l) {
    const auto& r = resolved_[l];
    const double* weight = params.data() + r.param_offset;
    const double* bias = weight + r.weight_count;
    std::visit(
        Overloaded{
            [&](const layer::Dense& d) {
              next.resize(static_cast<std::size_t>(n) * static_cast<std::size_t>(d.out));
              ConstMatMap x(current.data(), n, d.in);
              ConstMatMap wm(weight, d.out, d.in);
              ConstVecMap b(bias, d.out);
              MatMap y(next.data(), n, d.out);
              y.noalias() = x * wm.transpose();
              y.rowwise() += b.transpose();
              if (d.activation == Activation::relu) relu_inplace(next, signature);
            },
            [&](const layer::Conv2d& c) {
              const int plane = r.in.height * r.in.width;
              const int patch = c.in_channels * c.kernel * c.kernel;
              const std::size_t col_size = static_cast<std::size_t>(patch) * static_cast<std::size_t>(plane);
              next.resize(static_cast<std::size_t>(n) * r.out.size());
              thread_local Buffer local_cols;
              Buffer& cols = tape ? tape->cols[l] : local_cols;
              cols.resize(col_size * static_cast<std::size_t>(tape ? n : std::min(n, kConvGroup)));
              ConstMatMap wm(weight, c.out_channels, patch);
              ConstVecMap b(bias, c.out_channels);
              RowMatrix y;
              // Samples [g0, g0 + gs) form one [patch, gs * plane] block.
              for (Eigen::Index g0 = 0; g0 < n; g0 += kConvGroup) {
                const Eigen::Index gs = std::min(kConvGroup, n - g0);
                const std::ptrdiff_t ld = gs * plane;
                double* block = cols.data() + (tape ? col_size * static_cast<std::size_t>(g0) : 0);
                for (Eigen::Index j = 0; j < gs; ++j) {
                  im2col(current.data() + static_cast<std::size_t>(g0 + j) * r.in.size(), c.in_channels,
                         r.in.height, r.in.width, c.kernel, block + j * plane, ld);
                }
                y.noalias() = wm * ConstMatMap(block, patch, ld);
                for (Eigen::Index j = 0; j < gs; ++j) {
                  MatMap out(next.data() + static_cast<std::size_t>(g0 + j) * r.out.size(), c.out_channels, plane);
                  out = y.middleCols(j * plane, plane);
                  out.colwise() += b;
                }
              }
              if (c.activation == Activation::relu) relu_inplace(next, signature);
            },
            [&](const layer::MaxPool& p) {
              next.resize(static_cast<std::size_t>(n) * r.out.size());
              std::vector<std::uint32_t>* index = nullptr;
              if (tape) {
                index = &tape->pool_index[l];
                index->resize(next.size());
              }
              const int ih = r.in.height, iw = r.in.width, oh = r.out.height, ow = r.out.width;
              for (Eigen::Index s = 0; s < n; ++s) {
                for (int ch = 0; ch < r.in.channels; ++ch) {
                  const std::size_t in_base = (static_cast<std::size_t>(s) * r.in.channels + ch) * ih * iw;
                  const std::size_t out_base = (static_cast<std::size_t>(s) * r.out.channels + ch) * oh * ow;
                  for (int oy = 0; oy < oh; ++oy) {
                    for (int ox = 0; ox < ow; ++ox) {
                      std::size_t best = in_base + static_cast<std::size_t>(oy * p.size) * iw + ox * p.size;
                      for (int ky = 0; ky < p.size; ++ky) {
                        for (int kx = 0; kx < p.size; ++kx) {
                          const std::size_t at =
                              in_base + static_cast<std::size_t>(oy * p.size + ky) * iw + ox * p.size + kx;
                          if (current[at] > current[best]) best = at;
                        }
                      }
                      const std::size_t o = out_base + static_cast<std::size_t>(oy) * ow + ox;
                      next[o] = current[best];
                      if (index) (*index)[o] = static_cast<std::uint32_t>(best);
                      if (signature) *signature = splitmix64_mix(*signature ^ best);
                    }
                  }
                }
              }
            },
            [&](const layer::Relu&) {
              next = current;
              relu_inplace(next, signature);
            },
            [&](const layer::Flatten&) { next = current; },
            [&](const layer::SoftmaxXent&) {
              const int k = spec_.class_count;
              if (tape) tape->probs.resize(current.size());
              for (Eigen::Index s = 0; s < n; ++s) {
                const double* z = current.data() + static_cast<std::size_t>(s) * k;
                double zmax = z[0];
                for (int j = 1; j < k; ++j) zmax = std::max(zmax, z[j]);
                double denom = 0.0;
                for (int j = 0; j < k; ++j) denom += std::exp(z[j] - zmax);
                const double log_denom = std::log(denom);
                const int label = batch.labels[static_cast<std::size_t>(s)];
                totals.loss_sum += (zmax + log_denom) - z[label];
                if (argmax_first(z, k) == label) ++totals.correct;
                if (tape) {
                  double* p = tape->probs.data() + static_cast<std::size_t>(s) * k;
                  for (int j = 0; j < k; ++j) p[j] = std::exp(z[j] - zmax - log_denom);
                }
              }
              totals.count = static_cast<std::size_t>(n);
              next = current;
            },
        },
        spec_.layers[l]);
    if (std::holds_alternative<layer::SoftmaxXent>(spec_.layers[l])) {
      for (const double v : current) {
        if (!std::isfinite(v)) throw NumericError(fmt::format("non-finite logit in model {}", spec_.name));
      }
    }
    if (tape) tape->outputs[l] = next;
    current.swap(next);
  }
  if (!std::isfinite(totals.loss_sum)) throw NumericError(fmt::format("non-finite loss in model {}", spec_.name));
  return totals;
}

EvalTotals Model::forward_totals(const WeightVector& w, const Batch& batch) const {
  check_inputs(w, batch);
  return run_forward(w, batch, nullptr);
}

Evaluation Model::forward_loss(const WeightVector& w, const Batch& batch) const {
  return forward_totals(w, batch).mean();
}

ForwardTrace Model::forward_trace(const WeightVector& w, const Batch& batch) const {
  check_inputs(w, batch);
  ForwardTrace out;
  out.eval = run_forward(w, batch, nullptr, &out.activation_signature).mean();
  return out;
}

LossAndGradient Model::backward(const WeightVector& w, const Batch& batch) const {
  check_inputs(w, batch);
  thread_local Tape tape;  // buffers reused between calls
  const EvalTotals totals = run_forward(w, batch, &tape);
  const auto n = static_cast<Eigen::Index>(batch.size());
  const double inv_n = 1.0 / static_cast<double>(n);
  thread_local Buffer param_buffer;
  const std::span<const double> params = aligned_copy(w.values(), param_buffer);

  thread_local Buffer grad;
  grad.assign(parameter_count_, 0.0);
  thread_local Buffer upstream;  // dL/d(output of layer l)
  thread_local Buffer downstream;

  for (std::size_t li = spec_.layers.size(); li-- > 0;) {
    const auto& r = resolved_[li];
    const std::span<const double> input =
        li == 0 ? std::span<const double>(tape.input) : std::span<const double>(tape.outputs[li - 1]);
    const bool need_input_grad = li > 0;
    const double* weight = params.data() + r.param_offset;
    double* gweight = grad.data() + r.param_offset;
    double* gbias = gweight + r.weight_count;

    std::visit(
        Overloaded{
            [&](const layer::SoftmaxXent&) {
              const int k = spec_.class_count;
              downstream = tape.probs;
              for (Eigen::Index s = 0; s < n; ++s) {
                double* g = downstream.data() + static_cast<std::size_t>(s) * k;
                g[batch.labels[static_cast<std::size_t>(s)]] -= 1.0;
                for (int j = 0; j < k; ++j) g[j] *= inv_n;
              }
            },
            [&](const layer::Dense& d) {
              if (d.activation == Activation::relu) relu_mask(upstream, tape.outputs[li]);
              ConstMatMap dz(upstream.data(), n, d.out);
              ConstMatMap x(input.data(), n, d.in);
              MatMap(gweight, d.out, d.in).noalias() += dz.transpose() * x;
              VecMap(gbias, d.out).noalias() += dz.colwise().sum().transpose();
              if (need_input_grad) {
                downstream.resize(static_cast<std::size_t>(n) * static_cast<std::size_t>(d.in));
                MatMap(downstream.data(), n, d.in).noalias() = dz * ConstMatMap(weight, d.out, d.in);
              }
            },
            [&](const layer::Conv2d& c) {
              if (c.activation == Activation::relu) relu_mask(upstream, tape.outputs[li]);
              const int plane = r.in.height * r.in.width;
              const int patch = c.in_channels * c.kernel * c.kernel;
              const std::size_t col_size = static_cast<std::size_t>(patch) * static_cast<std::size_t>(plane);
              ConstMatMap wm(weight, c.out_channels, patch);
              MatMap gw(gweight, c.out_channels, patch);
              VecMap gb(gbias, c.out_channels);
              if (need_input_grad) downstream.assign(static_cast<std::size_t>(n) * r.in.size(), 0.0);
              RowMatrix dz, dcols;
              for (Eigen::Index g0 = 0; g0 < n; g0 += kConvGroup) {
                const Eigen::Index gs = std::min(kConvGroup, n - g0);
                const std::ptrdiff_t ld = gs * plane;
                dz.resize(c.out_channels, ld);
                for (Eigen::Index j = 0; j < gs; ++j) {
                  dz.middleCols(j * plane, plane) = ConstMatMap(
                      upstream.data() + static_cast<std::size_t>(g0 + j) * r.out.size(), c.out_channels, plane);
                }
                ConstMatMap cols(tape.cols[li].data() + col_size * static_cast<std::size_t>(g0), patch, ld);
                gw.noalias() += dz * cols.transpose();
                gb.noalias() += dz.rowwise().sum();
                if (need_input_grad) {
                  dcols.noalias() = wm.transpose() * dz;
                  for (Eigen::Index j = 0; j < gs; ++j) {
                    col2im(dcols.data() + j * plane, c.in_channels, r.in.height, r.in.width, c.kernel,
                           downstream.data() + static_cast<std::size_t>(g0 + j) * r.in.size(), ld);
                  }
                }
              }
            },
            [&](const layer::MaxPool&) {
              downstream.assign(static_cast<std::size_t>(n) * r.in.size(), 0.0);
              const auto& index = tape.pool_index[li];
              for (std::size_t o = 0; o < upstream.size(); ++o) downstream[index[o]] += upstream[o];
            },
            [&](const layer::Relu&) {
              downstream = upstream;
              relu_mask(downstream, tape.outputs[li]);
            },
            [&](const layer::Flatten&) { downstream = upstream; },
        },
        spec_.layers[li]);
    upstream.swap(downstream);
  }

  WeightVector g(layout_, std::vector<double>(grad.begin(), grad.end()));
  const Evaluation eval = totals.mean();
  return LossAndGradient{eval.loss, eval.accuracy, std::move(g), totals};
}

WeightVector init_weights(const ModelSpec& spec, std::uint64_t seed) { return Model(spec).init_weights(seed); }

Evaluation forward_loss(const ModelSpec& spec, const WeightVector& w, const Batch& batch) {
  return Model(spec).forward_loss(w, batch);
}

LossAndGradient backward(const ModelSpec& spec, const WeightVector& w, const Batch& batch) {
  return Model(spec).backward(w, batch);
}

}  // namespace walab
