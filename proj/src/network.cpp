#include "dne/network.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dne/dropout.hpp"
#include "dne/error.hpp"
#include "dne/random.hpp"
#include "dne/tensor.hpp"

namespace dne {

namespace {

// Offsets of every parameter block; validated once per call.
struct Layout {
  int conv1_h = 0, conv1_w = 0;  // after conv1
  int pool1_h = 0, pool1_w = 0;
  int conv2_h = 0, conv2_w = 0;
  int pool2_h = 0, pool2_w = 0;
  int flat = 0;
  int concat = 0;
  ParamSlice conv1_w_slice, conv1_b, conv2_w_slice, conv2_b;
  ParamSlice branch_w, branch_b, head_w, head_b, out_w, out_b;
  std::size_t total = 0;
};

std::string shape_str(int h, int w) { return std::to_string(h) + "x" + std::to_string(w); }

Layout make_layout(const NetworkSpec& spec) {
  if (spec.conv1_channels <= 0 || spec.conv2_channels <= 0 || spec.branch_width <= 0 ||
      spec.head_width <= 0) {
    throw ShapeError("network: channel and width counts must be positive");
  }
  if (!(spec.dropout_rate >= 0.0 && spec.dropout_rate < 1.0)) {
    throw ShapeError("network: dropout_rate must lie in [0, 1)");
  }
  Layout l;
  if (spec.input_height < 3 || spec.input_width < 3) {
    throw ShapeError("network: input " + shape_str(spec.input_height, spec.input_width) +
                     " is too small for conv1");
  }
  l.conv1_h = spec.input_height - 2;
  l.conv1_w = spec.input_width - 2;
  l.pool1_h = l.conv1_h / 2;
  l.pool1_w = l.conv1_w / 2;
  if (l.pool1_h < 3 || l.pool1_w < 3) {
    throw ShapeError("network: pool1 output " + shape_str(l.pool1_h, l.pool1_w) +
                     " is too small for conv2");
  }
  l.conv2_h = l.pool1_h - 2;
  l.conv2_w = l.pool1_w - 2;
  l.pool2_h = l.conv2_h / 2;
  l.pool2_w = l.conv2_w / 2;
  if (l.pool2_h < 1 || l.pool2_w < 1) {
    throw ShapeError("network: conv2 output " + shape_str(l.conv2_h, l.conv2_w) +
                     " is too small for pool2");
  }
  l.flat = spec.conv2_channels * l.pool2_h * l.pool2_w;
  l.concat = spec.branch_width * spec.branch_count();

  std::size_t at = 0;
  auto take = [&at](std::size_t n) {
    ParamSlice s{at, n};
    at += n;
    return s;
  };
  l.conv1_w_slice = take(static_cast<std::size_t>(spec.conv1_channels) * 9);
  l.conv1_b = take(spec.conv1_channels);
  l.conv2_w_slice = take(static_cast<std::size_t>(spec.conv2_channels) * spec.conv1_channels * 9);
  l.conv2_b = take(spec.conv2_channels);
  l.branch_w = take(static_cast<std::size_t>(spec.branch_width) * l.flat);
  l.branch_b = take(spec.branch_width);
  l.head_w = take(static_cast<std::size_t>(spec.head_width) * l.concat);
  l.head_b = take(spec.head_width);
  l.out_w = take(static_cast<std::size_t>(NetworkSpec::kClasses) * spec.head_width);
  l.out_b = take(NetworkSpec::kClasses);
  l.total = at;
  return l;
}

template <typename T>
std::span<const T> slice(std::span<const T> w, ParamSlice s) {
  return w.subspan(s.offset, s.count);
}
template <typename T>
std::span<T> slice(std::span<T> w, ParamSlice s) {
  return w.subspan(s.offset, s.count);
}

// v - v is 0 for finite v and NaN otherwise, so one vectorizable sum detects
// any NaN or infinity.
template <typename T>
void require_finite(std::span<const T> values, const char* layer) {
  T probe{0};
  for (T v : values) probe += v - v;
  if (probe != T{0}) throw NumericError(std::string("non-finite value in layer ") + layer);
}

template <typename T>
void relu_inplace(std::span<T> v) {
  for (T& x : v) x = x > T{0} ? x : T{0};
}

template <typename T>
void relu_checked(std::span<T> v, const char* layer) {
  require_finite<T>(v, layer);
  relu_inplace<T>(v);
}

// Zeroes gradient where the (post-relu) activation was not positive.
template <typename T>
void relu_backward(std::span<const T> activation, std::span<T> grad) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(activation[i] > T{0})) grad[i] = T{0};
  }
}

template <typename T>
struct BranchCache {
  Tensor3<T> input;
  Tensor3<T> conv1;  // post-relu
  PoolResult<T> pool1;
  Tensor3<T> conv2;  // post-relu
  PoolResult<T> pool2;
  std::vector<T> hidden;  // post-relu, pre-dropout
  std::vector<T> mask;    // empty when dropout is inactive
  std::vector<T> output;  // post-dropout
};

template <typename T>
class Engine {
 public:
  Engine(const NetworkSpec& spec, std::span<const T> w) : spec_(spec), layout_(make_layout(spec)), w_(w) {
    if (w.size() != layout_.total) {
      throw ShapeError("weight vector has " + std::to_string(w.size()) + " values, spec expects " +
                       std::to_string(layout_.total));
    }
  }

  std::array<T, 2> forward(const OrbitSample& sample, ForwardMode mode, std::uint64_t rng_seed) {
    const bool dropout = mode == ForwardMode::StochasticDropout;
    if (dropout && !(spec_.dropout_rate > 0.0)) {
      throw PreconditionError("stochastic dropout requested on a spec without dropout");
    }
    const int branches = spec_.branch_count();
    const Image* images[2] = {&sample.left, &sample.right};
    concat_.assign(layout_.concat, T{0});
    for (int b = 0; b < branches; ++b) {
      run_branch(*images[b], b, dropout, rng_seed, cache_[b]);
      std::copy(cache_[b].output.begin(), cache_[b].output.end(),
                concat_.begin() + static_cast<std::ptrdiff_t>(b) * spec_.branch_width);
    }
    head_hidden_.assign(spec_.head_width, T{0});
    kernels::linear<T>(slice(w_, layout_.head_w), slice(w_, layout_.head_b), concat_, head_hidden_);
    relu_checked<T>(head_hidden_, "head.fc");
    kernels::linear<T>(slice(w_, layout_.out_w), slice(w_, layout_.out_b), head_hidden_, logits_);
    require_finite<T>(logits_, "head.out");
    const T m = std::max(logits_[0], logits_[1]);
    const T e0 = std::exp(logits_[0] - m);
    const T e1 = std::exp(logits_[1] - m);
    const T z = e0 + e1;
    probs_ = {e0 / z, e1 / z};
    log_partition_ = m + std::log(z);
    return probs_;
  }

  T backward(const OrbitSample& sample, Label label, ForwardMode mode, std::uint64_t rng_seed,
             std::span<T> grad) {
    if (label != Label::Normal && label != Label::Tumor) {
      throw PreconditionError("label must be tumor or normal");
    }
    if (grad.size() != layout_.total) throw ShapeError("gradient buffer has the wrong length");
    forward(sample, mode, rng_seed);
    std::fill(grad.begin(), grad.end(), T{0});
    const int target = static_cast<int>(label);
    const T loss = log_partition_ - logits_[target];

    std::array<T, 2> dlogits = probs_;
    dlogits[target] -= T{1};

    std::vector<T> dhead(spec_.head_width);
    kernels::linear_backward<T>(slice(w_, layout_.out_w), head_hidden_, dlogits,
                                slice(grad, layout_.out_w), slice(grad, layout_.out_b), dhead);
    relu_backward<T>(head_hidden_, dhead);
    std::vector<T> dconcat(layout_.concat);
    kernels::linear_backward<T>(slice(w_, layout_.head_w), concat_, dhead,
                                slice(grad, layout_.head_w), slice(grad, layout_.head_b), dconcat);

    for (int b = 0; b < spec_.branch_count(); ++b) {
      std::span<const T> dout(dconcat.data() + static_cast<std::ptrdiff_t>(b) * spec_.branch_width,
                              spec_.branch_width);
      branch_backward(cache_[b], dout, grad);
    }
    return loss;
  }

 private:
  void run_branch(const Image& image, int branch, bool dropout, std::uint64_t rng_seed,
                  BranchCache<T>& c) {
    if (image.height != spec_.input_height || image.width != spec_.input_width) {
      throw ShapeError("input image " + shape_str(image.height, image.width) + " does not match spec " +
                       shape_str(spec_.input_height, spec_.input_width));
    }
    if (c.input.height != image.height || c.input.width != image.width) {
      c.input = Tensor3<T>(1, image.height, image.width);
    }
    std::copy(image.pixels.begin(), image.pixels.end(), c.input.data.begin());

    kernels::conv3x3<T>(c.input, slice(w_, layout_.conv1_w_slice), slice(w_, layout_.conv1_b),
                        spec_.conv1_channels, c.conv1);
    relu_checked<T>(c.conv1.data, "branch.conv1");
    kernels::maxpool2<T>(c.conv1, PoolEdge::Truncate, c.pool1);

    kernels::conv3x3<T>(c.pool1.output, slice(w_, layout_.conv2_w_slice), slice(w_, layout_.conv2_b),
                        spec_.conv2_channels, c.conv2);
    relu_checked<T>(c.conv2.data, "branch.conv2");
    kernels::maxpool2<T>(c.conv2, PoolEdge::Truncate, c.pool2);

    c.hidden.assign(spec_.branch_width, T{0});
    kernels::linear<T>(slice(w_, layout_.branch_w), slice(w_, layout_.branch_b),
                       std::span<const T>(c.pool2.output.data), c.hidden);
    relu_checked<T>(c.hidden, "branch.fc");

    c.output = c.hidden;
    c.mask.clear();
    if (dropout) {
      const std::vector<float> mask =
          dropout_mask(c.hidden.size(), spec_.dropout_rate, branch_mask_seed(rng_seed, branch));
      c.mask.assign(mask.begin(), mask.end());
      for (std::size_t j = 0; j < c.output.size(); ++j) c.output[j] *= c.mask[j];
    }
  }

  void branch_backward(BranchCache<T>& c, std::span<const T> dout, std::span<T> grad) {
    std::vector<T> dhidden(dout.begin(), dout.end());
    if (!c.mask.empty()) {
      for (std::size_t j = 0; j < dhidden.size(); ++j) dhidden[j] *= c.mask[j];
    }
    relu_backward<T>(c.hidden, dhidden);

    Tensor3<T> dpool2(c.pool2.output.channels, c.pool2.output.height, c.pool2.output.width);
    kernels::linear_backward<T>(slice(w_, layout_.branch_w), c.pool2.output.data, dhidden,
                                slice(grad, layout_.branch_w), slice(grad, layout_.branch_b),
                                dpool2.data);

    Tensor3<T> dconv2(c.conv2.channels, c.conv2.height, c.conv2.width);
    kernels::maxpool2_backward<T>(c.pool2, dpool2, dconv2);
    relu_backward<T>(c.conv2.data, dconv2.data);

    Tensor3<T> dpool1;
    kernels::conv3x3_backward<T>(c.pool1.output, slice(w_, layout_.conv2_w_slice), spec_.conv2_channels,
                                 dconv2, slice(grad, layout_.conv2_w_slice),
                                 slice(grad, layout_.conv2_b), &dpool1);

    Tensor3<T> dconv1(c.conv1.channels, c.conv1.height, c.conv1.width);
    kernels::maxpool2_backward<T>(c.pool1, dpool1, dconv1);
    relu_backward<T>(c.conv1.data, dconv1.data);

    kernels::conv3x3_backward<T>(c.input, slice(w_, layout_.conv1_w_slice), spec_.conv1_channels,
                                 dconv1, slice(grad, layout_.conv1_w_slice),
                                 slice(grad, layout_.conv1_b), nullptr);
  }

  const NetworkSpec& spec_;
  Layout layout_;
  std::span<const T> w_;
  BranchCache<T> cache_[2];
  std::vector<T> concat_;
  std::vector<T> head_hidden_;
  std::array<T, 2> logits_{};
  std::array<T, 2> probs_{};
  T log_partition_{};
};

}  // namespace

std::vector<LayerInfo> describe_layers(const NetworkSpec& spec) {
  const Layout l = make_layout(spec);
  const int bw = spec.branch_width;
  const std::string prefix = spec.architecture == Architecture::DualBranch ? "branch(shared)." : "branch.";
  std::vector<LayerInfo> layers;
  auto add = [&layers](std::string name, LayerKind kind, std::array<int, 3> in,
                       std::array<int, 3> out, ParamSlice w = {}, ParamSlice b = {}) {
    layers.push_back({std::move(name), kind, in, out, w, b});
  };
  const int c1 = spec.conv1_channels;
  const int c2 = spec.conv2_channels;
  add(prefix + "conv1", LayerKind::Conv3x3, {1, spec.input_height, spec.input_width},
      {c1, l.conv1_h, l.conv1_w}, l.conv1_w_slice, l.conv1_b);
  add(prefix + "relu1", LayerKind::Relu, {c1, l.conv1_h, l.conv1_w}, {c1, l.conv1_h, l.conv1_w});
  add(prefix + "pool1", LayerKind::MaxPool2, {c1, l.conv1_h, l.conv1_w}, {c1, l.pool1_h, l.pool1_w});
  add(prefix + "conv2", LayerKind::Conv3x3, {c1, l.pool1_h, l.pool1_w}, {c2, l.conv2_h, l.conv2_w},
      l.conv2_w_slice, l.conv2_b);
  add(prefix + "relu2", LayerKind::Relu, {c2, l.conv2_h, l.conv2_w}, {c2, l.conv2_h, l.conv2_w});
  add(prefix + "pool2", LayerKind::MaxPool2, {c2, l.conv2_h, l.conv2_w}, {c2, l.pool2_h, l.pool2_w});
  add(prefix + "flatten", LayerKind::Flatten, {c2, l.pool2_h, l.pool2_w}, {l.flat, 1, 1});
  add(prefix + "fc", LayerKind::Linear, {l.flat, 1, 1}, {bw, 1, 1}, l.branch_w, l.branch_b);
  add(prefix + "relu3", LayerKind::Relu, {bw, 1, 1}, {bw, 1, 1});
  if (spec.dropout_rate > 0.0) add(prefix + "dropout", LayerKind::Dropout, {bw, 1, 1}, {bw, 1, 1});
  if (spec.architecture == Architecture::DualBranch) {
    add("concat", LayerKind::Concat, {bw, 1, 1}, {l.concat, 1, 1});
  }
  add("head.fc", LayerKind::Linear, {l.concat, 1, 1}, {spec.head_width, 1, 1}, l.head_w, l.head_b);
  add("head.relu", LayerKind::Relu, {spec.head_width, 1, 1}, {spec.head_width, 1, 1});
  add("head.out", LayerKind::Linear, {spec.head_width, 1, 1}, {NetworkSpec::kClasses, 1, 1}, l.out_w,
      l.out_b);
  add("softmax", LayerKind::Softmax, {NetworkSpec::kClasses, 1, 1}, {NetworkSpec::kClasses, 1, 1});
  return layers;
}

std::size_t parameter_count(const NetworkSpec& spec) { return make_layout(spec).total; }

std::uint32_t spec_id(const NetworkSpec& spec) noexcept {
  NetworkSpec plain = spec;
  plain.dropout_rate = 0.0;
  if (plain == NetworkSpec::dual_branch()) return kSpecIdDualBranch;
  if (plain == NetworkSpec::single_branch()) return kSpecIdSingleBranch;
  return 0;
}

NetworkSpec spec_from_id(std::uint32_t id) {
  switch (id) {
    case kSpecIdDualBranch:
      return NetworkSpec::dual_branch();
    case kSpecIdSingleBranch:
      return NetworkSpec::single_branch();
    default:
      throw FormatError("unknown spec id " + std::to_string(id));
  }
}

void check_weights(const NetworkSpec& spec, std::span<const float> w) {
  const std::size_t expected = parameter_count(spec);
  if (w.size() != expected) {
    throw ShapeError("weight vector has " + std::to_string(w.size()) + " values, spec expects " +
                     std::to_string(expected));
  }
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!std::isfinite(w[i])) throw ShapeError("weight " + std::to_string(i) + " is not finite");
  }
}

std::uint64_t branch_mask_seed(std::uint64_t rng_seed, int branch) noexcept {
  return hash_key({rng_seed, static_cast<std::uint64_t>(branch), 0x44524F50ULL /* DROP */});
}

WeightVector init_weights(const NetworkSpec& spec, std::uint64_t seed) {
  const std::vector<LayerInfo> layers = describe_layers(spec);
  WeightVector w(parameter_count(spec));
  std::uint64_t block = 0;
  for (const LayerInfo& layer : layers) {
    if (layer.weights.count == 0) continue;
    const int fan_in = layer.kind == LayerKind::Conv3x3 ? layer.in_shape[0] * 9 : layer.in_shape[0];
    const double scale = std::sqrt(2.0 / fan_in);
    CounterRng rng(hash_key({seed, block++}));
    std::span<float> dst = w.view().subspan(layer.weights.offset, layer.weights.count);
    rng.fill_normal(dst);
    for (float& v : dst) v = static_cast<float>(v * scale);
  }
  return w;
}

template <typename T>
std::array<T, 2> probabilities_as(const NetworkSpec& spec, std::span<const T> w,
                                  const OrbitSample& sample, ForwardMode mode, std::uint64_t rng_seed) {
  Engine<T> engine(spec, w);
  return engine.forward(sample, mode, rng_seed);
}

template <typename T>
T backward_as(const NetworkSpec& spec, std::span<const T> w, const OrbitSample& sample, Label label,
              ForwardMode mode, std::uint64_t rng_seed, std::span<T> grad) {
  Engine<T> engine(spec, w);
  return engine.backward(sample, label, mode, rng_seed, grad);
}

template std::array<float, 2> probabilities_as<float>(const NetworkSpec&, std::span<const float>,
                                                      const OrbitSample&, ForwardMode, std::uint64_t);
template std::array<double, 2> probabilities_as<double>(const NetworkSpec&, std::span<const double>,
                                                        const OrbitSample&, ForwardMode, std::uint64_t);
template float backward_as<float>(const NetworkSpec&, std::span<const float>, const OrbitSample&, Label,
                                  ForwardMode, std::uint64_t, std::span<float>);
template double backward_as<double>(const NetworkSpec&, std::span<const double>, const OrbitSample&,
                                    Label, ForwardMode, std::uint64_t, std::span<double>);

ClassDistribution forward(const NetworkSpec& spec, std::span<const float> w, const OrbitSample& sample,
                          ForwardMode mode, std::uint64_t rng_seed) {
  const std::array<float, 2> p = probabilities_as<float>(spec, w, sample, mode, rng_seed);
  return {static_cast<double>(p[1]), static_cast<double>(p[0])};
}

ClassDistribution forward(const NetworkSpec& spec, const WeightVector& w, const OrbitSample& sample,
                          ForwardMode mode, std::uint64_t rng_seed) {
  return forward(spec, w.view(), sample, mode, rng_seed);
}

Label predict(const NetworkSpec& spec, std::span<const float> w, const OrbitSample& sample) {
  return forward(spec, w, sample).predicted();
}

std::vector<Label> predict_batch(const NetworkSpec& spec, std::span<const float> w,
                                 std::span<const OrbitSample> samples) {
  Engine<float> engine(spec, w);
  std::vector<Label> out;
  out.reserve(samples.size());
  for (const OrbitSample& s : samples) {
    const std::array<float, 2> p = engine.forward(s, ForwardMode::Deterministic, 0);
    out.push_back(p[1] > p[0] ? Label::Tumor : Label::Normal);
  }
  return out;
}

LossGradient backward(const NetworkSpec& spec, const WeightVector& w, const OrbitSample& sample,
                      Label label, std::uint64_t rng_seed) {
  const ForwardMode mode =
      spec.dropout_rate > 0.0 ? ForwardMode::StochasticDropout : ForwardMode::Deterministic;
  LossGradient out{0.0, WeightVector(w.size())};
  out.loss = backward_as<float>(spec, w.view(), sample, label, mode, rng_seed, out.grad.view());
  return out;
}

}  // namespace dne
