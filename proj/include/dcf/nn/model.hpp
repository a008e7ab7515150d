#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcf/nn/layers.hpp"
#include "dcf/nn/loss.hpp"

namespace dcf::nn {

struct StageSpec {
  std::size_t channels = 8;
  std::size_t blocks = 1;

  friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

/// Mini residual classifier: conv stem -> stages of basic residual blocks ->
/// global average pool -> dense(2).
struct ModelSpec {
  std::size_t input_side = 64;
  std::size_t in_channels = 3;
  std::size_t stem_channels = 8;
  std::size_t stem_stride = 2;
  std::vector<StageSpec> stages = {{8, 1}, {16, 1}, {32, 1}};

  std::size_t depth() const {
    std::size_t d = 0;
    for (const auto& s : stages) d += s.blocks;
    return d;
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

inline constexpr std::size_t kOutputClasses = 2;

inline void validate(const ModelSpec& spec) {
  if (spec.stages.empty()) throw std::invalid_argument("model: at least one stage required");
  if (spec.input_side < 1 || spec.in_channels < 1 || spec.stem_channels < 1 || spec.stem_stride < 1)
    throw std::invalid_argument("model: sizes must be >= 1");
  for (const auto& s : spec.stages)
    if (s.channels < 1 || s.blocks < 1) throw std::invalid_argument("model: stage channels/blocks must be >= 1");
}

template <class T>
struct Param {
  std::string name;
  std::size_t layer = 0;
  std::vector<T> value, grad, m, v;
};

template <class T>
struct Buffer {
  std::string name;
  std::size_t layer = 0;
  std::vector<T> value;
};

struct ConvRef {
  ConvGeom geom;
  std::size_t param = 0;
};

struct BnRef {
  std::size_t gamma = 0, beta = 0;  // params
  std::size_t mean = 0, var = 0;    // buffers
};

struct BlockDef {
  ConvRef conv1, conv2, proj;
  BnRef bn1, bn2, proj_bn;
  bool has_proj = false;
};

enum class Mode { kTrain, kEval };

/// Parameters, Adam moments, BN running statistics and the freeze mask.
/// Layer indices: 0 = stem, 1..depth = residual blocks, depth+1 = head.
template <class T>
struct ModelState {
  ModelSpec spec;
  std::vector<Param<T>> params;
  std::vector<Buffer<T>> buffers;
  ConvRef stem_conv;
  BnRef stem_bn;
  std::vector<BlockDef> blocks;
  std::size_t head_weight = 0, head_bias = 0, head_in = 0;
  std::vector<bool> frozen;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::uint64_t version = 0;  // bumped on every mutation that invalidates caches

  std::size_t depth() const { return blocks.size(); }
  std::size_t head_layer() const { return blocks.size() + 1; }
  std::size_t layer_count() const { return blocks.size() + 2; }
  bool is_frozen(std::size_t layer) const { return frozen[layer]; }

  Param<T>& param(const std::string& name) {
    for (auto& p : params)
      if (p.name == name) return p;
    throw std::out_of_range("no parameter named " + name);
  }
  const Param<T>& param(const std::string& name) const {
    for (const auto& p : params)
      if (p.name == name) return p;
    throw std::out_of_range("no parameter named " + name);
  }

  void zero_grad() {
    for (auto& p : params) std::fill(p.grad.begin(), p.grad.end(), T(0));
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.value.size();
    return n;
  }
};

namespace model_detail {

template <class T>
std::size_t add_param(ModelState<T>& s, std::string name, std::size_t layer, std::size_t size, T fill = T(0)) {
  Param<T> p;
  p.name = std::move(name);
  p.layer = layer;
  p.value.assign(size, fill);
  p.grad.assign(size, T(0));
  p.m.assign(size, T(0));
  p.v.assign(size, T(0));
  s.params.push_back(std::move(p));
  return s.params.size() - 1;
}

template <class T>
ConvRef add_conv(ModelState<T>& s, const std::string& name, std::size_t layer, ConvGeom g, std::mt19937_64& rng) {
  const std::size_t idx = add_param(s, name + ".weight", layer, g.out_c * g.patch());
  std::normal_distribution<double> he(0.0, std::sqrt(2.0 / static_cast<double>(g.patch())));
  for (auto& w : s.params[idx].value) w = static_cast<T>(he(rng));
  return {g, idx};
}

template <class T>
BnRef add_bn(ModelState<T>& s, const std::string& name, std::size_t layer, std::size_t c) {
  BnRef r;
  r.gamma = add_param(s, name + ".gamma", layer, c, T(1));
  r.beta = add_param(s, name + ".beta", layer, c, T(0));
  s.buffers.push_back({name + ".running_mean", layer, std::vector<T>(c, T(0))});
  r.mean = s.buffers.size() - 1;
  s.buffers.push_back({name + ".running_var", layer, std::vector<T>(c, T(1))});
  r.var = s.buffers.size() - 1;
  return r;
}

}  // namespace model_detail

/// Fresh model: He-normal conv/dense weights, zero biases, BN gamma=1 beta=0.
template <class T>
ModelState<T> make_model(const ModelSpec& spec, std::uint64_t seed) {
  validate(spec);
  using namespace model_detail;
  ModelState<T> s;
  s.spec = spec;
  s.seed = seed;
  std::mt19937_64 rng(seed);

  s.stem_conv = add_conv(s, "stem.conv", 0, {spec.in_channels, spec.stem_channels, 3, spec.stem_stride, 1}, rng);
  s.stem_bn = add_bn(s, "stem.bn", 0, spec.stem_channels);

  std::size_t in_c = spec.stem_channels, layer = 1;
  for (std::size_t si = 0; si < spec.stages.size(); ++si)
    for (std::size_t bi = 0; bi < spec.stages[si].blocks; ++bi, ++layer) {
      const std::size_t out_c = spec.stages[si].channels;
      const std::size_t stride = (si > 0 && bi == 0) ? 2 : 1;
      const std::string name = "block" + std::to_string(layer - 1);
      BlockDef b;
      b.conv1 = add_conv(s, name + ".conv1", layer, {in_c, out_c, 3, stride, 1}, rng);
      b.bn1 = add_bn(s, name + ".bn1", layer, out_c);
      b.conv2 = add_conv(s, name + ".conv2", layer, {out_c, out_c, 3, 1, 1}, rng);
      b.bn2 = add_bn(s, name + ".bn2", layer, out_c);
      b.has_proj = stride != 1 || in_c != out_c;
      if (b.has_proj) {
        b.proj = add_conv(s, name + ".proj", layer, {in_c, out_c, 1, stride, 0}, rng);
        b.proj_bn = add_bn(s, name + ".proj_bn", layer, out_c);
      }
      s.blocks.push_back(b);
      in_c = out_c;
    }

  const std::size_t head = layer;
  s.head_in = in_c;
  s.head_weight = add_param(s, "head.weight", head, kOutputClasses * in_c);
  std::normal_distribution<double> he(0.0, std::sqrt(2.0 / static_cast<double>(in_c)));
  for (auto& w : s.params[s.head_weight].value) w = static_cast<T>(he(rng));
  s.head_bias = add_param(s, "head.bias", head, kOutputClasses);
  s.frozen.assign(s.layer_count(), false);
  return s;
}

/// Keeps the dense head plus the last `trainable_tail - 1` residual blocks
/// trainable; everything before is frozen (BN layers included, which then run
/// on their running statistics). trainable_tail == depth + 1 unfreezes all.
template <class T>
void freeze(ModelState<T>& s, std::size_t trainable_tail) {
  const std::size_t d = s.depth();
  if (trainable_tail < 1 || trainable_tail > d + 1)
    throw std::invalid_argument("freeze: trainable_tail must be in [1, depth+1]");
  const std::size_t trainable_blocks = trainable_tail - 1;
  s.frozen[0] = trainable_tail != d + 1;
  for (std::size_t l = 1; l <= d; ++l) s.frozen[l] = l <= d - trainable_blocks;
  s.frozen[d + 1] = false;
  ++s.version;
}

template <class T>
void unfreeze_all(ModelState<T>& s) {
  s.frozen.assign(s.layer_count(), false);
  ++s.version;
}

// ---------------------------------------------------------------------------
// Forward / backward

template <class T>
struct BlockCache {
  Tensor4<T> r1;
  BnCache<T> bn1, bn2, proj_bn;
};

template <class T>
struct ForwardCache {
  Mode mode = Mode::kEval;
  std::uint64_t version = 0;
  std::size_t start_layer = 0;
  std::vector<Tensor4<T>> acts;  // acts[l] = input of layer l; acts[depth+1] feeds the head
  BnCache<T> stem_bn;
  std::vector<BlockCache<T>> blocks;
  std::vector<T> pooled;
  std::vector<T> logits;  // row-major [n, 2]
  bool valid = false;

  std::size_t batch() const { return logits.size() / kOutputClasses; }
};

namespace model_detail {

template <class T>
Tensor4<T> bn_apply(ModelState<T>& s, const BnRef& bn, std::size_t layer, Mode mode, const Tensor4<T>& x,
                    BnCache<T>* cache) {
  const bool batch_stats = mode == Mode::kTrain && !s.is_frozen(layer);
  return bn_forward(x, s.params[bn.gamma].value, s.params[bn.beta].value, s.buffers[bn.mean].value,
                    s.buffers[bn.var].value, batch_stats, batch_stats, cache);
}

template <class T>
Tensor4<T> block_forward(ModelState<T>& s, std::size_t layer, Mode mode, const Tensor4<T>& x,
                         BlockCache<T>* cache) {
  const BlockDef& b = s.blocks[layer - 1];
  BlockCache<T> local;
  BlockCache<T>& c = cache ? *cache : local;
  const bool keep = cache != nullptr;
  auto r1 = bn_apply(s, b.bn1, layer, mode, conv_forward(x, s.params[b.conv1.param].value, b.conv1.geom),
                     keep ? &c.bn1 : nullptr);
  relu_inplace(r1);
  auto y = bn_apply(s, b.bn2, layer, mode, conv_forward(r1, s.params[b.conv2.param].value, b.conv2.geom),
                    keep ? &c.bn2 : nullptr);
  if (b.has_proj) {
    auto skip = bn_apply(s, b.proj_bn, layer, mode, conv_forward(x, s.params[b.proj.param].value, b.proj.geom),
                         keep ? &c.proj_bn : nullptr);
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += skip.data[i];
  } else {
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += x.data[i];
  }
  relu_inplace(y);
  if (keep) c.r1 = std::move(r1);
  return y;
}

}  // namespace model_detail

/// Runs layers [start_layer, head] on `x`, the input of `start_layer`.
/// Train mode uses batch statistics in unfrozen BN layers and updates their
/// running estimates. With `keep` the activations are retained for backprop.
template <class T>
ForwardCache<T> forward_from(ModelState<T>& s, std::size_t start_layer, Tensor4<T> x, Mode mode, bool keep = true) {
  using namespace model_detail;
  const std::size_t d = s.depth();
  if (start_layer > d + 1) throw std::invalid_argument("forward: layer out of range");
  ForwardCache<T> cache;
  cache.mode = mode;
  cache.start_layer = start_layer;
  cache.acts.resize(d + 2);
  cache.blocks.resize(d);
  const std::size_t n = x.n;

  Tensor4<T> cur = std::move(x);
  for (std::size_t l = start_layer; l <= d; ++l) {
    Tensor4<T> next;
    if (l == 0) {
      if (cur.c != s.spec.in_channels || cur.h != s.spec.input_side || cur.w != s.spec.input_side)
        throw std::invalid_argument("forward: input shape does not match the model spec");
      next = bn_apply(s, s.stem_bn, 0, mode, conv_forward(cur, s.params[s.stem_conv.param].value, s.stem_conv.geom),
                      keep ? &cache.stem_bn : nullptr);
      relu_inplace(next);
    } else {
      next = block_forward(s, l, mode, cur, keep ? &cache.blocks[l - 1] : nullptr);
    }
    if (keep) cache.acts[l] = std::move(cur);
    cur = std::move(next);
  }
  if (cur.c != s.head_in) throw std::invalid_argument("forward: head input channel mismatch");
  cache.pooled = gap_forward(cur);
  cache.logits = dense_forward(cache.pooled, n, s.head_in, s.params[s.head_weight].value,
                               s.params[s.head_bias].value, kOutputClasses);
  cache.acts[d + 1] = std::move(cur);
  cache.version = s.version;
  cache.valid = true;
  return cache;
}

template <class T>
ForwardCache<T> forward(ModelState<T>& s, Tensor4<T> x, Mode mode, bool keep = true) {
  return forward_from(s, 0, std::move(x), mode, keep);
}

struct BackpropOptions {
  bool param_grads = true;
  std::optional<std::size_t> capture_layer;  // return d(loss)/d(output of this layer)
  bool input_grad = false;
};

template <class T>
struct BackpropResult {
  Tensor4<T> captured;
  Tensor4<T> input;
};

/// Backpropagates `dlogits` (row-major [n, 2]) through the cached forward
/// pass. Parameter gradients are accumulated only for unfrozen layers and
/// propagation stops once nothing below needs a gradient.
template <class T>
BackpropResult<T> backprop(ModelState<T>& s, const ForwardCache<T>& cache, const std::vector<T>& dlogits,
                           const BackpropOptions& opt = {}) {
  if (!cache.valid) throw std::logic_error("backprop: empty cache");
  const std::size_t d = s.depth();
  const std::size_t n = cache.batch();
  BackpropResult<T> result;

  // lowest layer whose input gradient is required
  std::size_t first_trainable = d + 2;
  if (opt.param_grads)
    for (std::size_t l = 0; l <= d + 1; ++l)
      if (!s.is_frozen(l)) {
        first_trainable = l;
        break;
      }
  auto need_input = [&](std::size_t l) {
    if (opt.input_grad) return true;
    if (opt.param_grads && l > first_trainable) return true;
    if (opt.capture_layer && l > *opt.capture_layer) return true;
    return false;
  };
  auto grads_for = [&](std::size_t l) { return opt.param_grads && !s.is_frozen(l); };

  // head
  const std::size_t head = d + 1;
  std::vector<T> dpooled;
  {
    auto& w = s.params[s.head_weight];
    auto& b = s.params[s.head_bias];
    const bool g = grads_for(head);
    dense_backward(cache.pooled, n, s.head_in, w.value, kOutputClasses, dlogits, g ? &w.grad : nullptr,
                   g ? &b.grad : nullptr, need_input(head) ? &dpooled : nullptr);
  }
  if (!need_input(head)) return result;
  const auto& top = cache.acts[d + 1];
  Tensor4<T> grad = gap_backward(dpooled, n, top.c, top.h, top.w);
  if (opt.capture_layer && *opt.capture_layer == d) result.captured = grad;
  if (cache.start_layer == head && opt.input_grad) result.input = grad;

  for (std::size_t l = d; l + 1 > cache.start_layer; --l) {
    const bool g = grads_for(l);
    const bool want_dx = need_input(l);
    if (!g && !want_dx) break;
    const Tensor4<T>& out = cache.acts[l + 1];
    const Tensor4<T>& in = cache.acts[l];
    Tensor4<T> dz = relu_backward(out, grad);
    Tensor4<T> dx;
    if (l == 0) {
      Tensor4<T> dconv;
      bn_backward(dz, s.params[s.stem_bn.gamma].value, cache.stem_bn, g ? &s.params[s.stem_bn.gamma].grad : nullptr,
                  g ? &s.params[s.stem_bn.beta].grad : nullptr, &dconv);
      conv_backward(in, s.params[s.stem_conv.param].value, s.stem_conv.geom, dconv,
                    g ? &s.params[s.stem_conv.param].grad : nullptr, want_dx ? &dx : nullptr);
    } else {
      const BlockDef& b = s.blocks[l - 1];
      const BlockCache<T>& c = cache.blocks[l - 1];
      Tensor4<T> d_c2, d_r1, d_c1, dx_main;
      bn_backward(dz, s.params[b.bn2.gamma].value, c.bn2, g ? &s.params[b.bn2.gamma].grad : nullptr,
                  g ? &s.params[b.bn2.beta].grad : nullptr, &d_c2);
      conv_backward(c.r1, s.params[b.conv2.param].value, b.conv2.geom, d_c2, g ? &s.params[b.conv2.param].grad : nullptr,
                    &d_r1);
      Tensor4<T> d_b1 = relu_backward(c.r1, d_r1);
      bn_backward(d_b1, s.params[b.bn1.gamma].value, c.bn1, g ? &s.params[b.bn1.gamma].grad : nullptr,
                  g ? &s.params[b.bn1.beta].grad : nullptr, &d_c1);
      conv_backward(in, s.params[b.conv1.param].value, b.conv1.geom, d_c1, g ? &s.params[b.conv1.param].grad : nullptr,
                    want_dx ? &dx_main : nullptr);
      if (b.has_proj) {
        Tensor4<T> d_pc, dx_skip;
        bn_backward(dz, s.params[b.proj_bn.gamma].value, c.proj_bn, g ? &s.params[b.proj_bn.gamma].grad : nullptr,
                    g ? &s.params[b.proj_bn.beta].grad : nullptr, &d_pc);
        conv_backward(in, s.params[b.proj.param].value, b.proj.geom, d_pc, g ? &s.params[b.proj.param].grad : nullptr,
                      want_dx ? &dx_skip : nullptr);
        if (want_dx)
          for (std::size_t i = 0; i < dx_main.data.size(); ++i) dx_main.data[i] += dx_skip.data[i];
      } else if (want_dx) {
        for (std::size_t i = 0; i < dx_main.data.size(); ++i) dx_main.data[i] += dz.data[i];
      }
      dx = std::move(dx_main);
    }
    if (!want_dx) break;
    grad = std::move(dx);
    if (opt.capture_layer && l > 0 && *opt.capture_layer == l - 1) result.captured = grad;
    if (l == cache.start_layer) {
      if (opt.input_grad) result.input = grad;
      break;
    }
  }
  return result;
}

/// Zeroes gradients, then fills them with d(mean cross-entropy)/d(param) for
/// every unfrozen parameter. Requires a train-mode cache of the current state.
template <class T>
double backward(ModelState<T>& s, const ForwardCache<T>& cache, std::span<const std::size_t> labels) {
  if (!cache.valid || cache.mode != Mode::kTrain || cache.version != s.version || cache.start_layer != 0)
    throw std::logic_error("backward: cache is stale or not from a train-mode forward");
  if (labels.size() != cache.batch()) throw std::invalid_argument("backward: label count mismatch");
  std::vector<T> dlogits;
  const double loss = cross_entropy_batch<T>(cache.logits, labels, &dlogits);
  s.zero_grad();
  backprop(s, cache, dlogits);
  return loss;
}

}  // namespace dcf::nn
