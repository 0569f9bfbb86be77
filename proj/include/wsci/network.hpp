#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "wsci/ops.hpp"
#include "wsci/tensor.hpp"

namespace wsci {

struct BlockSpec {
  enum class Kind { Fused, MBConv };
  Kind kind = Kind::Fused;
  int width = 24;
  int expansion = 4;
  int kernel = 3;
  double se_ratio = 0.25;  // MBConv only
};

// Fixed fusion architecture: stem -> FusedMBConv blocks -> MBConv+SE blocks
// -> 1x1 head -> softplus -> border crop. Spatial extent is preserved until
// the crop; all convs are stride 1 with same-padding.
struct ArchitectureSpec {
  int input_channels = 10;
  int stem_width = 24;
  std::vector<BlockSpec> blocks;
  double dropout_rate = 0.2;
  int head_channels = 2;
  int border_margin = 4;
  std::vector<double> norm_mean;  // per input channel, baked in from training data
  std::vector<double> norm_std;
  std::string block_activation = "silu";
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  double head_mean_init = 9.0;  // initial softplus output of the mean channel
  double head_var_init = 1.0;

  static ArchitectureSpec defaults() {
    ArchitectureSpec s;
    s.blocks.clear();
    for (int i = 0; i < 2; ++i)
      s.blocks.push_back({BlockSpec::Kind::Fused, 24, 4, 3, 0.0});
    for (int i = 0; i < 6; ++i)
      s.blocks.push_back({BlockSpec::Kind::MBConv, 40, 4, 3, 0.25});
    s.norm_mean.assign(10, 0.0);
    s.norm_std.assign(10, 1.0);
    return s;
  }

  // Desk-scale variant for fast CPU experiments.
  static ArchitectureSpec reduced() {
    ArchitectureSpec s = defaults();
    s.stem_width = 12;
    for (auto& b : s.blocks)
      b = b.kind == BlockSpec::Kind::Fused ? BlockSpec{b.kind, 12, 2, 3, 0.0}
                                           : BlockSpec{b.kind, 16, 2, 3, 0.25};
    return s;
  }

  void validate() const {
    if (input_channels < 1 || stem_width < 1 || head_channels < 1)
      throw error("spec", "channel counts must be positive");
    if (blocks.empty()) throw error("spec", "at least one block required");
    bool seen_mbconv = false;
    for (const auto& b : blocks) {
      if (b.kind == BlockSpec::Kind::MBConv) seen_mbconv = true;
      else if (seen_mbconv)
        throw error("spec", "FusedMBConv blocks must precede all MBConv blocks");
      if (b.width < 1 || b.expansion < 1 || b.kernel % 2 == 0)
        throw error("spec", "invalid block descriptor");
    }
    if ((int)norm_mean.size() != input_channels || (int)norm_std.size() != input_channels)
      throw error("spec", "normalization constants must have one entry per input channel");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
      throw error("spec", "dropout rate outside [0,1)");
    if (block_activation != "silu" && block_activation != "relu")
      throw error("spec", "unknown block activation '" + block_activation + "'");
  }

  // Chebyshev radius beyond which an input pixel cannot influence an output
  // pixel: one (k-1)/2 contribution per spatial conv in the stack. Only a
  // true bound when spatially_local() holds -- a squeeze-excitation gate
  // pools over the whole extent and couples every pixel to every output.
  int receptive_field_radius() const {
    int r = 1;  // stem 3x3
    for (const auto& b : blocks) r += b.kernel / 2;
    return r;
  }

  bool spatially_local() const {
    for (const auto& b : blocks)
      if (b.kind == BlockSpec::Kind::MBConv && b.se_ratio > 0.0) return false;
    return true;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["input_channels"] = input_channels;
    j["stem_width"] = stem_width;
    j["head_channels"] = head_channels;
    j["border_margin"] = border_margin;
    j["dropout_rate"] = dropout_rate;
    j["block_activation"] = block_activation;
    j["bn_momentum"] = bn_momentum;
    j["bn_eps"] = bn_eps;
    j["head_mean_init"] = head_mean_init;
    j["head_var_init"] = head_var_init;
    j["norm_mean"] = norm_mean;
    j["norm_std"] = norm_std;
    j["blocks"] = nlohmann::json::array();
    for (const auto& b : blocks)
      j["blocks"].push_back({{"kind", b.kind == BlockSpec::Kind::Fused ? "fused" : "mbconv"},
                             {"width", b.width},
                             {"expansion", b.expansion},
                             {"kernel", b.kernel},
                             {"se_ratio", b.se_ratio}});
    return j;
  }

  static ArchitectureSpec from_json(const nlohmann::json& j) {
    ArchitectureSpec s;
    s.input_channels = j.at("input_channels");
    s.stem_width = j.at("stem_width");
    s.head_channels = j.at("head_channels");
    s.border_margin = j.at("border_margin");
    s.dropout_rate = j.at("dropout_rate");
    s.block_activation = j.at("block_activation");
    s.bn_momentum = j.at("bn_momentum");
    s.bn_eps = j.at("bn_eps");
    s.head_mean_init = j.at("head_mean_init");
    s.head_var_init = j.at("head_var_init");
    s.norm_mean = j.at("norm_mean").get<std::vector<double>>();
    s.norm_std = j.at("norm_std").get<std::vector<double>>();
    s.blocks.clear();
    for (const auto& bj : j.at("blocks")) {
      BlockSpec b;
      b.kind = bj.at("kind") == "fused" ? BlockSpec::Kind::Fused : BlockSpec::Kind::MBConv;
      b.width = bj.at("width");
      b.expansion = bj.at("expansion");
      b.kernel = bj.at("kernel");
      b.se_ratio = bj.at("se_ratio");
      s.blocks.push_back(b);
    }
    s.validate();
    return s;
  }
};

template <class T>
struct ModelStateT {
  ArchitectureSpec spec;
  std::map<std::string, ParameterT<T>> params;
  std::map<std::string, std::vector<T>> buffers;  // batch-norm running stats

  void zero_grads() {
    for (auto& [_, p] : params) p.zero_grad();
  }

  template <class U>
  ModelStateT<U> cast() const {
    ModelStateT<U> out;
    out.spec = spec;
    for (const auto& [k, p] : params) out.params[k] = p.template cast<U>();
    for (const auto& [k, b] : buffers) {
      std::vector<U> v(b.size());
      for (size_t i = 0; i < b.size(); ++i) v[i] = static_cast<U>(b[i]);
      out.buffers[k] = std::move(v);
    }
    return out;
  }
};

using ModelState = ModelStateT<float>;

enum class Mode { Train, Eval, MC };

inline int se_reduced_channels(int block_input_channels, double se_ratio) {
  return std::max(1, int(block_input_channels * se_ratio));
}

namespace detail {

template <class T>
void add_param(ModelStateT<T>& m, const std::string& name, int b, int c, int h, int w,
               RngStream& rng, double init_std, double init_const = 0.0,
               bool he = true) {
  TensorT<T> v(b, c, h, w);
  if (he) {
    for (auto& x : v.data) x = T(rng.next_normal() * init_std);
  } else {
    for (auto& x : v.data) x = T(init_const);
  }
  m.params.emplace(name, ParameterT<T>(std::move(v)));
}

template <class T>
void add_bn(ModelStateT<T>& m, const std::string& prefix, int channels) {
  TensorT<T> scale(1, channels, 1, 1), shift(1, channels, 1, 1);
  scale.fill(T(1));
  m.params.emplace(prefix + ".scale", ParameterT<T>(std::move(scale)));
  m.params.emplace(prefix + ".shift", ParameterT<T>(std::move(shift)));
  m.buffers[prefix + ".mean"] = std::vector<T>(channels, T(0));
  m.buffers[prefix + ".var"] = std::vector<T>(channels, T(1));
}

inline double softplus_inverse(double y) { return std::log(std::expm1(y)); }

}  // namespace detail

// He fan-in initialization for conv weights, identity batch norm, and a head
// bias chosen so the initial softplus outputs sit near the target midrange.
template <class T>
ModelStateT<T> build_model(const ArchitectureSpec& spec, RngStream rng) {
  spec.validate();
  ModelStateT<T> m;
  m.spec = spec;
  auto he_std = [](int fan_in) { return std::sqrt(2.0 / fan_in); };

  detail::add_param(m, "stem.conv.weight", spec.stem_width, spec.input_channels, 3, 3,
                    rng, he_std(spec.input_channels * 9));
  detail::add_bn(m, "stem.bn", spec.stem_width);

  int in_ch = spec.stem_width;
  for (size_t i = 0; i < spec.blocks.size(); ++i) {
    const BlockSpec& b = spec.blocks[i];
    const std::string p = "block" + std::to_string(i);
    const int mid = in_ch * b.expansion;
    if (b.kind == BlockSpec::Kind::Fused) {
      detail::add_param(m, p + ".expand.weight", mid, in_ch, b.kernel, b.kernel, rng,
                        he_std(in_ch * b.kernel * b.kernel));
      detail::add_bn(m, p + ".expand_bn", mid);
      detail::add_param(m, p + ".project.weight", b.width, mid, 1, 1, rng, he_std(mid));
      detail::add_bn(m, p + ".project_bn", b.width);
    } else {
      detail::add_param(m, p + ".expand.weight", mid, in_ch, 1, 1, rng, he_std(in_ch));
      detail::add_bn(m, p + ".expand_bn", mid);
      detail::add_param(m, p + ".dw.weight", mid, 1, b.kernel, b.kernel, rng,
                        he_std(b.kernel * b.kernel));
      detail::add_bn(m, p + ".dw_bn", mid);
      if (b.se_ratio > 0.0) {
        const int red = se_reduced_channels(in_ch, b.se_ratio);
        detail::add_param(m, p + ".se.reduce.weight", red, mid, 1, 1, rng, he_std(mid));
        detail::add_param(m, p + ".se.reduce.bias", 1, red, 1, 1, rng, 0.0, 0.0, false);
        detail::add_param(m, p + ".se.expand.weight", mid, red, 1, 1, rng, he_std(red));
        detail::add_param(m, p + ".se.expand.bias", 1, mid, 1, 1, rng, 0.0, 0.0, false);
      }
      detail::add_param(m, p + ".project.weight", b.width, mid, 1, 1, rng, he_std(mid));
      detail::add_bn(m, p + ".project_bn", b.width);
    }
    in_ch = b.width;
  }

  // The head starts almost silent (1% of He scale) so a fresh model predicts
  // near the bias-set (mean, variance) midrange everywhere. Full-scale head
  // weights let the random feature stack swing the pre-softplus outputs tens
  // of units wide, collapsing the variance channel and making the first
  // optimizer steps explosive.
  detail::add_param(m, "head.conv.weight", spec.head_channels, in_ch, 1, 1, rng,
                    0.01 * he_std(in_ch));
  {
    TensorT<T> bias(1, spec.head_channels, 1, 1);
    bias.data[0] = T(detail::softplus_inverse(spec.head_mean_init));
    if (spec.head_channels > 1)
      bias.data[1] = T(detail::softplus_inverse(spec.head_var_init));
    m.params.emplace("head.conv.bias", ParameterT<T>(std::move(bias)));
  }
  return m;
}

template <class T>
int64_t count_parameters(const ModelStateT<T>& m, bool trainable_only = true) {
  int64_t n = 0;
  for (const auto& [_, p] : m.params)
    if (!trainable_only || p.trainable) n += int64_t(p.value.size());
  return n;
}

// Only the head conv weight and bias stay trainable. Idempotent.
template <class T>
void freeze_feature_extractor(ModelStateT<T>& m) {
  for (auto& [name, p] : m.params)
    p.trainable = name.rfind("head.", 0) == 0;
}

template <class T>
void unfreeze_all(ModelStateT<T>& m) {
  for (auto& [_, p] : m.params) p.trainable = true;
}

// Records the forward graph when grads are requested; backward replays it in
// reverse, accumulating into Parameter::grad.
template <class T>
class NetworkT {
 public:
  explicit NetworkT(ModelStateT<T>& state) : m_(state) {}

  // rng is required for Train and MC modes (dropout draws are consumed from
  // it in layer order). Train mode updates batch-norm running buffers.
  TensorT<T> forward(const TensorT<T>& input, Mode mode, RngStream* rng = nullptr,
                     bool record = false) {
    const ArchitectureSpec& spec = m_.spec;
    if (input.channels() != spec.input_channels)
      throw error("shape", "expected " + std::to_string(spec.input_channels) +
                               " input channels, got " + std::to_string(input.channels()));
    if ((mode == Mode::Train || mode == Mode::MC) && spec.dropout_rate > 0 && !rng)
      throw error("rng", "train/mc forward requires an rng stream");
    tape_.clear();
    grads_.clear();
    mode_ = mode;

    auto x = make_node(input);
    input_node_ = x;

    // fixed input normalization
    {
      auto out = make_node(TensorT<T>(input.batch(), input.channels(), input.height(),
                                      input.width()));
      const int C = input.channels();
      std::vector<T> inv_std(C);
      for (int c = 0; c < C; ++c) inv_std[c] = T(1.0 / spec.norm_std[c]);
      for (int b = 0; b < input.batch(); ++b)
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < input.height(); ++y)
            for (int xx = 0; xx < input.width(); ++xx)
              out->val.at(b, c, y, xx) =
                  (input.at(b, c, y, xx) - T(spec.norm_mean[c])) * inv_std[c];
      if (record)
        push_tape(false, [this, x, out, inv_std]() {
          auto& gi = grad(x);
          auto& go = grad(out);
          const int C = gi.channels();
          for (int b = 0; b < gi.batch(); ++b)
            for (int c = 0; c < C; ++c)
              for (int y = 0; y < gi.height(); ++y)
                for (int xx = 0; xx < gi.width(); ++xx)
                  gi.at(b, c, y, xx) += go.at(b, c, y, xx) * inv_std[c];
        });
      x = out;
    }

    x = conv(x, "stem.conv.weight", "", record);
    x = batchnorm(x, "stem.bn", record);
    x = activation(x, record);

    int in_ch = spec.stem_width;
    size_t last_fused = 0;
    for (size_t i = 0; i < spec.blocks.size(); ++i)
      if (spec.blocks[i].kind == BlockSpec::Kind::Fused) last_fused = i;

    for (size_t i = 0; i < spec.blocks.size(); ++i) {
      const BlockSpec& b = spec.blocks[i];
      const std::string p = "block" + std::to_string(i);
      auto block_in = x;
      if (b.kind == BlockSpec::Kind::Fused) {
        x = conv(x, p + ".expand.weight", "", record);
        x = batchnorm(x, p + ".expand_bn", record);
        x = activation(x, record);
        x = conv(x, p + ".project.weight", "", record);
        x = batchnorm(x, p + ".project_bn", record);
      } else {
        x = conv(x, p + ".expand.weight", "", record);
        x = batchnorm(x, p + ".expand_bn", record);
        x = activation(x, record);
        x = depthwise(x, p + ".dw.weight", record);
        x = batchnorm(x, p + ".dw_bn", record);
        x = activation(x, record);
        if (b.se_ratio > 0.0) x = se(x, p, record);
        x = conv(x, p + ".project.weight", "", record);
        x = batchnorm(x, p + ".project_bn", record);
      }
      if (in_ch == b.width) x = add(x, block_in, record);
      in_ch = b.width;
      if (b.kind == BlockSpec::Kind::Fused && i == last_fused)
        x = dropout(x, rng, record);
    }

    x = dropout(x, rng, record);
    x = conv(x, "head.conv.weight", "head.conv.bias", record);
    x = softplus_node(x, record);
    x = crop(x, spec.border_margin, record);
    output_node_ = x;
    return x->val;
  }

  // Seeds the output gradient and accumulates parameter gradients. The
  // forward must have been run with record=true. Pass propagate_to_input
  // when input_gradient() is needed; otherwise entries below the deepest
  // trainable parameter are skipped -- they only move gradients further from
  // anything the optimizer can touch.
  void backward(const TensorT<T>& grad_out, bool propagate_to_input = false) {
    if (!output_node_) throw error("tape", "no recorded forward pass");
    if (!grad_out.same_shape(output_node_->val))
      throw error("shape", "output gradient shape mismatch");
    grad(output_node_) = grad_out;
    size_t stop = 0;
    if (!propagate_to_input) {
      stop = tape_.size();
      for (size_t i = 0; i < tape_.size(); ++i)
        if (tape_[i].touches_trainable) {
          stop = i;
          break;
        }
    }
    for (size_t i = tape_.size(); i-- > stop;) tape_[i].fn();
  }

  const TensorT<T>& input_gradient() const { return grads_.at(input_node_.get()); }

 private:
  struct Node {
    TensorT<T> val;
  };
  using NodePtr = std::shared_ptr<Node>;

  struct TapeEntry {
    std::function<void()> fn;
    bool touches_trainable = false;
  };

  ModelStateT<T>& m_;
  Mode mode_ = Mode::Eval;
  std::vector<TapeEntry> tape_;
  std::map<const Node*, TensorT<T>> grads_;
  NodePtr input_node_, output_node_;

  NodePtr make_node(TensorT<T> v) {
    auto n = std::make_shared<Node>();
    n->val = std::move(v);
    return n;
  }

  TensorT<T>& grad(const NodePtr& n) {
    auto it = grads_.find(n.get());
    if (it == grads_.end()) {
      auto& s = n->val.shape;
      it = grads_.emplace(n.get(), TensorT<T>(s[0], s[1], s[2], s[3])).first;
    }
    return it->second;
  }

  template <class F>
  void push_tape(bool touches_trainable, F&& fn) {
    tape_.push_back({std::forward<F>(fn), touches_trainable});
  }

  ParameterT<T>& param(const std::string& name) {
    auto it = m_.params.find(name);
    if (it == m_.params.end()) throw error("param", "missing parameter " + name);
    return it->second;
  }

  NodePtr conv(NodePtr x, const std::string& wname, const std::string& bname,
               bool record) {
    ParameterT<T>& w = param(wname);
    static const TensorT<T> no_bias;
    const TensorT<T>& bias = bname.empty() ? no_bias : param(bname).value;
    auto out = make_node(conv2d_forward(x->val, w.value, bias));
    const bool tr = w.trainable || (!bname.empty() && param(bname).trainable);
    if (record)
      push_tape(tr, [this, x, out, wname, bname]() {
        ParameterT<T>& w = param(wname);
        TensorT<T>* gb = nullptr;
        if (!bname.empty()) gb = &param(bname).grad;
        conv2d_backward(x->val, w.value, grad(out), &grad(x), &w.grad, gb);
      });
    return out;
  }

  NodePtr depthwise(NodePtr x, const std::string& wname, bool record) {
    ParameterT<T>& w = param(wname);
    auto out = make_node(depthwise_conv2d_forward(x->val, w.value));
    if (record)
      push_tape(w.trainable, [this, x, out, wname]() {
        ParameterT<T>& w = param(wname);
        depthwise_conv2d_backward(x->val, w.value, grad(out), &grad(x), &w.grad);
      });
    return out;
  }

  NodePtr batchnorm(NodePtr x, const std::string& prefix, bool record) {
    ParameterT<T>& scale = param(prefix + ".scale");
    ParameterT<T>& shift = param(prefix + ".shift");
    auto& rmean = m_.buffers.at(prefix + ".mean");
    auto& rvar = m_.buffers.at(prefix + ".var");
    const bool train_stats = mode_ == Mode::Train;
    auto cache = record ? std::make_shared<BatchNormCache<T>>() : nullptr;
    auto out = make_node(batchnorm2d_forward(x->val, scale.value, shift.value, rmean,
                                             rvar, train_stats, T(m_.spec.bn_momentum),
                                             T(m_.spec.bn_eps), cache.get()));
    if (record)
      push_tape(scale.trainable || shift.trainable,
                [this, x, out, prefix, cache, train_stats]() {
        ParameterT<T>& scale = param(prefix + ".scale");
        ParameterT<T>& shift = param(prefix + ".shift");
        if (train_stats)
          batchnorm2d_backward(*cache, scale.value, grad(out), &grad(x), &scale.grad,
                               &shift.grad);
        else
          batchnorm2d_backward_eval(*cache, scale.value, grad(out), &grad(x),
                                    &scale.grad, &shift.grad);
      });
    return out;
  }

  NodePtr activation(NodePtr x, bool record) {
    if (m_.spec.block_activation == "relu") {
      auto out = make_node(x->val);
      for (auto& v : out->val.data) v = std::max(v, T(0));
      if (record)
        push_tape(false, [this, x, out]() {
          auto& gi = grad(x);
          auto& go = grad(out);
          for (size_t i = 0; i < gi.size(); ++i)
            if (x->val.data[i] > T(0)) gi.data[i] += go.data[i];
        });
      return out;
    }
    auto out = make_node(silu_forward(x->val));
    if (record)
      push_tape(false, [this, x, out]() { silu_backward(x->val, grad(out), &grad(x)); });
    return out;
  }

  NodePtr softplus_node(NodePtr x, bool record) {
    auto out = make_node(softplus_forward(x->val));
    if (record)
      push_tape(false,
          [this, x, out]() { softplus_backward(x->val, grad(out), &grad(x)); });
    return out;
  }

  NodePtr se(NodePtr x, const std::string& p, bool record) {
    auto cache = std::make_shared<SECache<T>>();
    auto out = make_node(se_gate_forward(x->val, param(p + ".se.reduce.weight").value,
                                         param(p + ".se.reduce.bias").value,
                                         param(p + ".se.expand.weight").value,
                                         param(p + ".se.expand.bias").value,
                                         cache.get()));
    cache->input = &x->val;  // x outlives the tape
    const bool tr = param(p + ".se.reduce.weight").trainable ||
                    param(p + ".se.expand.weight").trainable;
    if (record)
      push_tape(tr, [this, x, out, p, cache]() {
        cache->input = &x->val;
        se_gate_backward(*cache, param(p + ".se.reduce.weight").value,
                         param(p + ".se.expand.weight").value, grad(out), &grad(x),
                         &param(p + ".se.reduce.weight").grad,
                         &param(p + ".se.reduce.bias").grad,
                         &param(p + ".se.expand.weight").grad,
                         &param(p + ".se.expand.bias").grad);
      });
    return out;
  }

  NodePtr dropout(NodePtr x, RngStream* rng, bool record) {
    const bool active = (mode_ == Mode::Train || mode_ == Mode::MC);
    const double rate = m_.spec.dropout_rate;
    if (!active || rate == 0.0) return x;  // bit-exact identity
    auto mask = std::make_shared<std::vector<uint8_t>>();
    auto out = make_node(mc_dropout_forward(x->val, rate, *rng, true, mask.get()));
    if (record)
      push_tape(false, [this, x, out, mask, rate]() {
        mc_dropout_backward(*mask, rate, grad(out), &grad(x));
      });
    return out;
  }

  NodePtr add(NodePtr a, NodePtr b, bool record) {
    auto out = make_node(a->val);
    for (size_t i = 0; i < out->val.size(); ++i) out->val.data[i] += b->val.data[i];
    if (record)
      push_tape(false, [this, a, b, out]() {
        auto& go = grad(out);
        auto& ga = grad(a);
        auto& gb = grad(b);
        for (size_t i = 0; i < go.size(); ++i) {
          ga.data[i] += go.data[i];
          gb.data[i] += go.data[i];
        }
      });
    return out;
  }

  NodePtr crop(NodePtr x, int margin, bool record) {
    auto out = make_node(crop_border_forward(x->val, margin));
    if (record)
      push_tape(false, [this, x, out, margin]() {
        crop_border_backward(margin, grad(out), &grad(x));
      });
    return out;
  }
};

using Network = NetworkT<float>;

}  // namespace wsci
