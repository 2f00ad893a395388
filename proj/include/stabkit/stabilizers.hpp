#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "stabkit/models.hpp"
#include "stabkit/ops.hpp"

namespace stabkit {

enum class StabilizerKind { simple_fixed, simple_learned, controlled, spatial };

inline const char* stabilizer_kind_name(StabilizerKind k) {
  switch (k) {
    case StabilizerKind::simple_fixed: return "simple_fixed";
    case StabilizerKind::simple_learned: return "simple_learned";
    case StabilizerKind::controlled: return "controlled";
    case StabilizerKind::spatial: return "spatial";
  }
  return "?";
}

inline StabilizerKind stabilizer_kind_from_name(const std::string& s) {
  if (s == "simple_fixed") return StabilizerKind::simple_fixed;
  if (s == "simple_learned") return StabilizerKind::simple_learned;
  if (s == "controlled") return StabilizerKind::controlled;
  if (s == "spatial") return StabilizerKind::spatial;
  throw std::invalid_argument("unknown stabilizer kind: " + s);
}

// Per-layer persistent memory carried across time steps. The first step
// after reset() treats z~_0 = z_1, so step one is the identity.
struct EmaState {
  Tensor z_tilde_prev;   // z~_{t-1}
  Tensor z_prev;         // z_{t-1}, controller head input
  Tensor stage1_prev;    // private chain of the first stabilizer in a composition
  bool initialized = false;

  void init(const Tensor& z0) {
    z_tilde_prev = z0;
    z_prev = z0;
    stage1_prev = z0;
    initialized = true;
  }
  void reset() {
    z_tilde_prev = Tensor();
    z_prev = Tensor();
    stage1_prev = Tensor();
    initialized = false;
  }
};

namespace stab_detail {

inline void require_initialized(const EmaState& state, const char* op) {
  if (!state.initialized)
    throw std::logic_error(std::string(op) + ": state not initialized (reset + first frame?)");
}

}  // namespace stab_detail

// z~_t = beta*z_t + (1-beta)*z~_{t-1} with a scalar decay.
inline Tensor ema_step(const Tensor& z, EmaState& state, double beta) {
  stab_detail::require_initialized(state, "ema_step");
  if (beta < 0.0 || beta > 1.0)
    throw std::invalid_argument("ema_step: beta must lie in [0,1], got " + std::to_string(beta));
  if (!same_shape(z, state.z_tilde_prev)) throw_shape_error("ema_step", z, state.z_tilde_prev);
  Tensor out = add(mul_scalar(z, beta), mul_scalar(state.z_tilde_prev, 1.0 - beta));
  state.z_tilde_prev = out;
  state.z_prev = z;
  return out;
}

// Elementwise decay tensor (same shape as z).
inline Tensor ema_step(const Tensor& z, EmaState& state, const Tensor& beta) {
  stab_detail::require_initialized(state, "ema_step");
  if (!same_shape(z, beta)) throw_shape_error("ema_step beta", beta, z);
  for (std::int64_t i = 0; i < beta.size(); ++i)
    if (beta.data()[i] < 0.0 || beta.data()[i] > 1.0)
      throw std::invalid_argument("ema_step: beta must lie in [0,1] elementwise");
  Tensor out = add(mul(beta, z), mul(rsub_scalar(1.0, beta), state.z_tilde_prev));
  state.z_tilde_prev = out;
  state.z_prev = z;
  return out;
}

// ---------------------------------------------------------------------------
// stabilization controller: shared backbone g over (x_t, x_{t-1}) plus one
// head per stabilized layer predicting decays (m = 1) or spatial kernel
// logits (m = k*k)
// ---------------------------------------------------------------------------

struct ControllerConfig {
  int backbone_channels = 8;
  int backbone_layers = 2;
  int head_channels = 8;
  int head_layers = 2;        // including the final projection
  double init_bias = 4.0;     // v; predicted beta starts near sigmoid(v)
  bool features_in_head = true;
  std::uint64_t seed = 1;
};

class Controller {
 public:
  struct Head {
    std::string layer;
    int channels = 0;  // stabilized layer channels
    int m = 1;         // logits per channel (k*k for spatial fusion)
    std::vector<Conv2d> convs;
  };

  Controller() = default;

  Controller(int frame_channels, ControllerConfig cfg) : cfg_(cfg), rng_(cfg.seed) {
    int cin = 2 * frame_channels;
    for (int i = 0; i < cfg_.backbone_layers; ++i) {
      backbone_.push_back(Conv2d::make(cin, cfg_.backbone_channels, 3, rng_));
      cin = cfg_.backbone_channels;
    }
  }

  const ControllerConfig& config() const { return cfg_; }

  // m = 1 gives a sigmoid gate head: final bias +v so beta starts at
  // sigmoid(v). m > 1 gives spatial-kernel logits that weight the
  // previous-frame taps, so identity-at-init needs the opposite sign: bias
  // -v keeps nearly all mass on the structural-zero (current) slot.
  int add_head(const std::string& layer, int layer_channels, int m) {
    Head head;
    head.layer = layer;
    head.channels = layer_channels;
    head.m = m;
    int cin = cfg_.backbone_channels + (cfg_.features_in_head ? 3 * layer_channels : 0);
    for (int i = 0; i + 1 < cfg_.head_layers; ++i) {
      head.convs.push_back(Conv2d::make(cin, cfg_.head_channels, 3, rng_));
      cin = cfg_.head_channels;
    }
    double bias = m == 1 ? cfg_.init_bias : -cfg_.init_bias;
    head.convs.push_back(Conv2d::make_zero(cin, layer_channels * m, 3, bias));
    heads_.push_back(std::move(head));
    return static_cast<int>(heads_.size()) - 1;
  }

  int head_index(const std::string& layer) const {
    for (std::size_t i = 0; i < heads_.size(); ++i)
      if (heads_[i].layer == layer) return static_cast<int>(i);
    throw std::invalid_argument("controller has no head for layer: " + layer);
  }

  const Head& head(int idx) const { return heads_.at(idx); }
  std::size_t head_count() const { return heads_.size(); }

  Tensor backbone_forward(const Tensor& x_t, const Tensor& x_prev) const {
    Tensor h = concat_channels({x_t, x_prev});
    for (const auto& conv : backbone_) h = leaky_relu(conv(h));
    return h;
  }

  Tensor head_logits(int idx, const Tensor& g_out, const Tensor& z_t, const Tensor& z_tilde_prev,
                     const Tensor& z_prev) const {
    const Head& head = heads_.at(idx);
    Tensor g = bilinear_resize(g_out, z_t.shape()[1], z_t.shape()[2]);
    Tensor h = cfg_.features_in_head ? concat_channels({g, z_t, z_tilde_prev, z_prev}) : g;
    for (std::size_t i = 0; i + 1 < head.convs.size(); ++i) h = leaky_relu(head.convs[i](h));
    return head.convs.back()(h);
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (const auto& c : backbone_) {
      out.push_back(c.weight);
      out.push_back(c.bias);
    }
    for (const auto& head : heads_)
      for (const auto& c : head.convs) {
        out.push_back(c.weight);
        out.push_back(c.bias);
      }
    return out;
  }

  void set_trainable(bool flag) {
    for (auto& p : parameters()) p.set_requires_grad(flag);
  }

 private:
  ControllerConfig cfg_;
  Rng rng_{1};
  std::vector<Conv2d> backbone_;
  std::vector<Head> heads_;
};

struct ControllerStepResult {
  Tensor z_tilde;
  Tensor beta;
};

// Eq-style controlled EMA update: beta = sigmoid(head(g, z_t, z~_{t-1},
// z_{t-1})), then the convex blend. State gains both z~_t and z_t.
inline ControllerStepResult controller_step(const Tensor& x_t, const Tensor& x_prev,
                                            const Tensor& z_t, EmaState& state,
                                            const Controller& ctrl, int head_idx) {
  stab_detail::require_initialized(state, "controller_step");
  if (ctrl.head(head_idx).m != 1)
    throw std::invalid_argument("controller_step: head predicts a spatial kernel, not a gate");
  Tensor g = ctrl.backbone_forward(x_t, x_prev);
  Tensor beta =
      sigmoid(ctrl.head_logits(head_idx, g, z_t, state.z_tilde_prev, state.z_prev));
  Tensor out = add(mul(beta, z_t), mul(rsub_scalar(1.0, beta), state.z_tilde_prev));
  Tensor z_prev_next = z_t;
  state.z_tilde_prev = out;
  state.z_prev = z_prev_next;
  return {out, beta};
}

inline std::vector<std::pair<int, int>> neighborhood_offsets(int k) {
  std::vector<std::pair<int, int>> offsets;
  int r = k / 2;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) offsets.emplace_back(dy, dx);
  return offsets;
}

// valid[l*h*w + p]: tap l of the kernel stays inside the frame at pixel p
inline std::vector<std::uint8_t> border_mask(const std::vector<std::pair<int, int>>& offsets,
                                             int h, int w) {
  std::vector<std::uint8_t> mask(offsets.size() * h * w, 1);
  for (std::size_t l = 0; l < offsets.size(); ++l)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        int ny = y + offsets[l].first, nx = x + offsets[l].second;
        if (ny < 0 || ny >= h || nx < 0 || nx >= w) mask[l * h * w + y * w + x] = 0;
      }
  return mask;
}

// Spatial-fusion update: the head emits k*k logits per (channel, pixel); a
// structural zero logit is appended and the softmax-normalized kernel blends
// the current activation with the previous stabilized neighborhood. Border
// pixels renormalize over in-bounds taps.
inline Tensor spatial_fusion_step(const Tensor& x_t, const Tensor& x_prev, const Tensor& z_t,
                                  EmaState& state, const Controller& ctrl, int head_idx, int k) {
  stab_detail::require_initialized(state, "spatial_fusion_step");
  if (k % 2 == 0) throw std::invalid_argument("spatial_fusion_step: k must be odd");
  const Controller::Head& head = ctrl.head(head_idx);
  if (head.m != k * k)
    throw std::invalid_argument("spatial_fusion_step: head emits " + std::to_string(head.m) +
                                " logits per channel, expected " + std::to_string(k * k));
  Tensor g = ctrl.backbone_forward(x_t, x_prev);
  Tensor logits = ctrl.head_logits(head_idx, g, z_t, state.z_tilde_prev, state.z_prev);
  auto offsets = neighborhood_offsets(k);
  auto mask = border_mask(offsets, z_t.shape()[1], z_t.shape()[2]);
  Tensor weights = softmax_zero_groups(logits, k * k, &mask);
  Tensor out = spatial_combine(weights, z_t, state.z_tilde_prev, offsets);
  Tensor z_prev_next = z_t;
  state.z_tilde_prev = out;
  state.z_prev = z_prev_next;
  return out;
}

// ---------------------------------------------------------------------------
// training-free composition of two controlled stabilizers (backbone-only
// heads, no spatial fusion)
// ---------------------------------------------------------------------------

struct ComposedStabilizer {
  std::shared_ptr<Controller> first;
  std::shared_ptr<Controller> second;
  bool commutative = false;
};

inline ComposedStabilizer compose(std::shared_ptr<Controller> first,
                                  std::shared_ptr<Controller> second, bool commutative) {
  for (const auto& ctrl : {first, second}) {
    if (!ctrl) throw std::invalid_argument("compose: missing controller");
    if (ctrl->config().features_in_head)
      throw std::invalid_argument("compose: heads must take only the backbone output");
    for (std::size_t i = 0; i < ctrl->head_count(); ++i)
      if (ctrl->head(static_cast<int>(i)).m != 1)
        throw std::invalid_argument("compose: spatial-fusion stabilizers cannot be composed");
  }
  if (first->head_count() != second->head_count())
    throw std::invalid_argument("compose: controllers stabilize different layer sets");
  return {std::move(first), std::move(second), commutative};
}

// One composed update. Commutative form: effective decay beta1*beta2.
// Non-commutative form: stage 1 keeps its own private state chain.
inline Tensor composed_step(const ComposedStabilizer& comp, const Tensor& x_t,
                            const Tensor& x_prev, const Tensor& z_t, EmaState& state,
                            int head_idx) {
  stab_detail::require_initialized(state, "composed_step");
  Tensor g1 = comp.first->backbone_forward(x_t, x_prev);
  Tensor g2 = comp.second->backbone_forward(x_t, x_prev);
  Tensor beta1 = sigmoid(comp.first->head_logits(head_idx, g1, z_t, state.z_tilde_prev, state.z_prev));
  Tensor beta2 = sigmoid(comp.second->head_logits(head_idx, g2, z_t, state.z_tilde_prev, state.z_prev));
  Tensor out;
  if (comp.commutative) {
    Tensor beta = mul(beta1, beta2);
    out = add(mul(beta, z_t), mul(rsub_scalar(1.0, beta), state.z_tilde_prev));
  } else {
    Tensor stage1 = add(mul(beta1, z_t), mul(rsub_scalar(1.0, beta1), state.stage1_prev));
    out = add(mul(beta2, stage1), mul(rsub_scalar(1.0, beta2), state.z_tilde_prev));
    state.stage1_prev = stage1;
  }
  Tensor z_prev_next = z_t;
  state.z_tilde_prev = out;
  state.z_prev = z_prev_next;
  return out;
}

// ---------------------------------------------------------------------------
// attaching stabilizers to a frame model
// ---------------------------------------------------------------------------

struct StabilizerSpec {
  StabilizerKind kind = StabilizerKind::controlled;
  std::vector<std::string> layers = {"output"};
  double fixed_beta = 0.5;  // simple_fixed
  int k = 3;                // spatial neighborhood
  ControllerConfig controller;
};

// Wraps a frozen base model; the forward pass routes the selected layer
// activations through per-layer stabilizers. Owns all recurrent state.
class StabilizedModel {
 public:
  StabilizedModel(std::shared_ptr<FrameModel> base, StabilizerSpec spec)
      : base_(std::move(base)), spec_(std::move(spec)) {
    validate_layers(spec_.layers);
    base_->freeze();
    if (spec_.kind == StabilizerKind::simple_fixed) {
      if (spec_.fixed_beta < 0.0 || spec_.fixed_beta > 1.0)
        throw std::invalid_argument("fixed beta must lie in [0,1]");
    }
    if (spec_.kind == StabilizerKind::simple_learned) {
      for (const auto& layer : spec_.layers) {
        Tensor logits = Tensor::full({base_->layer_channels(layer)}, spec_.controller.init_bias);
        logits.set_requires_grad(true);
        logits_.push_back(logits);
      }
    }
    if (spec_.kind == StabilizerKind::controlled || spec_.kind == StabilizerKind::spatial) {
      controller_ = std::make_shared<Controller>(base_->input_channels(), spec_.controller);
      int m = spec_.kind == StabilizerKind::spatial ? spec_.k * spec_.k : 1;
      if (spec_.kind == StabilizerKind::spatial && spec_.k % 2 == 0)
        throw std::invalid_argument("spatial neighborhood k must be odd");
      for (const auto& layer : spec_.layers)
        controller_->add_head(layer, base_->layer_channels(layer), m);
      controller_->set_trainable(true);
    }
    states_.resize(spec_.layers.size());
  }

  // composed attach: both controllers must already cover the layer list
  StabilizedModel(std::shared_ptr<FrameModel> base, ComposedStabilizer composed,
                  std::vector<std::string> layers)
      : base_(std::move(base)), composed_(std::move(composed)) {
    spec_.kind = StabilizerKind::controlled;
    spec_.layers = std::move(layers);
    validate_layers(spec_.layers);
    if (composed_.first->head_count() != spec_.layers.size())
      throw std::invalid_argument("composed stabilizer covers a different layer count");
    base_->freeze();
    is_composed_ = true;
    states_.resize(spec_.layers.size());
  }

  FrameModel& base() { return *base_; }
  const FrameModel& base() const { return *base_; }
  const StabilizerSpec& spec() const { return spec_; }
  Controller& controller() { return *controller_; }

  void reset() {
    for (auto& s : states_) s.reset();
    x_prev_ = Tensor();
  }

  // Stateful stabilized forward pass for one frame.
  Tensor step(const Tensor& frame) {
    Tensor x_prev = x_prev_.defined() ? x_prev_ : frame;
    Tensor out = base_->forward_hooked(frame, [&](const std::string& name, const Tensor& z) {
      int slot = slot_for(name);
      if (slot < 0) return z;
      EmaState& state = states_[slot];
      if (!state.initialized) {  // z~_0 := z_1, so the first step is the identity
        state.init(z);
        return z;
      }
      switch (spec_.kind) {
        case StabilizerKind::simple_fixed:
          return ema_step(z, state, spec_.fixed_beta);
        case StabilizerKind::simple_learned: {
          Tensor beta = sigmoid(expand_channels(logits_[slot], z.shape()[1], z.shape()[2]));
          return ema_step(z, state, beta);
        }
        case StabilizerKind::controlled:
          if (is_composed_) return composed_step(composed_, frame, x_prev, z, state, slot);
          return controller_step(frame, x_prev, z, state, *controller_, slot).z_tilde;
        case StabilizerKind::spatial:
          return spatial_fusion_step(frame, x_prev, z, state, *controller_, slot, spec_.k);
      }
      return z;
    });
    x_prev_ = frame;
    return out;
  }

  // Adapter parameters only; the base set is frozen and excluded.
  std::vector<Tensor> trainable_parameters() const {
    switch (spec_.kind) {
      case StabilizerKind::simple_fixed:
        return {};
      case StabilizerKind::simple_learned:
        return logits_;
      default:
        break;
    }
    std::vector<Tensor> out;
    if (controller_) out = controller_->parameters();
    if (is_composed_) {
      for (auto& p : composed_.first->parameters()) out.push_back(p);
      for (auto& p : composed_.second->parameters()) out.push_back(p);
    }
    return out;
  }

  const EmaState& layer_state(const std::string& name) const {
    return states_[must_slot(name)];
  }
  Tensor learned_logits(const std::string& name) const { return logits_[must_slot(name)]; }

 private:
  void validate_layers(const std::vector<std::string>& layers) {
    if (layers.empty()) throw std::invalid_argument("attach: empty layer selection");
    auto known = base_->layer_names();
    for (const auto& l : layers)
      if (std::find(known.begin(), known.end(), l) == known.end())
        throw std::invalid_argument("attach: model has no layer named '" + l + "'");
    for (std::size_t i = 0; i < layers.size(); ++i) slot_index_[layers[i]] = static_cast<int>(i);
  }

  int slot_for(const std::string& name) const {
    auto it = slot_index_.find(name);
    return it == slot_index_.end() ? -1 : it->second;
  }
  int must_slot(const std::string& name) const {
    int s = slot_for(name);
    if (s < 0) throw std::invalid_argument("no stabilizer on layer: " + name);
    return s;
  }

  std::shared_ptr<FrameModel> base_;
  StabilizerSpec spec_;
  std::shared_ptr<Controller> controller_;
  ComposedStabilizer composed_;
  bool is_composed_ = false;
  std::vector<Tensor> logits_;  // simple_learned, one [C] per layer
  std::vector<EmaState> states_;
  std::map<std::string, int> slot_index_;
  Tensor x_prev_;
};

// Wrapped model whose forward pass routes the selected activations through
// stabilizers; the base parameters are flagged frozen.
inline StabilizedModel attach(std::shared_ptr<FrameModel> model,
                              const std::vector<std::string>& layers, StabilizerSpec spec) {
  spec.layers = layers;
  return StabilizedModel(std::move(model), std::move(spec));
}

// ---------------------------------------------------------------------------
// stabilizer checkpoints: manifest (kind, k, layers, shapes) + blobs
// ---------------------------------------------------------------------------

inline void save_stabilizer(const std::filesystem::path& dir, const StabilizedModel& model) {
  std::vector<NamedTensor> named;
  auto params = model.trainable_parameters();
  for (std::size_t i = 0; i < params.size(); ++i)
    named.push_back({"p" + std::to_string(i), params[i]});
  nlohmann::json meta = {{"kind", stabilizer_kind_name(model.spec().kind)},
                         {"k", model.spec().k},
                         {"layers", model.spec().layers}};
  save_tensor_store(dir, named, std::move(meta));
}

inline void load_stabilizer(const std::filesystem::path& dir, StabilizedModel& model) {
  std::vector<NamedTensor> named;
  auto manifest = load_tensor_store(dir, named);
  if (manifest.at("kind").get<std::string>() != stabilizer_kind_name(model.spec().kind))
    throw std::runtime_error("stabilizer checkpoint kind mismatch");
  auto params = model.trainable_parameters();
  if (params.size() != named.size())
    throw std::runtime_error("stabilizer checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != named[i].tensor.shape())
      throw std::runtime_error("stabilizer checkpoint shape mismatch");
    std::copy(named[i].tensor.data(), named[i].tensor.data() + named[i].tensor.size(),
              params[i].data());
  }
}

}  // namespace stabkit
