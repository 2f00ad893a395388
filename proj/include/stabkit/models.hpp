#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "stabkit/ops.hpp"
#include "stabkit/rng.hpp"
#include "stabkit/serialize.hpp"

namespace stabkit {

struct Conv2d {
  Tensor weight;  // [Cout,Cin,k,k]
  Tensor bias;    // [Cout]

  static Conv2d make(int cin, int cout, int k, Rng& rng, double scale = -1.0) {
    Conv2d c;
    c.weight = Tensor::zeros({cout, cin, k, k});
    c.bias = Tensor::zeros({cout});
    if (scale < 0) scale = std::sqrt(2.0 / (cin * k * k));  // He-style fan-in
    for (std::int64_t i = 0; i < c.weight.size(); ++i) c.weight.data()[i] = rng.normal(0.0, scale);
    return c;
  }

  static Conv2d make_zero(int cin, int cout, int k, double bias_value = 0.0) {
    Conv2d c;
    c.weight = Tensor::zeros({cout, cin, k, k});
    c.bias = Tensor::full({cout}, bias_value);
    return c;
  }

  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias); }
  int out_channels() const { return weight.shape()[0]; }
};

// A frame-wise predictor: deterministic per frame, no temporal state. The
// hook receives each named internal activation and the model output and may
// substitute a stabilized tensor that the rest of the forward pass consumes.
class FrameModel {
 public:
  using Hook = std::function<Tensor(const std::string& layer, const Tensor& z)>;

  virtual ~FrameModel() = default;
  virtual std::string kind() const = 0;
  virtual int input_channels() const = 0;
  virtual std::vector<std::string> layer_names() const = 0;  // includes "output"
  virtual int layer_channels(const std::string& name) const = 0;
  virtual std::vector<Tensor> parameters() const = 0;
  virtual Tensor forward_hooked(const Tensor& frame, const Hook& hook) const = 0;

  Tensor forward(const Tensor& frame) const {
    return forward_hooked(frame, [](const std::string&, const Tensor& z) { return z; });
  }

  bool frozen() const { return frozen_; }
  void freeze() {  // idempotent
    frozen_ = true;
    for (auto& p : parameters()) {
      p.set_frozen(true);
      p.set_requires_grad(false);
    }
  }
  void unfreeze() {
    frozen_ = false;
    for (auto& p : parameters()) {
      p.set_frozen(false);
      p.set_requires_grad(true);
    }
  }

  std::string parameter_hash() const { return hash_parameters(parameters()); }

 protected:
  void check_input(const Tensor& frame) const {
    if (frame.shape().size() != 3 || frame.shape()[0] != input_channels())
      throw_shape_error("model input", frame,
                        "[" + std::to_string(input_channels()) + ",H,W]");
  }

 private:
  bool frozen_ = false;
};

// 3-layer 3x3 residual denoiser: predicts a noise residual that is
// subtracted from the input. All-zero weights make it the identity.
class ToyDenoiser : public FrameModel {
 public:
  ToyDenoiser(int channels, std::uint64_t seed, int hidden = 8) : channels_(channels) {
    Rng rng(seed);
    c1_ = Conv2d::make(channels, hidden, 3, rng);
    c2_ = Conv2d::make(hidden, hidden, 3, rng);
    c3_ = Conv2d::make(hidden, channels, 3, rng, 0.01);
  }

  std::string kind() const override { return "toy_denoiser"; }
  int input_channels() const override { return channels_; }
  std::vector<std::string> layer_names() const override {
    return {"conv1", "conv2", "conv3", "output"};
  }
  int layer_channels(const std::string& name) const override {
    if (name == "conv1") return c1_.out_channels();
    if (name == "conv2") return c2_.out_channels();
    if (name == "conv3" || name == "output") return channels_;
    throw std::invalid_argument("unknown layer: " + name);
  }
  std::vector<Tensor> parameters() const override {
    return {c1_.weight, c1_.bias, c2_.weight, c2_.bias, c3_.weight, c3_.bias};
  }

  Tensor forward_hooked(const Tensor& frame, const Hook& hook) const override {
    check_input(frame);
    Tensor z1 = hook("conv1", leaky_relu(c1_(frame)));
    Tensor z2 = hook("conv2", leaky_relu(c2_(z1)));
    Tensor residual = hook("conv3", c3_(z2));
    return hook("output", sub(frame, residual));
  }

 private:
  int channels_;
  Conv2d c1_, c2_, c3_;
};

// Pointwise + two 3x3 layers predicting an enhanced frame, clamped to [0,1].
class ToyEnhancer : public FrameModel {
 public:
  ToyEnhancer(int channels, std::uint64_t seed, int hidden = 8) : channels_(channels) {
    Rng rng(seed);
    c1_ = Conv2d::make(channels, hidden, 1, rng);
    c2_ = Conv2d::make(hidden, hidden, 3, rng);
    c3_ = Conv2d::make(hidden, channels, 3, rng, 0.05);
  }

  std::string kind() const override { return "toy_enhancer"; }
  int input_channels() const override { return channels_; }
  std::vector<std::string> layer_names() const override {
    return {"conv1", "conv2", "conv3", "output"};
  }
  int layer_channels(const std::string& name) const override {
    if (name == "conv1") return c1_.out_channels();
    if (name == "conv2") return c2_.out_channels();
    if (name == "conv3" || name == "output") return channels_;
    throw std::invalid_argument("unknown layer: " + name);
  }
  std::vector<Tensor> parameters() const override {
    return {c1_.weight, c1_.bias, c2_.weight, c2_.bias, c3_.weight, c3_.bias};
  }

  Tensor forward_hooked(const Tensor& frame, const Hook& hook) const override {
    check_input(frame);
    Tensor z1 = hook("conv1", leaky_relu(c1_(frame)));
    Tensor z2 = hook("conv2", leaky_relu(c2_(z1)));
    // residual head keeps the init close to the identity mapping
    Tensor e = hook("conv3", add(frame, c3_(z2)));
    return hook("output", clamp01(e));
  }

 private:
  int channels_;
  Conv2d c1_, c2_, c3_;
};

inline std::shared_ptr<FrameModel> make_model(const std::string& kind, int channels,
                                              std::uint64_t seed) {
  if (kind == "toy_denoiser") return std::make_shared<ToyDenoiser>(channels, seed);
  if (kind == "toy_enhancer") return std::make_shared<ToyEnhancer>(channels, seed);
  throw std::invalid_argument("unknown model kind: " + kind);
}

// ---------------------------------------------------------------------------
// enhancement target operator: unsharp masking, amount 1.0, radius-1
// binomial Gaussian. Pure data transform, never on the tape.
// ---------------------------------------------------------------------------

inline Tensor unsharp_mask(const Tensor& frame, double amount = 1.0) {
  const int c = frame.shape()[0], h = frame.shape()[1], w = frame.shape()[2];
  static const double k[3] = {0.25, 0.5, 0.25};
  Tensor blur = Tensor::zeros(frame.shape());
  std::vector<double> tmp(static_cast<std::size_t>(h) * w);
  for (int ci = 0; ci < c; ++ci) {
    const double* src = frame.data() + ci * h * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0, ws = 0.0;
        for (int i = -1; i <= 1; ++i) {
          int xx = x + i;
          if (xx < 0 || xx >= w) continue;
          acc += k[i + 1] * src[y * w + xx];
          ws += k[i + 1];
        }
        tmp[y * w + x] = acc / ws;
      }
    double* dst = blur.data() + ci * h * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0, ws = 0.0;
        for (int i = -1; i <= 1; ++i) {
          int yy = y + i;
          if (yy < 0 || yy >= h) continue;
          acc += k[i + 1] * tmp[yy * w + x];
          ws += k[i + 1];
        }
        dst[y * w + x] = acc / ws;
      }
  }
  Tensor out = Tensor::zeros(frame.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) {
    double v = frame.data()[i] + amount * (frame.data()[i] - blur.data()[i]);
    out.data()[i] = std::min(1.0, std::max(0.0, v));
  }
  return out;
}

// ---------------------------------------------------------------------------
// checkpoints: manifest.json + params.bin
// ---------------------------------------------------------------------------

inline void save_model(const std::filesystem::path& dir, const FrameModel& model) {
  std::vector<NamedTensor> named;
  auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i)
    named.push_back({"p" + std::to_string(i), params[i]});
  save_tensor_store(dir, named,
                    {{"kind", model.kind()}, {"channels", model.input_channels()}});
}

inline std::shared_ptr<FrameModel> load_model(const std::filesystem::path& dir) {
  std::vector<NamedTensor> named;
  auto manifest = load_tensor_store(dir, named);
  auto model = make_model(manifest.at("kind").get<std::string>(),
                          manifest.at("channels").get<int>(), /*seed=*/0);
  auto params = model->parameters();
  if (params.size() != named.size())
    throw std::runtime_error("checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != named[i].tensor.shape())
      throw std::runtime_error("checkpoint shape mismatch at parameter " + std::to_string(i));
    std::copy(named[i].tensor.data(), named[i].tensor.data() + named[i].tensor.size(),
              params[i].data());
  }
  return model;
}

}  // namespace stabkit
