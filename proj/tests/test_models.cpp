#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include <stabkit/corruption.hpp>
#include <stabkit/metrics.hpp>
#include <stabkit/models.hpp>
#include <stabkit/optimizer.hpp>
#include <stabkit/video.hpp>

using namespace stabkit;

namespace {

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::int64_t i = 0; i < a.size(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("zero-weight denoiser is the identity") {
  ToyDenoiser model(1, 3);
  for (auto& p : model.parameters()) std::fill(p.data(), p.data() + p.size(), 0.0);
  auto seq = generate_sequence(4, 1, {1, 12, 12}, MotionModel::oscillating_texture);
  Tensor out = model.forward(seq.frames[0]);
  CHECK(bit_equal(out, seq.frames[0]));
}

TEST_CASE("frame-wise forward is stateless and position independent") {
  ToyDenoiser model(1, 9);
  auto seq = generate_sequence(6, 5, {1, 10, 10}, MotionModel::translating_shapes);
  std::vector<Tensor> batch;
  for (const auto& f : seq.frames) batch.push_back(model.forward(f));
  // re-run one frame in isolation and out of order
  for (int t = 4; t >= 0; --t) CHECK(bit_equal(model.forward(seq.frames[t]), batch[t]));
}

TEST_CASE("model input shape is validated") {
  ToyDenoiser model(1, 1);
  CHECK_THROWS_AS(model.forward(Tensor::zeros({3, 8, 8})), std::invalid_argument);
  CHECK_THROWS_AS(model.forward(Tensor::zeros({8, 8})), std::invalid_argument);
}

TEST_CASE("enhancer output is clamped to [0,1]") {
  ToyEnhancer model(1, 7);
  // exaggerate the head weights so the pre-clamp values leave [0,1]
  auto params = model.parameters();
  for (auto& p : params)
    for (std::int64_t i = 0; i < p.size(); ++i) p.data()[i] *= 40.0;
  auto seq = generate_sequence(8, 1, {1, 12, 12}, MotionModel::oscillating_texture);
  Tensor out = model.forward(seq.frames[0]);
  for (std::int64_t i = 0; i < out.size(); ++i) {
    CHECK(out.data()[i] >= 0.0);
    CHECK(out.data()[i] <= 1.0);
  }
}

TEST_CASE("unsharp mask sharpens and stays in range") {
  auto seq = generate_sequence(5, 1, {1, 16, 16}, MotionModel::oscillating_texture);
  Tensor sharp = unsharp_mask(seq.frames[0]);
  CHECK(sharp.shape() == seq.frames[0].shape());
  double diff = 0.0;
  for (std::int64_t i = 0; i < sharp.size(); ++i) {
    CHECK(sharp.data()[i] >= 0.0);
    CHECK(sharp.data()[i] <= 1.0);
    diff += std::abs(sharp.data()[i] - seq.frames[0].data()[i]);
  }
  CHECK(diff > 0.0);
  // flat image is a fixed point
  Tensor flat = Tensor::full({1, 8, 8}, 0.5);
  CHECK(bit_equal(unsharp_mask(flat), flat));
}

TEST_CASE("freeze contract") {
  ToyDenoiser model(1, 5);
  model.unfreeze();
  std::string before = model.parameter_hash();

  SUBCASE("freeze is idempotent and blocks updates") {
    model.freeze();
    model.freeze();
    CHECK(model.frozen());
    Adam opt(model.parameters());
    CHECK_THROWS_AS(opt.step(1e-3), std::logic_error);
    CHECK(model.parameter_hash() == before);
  }

  SUBCASE("frozen params do not join the tape") {
    model.freeze();
    Tape tape;
    TapeScope scope(tape);
    Tensor x = Tensor::full({1, 8, 8}, 0.4);
    Tensor out = model.forward(x);
    CHECK(!out.requires_grad());
    CHECK(tape.size() == 0);
  }

  SUBCASE("unfreeze restores training") {
    model.freeze();
    model.unfreeze();
    Tape tape;
    TapeScope scope(tape);
    Tensor x = Tensor::full({1, 8, 8}, 0.4);
    Tensor loss = sum_squares(model.forward(x));
    tape.backward(loss);
    Adam opt(model.parameters());
    opt.step(1e-3);
    CHECK(model.parameter_hash() != before);
  }
}

TEST_CASE("short training run beats the noisy input") {
  // quick MSE fit of the residual denoiser on static noisy frames
  const double sigma = 0.1;
  ToyDenoiser model(1, 21);
  model.unfreeze();
  auto clean = generate_sequence(31, 24, {1, 16, 16}, MotionModel::translating_shapes);
  CorruptionSpec noise;
  noise.kind = CorruptionKind::gaussian_noise;
  noise.sigma = sigma;
  noise.seed = 100;
  auto noisy = corrupt(clean, noise);

  Adam opt(model.parameters());
  Rng rng(77);
  for (int step = 0; step < 250; ++step) {
    int t = static_cast<int>(rng.index(clean.tau()));
    Tape tape;
    TapeScope scope(tape);
    Tensor pred = model.forward(noisy.frames[t]);
    Tensor loss = mul_scalar(sum_squares(sub(pred, clean.targets[t])), 1.0 / pred.size());
    tape.backward(loss);
    opt.step(1e-2);
  }

  double psnr_noisy = 0.0, psnr_model = 0.0;
  for (int t = 0; t < clean.tau(); ++t) {
    psnr_noisy += psnr(noisy.frames[t], clean.targets[t]);
    psnr_model += psnr(model.forward(noisy.frames[t]), clean.targets[t]);
  }
  CHECK(psnr_model / clean.tau() > psnr_noisy / clean.tau());
}

TEST_CASE("checkpoint round trip") {
  auto dir = std::filesystem::temp_directory_path() / "stabkit_model_ckpt";
  std::filesystem::remove_all(dir);
  ToyEnhancer model(1, 13);
  save_model(dir, model);
  auto back = load_model(dir);
  CHECK(back->kind() == "toy_enhancer");
  auto seq = generate_sequence(2, 1, {1, 10, 10}, MotionModel::static_scene);
  CHECK(bit_equal(back->forward(seq.frames[0]), model.forward(seq.frames[0])));
  std::filesystem::remove_all(dir);
}
