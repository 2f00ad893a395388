#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <stabkit/gradient_check.hpp>
#include <stabkit/stabilizers.hpp>
#include <stabkit/video.hpp>

using namespace stabkit;

namespace {

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::int64_t i = 0; i < a.size(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

void randomize_controller(Controller& ctrl, Rng& rng, double scale = 0.3) {
  for (auto& p : ctrl.parameters())
    for (std::int64_t i = 0; i < p.size(); ++i) p.data()[i] += rng.normal(0.0, scale);
}

double sigma(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("ema_step basics") {
  EmaState state;
  state.init(Tensor::full({1, 2, 2}, 0.0));
  Tensor z = Tensor::full({1, 2, 2}, 2.0);

  SUBCASE("beta=1 is the identity") {
    Tensor out = ema_step(z, state, 1.0);
    CHECK(bit_equal(out, z));
  }
  SUBCASE("beta=0 holds the previous value") {
    Tensor out = ema_step(z, state, 0.0);
    for (std::int64_t i = 0; i < out.size(); ++i) CHECK(out.data()[i] == 0.0);
  }
  SUBCASE("midpoint") {
    Tensor out = ema_step(z, state, 0.5);
    for (std::int64_t i = 0; i < out.size(); ++i) CHECK(out.data()[i] == doctest::Approx(1.0));
  }
  SUBCASE("beta outside [0,1] rejected") {
    CHECK_THROWS_AS(ema_step(z, state, 1.5), std::invalid_argument);
    CHECK_THROWS_AS(ema_step(z, state, -0.1), std::invalid_argument);
    Tensor bad = Tensor::full({1, 2, 2}, 1.2);
    CHECK_THROWS_AS(ema_step(z, state, bad), std::invalid_argument);
  }
  SUBCASE("uninitialized state rejected") {
    EmaState fresh;
    CHECK_THROWS_AS(ema_step(z, fresh, 0.5), std::logic_error);
  }
}

TEST_CASE("controller_step") {
  ControllerConfig cfg;
  cfg.seed = 5;
  Controller ctrl(1, cfg);
  int head = ctrl.add_head("output", 1, 1);
  Rng rng(3);
  Tensor x0 = random_tensor({1, 8, 8}, rng, 0.0, 1.0);
  Tensor x1 = random_tensor({1, 8, 8}, rng, 0.0, 1.0);
  Tensor z0 = random_tensor({1, 8, 8}, rng);
  Tensor z1 = random_tensor({1, 8, 8}, rng);

  SUBCASE("fresh init with v=4: beta is sigmoid(4) exactly, inside [0.98, 0.985]") {
    EmaState state;
    state.init(z0);
    auto r = controller_step(x1, x0, z1, state, ctrl, head);
    for (std::int64_t i = 0; i < r.beta.size(); ++i) {
      CHECK(r.beta.data()[i] == sigma(4.0));
      CHECK(r.beta.data()[i] >= 0.98);
      CHECK(r.beta.data()[i] <= 0.985);
    }
  }
  SUBCASE("two-path equivalence with manual ema_step") {
    randomize_controller(ctrl, rng);
    EmaState s1, s2;
    s1.init(z0);
    s2.init(z0);
    auto r = controller_step(x1, x0, z1, s1, ctrl, head);
    Tensor g = ctrl.backbone_forward(x1, x0);
    Tensor beta = sigmoid(ctrl.head_logits(head, g, z1, s2.z_tilde_prev, s2.z_prev));
    Tensor manual = ema_step(z1, s2, beta);
    CHECK(bit_equal(r.z_tilde, manual));
    CHECK(bit_equal(r.beta, beta));
    CHECK(bit_equal(s1.z_tilde_prev, s2.z_tilde_prev));
    CHECK(bit_equal(s1.z_prev, s2.z_prev));
  }
  SUBCASE("uninitialized state rejected") {
    EmaState fresh;
    CHECK_THROWS_AS(controller_step(x1, x0, z1, fresh, ctrl, head), std::logic_error);
  }
  SUBCASE("beta stays strictly inside (0,1)") {
    randomize_controller(ctrl, rng, 0.4);
    EmaState state;
    state.init(z0);
    auto r = controller_step(x1, x0, z1, state, ctrl, head);
    for (std::int64_t i = 0; i < r.beta.size(); ++i) {
      CHECK(r.beta.data()[i] > 0.0);
      CHECK(r.beta.data()[i] < 1.0);
    }
  }
}

TEST_CASE("spatial_fusion_step") {
  Rng rng(9);
  Tensor x0 = random_tensor({1, 6, 6}, rng, 0.0, 1.0);
  Tensor x1 = random_tensor({1, 6, 6}, rng, 0.0, 1.0);
  Tensor z0 = random_tensor({1, 6, 6}, rng);
  Tensor z1 = random_tensor({1, 6, 6}, rng);

  SUBCASE("k=1 reduces to sigmoid gating") {
    ControllerConfig cfg;
    cfg.seed = 2;
    Controller ctrl(1, cfg);
    int head = ctrl.add_head("output", 1, 1 * 1);
    randomize_controller(ctrl, rng);
    EmaState s1, s2;
    s1.init(z0);
    s2.init(z0);
    Tensor out = spatial_fusion_step(x1, x0, z1, s1, ctrl, head, 1);
    // softmax([l, 0]) puts sigmoid(l) on the previous value and sigmoid(-l)
    // on the current one, i.e. an EMA gate with beta = sigmoid(-l)
    Tensor g = ctrl.backbone_forward(x1, x0);
    Tensor logits = ctrl.head_logits(head, g, z1, s2.z_tilde_prev, s2.z_prev);
    Tensor beta = sigmoid(mul_scalar(logits, -1.0));
    Tensor manual = ema_step(z1, s2, beta);
    for (std::int64_t i = 0; i < out.size(); ++i)
      CHECK(out.data()[i] == doctest::Approx(manual.data()[i]).epsilon(1e-12));
  }

  SUBCASE("one-hot weight on the left neighbor shifts the previous map") {
    ControllerConfig cfg;
    cfg.seed = 2;
    cfg.head_layers = 1;  // single zero-weight projection, logits equal the bias
    Controller ctrl(1, cfg);
    int head = ctrl.add_head("output", 1, 9);
    // offsets are row-major; (0,-1) sits at index 3
    Tensor bias = ctrl.head(head).convs.back().bias;
    for (int l = 0; l < 9; ++l) bias.data()[l] = l == 3 ? 40.0 : -40.0;
    EmaState state;
    state.init(z0);
    Tensor out = spatial_fusion_step(x1, x0, z1, state, ctrl, head, 3);
    const int h = 6, w = 6;
    for (int y = 0; y < h; ++y)
      for (int x = 1; x < w; ++x)
        CHECK(out.data()[y * w + x] == doctest::Approx(z0.data()[y * w + x - 1]).epsilon(1e-12));
    // at the left border the tap is masked out and the current value wins
    for (int y = 0; y < h; ++y)
      CHECK(out.data()[y * w + 0] == doctest::Approx(z1.data()[y * w + 0]).epsilon(1e-12));
  }

  SUBCASE("uniform logits match the loop oracle") {
    ControllerConfig cfg;
    cfg.seed = 4;
    cfg.head_layers = 1;
    cfg.init_bias = 0.0;  // all logits zero -> uniform kernel
    Controller ctrl(1, cfg);
    int head = ctrl.add_head("output", 1, 9);
    EmaState state;
    state.init(z0);
    Tensor out = spatial_fusion_step(x1, x0, z1, state, ctrl, head, 3);
    auto offsets = neighborhood_offsets(3);
    const int h = 6, w = 6;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = z1.data()[y * w + x];
        int valid = 1;
        for (auto [dy, dx] : offsets) {
          int ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          acc += z0.data()[ny * w + nx];
          ++valid;
        }
        CHECK(out.data()[y * w + x] == doctest::Approx(acc / valid).epsilon(1e-12));
      }
  }

  SUBCASE("even k rejected") {
    ControllerConfig cfg;
    Controller ctrl(1, cfg);
    int head = ctrl.add_head("output", 1, 4);
    EmaState state;
    state.init(z0);
    CHECK_THROWS_AS(spatial_fusion_step(x1, x0, z1, state, ctrl, head, 2),
                    std::invalid_argument);
  }

  SUBCASE("output stays in the convex hull of current value and neighborhood") {
    ControllerConfig cfg;
    cfg.seed = 6;
    Controller ctrl(1, cfg);
    int head = ctrl.add_head("output", 1, 9);
    randomize_controller(ctrl, rng, 1.5);
    EmaState state;
    state.init(z0);
    Tensor out = spatial_fusion_step(x1, x0, z1, state, ctrl, head, 3);
    auto offsets = neighborhood_offsets(3);
    const int h = 6, w = 6;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double lo = z1.data()[y * w + x], hi = lo;
        for (auto [dy, dx] : offsets) {
          int ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          lo = std::min(lo, z0.data()[ny * w + nx]);
          hi = std::max(hi, z0.data()[ny * w + nx]);
        }
        CHECK(out.data()[y * w + x] >= lo - 1e-12);
        CHECK(out.data()[y * w + x] <= hi + 1e-12);
      }
  }
}

TEST_CASE("composition") {
  ControllerConfig cfg;
  cfg.features_in_head = false;
  cfg.seed = 11;
  auto c1 = std::make_shared<Controller>(1, cfg);
  cfg.seed = 12;
  auto c2 = std::make_shared<Controller>(1, cfg);
  c1->add_head("output", 1, 1);
  c2->add_head("output", 1, 1);
  Rng rng(21);
  randomize_controller(*c1, rng);
  randomize_controller(*c2, rng);

  Tensor x0 = random_tensor({1, 6, 6}, rng, 0.0, 1.0);
  Tensor x1 = random_tensor({1, 6, 6}, rng, 0.0, 1.0);
  Tensor z0 = random_tensor({1, 6, 6}, rng);
  Tensor z1 = random_tensor({1, 6, 6}, rng);

  SUBCASE("commutative form equals a single gate with decay beta1*beta2") {
    auto comp = compose(c1, c2, /*commutative=*/true);
    EmaState s1, s2;
    s1.init(z0);
    s2.init(z0);
    Tensor out = composed_step(comp, x1, x0, z1, s1, 0);
    Tensor b1 = sigmoid(c1->head_logits(0, c1->backbone_forward(x1, x0), z1, s2.z_tilde_prev, s2.z_prev));
    Tensor b2 = sigmoid(c2->head_logits(0, c2->backbone_forward(x1, x0), z1, s2.z_tilde_prev, s2.z_prev));
    Tensor manual = ema_step(z1, s2, mul(b1, b2));
    CHECK(bit_equal(out, manual));
  }

  SUBCASE("commutative order swap is bit identical") {
    auto ab = compose(c1, c2, true);
    auto ba = compose(c2, c1, true);
    EmaState sa, sb;
    sa.init(z0);
    sb.init(z0);
    Tensor oa = composed_step(ab, x1, x0, z1, sa, 0);
    Tensor ob = composed_step(ba, x1, x0, z1, sb, 0);
    CHECK(bit_equal(oa, ob));
  }

  SUBCASE("beta2 == 1 leaves stage one unchanged (commutative)") {
    ControllerConfig open = cfg;
    open.seed = 31;
    open.init_bias = 40.0;  // sigmoid(40) rounds to exactly 1.0
    auto wide = std::make_shared<Controller>(1, open);
    wide->add_head("output", 1, 1);
    auto comp = compose(c1, wide, true);
    EmaState s1, s2;
    s1.init(z0);
    s2.init(z0);
    Tensor out = composed_step(comp, x1, x0, z1, s1, 0);
    auto r = controller_step(x1, x0, z1, s2, *c1, 0);
    CHECK(bit_equal(out, r.z_tilde));
  }

  SUBCASE("non-commutative form keeps a private stage-one chain") {
    auto comp = compose(c1, c2, false);
    EmaState s;
    s.init(z0);
    Tensor out1 = composed_step(comp, x1, x0, z1, s, 0);
    // stage-1 state must differ from the fused state after one step
    CHECK(!bit_equal(s.stage1_prev, s.z_tilde_prev));
    Tensor z2 = random_tensor({1, 6, 6}, rng);
    Tensor out2 = composed_step(comp, x0, x1, z2, s, 0);
    CHECK(out2.shape() == out1.shape());
  }

  SUBCASE("spatial and feature-input heads are rejected") {
    auto spatial = std::make_shared<Controller>(1, cfg);
    spatial->add_head("output", 1, 9);
    CHECK_THROWS_AS(compose(c1, spatial, true), std::invalid_argument);
    ControllerConfig feat = cfg;
    feat.features_in_head = true;
    auto featured = std::make_shared<Controller>(1, feat);
    featured->add_head("output", 1, 1);
    CHECK_THROWS_AS(compose(c1, featured, true), std::invalid_argument);
  }
}

TEST_CASE("attach") {
  auto seq = generate_sequence(15, 6, {1, 12, 12}, MotionModel::translating_shapes);

  SUBCASE("beta forced to 1 reproduces the base bit-exactly") {
    auto base = std::make_shared<ToyDenoiser>(1, 41);
    StabilizerSpec spec;
    spec.kind = StabilizerKind::simple_fixed;
    spec.fixed_beta = 1.0;
    auto sm = attach(base, {"conv1", "conv2", "output"}, spec);
    sm.reset();
    for (const auto& f : seq.frames) CHECK(bit_equal(sm.step(f), base->forward(f)));
  }

  SUBCASE("output-only simple EMA equals post-hoc EMA of base outputs") {
    auto base = std::make_shared<ToyDenoiser>(1, 42);
    StabilizerSpec spec;
    spec.kind = StabilizerKind::simple_learned;
    spec.controller.init_bias = 0.7;  // beta = sigmoid(0.7)
    auto sm = attach(base, {"output"}, spec);
    sm.reset();
    EmaState manual;
    for (int t = 0; t < seq.tau(); ++t) {
      Tensor stabilized = sm.step(seq.frames[t]);
      Tensor raw = base->forward(seq.frames[t]);
      Tensor expect;
      if (!manual.initialized) {
        manual.init(raw);
        expect = raw;
      } else {
        Tensor beta = sigmoid(expand_channels(Tensor::full({1}, 0.7), 12, 12));
        expect = ema_step(raw, manual, beta);
      }
      CHECK(bit_equal(stabilized, expect));
    }
  }

  SUBCASE("trainable parameters exclude every base parameter") {
    auto base = std::make_shared<ToyDenoiser>(1, 43);
    StabilizerSpec spec;
    spec.kind = StabilizerKind::controlled;
    auto sm = attach(base, {"conv2", "output"}, spec);
    CHECK(sm.base().frozen());
    auto trainable = sm.trainable_parameters();
    CHECK(!trainable.empty());
    for (const auto& t : trainable)
      for (const auto& b : base->parameters()) CHECK(!t.same_storage(b));
  }

  SUBCASE("empty or unknown selections rejected") {
    auto base = std::make_shared<ToyDenoiser>(1, 44);
    StabilizerSpec spec;
    CHECK_THROWS_AS(attach(base, {}, spec), std::invalid_argument);
    CHECK_THROWS_AS(attach(base, {"blockX"}, spec), std::invalid_argument);
  }
}

TEST_CASE("causality: mutating a later frame never changes earlier outputs") {
  auto seq = generate_sequence(33, 6, {1, 10, 10}, MotionModel::oscillating_texture);
  Rng rng(5);

  auto run = [&](StabilizedModel& sm, const std::vector<Tensor>& frames) {
    sm.reset();
    std::vector<Tensor> outs;
    for (const auto& f : frames) outs.push_back(sm.step(f));
    return outs;
  };

  for (auto kind : {StabilizerKind::simple_fixed, StabilizerKind::simple_learned,
                    StabilizerKind::controlled, StabilizerKind::spatial}) {
    auto base = std::make_shared<ToyDenoiser>(1, 51);
    StabilizerSpec spec;
    spec.kind = kind;
    spec.fixed_beta = 0.4;
    spec.k = 3;
    auto sm = attach(base, {"conv2", "output"}, spec);
    auto baseline = run(sm, seq.frames);
    const int s = 3;
    std::vector<Tensor> mutated;
    for (int t = 0; t < seq.tau(); ++t) mutated.push_back(seq.frames[t].clone_values());
    for (std::int64_t i = 0; i < mutated[s].size(); ++i)
      mutated[s].data()[i] += rng.uniform(-0.5, 0.5);
    auto perturbed = run(sm, mutated);
    for (int t = 0; t < s; ++t) CHECK(bit_equal(perturbed[t], baseline[t]));
    CHECK(!bit_equal(perturbed[s], baseline[s]));
  }
}

TEST_CASE("identity at init: deviation shrinks as v grows") {
  auto seq = generate_sequence(61, 5, {1, 12, 12}, MotionModel::translating_shapes);
  for (auto kind : {StabilizerKind::controlled, StabilizerKind::spatial}) {
    double prev_dev = 1e100;
    for (double v : {4.0, 8.0, 12.0}) {
      auto base = std::make_shared<ToyDenoiser>(1, 52);
      StabilizerSpec spec;
      spec.kind = kind;
      spec.controller.init_bias = v;
      auto sm = attach(base, {"output"}, spec);
      sm.reset();
      double dev = 0.0;
      for (const auto& f : seq.frames) {
        Tensor stabilized = sm.step(f);
        Tensor raw = base->forward(f);
        for (std::int64_t i = 0; i < raw.size(); ++i)
          dev += std::abs(stabilized.data()[i] - raw.data()[i]);
      }
      CHECK(dev < prev_dev);
      CHECK(dev / (seq.tau() * 144) < 0.05);
      prev_dev = dev;
    }
  }
}

TEST_CASE("state determinism: reset + replay reproduces outputs bit-exactly") {
  auto seq = generate_sequence(71, 5, {1, 10, 10}, MotionModel::oscillating_texture);
  auto base = std::make_shared<ToyDenoiser>(1, 53);
  StabilizerSpec spec;
  spec.kind = StabilizerKind::spatial;
  spec.k = 3;
  auto sm = attach(base, {"conv2", "output"}, spec);
  std::vector<Tensor> first, second;
  sm.reset();
  for (const auto& f : seq.frames) first.push_back(sm.step(f));
  sm.reset();
  for (const auto& f : seq.frames) second.push_back(sm.step(f));
  for (int t = 0; t < seq.tau(); ++t) CHECK(bit_equal(first[t], second[t]));
}

TEST_CASE("stabilizer checkpoint round trip") {
  auto base = std::make_shared<ToyDenoiser>(1, 54);
  StabilizerSpec spec;
  spec.kind = StabilizerKind::controlled;
  auto sm = attach(base, {"output"}, spec);
  Rng rng(8);
  for (auto& p : sm.trainable_parameters())
    for (std::int64_t i = 0; i < p.size(); ++i) p.data()[i] += rng.normal(0.0, 0.1);

  auto dir = std::filesystem::temp_directory_path() / "stabkit_stab_ckpt";
  std::filesystem::remove_all(dir);
  save_stabilizer(dir, sm);

  auto base2 = std::make_shared<ToyDenoiser>(1, 54);
  auto sm2 = attach(base2, {"output"}, spec);
  load_stabilizer(dir, sm2);

  auto seq = generate_sequence(81, 4, {1, 10, 10}, MotionModel::translating_shapes);
  sm.reset();
  sm2.reset();
  for (const auto& f : seq.frames) CHECK(bit_equal(sm.step(f), sm2.step(f)));
  std::filesystem::remove_all(dir);
}

TEST_CASE("gradient check: unified-style loss through a controlled stabilizer, tau=4") {
  Rng rng(77);
  ControllerConfig cc;
  cc.backbone_channels = 4;
  cc.head_channels = 4;
  cc.seed = 5;
  Controller ctrl(1, cc);
  ctrl.add_head("z", 1, 1);
  for (auto& p : ctrl.parameters())
    for (std::int64_t i = 0; i < p.size(); ++i) p.data()[i] += rng.normal(0.0, 0.2);
  ctrl.set_trainable(true);
  std::vector<Tensor> xs, zs, ys;
  for (int t = 0; t < 4; ++t) {
    xs.push_back(random_tensor({1, 5, 5}, rng, 0.0, 1.0));
    zs.push_back(random_tensor({1, 5, 5}, rng));
    ys.push_back(random_tensor({1, 5, 5}, rng));
  }
  auto f = [&] {
    EmaState state;
    state.init(zs[0]);
    std::vector<Tensor> preds = {zs[0]};
    for (int t = 1; t < 4; ++t)
      preds.push_back(controller_step(xs[t], xs[t - 1], zs[t], state, ctrl, 0).z_tilde);
    Tensor acc = l2_norm(sub(preds[0], ys[0]));
    for (int t = 1; t < 4; ++t) acc = add(acc, l2_norm(sub(preds[t], ys[t])));
    for (int t = 0; t + 1 < 4; ++t)
      acc = add(acc, mul_scalar(l2_norm(sub(preds[t], preds[t + 1])), 0.4));
    return acc;
  };
  CHECK(gradient_check(f, ctrl.parameters()).max_rel_error < 1e-4);
}

TEST_CASE("gradient check: spatial-fusion output sum on a 5x5 frame") {
  Rng rng(78);
  ControllerConfig cc;
  cc.backbone_channels = 4;
  cc.head_channels = 4;
  cc.seed = 6;
  Controller ctrl(1, cc);
  ctrl.add_head("z", 1, 9);
  for (auto& p : ctrl.parameters())
    for (std::int64_t i = 0; i < p.size(); ++i) p.data()[i] += rng.normal(0.0, 0.2);
  ctrl.set_trainable(true);
  Tensor x0 = random_tensor({1, 5, 5}, rng, 0.0, 1.0);
  Tensor x1 = random_tensor({1, 5, 5}, rng, 0.0, 1.0);
  Tensor z0 = random_tensor({1, 5, 5}, rng);
  Tensor z1 = random_tensor({1, 5, 5}, rng);
  auto f = [&] {
    EmaState state;
    state.init(z0);
    return sum(spatial_fusion_step(x1, x0, z1, state, ctrl, 0, 3));
  };
  CHECK(gradient_check(f, ctrl.parameters()).max_rel_error < 1e-4);
}

TEST_CASE("gradients flow through an EMA chain (finite differences)") {
  Rng rng(14);
  Tensor logits = Tensor::from({1}, {1.2});
  logits.set_requires_grad(true);
  std::vector<Tensor> zs;
  for (int t = 0; t < 8; ++t) zs.push_back(random_tensor({1, 3, 3}, rng));

  auto loss = [&] {
    EmaState state;
    Tensor acc;
    for (int t = 0; t < 8; ++t) {
      Tensor out;
      if (!state.initialized) {
        state.init(zs[t]);
        out = zs[t];
      } else {
        Tensor beta = sigmoid(expand_channels(logits, 3, 3));
        out = ema_step(zs[t], state, beta);
      }
      Tensor sq = sum_squares(out);
      acc = acc.defined() ? add(acc, sq) : sq;
    }
    return acc;
  };
  CHECK(gradient_check(loss, {logits}).max_rel_error < 1e-4);
}
