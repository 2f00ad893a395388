#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stabkit/rng.hpp"
#include "stabkit/serialize.hpp"
#include "stabkit/tensor.hpp"

namespace stabkit {

// Ordered frames plus per-frame targets. Generated frames live in [0,1];
// corrupted copies may leave that range.
struct VideoSequence {
  std::vector<Tensor> frames;
  std::vector<Tensor> targets;
  double fps_hint = 30.0;

  int tau() const { return static_cast<int>(frames.size()); }

  void validate() const {
    if (frames.empty() || frames.size() != targets.size())
      throw std::invalid_argument("video sequence needs equally many frames and targets (>= 1)");
    for (const auto& f : frames)
      if (f.shape() != frames[0].shape())
        throw std::invalid_argument("all frames must share one shape");
  }
};

enum class MotionModel { static_scene, translating_shapes, oscillating_texture };

inline const char* motion_model_name(MotionModel m) {
  switch (m) {
    case MotionModel::static_scene: return "static";
    case MotionModel::translating_shapes: return "translating_shapes";
    case MotionModel::oscillating_texture: return "oscillating_texture";
  }
  return "?";
}

inline MotionModel motion_model_from_name(const std::string& s) {
  if (s == "static") return MotionModel::static_scene;
  if (s == "translating_shapes") return MotionModel::translating_shapes;
  if (s == "oscillating_texture") return MotionModel::oscillating_texture;
  throw std::invalid_argument("unknown motion model: " + s);
}

struct SceneParams {
  int num_shapes = 3;
  int speed = 1;  // pixels per frame for translating shapes
};

namespace scene_detail {

// smooth pseudo-random field from a handful of low-frequency sinusoids
inline double texture_value(std::uint64_t seed, int y, int x, double t, int h, int w,
                            double time_rate) {
  double v = 0.5;
  for (int k = 0; k < 3; ++k) {
    double fy = 1.0 + 2.0 * counter_uniform(seed, 10 + k, 0);
    double fx = 1.0 + 2.0 * counter_uniform(seed, 20 + k, 0);
    double ph = 6.283185307179586 * counter_uniform(seed, 30 + k, 0);
    double om = time_rate * (0.5 + counter_uniform(seed, 40 + k, 0));
    v += (0.13 / (k + 1)) *
         std::sin(6.283185307179586 * (fy * y / h + fx * x / w) + ph + om * t);
  }
  return std::min(1.0, std::max(0.0, v));
}

struct MovingShape {
  bool disk;
  int size;      // half-extent
  double y0, x0; // initial center
  int vy, vx;    // integer pixels per frame
  double intensity[3];
};

inline std::vector<MovingShape> make_shapes(std::uint64_t seed, int n, int h, int w, int speed) {
  std::vector<MovingShape> shapes;
  for (int i = 0; i < n; ++i) {
    MovingShape s;
    s.disk = counter_uniform(seed, 100 + i, 0) < 0.5;
    s.size = 2 + static_cast<int>(counter_uniform(seed, 100 + i, 1) * std::max(2, h / 6));
    s.y0 = counter_uniform(seed, 100 + i, 2) * h;
    s.x0 = counter_uniform(seed, 100 + i, 3) * w;
    int dir = static_cast<int>(counter_uniform(seed, 100 + i, 4) * 4.0);
    s.vy = (dir == 0) ? speed : (dir == 1 ? -speed : 0);
    s.vx = (dir == 2) ? speed : (dir == 3 ? -speed : (s.vy == 0 ? speed : 0));
    for (int c = 0; c < 3; ++c)
      s.intensity[c] = 0.1 + 0.8 * counter_uniform(seed, 100 + i, 5 + c);
    shapes.push_back(s);
  }
  return shapes;
}

}  // namespace scene_detail

// Clean frames with temporally coherent content; targets default to the
// clean frames (the identity task). Task modules derive their own targets.
inline VideoSequence generate_sequence(std::uint64_t scene_seed, int tau, const Shape& shape,
                                       MotionModel motion, const SceneParams& params = {}) {
  if (tau < 1) throw std::invalid_argument("generate_sequence: tau must be >= 1");
  if (shape.size() != 3 || shape_numel(shape) == 0)
    throw std::invalid_argument("generate_sequence: shape must be [C,H,W] with positive extents");
  const int c = shape[0], h = shape[1], w = shape[2];

  VideoSequence seq;
  seq.frames.reserve(tau);
  seq.targets.reserve(tau);

  auto shapes = scene_detail::make_shapes(scene_seed, params.num_shapes, h, w, params.speed);
  // uniform background keeps the whole translating frame an exact toroidal shift
  double bg[3];
  for (int ci = 0; ci < 3; ++ci) bg[ci] = 0.2 + 0.5 * counter_uniform(scene_seed, 5 + ci, 0);

  for (int t = 0; t < tau; ++t) {
    Tensor frame = Tensor::zeros(shape);
    switch (motion) {
      case MotionModel::static_scene:
        for (int ci = 0; ci < c; ++ci)
          for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
              frame.data()[(ci * h + y) * w + x] =
                  scene_detail::texture_value(scene_seed + ci, y, x, 0.0, h, w, 0.0);
        break;
      case MotionModel::oscillating_texture:
        for (int ci = 0; ci < c; ++ci)
          for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
              frame.data()[(ci * h + y) * w + x] =
                  scene_detail::texture_value(scene_seed + ci, y, x, t, h, w, 0.35);
        break;
      case MotionModel::translating_shapes: {
        for (int ci = 0; ci < c; ++ci)
          std::fill(frame.data() + ci * h * w, frame.data() + (ci + 1) * h * w, bg[ci % 3]);
        for (const auto& s : shapes) {
          // toroidal integer positions so frame t+1 is frame t shifted by (vy,vx)
          long cy = static_cast<long>(std::floor(s.y0)) + static_cast<long>(s.vy) * t;
          long cx = static_cast<long>(std::floor(s.x0)) + static_cast<long>(s.vx) * t;
          for (int dy = -s.size; dy <= s.size; ++dy)
            for (int dx = -s.size; dx <= s.size; ++dx) {
              if (s.disk && dy * dy + dx * dx > s.size * s.size) continue;
              int y = static_cast<int>(((cy + dy) % h + h) % h);
              int x = static_cast<int>(((cx + dx) % w + w) % w);
              for (int ci = 0; ci < c; ++ci)
                frame.data()[(ci * h + y) * w + x] = s.intensity[ci % 3];
            }
        }
        break;
      }
    }
    seq.frames.push_back(frame);
    seq.targets.push_back(frame.clone_values());
  }
  return seq;
}

// ---------------------------------------------------------------------------
// directory serialization: frames.bin / targets.bin + manifest.json
// ---------------------------------------------------------------------------

inline void save_sequence(const std::filesystem::path& dir, const VideoSequence& seq,
                          nlohmann::json meta = nlohmann::json::object()) {
  seq.validate();
  std::filesystem::create_directories(dir);
  const Shape& fs = seq.frames[0].shape();
  std::vector<double> frames, targets;
  for (const auto& f : seq.frames) frames.insert(frames.end(), f.data(), f.data() + f.size());
  for (const auto& t : seq.targets) targets.insert(targets.end(), t.data(), t.data() + t.size());
  write_f64_blob(dir / "frames.bin", frames.data(), frames.size());
  write_f64_blob(dir / "targets.bin", targets.data(), targets.size());
  meta["format"] = "f64-le";
  meta["shape"] = fs;
  meta["tau"] = seq.tau();
  meta["fps_hint"] = seq.fps_hint;
  write_json(dir / "manifest.json", meta);
}

inline VideoSequence load_sequence(const std::filesystem::path& dir) {
  nlohmann::json meta = read_json(dir / "manifest.json");
  Shape shape = meta.at("shape").get<Shape>();
  int tau = meta.at("tau").get<int>();
  std::size_t per = static_cast<std::size_t>(shape_numel(shape));
  std::vector<double> frames = read_f64_blob(dir / "frames.bin", per * tau);
  std::vector<double> targets = read_f64_blob(dir / "targets.bin", per * tau);
  VideoSequence seq;
  seq.fps_hint = meta.value("fps_hint", 30.0);
  for (int t = 0; t < tau; ++t) {
    seq.frames.push_back(Tensor::from(shape, {frames.begin() + t * per, frames.begin() + (t + 1) * per}));
    seq.targets.push_back(
        Tensor::from(shape, {targets.begin() + t * per, targets.begin() + (t + 1) * per}));
  }
  return seq;
}

}  // namespace stabkit
