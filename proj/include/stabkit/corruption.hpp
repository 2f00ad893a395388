#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "stabkit/rng.hpp"
#include "stabkit/video.hpp"

namespace stabkit {

enum class CorruptionKind {
  identity,
  gaussian_noise,
  impulse,
  patch_drop,
  frame_drop,
  elastic,
};

// Parameterized per-frame perturbation family with its own random stream.
// Identical (spec, seed, frame index) draws are bit-identical: every random
// number is a pure function of (seed, stream, counter).
struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::identity;
  double sigma = 0.1;        // gaussian_noise
  double p_salt = 0.05;      // impulse
  double p_pepper = 0.05;    // impulse
  int patch = 8;             // patch_drop
  double p = 0.1;            // patch_drop / frame_drop
  double alpha = 50.0;       // elastic magnitude
  double smoothness = 5.0;   // elastic sigma
  std::uint64_t seed = 0;

  void validate() const {
    auto prob = [](double x) { return x >= 0.0 && x <= 1.0; };
    switch (kind) {
      case CorruptionKind::identity:
        break;
      case CorruptionKind::gaussian_noise:
        if (sigma < 0) throw std::invalid_argument("gaussian_noise: sigma must be >= 0");
        break;
      case CorruptionKind::impulse:
        if (!prob(p_salt) || !prob(p_pepper) || p_salt + p_pepper > 1.0)
          throw std::invalid_argument("impulse: salt/pepper probabilities invalid");
        break;
      case CorruptionKind::patch_drop:
        if (patch < 1 || !prob(p)) throw std::invalid_argument("patch_drop: invalid parameters");
        break;
      case CorruptionKind::frame_drop:
        if (!prob(p)) throw std::invalid_argument("frame_drop: probability invalid");
        break;
      case CorruptionKind::elastic:
        if (alpha < 0 || smoothness <= 0)
          throw std::invalid_argument("elastic: need alpha >= 0 and smoothness > 0");
        break;
    }
  }

  std::string name() const {
    switch (kind) {
      case CorruptionKind::identity: return "identity";
      case CorruptionKind::gaussian_noise: return "gaussian_noise";
      case CorruptionKind::impulse: return "impulse";
      case CorruptionKind::patch_drop: return "patch_drop";
      case CorruptionKind::frame_drop: return "frame_drop";
      case CorruptionKind::elastic: return "elastic";
    }
    return "?";
  }
};

// Smooth random displacement field: Gaussian-filtered unit noise scaled by
// alpha, applied with bilinear resampling. Border coordinates are clamped.
// The truncated Gaussian kernel uses radius ceil(3*sigma) and is applied
// separably per axis.
inline Tensor elastic_warp(const Tensor& frame, double alpha, double sigma, std::uint64_t seed,
                           int frame_index = 0) {
  if (alpha < 0 || sigma <= 0) throw std::invalid_argument("elastic_warp: bad parameters");
  const int c = frame.shape()[0], h = frame.shape()[1], w = frame.shape()[2];
  if (alpha == 0.0) return frame.clone_values();

  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double ks = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    ks += kernel[i + radius];
  }
  for (auto& k : kernel) k /= ks;

  auto smooth_field = [&](std::uint64_t stream) {
    std::vector<double> raw(static_cast<std::size_t>(h) * w), tmp(raw.size()), out(raw.size());
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        raw[y * w + x] =
            2.0 * counter_uniform(seed, stream, (static_cast<std::uint64_t>(frame_index) * h + y) * w + x) -
            1.0;
    for (int y = 0; y < h; ++y)  // horizontal pass, zero padding
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          int xx = x + i;
          if (xx < 0 || xx >= w) continue;
          acc += kernel[i + radius] * raw[y * w + xx];
        }
        tmp[y * w + x] = acc;
      }
    for (int y = 0; y < h; ++y)  // vertical pass
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          int yy = y + i;
          if (yy < 0 || yy >= h) continue;
          acc += kernel[i + radius] * tmp[yy * w + x];
        }
        out[y * w + x] = acc * alpha;
      }
    return out;
  };
  std::vector<double> dy = smooth_field(1), dx = smooth_field(2);

  Tensor out = Tensor::zeros(frame.shape());
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double sy = std::min(static_cast<double>(h - 1), std::max(0.0, y + dy[y * w + x]));
        double sx = std::min(static_cast<double>(w - 1), std::max(0.0, x + dx[y * w + x]));
        int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
        int y1 = std::min(h - 1, y0 + 1), x1 = std::min(w - 1, x0 + 1);
        double fy = sy - y0, fx = sx - x0;
        const double* base = frame.data() + ci * h * w;
        out.data()[(ci * h + y) * w + x] =
            (1 - fy) * ((1 - fx) * base[y0 * w + x0] + fx * base[y0 * w + x1]) +
            fy * ((1 - fx) * base[y1 * w + x0] + fx * base[y1 * w + x1]);
      }
  return out;
}

namespace corrupt_detail {

inline Tensor corrupt_frame(const Tensor& frame, const CorruptionSpec& spec, int t) {
  const int c = frame.shape()[0], h = frame.shape()[1], w = frame.shape()[2];
  switch (spec.kind) {
    case CorruptionKind::identity:
      return frame.clone_values();
    case CorruptionKind::gaussian_noise: {
      Tensor out = frame.clone_values();
      for (std::int64_t i = 0; i < out.size(); ++i)
        out.data()[i] += spec.sigma * counter_normal(spec.seed, t, static_cast<std::uint64_t>(i));
      return out;
    }
    case CorruptionKind::impulse: {
      Tensor out = frame.clone_values();
      for (std::int64_t i = 0; i < out.size(); ++i) {
        double u = counter_uniform(spec.seed, t, static_cast<std::uint64_t>(i));
        if (u < spec.p_salt)
          out.data()[i] = 1.0;
        else if (u > 1.0 - spec.p_pepper)
          out.data()[i] = 0.0;
      }
      return out;
    }
    case CorruptionKind::patch_drop: {
      Tensor out = frame.clone_values();
      const int py = (h + spec.patch - 1) / spec.patch;  // ceiling tiling
      const int px = (w + spec.patch - 1) / spec.patch;
      for (int by = 0; by < py; ++by)
        for (int bx = 0; bx < px; ++bx) {
          if (counter_uniform(spec.seed, t, static_cast<std::uint64_t>(by) * px + bx) >= spec.p)
            continue;
          for (int ci = 0; ci < c; ++ci)
            for (int y = by * spec.patch; y < std::min(h, (by + 1) * spec.patch); ++y)
              for (int x = bx * spec.patch; x < std::min(w, (bx + 1) * spec.patch); ++x)
                out.data()[(ci * h + y) * w + x] = 0.0;
        }
      return out;
    }
    case CorruptionKind::frame_drop:
      if (counter_uniform(spec.seed, t, 0) < spec.p) return Tensor::zeros(frame.shape());
      return frame.clone_values();
    case CorruptionKind::elastic:
      return elastic_warp(frame, spec.alpha, spec.smoothness, spec.seed, t);
  }
  return frame.clone_values();
}

}  // namespace corrupt_detail

// Corrupted copy; targets are untouched and random draws are independent
// across frames. Pure in (seq, spec).
inline VideoSequence corrupt(const VideoSequence& seq, const CorruptionSpec& spec) {
  spec.validate();
  VideoSequence out;
  out.fps_hint = seq.fps_hint;
  out.frames.reserve(seq.frames.size());
  for (int t = 0; t < seq.tau(); ++t)
    out.frames.push_back(corrupt_detail::corrupt_frame(seq.frames[t], spec, t));
  for (const auto& tgt : seq.targets) out.targets.push_back(tgt.clone_values());
  return out;
}

// Chain applied in order. Denoising tasks put Gaussian noise first so that,
// for example, dropped frames contain zeros rather than zero-mean noise.
inline VideoSequence corrupt_chain(const VideoSequence& seq,
                                   const std::vector<CorruptionSpec>& specs) {
  VideoSequence cur = corrupt(seq, CorruptionSpec{});  // identity copy
  for (const auto& s : specs) cur = corrupt(cur, s);
  return cur;
}

// CLI syntax: kind[:params][:seed], params comma-separated.
//   gaussian_noise:0.1:7   impulse:0.05,0.05:3   patch_drop:8,0.1:1
//   frame_drop:0.1:2       elastic:50,5:4        identity
inline CorruptionSpec parse_corruption(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ':')) parts.push_back(item);
  if (parts.empty()) throw std::invalid_argument("empty corruption spec");

  auto nums = [](const std::string& s) {
    std::vector<double> v;
    std::stringstream ns(s);
    std::string n;
    while (std::getline(ns, n, ',')) v.push_back(std::stod(n));
    return v;
  };

  CorruptionSpec spec;
  const std::string& kind = parts[0];
  std::vector<double> p = parts.size() > 1 && !parts[1].empty() ? nums(parts[1]) : std::vector<double>{};
  if (kind == "identity") {
    spec.kind = CorruptionKind::identity;
  } else if (kind == "gaussian_noise") {
    spec.kind = CorruptionKind::gaussian_noise;
    if (!p.empty()) spec.sigma = p[0];
  } else if (kind == "impulse") {
    spec.kind = CorruptionKind::impulse;
    if (p.size() > 0) spec.p_salt = p[0];
    if (p.size() > 1) spec.p_pepper = p[1];
  } else if (kind == "patch_drop") {
    spec.kind = CorruptionKind::patch_drop;
    if (p.size() > 0) spec.patch = static_cast<int>(p[0]);
    if (p.size() > 1) spec.p = p[1];
  } else if (kind == "frame_drop") {
    spec.kind = CorruptionKind::frame_drop;
    if (!p.empty()) spec.p = p[0];
  } else if (kind == "elastic") {
    spec.kind = CorruptionKind::elastic;
    if (p.size() > 0) spec.alpha = p[0];
    if (p.size() > 1) spec.smoothness = p[1];
  } else {
    throw std::invalid_argument("unknown corruption kind: " + kind);
  }
  if (parts.size() > 2 && !parts[2].empty()) spec.seed = std::stoull(parts[2]);
  spec.validate();
  return spec;
}

}  // namespace stabkit
