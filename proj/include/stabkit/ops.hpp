#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <utility>
#include <vector>

#include "stabkit/tape.hpp"
#include "stabkit/tensor.hpp"

namespace stabkit {

namespace detail {

inline bool wants_grad(std::initializer_list<const Tensor*> inputs) {
  if (!active_tape()) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

inline void record_entry(const char* op, Tensor& out,
                         std::initializer_list<const Tensor*> inputs,
                         std::function<void()> backward) {
  Tape* tape = active_tape();
  out.set_requires_grad(true);
  for (const Tensor* t : inputs) tape->track(*t);
  tape->track(out);
  tape->record(op, std::move(backward));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (!same_shape(a, b)) throw_shape_error("add", a, b);
  Tensor out = Tensor::zeros(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (detail::wants_grad({&a, &b})) {
    detail::record_entry("add", out, {&a, &b}, [a = a, b = b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad())
        for (std::size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i];
      if (b.requires_grad())
        for (std::size_t i = 0; i < g.size(); ++i) b.grad()[i] += g[i];
    });
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  if (!same_shape(a, b)) throw_shape_error("sub", a, b);
  Tensor out = Tensor::zeros(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (detail::wants_grad({&a, &b})) {
    detail::record_entry("sub", out, {&a, &b}, [a = a, b = b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad())
        for (std::size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i];
      if (b.requires_grad())
        for (std::size_t i = 0; i < g.size(); ++i) b.grad()[i] -= g[i];
    });
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (!same_shape(a, b)) throw_shape_error("mul", a, b);
  Tensor out = Tensor::zeros(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (detail::wants_grad({&a, &b})) {
    detail::record_entry("mul", out, {&a, &b}, [a = a, b = b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad())
        for (std::size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i] * b.data()[i];
      if (b.requires_grad())
        for (std::size_t i = 0; i < g.size(); ++i) b.grad()[i] += g[i] * a.data()[i];
    });
  }
  return out;
}

inline Tensor mul_scalar(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * c;
  if (detail::wants_grad({&a})) {
    detail::record_entry("mul_scalar", out, {&a}, [a = a, out, c]() mutable {
      const auto& g = out.grad();
      for (std::size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i] * c;
    });
  }
  return out;
}

inline Tensor add_scalar(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + c;
  if (detail::wants_grad({&a})) {
    detail::record_entry("add_scalar", out, {&a}, [a = a, out]() mutable {
      const auto& g = out.grad();
      for (std::size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i];
    });
  }
  return out;
}

// c - a, elementwise
inline Tensor rsub_scalar(double c, const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out.data()[i] = c - a.data()[i];
  if (detail::wants_grad({&a})) {
    detail::record_entry("rsub_scalar", out, {&a}, [a = a, out]() mutable {
      const auto& g = out.grad();
      for (std::size_t i = 0; i < g.size(); ++i) a.grad()[i] -= g[i];
    });
  }
  return out;
}

inline Tensor sigmoid(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) {
    double x = a.data()[i];
    out.data()[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  if (detail::wants_grad({&a})) {
    detail::record_entry("sigmoid", out, {&a}, [a = a, out]() mutable {
      const auto& g = out.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        double s = out.data()[i];
        a.grad()[i] += g[i] * s * (1.0 - s);
      }
    });
  }
  return out;
}

inline Tensor leaky_relu(const Tensor& a, double slope = 0.01) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) {
    double x = a.data()[i];
    out.data()[i] = x > 0.0 ? x : slope * x;
  }
  if (detail::wants_grad({&a})) {
    detail::record_entry("leaky_relu", out, {&a}, [a = a, out, slope]() mutable {
      const auto& g = out.grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        a.grad()[i] += g[i] * (a.data()[i] > 0.0 ? 1.0 : slope);
    });
  }
  return out;
}

// hard clamp to [0,1]; gradient passes only strictly inside the interval
inline Tensor clamp01(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i)
    out.data()[i] = std::min(1.0, std::max(0.0, a.data()[i]));
  if (detail::wants_grad({&a})) {
    detail::record_entry("clamp01", out, {&a}, [a = a, out]() mutable {
      const auto& g = out.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        double x = a.data()[i];
        if (x > 0.0 && x < 1.0) a.grad()[i] += g[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out = Tensor::zeros({m, n});
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      double av = a.data()[i * k + p];
      for (int j = 0; j < n; ++j) out.data()[i * n + j] += av * b.data()[p * n + j];
    }
  if (detail::wants_grad({&a, &b})) {
    detail::record_entry("matmul", out, {&a, &b}, [a = a, b = b, out, m, k, n]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad())
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += g[i * n + j] * b.data()[p * n + j];
            a.grad()[i * k + p] += acc;
          }
      if (b.requires_grad())
        for (int p = 0; p < k; ++p)
          for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int i = 0; i < m; ++i) acc += a.data()[i * k + p] * g[i * n + j];
            b.grad()[p * n + j] += acc;
          }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// 2-D convolution, stride 1, zero padding keeping the spatial size
// ---------------------------------------------------------------------------

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (x.shape().size() != 3) throw_shape_error("conv2d input", x, "[C,H,W]");
  if (w.shape().size() != 4 || w.shape()[2] != w.shape()[3] || w.shape()[2] % 2 == 0)
    throw_shape_error("conv2d weight", w, "[Cout,Cin,k,k] with odd k");
  if (w.shape()[1] != x.shape()[0])
    throw std::invalid_argument("conv2d: weight expects " + std::to_string(w.shape()[1]) +
                                " input channels, input has " + std::to_string(x.shape()[0]));
  if (bias.shape().size() != 1 || bias.shape()[0] != w.shape()[0])
    throw_shape_error("conv2d bias", bias, "[Cout]");

  const int cin = x.shape()[0], h = x.shape()[1], wd = x.shape()[2];
  const int cout = w.shape()[0], k = w.shape()[2], pad = k / 2;
  Tensor out = Tensor::zeros({cout, h, wd});

  auto run_forward = [&](const double* xv, const double* wv, const double* bv, double* ov) {
    for (int co = 0; co < cout; ++co) {
      double b = bv[co];
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < wd; ++xx) ov[(co * h + y) * wd + xx] = b;
      for (int ci = 0; ci < cin; ++ci) {
        const double* xc = xv + static_cast<std::size_t>(ci) * h * wd;
        const double* wc = wv + (static_cast<std::size_t>(co) * cin + ci) * k * k;
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            double wk = wc[ky * k + kx];
            if (wk == 0.0) continue;
            int y0 = std::max(0, pad - ky), y1 = std::min(h, h + pad - ky);
            int x0 = std::max(0, pad - kx), x1 = std::min(wd, wd + pad - kx);
            for (int y = y0; y < y1; ++y) {
              const double* xr = xc + (y + ky - pad) * wd + (x0 + kx - pad);
              double* orow = ov + (co * h + y) * wd + x0;
              for (int xx = x0; xx < x1; ++xx) *orow++ += wk * *xr++;
            }
          }
      }
    }
  };
  run_forward(x.data(), w.data(), bias.data(), out.data());

  if (detail::wants_grad({&x, &w, &bias})) {
    detail::record_entry("conv2d", out, {&x, &w, &bias},
                         [x = x, w = w, bias = bias, out, cin, cout, h, wd, k, pad]() mutable {
      const auto& g = out.grad();
      if (bias.requires_grad()) {
        for (int co = 0; co < cout; ++co) {
          double acc = 0.0;
          for (int i = 0; i < h * wd; ++i) acc += g[co * h * wd + i];
          bias.grad()[co] += acc;
        }
      }
      for (int co = 0; co < cout; ++co)
        for (int ci = 0; ci < cin; ++ci)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              int y0 = std::max(0, pad - ky), y1 = std::min(h, h + pad - ky);
              int x0 = std::max(0, pad - kx), x1 = std::min(wd, wd + pad - kx);
              if (w.requires_grad()) {
                double acc = 0.0;
                for (int y = y0; y < y1; ++y) {
                  const double* xr = x.data() + (ci * h + y + ky - pad) * wd + (x0 + kx - pad);
                  const double* gr = g.data() + (co * h + y) * wd + x0;
                  for (int xx = x0; xx < x1; ++xx) acc += *gr++ * *xr++;
                }
                w.grad()[((co * cin + ci) * k + ky) * k + kx] += acc;
              }
              if (x.requires_grad()) {
                double wk = w.data()[((co * cin + ci) * k + ky) * k + kx];
                if (wk == 0.0) continue;
                for (int y = y0; y < y1; ++y) {
                  double* xg = x.grad().data() + (ci * h + y + ky - pad) * wd + (x0 + kx - pad);
                  const double* gr = g.data() + (co * h + y) * wd + x0;
                  for (int xx = x0; xx < x1; ++xx) *xg++ += wk * *gr++;
                }
              }
            }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) acc += a.data()[i];
  Tensor out = Tensor::scalar(acc);
  if (detail::wants_grad({&a})) {
    detail::record_entry("sum", out, {&a}, [a = a, out]() mutable {
      double g = out.grad()[0];
      for (std::int64_t i = 0; i < a.size(); ++i) a.grad()[i] += g;
    });
  }
  return out;
}

inline Tensor mean(const Tensor& a) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) acc += a.data()[i];
  double inv = 1.0 / static_cast<double>(a.size());
  Tensor out = Tensor::scalar(acc * inv);
  if (detail::wants_grad({&a})) {
    detail::record_entry("mean", out, {&a}, [a = a, out, inv]() mutable {
      double g = out.grad()[0] * inv;
      for (std::int64_t i = 0; i < a.size(); ++i) a.grad()[i] += g;
    });
  }
  return out;
}

inline Tensor sum_squares(const Tensor& a) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) acc += a.data()[i] * a.data()[i];
  Tensor out = Tensor::scalar(acc);
  if (detail::wants_grad({&a})) {
    detail::record_entry("sum_squares", out, {&a}, [a = a, out]() mutable {
      double g = out.grad()[0];
      for (std::int64_t i = 0; i < a.size(); ++i) a.grad()[i] += 2.0 * a.data()[i] * g;
    });
  }
  return out;
}

// L1 norm with the zero subgradient at kinks
inline Tensor l1_norm(const Tensor& a) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) acc += std::abs(a.data()[i]);
  Tensor out = Tensor::scalar(acc);
  if (detail::wants_grad({&a})) {
    detail::record_entry("l1_norm", out, {&a}, [a = a, out]() mutable {
      double g = out.grad()[0];
      for (std::int64_t i = 0; i < a.size(); ++i) {
        double v = a.data()[i];
        if (v > 0.0)
          a.grad()[i] += g;
        else if (v < 0.0)
          a.grad()[i] -= g;
      }
    });
  }
  return out;
}

// Euclidean norm; subgradient 0 at the origin
inline Tensor l2_norm(const Tensor& a) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) acc += a.data()[i] * a.data()[i];
  double norm = std::sqrt(acc);
  Tensor out = Tensor::scalar(norm);
  if (detail::wants_grad({&a})) {
    detail::record_entry("l2_norm", out, {&a}, [a = a, out, norm]() mutable {
      if (norm == 0.0) return;
      double g = out.grad()[0] / norm;
      for (std::int64_t i = 0; i < a.size(); ++i) a.grad()[i] += a.data()[i] * g;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// shape plumbing
// ---------------------------------------------------------------------------

inline Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const int h = parts[0].shape()[1], w = parts[0].shape()[2];
  int ctotal = 0;
  for (const auto& p : parts) {
    if (p.shape().size() != 3 || p.shape()[1] != h || p.shape()[2] != w)
      throw_shape_error("concat_channels", p, "[Ci," + std::to_string(h) + "," + std::to_string(w) + "]");
    ctotal += p.shape()[0];
  }
  Tensor out = Tensor::zeros({ctotal, h, w});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data(), p.data() + p.size(), out.data() + off);
    off += static_cast<std::size_t>(p.size());
  }
  bool need = false;
  if (active_tape())
    for (const auto& p : parts)
      if (p.requires_grad()) need = true;
  if (need) {
    Tape* tape = active_tape();
    out.set_requires_grad(true);
    for (const auto& p : parts) tape->track(p);
    tape->track(out);
    auto parts_copy = parts;
    tape->record("concat_channels", [parts_copy, out]() mutable {
      const auto& g = out.grad();
      std::size_t off = 0;
      for (auto& p : parts_copy) {
        if (p.requires_grad())
          for (std::int64_t i = 0; i < p.size(); ++i) p.grad()[i] += g[off + i];
        off += static_cast<std::size_t>(p.size());
      }
    });
  }
  return out;
}

// [C] -> [C,H,W], each channel filled with its scalar
inline Tensor expand_channels(const Tensor& v, int h, int w) {
  if (v.shape().size() != 1) throw_shape_error("expand_channels", v, "[C]");
  const int c = v.shape()[0];
  Tensor out = Tensor::zeros({c, h, w});
  for (int ci = 0; ci < c; ++ci)
    std::fill(out.data() + ci * h * w, out.data() + (ci + 1) * h * w, v.data()[ci]);
  if (detail::wants_grad({&v})) {
    detail::record_entry("expand_channels", out, {&v}, [v = v, out, c, h, w]() mutable {
      const auto& g = out.grad();
      for (int ci = 0; ci < c; ++ci) {
        double acc = 0.0;
        for (int i = 0; i < h * w; ++i) acc += g[ci * h * w + i];
        v.grad()[ci] += acc;
      }
    });
  }
  return out;
}

// Bilinear resampling to a new spatial size (half-pixel centers, clamped).
// Equal sizes degenerate to an exact copy.
inline Tensor bilinear_resize(const Tensor& x, int hout, int wout) {
  if (x.shape().size() != 3) throw_shape_error("bilinear_resize", x, "[C,H,W]");
  const int c = x.shape()[0], hin = x.shape()[1], win = x.shape()[2];
  Tensor out = Tensor::zeros({c, hout, wout});
  const double sy = static_cast<double>(hin) / hout, sx = static_cast<double>(win) / wout;

  struct Tap {
    int i0, i1;
    double f;
  };
  auto taps = [](int n_out, int n_in, double scale, std::vector<Tap>& v) {
    v.resize(n_out);
    for (int i = 0; i < n_out; ++i) {
      double s = (i + 0.5) * scale - 0.5;
      s = std::min(static_cast<double>(n_in - 1), std::max(0.0, s));
      int i0 = static_cast<int>(std::floor(s));
      int i1 = std::min(n_in - 1, i0 + 1);
      v[i] = {i0, i1, s - i0};
    }
  };
  std::vector<Tap> ty, tx;
  taps(hout, hin, sy, ty);
  taps(wout, win, sx, tx);

  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < hout; ++y)
      for (int xx = 0; xx < wout; ++xx) {
        const Tap& a = ty[y];
        const Tap& b = tx[xx];
        const double* base = x.data() + ci * hin * win;
        double v00 = base[a.i0 * win + b.i0], v01 = base[a.i0 * win + b.i1];
        double v10 = base[a.i1 * win + b.i0], v11 = base[a.i1 * win + b.i1];
        out.data()[(ci * hout + y) * wout + xx] =
            (1 - a.f) * ((1 - b.f) * v00 + b.f * v01) + a.f * ((1 - b.f) * v10 + b.f * v11);
      }

  if (detail::wants_grad({&x})) {
    detail::record_entry("bilinear_resize", out, {&x},
                         [x = x, out, c, hin, win, hout, wout, ty, tx]() mutable {
      const auto& g = out.grad();
      for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < hout; ++y)
          for (int xx = 0; xx < wout; ++xx) {
            const Tap& a = ty[y];
            const Tap& b = tx[xx];
            double gv = g[(ci * hout + y) * wout + xx];
            double* base = x.grad().data() + ci * hin * win;
            base[a.i0 * win + b.i0] += (1 - a.f) * (1 - b.f) * gv;
            base[a.i0 * win + b.i1] += (1 - a.f) * b.f * gv;
            base[a.i1 * win + b.i0] += a.f * (1 - b.f) * gv;
            base[a.i1 * win + b.i1] += a.f * b.f * gv;
          }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// grouped softmax with a structural zero logit
// ---------------------------------------------------------------------------

// Input logits [C*m,H,W] hold m logits per (channel, pixel). A structural
// zero logit is appended per group before normalizing, so the output holds
// m+1 weights per (channel, pixel): indices 0..m-1 follow the input order
// and index m is the zero-logit weight. The optional validity mask (size
// m*H*W, shared across channels) removes taps from the normalization; masked
// weights are exactly zero and the remaining weights still sum to one.
inline Tensor softmax_zero_groups(const Tensor& logits, int m,
                                  const std::vector<std::uint8_t>* valid = nullptr) {
  if (logits.shape().size() != 3 || logits.shape()[0] % m != 0)
    throw_shape_error("softmax_zero_groups", logits, "[C*m,H,W]");
  const int c = logits.shape()[0] / m, h = logits.shape()[1], w = logits.shape()[2];
  if (valid && static_cast<int>(valid->size()) != m * h * w)
    throw std::invalid_argument("softmax_zero_groups: mask size mismatch");
  Tensor out = Tensor::zeros({c * (m + 1), h, w});

  const int hw = h * w;
  for (int ci = 0; ci < c; ++ci)
    for (int p = 0; p < hw; ++p) {
      double maxv = 0.0;  // the structural zero participates
      for (int l = 0; l < m; ++l) {
        if (valid && !(*valid)[l * hw + p]) continue;
        maxv = std::max(maxv, logits.data()[(ci * m + l) * hw + p]);
      }
      double z = std::exp(-maxv);  // zero logit
      for (int l = 0; l < m; ++l) {
        if (valid && !(*valid)[l * hw + p]) continue;
        z += std::exp(logits.data()[(ci * m + l) * hw + p] - maxv);
      }
      for (int l = 0; l < m; ++l) {
        double wv = 0.0;
        if (!valid || (*valid)[l * hw + p])
          wv = std::exp(logits.data()[(ci * m + l) * hw + p] - maxv) / z;
        out.data()[(ci * (m + 1) + l) * hw + p] = wv;
      }
      out.data()[(ci * (m + 1) + m) * hw + p] = std::exp(-maxv) / z;
    }

  if (detail::wants_grad({&logits})) {
    std::vector<std::uint8_t> mask = valid ? *valid : std::vector<std::uint8_t>();
    detail::record_entry("softmax_zero_groups", out, {&logits},
                         [logits = logits, out, c, m, hw, mask]() mutable {
      const auto& g = out.grad();
      for (int ci = 0; ci < c; ++ci)
        for (int p = 0; p < hw; ++p) {
          double s = 0.0;  // sum_i g_i * w_i over the whole group incl. zero slot
          for (int l = 0; l <= m; ++l) {
            std::size_t oi = static_cast<std::size_t>(ci * (m + 1) + l) * hw + p;
            s += g[oi] * out.data()[oi];
          }
          for (int l = 0; l < m; ++l) {
            if (!mask.empty() && !mask[l * hw + p]) continue;
            std::size_t oi = static_cast<std::size_t>(ci * (m + 1) + l) * hw + p;
            logits.grad()[(ci * m + l) * hw + p] += out.data()[oi] * (g[oi] - s);
          }
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// spatial convex combination of the current activation and a neighborhood
// of the previous stabilized map
// ---------------------------------------------------------------------------

// weights: [C*(m+1),H,W] as produced by softmax_zero_groups — per (channel,
// pixel), weight l<m applies to zprev at pixel+offsets[l], weight m applies
// to z at the pixel itself. Out-of-bounds taps are skipped; the caller is
// expected to have masked them out of the softmax so the retained weights
// sum to one.
inline Tensor spatial_combine(const Tensor& weights, const Tensor& z, const Tensor& zprev,
                              const std::vector<std::pair<int, int>>& offsets) {
  if (!same_shape(z, zprev)) throw_shape_error("spatial_combine", z, zprev);
  const int m = static_cast<int>(offsets.size());
  const int c = z.shape()[0], h = z.shape()[1], w = z.shape()[2];
  if (weights.shape().size() != 3 || weights.shape()[0] != c * (m + 1) ||
      weights.shape()[1] != h || weights.shape()[2] != w)
    throw_shape_error("spatial_combine weights", weights,
                      "[" + std::to_string(c * (m + 1)) + "," + std::to_string(h) + "," +
                          std::to_string(w) + "]");
  Tensor out = Tensor::zeros({c, h, w});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        std::size_t p = static_cast<std::size_t>(y) * w + x;
        double acc = weights.data()[(ci * (m + 1) + m) * h * w + p] * z.data()[ci * h * w + p];
        for (int l = 0; l < m; ++l) {
          int ny = y + offsets[l].first, nx = x + offsets[l].second;
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          acc += weights.data()[(ci * (m + 1) + l) * h * w + p] *
                 zprev.data()[(ci * h + ny) * w + nx];
        }
        out.data()[ci * h * w + p] = acc;
      }

  if (detail::wants_grad({&weights, &z, &zprev})) {
    detail::record_entry("spatial_combine", out, {&weights, &z, &zprev},
                         [weights = weights, z = z, zprev = zprev, out, offsets, m, c, h, w]() mutable {
      const auto& g = out.grad();
      for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            std::size_t p = static_cast<std::size_t>(y) * w + x;
            double gv = g[ci * h * w + p];
            std::size_t wm = static_cast<std::size_t>(ci * (m + 1) + m) * h * w + p;
            if (weights.requires_grad()) weights.grad()[wm] += gv * z.data()[ci * h * w + p];
            if (z.requires_grad()) z.grad()[ci * h * w + p] += gv * weights.data()[wm];
            for (int l = 0; l < m; ++l) {
              int ny = y + offsets[l].first, nx = x + offsets[l].second;
              if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
              std::size_t wl = static_cast<std::size_t>(ci * (m + 1) + l) * h * w + p;
              std::size_t zp = static_cast<std::size_t>(ci * h + ny) * w + nx;
              if (weights.requires_grad()) weights.grad()[wl] += gv * zprev.data()[zp];
              if (zprev.requires_grad()) zprev.grad()[zp] += gv * weights.data()[wl];
            }
          }
    });
  }
  return out;
}

}  // namespace stabkit
