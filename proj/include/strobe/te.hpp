#pragma once

// Minimal dense tensor library with reverse-mode gradients. The operator set
// is closed over what the network needs: conv2d, relu, group norm, 2x2 max
// pooling, bilinear resize/warp, channel concat, windowed crop/write and
// scalar reductions. f32 is the runtime scalar; f64 instantiations back the
// finite-difference checks.

#include <array>
#include <cassert>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <cblas.h>

namespace strobe::te {

template <class T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), T(0));
  }
  static Tensor scalar(T v) {
    Tensor t({1});
    t.data[0] = v;
    return t;
  }

  static long numel_of(const std::vector<int>& s) {
    long n = 1;
    for (int d : s) n *= d;
    return n;
  }
  long numel() const { return static_cast<long>(data.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }

  // CHW accessors
  T& at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
  }
  T at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

inline void gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* a,
                 int lda, const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
              tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta,
              c, ldc);
}
inline void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a,
                 int lda, const double* b, int ldb, double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
              tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta,
              c, ldc);
}

// ---------------------------------------------------------------------------
// Raw kernels (forward + backward). The tape wraps these.
// ---------------------------------------------------------------------------

template <class T>
void im2col(const Tensor<T>& x, int kh, int kw, int stride, int pad, int oh, int ow,
            std::vector<T>& col) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  col.assign(static_cast<size_t>(C) * kh * kw * oh * ow, T(0));
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        T* dst = col.data() + (static_cast<size_t>(c) * kh * kw + ky * kw + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= H) continue;
          const T* src = &x.data[(static_cast<size_t>(c) * H + iy) * W];
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= W) continue;
            dst[oy * ow + ox] = src[ix];
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const std::vector<T>& col, int C, int H, int W, int kh, int kw, int stride,
            int pad, int oh, int ow, Tensor<T>& x) {
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const T* src = col.data() + (static_cast<size_t>(c) * kh * kw + ky * kw + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= H) continue;
          T* dst = &x.data[(static_cast<size_t>(c) * H + iy) * W];
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= W) continue;
            dst[ix] += src[oy * ow + ox];
          }
        }
      }
    }
  }
}

template <class T>
Tensor<T> conv2d_fwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                     int stride, int pad) {
  if (x.rank() != 3 || w.rank() != 4) throw std::invalid_argument("conv2d: bad rank");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != C) throw std::invalid_argument("conv2d: channel mismatch");
  if (b.numel() != O) throw std::invalid_argument("conv2d: bias mismatch");
  const int oh = (H + 2 * pad - kh) / stride + 1;
  const int ow = (W + 2 * pad - kw) / stride + 1;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: empty output");
  std::vector<T> col;
  im2col(x, kh, kw, stride, pad, oh, ow, col);
  Tensor<T> y({O, oh, ow});
  const int K = C * kh * kw;
  gemm(false, false, O, oh * ow, K, T(1), w.data.data(), K, col.data(), oh * ow, T(0),
       y.data.data(), oh * ow);
  for (int o = 0; o < O; ++o) {
    T* row = &y.data[static_cast<size_t>(o) * oh * ow];
    const T bv = b.data[o];
    for (int i = 0; i < oh * ow; ++i) row[i] += bv;
  }
  return y;
}

template <class T>
void conv2d_bwd(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad,
                const Tensor<T>& gy, Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int oh = gy.dim(1), ow = gy.dim(2);
  const int K = C * kh * kw;
  std::vector<T> col;
  im2col(x, kh, kw, stride, pad, oh, ow, col);
  if (gw) {
    gemm(false, true, O, K, oh * ow, T(1), gy.data.data(), oh * ow, col.data(), oh * ow,
         T(1), gw->data.data(), K);
  }
  if (gb) {
    for (int o = 0; o < O; ++o) {
      T s = 0;
      const T* row = &gy.data[static_cast<size_t>(o) * oh * ow];
      for (int i = 0; i < oh * ow; ++i) s += row[i];
      gb->data[o] += s;
    }
  }
  if (gx) {
    std::vector<T> gcol(static_cast<size_t>(K) * oh * ow, T(0));
    gemm(true, false, K, oh * ow, O, T(1), w.data.data(), K, gy.data.data(), oh * ow,
         T(0), gcol.data(), oh * ow);
    col2im(gcol, C, H, W, kh, kw, stride, pad, oh, ow, *gx);
  }
}

template <class T>
Tensor<T> relu_fwd(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.data) v = v > T(0) ? v : T(0);
  return y;
}

template <class T>
struct GroupNormSaved {
  std::vector<T> mean, inv_std;
};

template <class T>
Tensor<T> group_norm_fwd(const Tensor<T>& x, const Tensor<T>& gamma,
                         const Tensor<T>& beta, int groups, T eps,
                         GroupNormSaved<T>* saved = nullptr) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (C % groups != 0) throw std::invalid_argument("group_norm: C not divisible by G");
  if (gamma.numel() != C || beta.numel() != C)
    throw std::invalid_argument("group_norm: affine shape mismatch");
  const int cg = C / groups;
  const long gn = static_cast<long>(cg) * H * W;
  Tensor<T> y = x;
  if (saved) {
    saved->mean.resize(groups);
    saved->inv_std.resize(groups);
  }
  for (int g = 0; g < groups; ++g) {
    T* base = &y.data[static_cast<size_t>(g) * cg * H * W];
    T mean = 0;
    for (long i = 0; i < gn; ++i) mean += base[i];
    mean /= static_cast<T>(gn);
    T var = 0;
    for (long i = 0; i < gn; ++i) {
      const T d = base[i] - mean;
      var += d * d;
    }
    var /= static_cast<T>(gn);
    const T inv_std = T(1) / std::sqrt(var + eps);
    if (saved) {
      saved->mean[g] = mean;
      saved->inv_std[g] = inv_std;
    }
    for (int c = 0; c < cg; ++c) {
      const int ch = g * cg + c;
      const T gm = gamma.data[ch], bt = beta.data[ch];
      T* row = base + static_cast<size_t>(c) * H * W;
      for (long i = 0; i < static_cast<long>(H) * W; ++i) {
        row[i] = (row[i] - mean) * inv_std * gm + bt;
      }
    }
  }
  return y;
}

template <class T>
void group_norm_bwd(const Tensor<T>& x, const Tensor<T>& gamma, int groups,
                    const GroupNormSaved<T>& saved, const Tensor<T>& gy, Tensor<T>* gx,
                    Tensor<T>* ggamma, Tensor<T>* gbeta) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int cg = C / groups;
  const long hw = static_cast<long>(H) * W;
  const long gn = cg * hw;
  for (int g = 0; g < groups; ++g) {
    const T mean = saved.mean[g], inv_std = saved.inv_std[g];
    const T* xb = &x.data[static_cast<size_t>(g) * gn];
    const T* gyb = &gy.data[static_cast<size_t>(g) * gn];
    // xhat = (x - mean) * inv_std; gxhat = gy * gamma_c
    T sum_gxhat = 0, sum_gxhat_xhat = 0;
    for (int c = 0; c < cg; ++c) {
      const T gm = gamma.data[g * cg + c];
      for (long i = 0; i < hw; ++i) {
        const T xhat = (xb[c * hw + i] - mean) * inv_std;
        const T gxh = gyb[c * hw + i] * gm;
        sum_gxhat += gxh;
        sum_gxhat_xhat += gxh * xhat;
      }
    }
    const T m_gxhat = sum_gxhat / static_cast<T>(gn);
    const T m_gxhat_xhat = sum_gxhat_xhat / static_cast<T>(gn);
    for (int c = 0; c < cg; ++c) {
      const int ch = g * cg + c;
      const T gm = gamma.data[ch];
      T gg = 0, gb = 0;
      for (long i = 0; i < hw; ++i) {
        const T xhat = (xb[c * hw + i] - mean) * inv_std;
        const T gyv = gyb[c * hw + i];
        if (gx) {
          const T gxh = gyv * gm;
          gx->data[static_cast<size_t>(g) * gn + c * hw + i] +=
              inv_std * (gxh - m_gxhat - xhat * m_gxhat_xhat);
        }
        gg += gyv * xhat;
        gb += gyv;
      }
      if (ggamma) ggamma->data[ch] += gg;
      if (gbeta) gbeta->data[ch] += gb;
    }
  }
}

template <class T>
Tensor<T> max_pool2_fwd(const Tensor<T>& x, std::vector<int>* argmax = nullptr) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (H % 2 != 0 || W % 2 != 0) throw std::invalid_argument("max_pool2: odd dims");
  const int oh = H / 2, ow = W / 2;
  Tensor<T> y({C, oh, ow});
  if (argmax) argmax->assign(static_cast<size_t>(C) * oh * ow, 0);
  for (int c = 0; c < C; ++c) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        T best = x.at(c, 2 * oy, 2 * ox);
        int bi = (2 * oy) * W + 2 * ox;
        // first index in row-major order wins ties
        const int cand[3][2] = {{2 * oy, 2 * ox + 1}, {2 * oy + 1, 2 * ox}, {2 * oy + 1, 2 * ox + 1}};
        for (auto& cd : cand) {
          const T v = x.at(c, cd[0], cd[1]);
          if (v > best) {
            best = v;
            bi = cd[0] * W + cd[1];
          }
        }
        y.at(c, oy, ox) = best;
        if (argmax) (*argmax)[(static_cast<size_t>(c) * oh + oy) * ow + ox] = bi;
      }
    }
  }
  return y;
}

// align_corners=false, edge-clamped sampling.
template <class T>
Tensor<T> bilinear_resize_fwd(const Tensor<T>& x, int oh, int ow,
                              std::vector<std::array<T, 6>>* saved = nullptr) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  Tensor<T> y({C, oh, ow});
  const T sy = static_cast<T>(H) / static_cast<T>(oh);
  const T sx = static_cast<T>(W) / static_cast<T>(ow);
  if (saved) saved->clear();
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      T fy = (static_cast<T>(oy) + T(0.5)) * sy - T(0.5);
      T fx = (static_cast<T>(ox) + T(0.5)) * sx - T(0.5);
      fy = std::min(std::max(fy, T(0)), static_cast<T>(H - 1));
      fx = std::min(std::max(fx, T(0)), static_cast<T>(W - 1));
      const int y0 = static_cast<int>(std::floor(fy));
      const int x0 = static_cast<int>(std::floor(fx));
      const int y1 = std::min(y0 + 1, H - 1);
      const int x1 = std::min(x0 + 1, W - 1);
      const T wy = fy - static_cast<T>(y0);
      const T wx = fx - static_cast<T>(x0);
      for (int c = 0; c < C; ++c) {
        y.at(c, oy, ox) = (T(1) - wy) * ((T(1) - wx) * x.at(c, y0, x0) + wx * x.at(c, y0, x1)) +
                          wy * ((T(1) - wx) * x.at(c, y1, x0) + wx * x.at(c, y1, x1));
      }
      if (saved) {
        saved->push_back({static_cast<T>(y0), static_cast<T>(x0), static_cast<T>(y1),
                          static_cast<T>(x1), wy, wx});
      }
    }
  }
  return y;
}

template <class T>
void bilinear_resize_bwd(int H, int W, int oh, int ow,
                         const std::vector<std::array<T, 6>>& saved, const Tensor<T>& gy,
                         Tensor<T>& gx) {
  const int C = gy.dim(0);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const auto& s = saved[static_cast<size_t>(oy) * ow + ox];
      const int y0 = static_cast<int>(s[0]), x0 = static_cast<int>(s[1]);
      const int y1 = static_cast<int>(s[2]), x1 = static_cast<int>(s[3]);
      const T wy = s[4], wx = s[5];
      for (int c = 0; c < C; ++c) {
        const T g = gy.at(c, oy, ox);
        gx.at(c, y0, x0) += g * (T(1) - wy) * (T(1) - wx);
        gx.at(c, y0, x1) += g * (T(1) - wy) * wx;
        gx.at(c, y1, x0) += g * wy * (T(1) - wx);
        gx.at(c, y1, x1) += g * wy * wx;
      }
    }
  }
}

// Inverse-mapping warp with zero out-of-bounds. The affine maps output pixel
// coordinates (ox, oy) to source coordinates: sx = a0*ox + a1*oy + a2,
// sy = a3*ox + a4*oy + a5 (pixel units, same dims in and out).
template <class T>
using Affine = std::array<T, 6>;

template <class T>
Tensor<T> bilinear_warp_fwd(const Tensor<T>& x, const Affine<T>& a) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  Tensor<T> y({C, H, W});
  for (int oy = 0; oy < H; ++oy) {
    for (int ox = 0; ox < W; ++ox) {
      const T sx = a[0] * static_cast<T>(ox) + a[1] * static_cast<T>(oy) + a[2];
      const T sy = a[3] * static_cast<T>(ox) + a[4] * static_cast<T>(oy) + a[5];
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const T wx = sx - static_cast<T>(x0);
      const T wy = sy - static_cast<T>(y0);
      if (x0 < -1 || x0 >= W || y0 < -1 || y0 >= H) continue;
      for (int c = 0; c < C; ++c) {
        T acc = 0;
        if (y0 >= 0 && x0 >= 0) acc += (T(1) - wy) * (T(1) - wx) * x.at(c, y0, x0);
        if (y0 >= 0 && x0 + 1 < W) acc += (T(1) - wy) * wx * x.at(c, y0, x0 + 1);
        if (y0 + 1 < H && x0 >= 0) acc += wy * (T(1) - wx) * x.at(c, y0 + 1, x0);
        if (y0 + 1 < H && x0 + 1 < W) acc += wy * wx * x.at(c, y0 + 1, x0 + 1);
        y.at(c, oy, ox) = acc;
      }
    }
  }
  return y;
}

template <class T>
void bilinear_warp_bwd(const Affine<T>& a, const Tensor<T>& gy, Tensor<T>& gx) {
  const int C = gy.dim(0), H = gy.dim(1), W = gy.dim(2);
  for (int oy = 0; oy < H; ++oy) {
    for (int ox = 0; ox < W; ++ox) {
      const T sx = a[0] * static_cast<T>(ox) + a[1] * static_cast<T>(oy) + a[2];
      const T sy = a[3] * static_cast<T>(ox) + a[4] * static_cast<T>(oy) + a[5];
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const T wx = sx - static_cast<T>(x0);
      const T wy = sy - static_cast<T>(y0);
      if (x0 < -1 || x0 >= W || y0 < -1 || y0 >= H) continue;
      for (int c = 0; c < C; ++c) {
        const T g = gy.at(c, oy, ox);
        if (g == T(0)) continue;
        if (y0 >= 0 && x0 >= 0) gx.at(c, y0, x0) += g * (T(1) - wy) * (T(1) - wx);
        if (y0 >= 0 && x0 + 1 < W) gx.at(c, y0, x0 + 1) += g * (T(1) - wy) * wx;
        if (y0 + 1 < H && x0 >= 0) gx.at(c, y0 + 1, x0) += g * wy * (T(1) - wx);
        if (y0 + 1 < H && x0 + 1 < W) gx.at(c, y0 + 1, x0 + 1) += g * wy * wx;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

template <class T>
class Tape {
 public:
  using Var = int;

  bool recording = true;

  Var leaf(Tensor<T> v, bool requires_grad = false) {
    vals_.push_back(std::move(v));
    needs_grad_.push_back(requires_grad ? 1 : 0);
    nodes_.emplace_back();
    return static_cast<Var>(vals_.size() - 1);
  }

  Var zeros(std::vector<int> shape) { return leaf(Tensor<T>(std::move(shape))); }

  const Tensor<T>& val(Var v) const { return vals_[static_cast<size_t>(v)]; }
  bool needs_grad(Var v) const { return needs_grad_[static_cast<size_t>(v)] != 0; }

  Tensor<T>& grad(Var v) {
    auto& g = grads_[static_cast<size_t>(v)];
    if (g.data.empty()) g = Tensor<T>(vals_[static_cast<size_t>(v)].shape);
    return g;
  }
  bool has_grad(Var v) const {
    return static_cast<size_t>(v) < grads_.size() &&
           !grads_[static_cast<size_t>(v)].data.empty();
  }

  Var conv2d(Var x, Var w, Var b, int stride = 1, int pad = 1) {
    Tensor<T> y = conv2d_fwd(val(x), val(w), val(b), stride, pad);
    return emit(std::move(y), {x, w, b},
                [x, w, b, stride, pad](Tape& t, Var out) {
                  const Tensor<T>& gy = t.grad(out);
                  Tensor<T>* gx = t.needs_grad(x) ? &t.grad(x) : nullptr;
                  Tensor<T>* gw = t.needs_grad(w) ? &t.grad(w) : nullptr;
                  Tensor<T>* gb = t.needs_grad(b) ? &t.grad(b) : nullptr;
                  conv2d_bwd(t.val(x), t.val(w), stride, pad, gy, gx, gw, gb);
                });
  }

  Var relu(Var x) {
    Tensor<T> y = relu_fwd(val(x));
    return emit(std::move(y), {x}, [x](Tape& t, Var out) {
      if (!t.needs_grad(x)) return;
      const Tensor<T>& gy = t.grad(out);
      Tensor<T>& gx = t.grad(x);
      const Tensor<T>& xv = t.val(x);
      for (long i = 0; i < xv.numel(); ++i) {
        if (xv.data[i] > T(0)) gx.data[i] += gy.data[i];
      }
    });
  }

  Var group_norm(Var x, Var gamma, Var beta, int groups, T eps = T(1e-5)) {
    auto saved = std::make_shared<GroupNormSaved<T>>();
    Tensor<T> y = group_norm_fwd(val(x), val(gamma), val(beta), groups, eps, saved.get());
    return emit(std::move(y), {x, gamma, beta},
                [x, gamma, beta, groups, saved](Tape& t, Var out) {
                  const Tensor<T>& gy = t.grad(out);
                  Tensor<T>* gx = t.needs_grad(x) ? &t.grad(x) : nullptr;
                  Tensor<T>* gg = t.needs_grad(gamma) ? &t.grad(gamma) : nullptr;
                  Tensor<T>* gb = t.needs_grad(beta) ? &t.grad(beta) : nullptr;
                  group_norm_bwd(t.val(x), t.val(gamma), groups, *saved, gy, gx, gg, gb);
                });
  }

  Var max_pool2(Var x) {
    auto argmax = std::make_shared<std::vector<int>>();
    Tensor<T> y = max_pool2_fwd(val(x), argmax.get());
    return emit(std::move(y), {x}, [x, argmax](Tape& t, Var out) {
      if (!t.needs_grad(x)) return;
      const Tensor<T>& gy = t.grad(out);
      Tensor<T>& gx = t.grad(x);
      const int C = gy.dim(0);
      const long ohw = static_cast<long>(gy.dim(1)) * gy.dim(2);
      const long hw = static_cast<long>(gx.dim(1)) * gx.dim(2);
      for (int c = 0; c < C; ++c) {
        for (long i = 0; i < ohw; ++i) {
          gx.data[c * hw + (*argmax)[c * ohw + i]] += gy.data[c * ohw + i];
        }
      }
    });
  }

  Var bilinear_resize(Var x, int oh, int ow) {
    auto saved = std::make_shared<std::vector<std::array<T, 6>>>();
    Tensor<T> y = bilinear_resize_fwd(val(x), oh, ow, recording ? saved.get() : nullptr);
    return emit(std::move(y), {x}, [x, oh, ow, saved](Tape& t, Var out) {
      if (!t.needs_grad(x)) return;
      const Tensor<T>& gy = t.grad(out);
      Tensor<T>& gx = t.grad(x);
      bilinear_resize_bwd(gx.dim(1), gx.dim(2), oh, ow, *saved, gy, gx);
    });
  }

  Var bilinear_warp(Var x, const Affine<T>& a) {
    Tensor<T> y = bilinear_warp_fwd(val(x), a);
    return emit(std::move(y), {x}, [x, a](Tape& t, Var out) {
      if (!t.needs_grad(x)) return;
      bilinear_warp_bwd(a, t.grad(out), t.grad(x));
    });
  }

  Var concat_channels(std::span<const Var> xs) {
    if (xs.empty()) throw std::invalid_argument("concat: no inputs");
    const int H = val(xs[0]).dim(1), W = val(xs[0]).dim(2);
    int C = 0;
    for (Var v : xs) {
      if (val(v).dim(1) != H || val(v).dim(2) != W)
        throw std::invalid_argument("concat: H/W mismatch");
      C += val(v).dim(0);
    }
    Tensor<T> y({C, H, W});
    size_t off = 0;
    for (Var v : xs) {
      std::memcpy(y.data.data() + off, val(v).data.data(),
                  val(v).data.size() * sizeof(T));
      off += val(v).data.size();
    }
    std::vector<Var> in(xs.begin(), xs.end());
    return emit(std::move(y), in, [in](Tape& t, Var out) {
      const Tensor<T>& gy = t.grad(out);
      size_t off = 0;
      for (Var v : in) {
        const size_t n = t.val(v).data.size();
        if (t.needs_grad(v)) {
          Tensor<T>& gx = t.grad(v);
          for (size_t i = 0; i < n; ++i) gx.data[i] += gy.data[off + i];
        }
        off += n;
      }
    });
  }

  // Extracts a (h, w) window at (y0, x0); out-of-range source reads as zero.
  Var window(Var x, int y0, int x0, int h, int w) {
    const Tensor<T>& xv = val(x);
    const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    Tensor<T> y({C, h, w});
    for (int c = 0; c < C; ++c) {
      for (int iy = 0; iy < h; ++iy) {
        const int sy = y0 + iy;
        if (sy < 0 || sy >= H) continue;
        for (int ix = 0; ix < w; ++ix) {
          const int sx = x0 + ix;
          if (sx < 0 || sx >= W) continue;
          y.at(c, iy, ix) = xv.at(c, sy, sx);
        }
      }
    }
    return emit(std::move(y), {x}, [x, y0, x0, h, w](Tape& t, Var out) {
      if (!t.needs_grad(x)) return;
      const Tensor<T>& gy = t.grad(out);
      Tensor<T>& gx = t.grad(x);
      const int C = gx.dim(0), H = gx.dim(1), W = gx.dim(2);
      for (int c = 0; c < C; ++c) {
        for (int iy = 0; iy < h; ++iy) {
          const int sy = y0 + iy;
          if (sy < 0 || sy >= H) continue;
          for (int ix = 0; ix < w; ++ix) {
            const int sx = x0 + ix;
            if (sx < 0 || sx >= W) continue;
            gx.at(c, sy, sx) += gy.at(c, iy, ix);
          }
        }
      }
    });
  }

  // Returns a copy of base with the patch written at (y0, x0); cells outside
  // the patch keep their base values.
  Var write_window(Var base, Var patch, int y0, int x0) {
    const Tensor<T>& bv = val(base);
    const Tensor<T>& pv = val(patch);
    if (bv.dim(0) != pv.dim(0)) throw std::invalid_argument("write_window: channels");
    const int h = pv.dim(1), w = pv.dim(2);
    if (y0 < 0 || x0 < 0 || y0 + h > bv.dim(1) || x0 + w > bv.dim(2))
      throw std::invalid_argument("write_window: patch exceeds base");
    Tensor<T> y = bv;
    for (int c = 0; c < bv.dim(0); ++c) {
      for (int iy = 0; iy < h; ++iy) {
        for (int ix = 0; ix < w; ++ix) {
          y.at(c, y0 + iy, x0 + ix) = pv.at(c, iy, ix);
        }
      }
    }
    return emit(std::move(y), {base, patch}, [base, patch, y0, x0, h, w](Tape& t, Var out) {
      const Tensor<T>& gy = t.grad(out);
      if (t.needs_grad(patch)) {
        Tensor<T>& gp = t.grad(patch);
        for (int c = 0; c < gy.dim(0); ++c) {
          for (int iy = 0; iy < h; ++iy) {
            for (int ix = 0; ix < w; ++ix) {
              gp.at(c, iy, ix) += gy.at(c, y0 + iy, x0 + ix);
            }
          }
        }
      }
      if (t.needs_grad(base)) {
        Tensor<T>& gb = t.grad(base);
        for (int c = 0; c < gy.dim(0); ++c) {
          for (int iy = 0; iy < gy.dim(1); ++iy) {
            for (int ix = 0; ix < gy.dim(2); ++ix) {
              const bool inside = iy >= y0 && iy < y0 + h && ix >= x0 && ix < x0 + w;
              if (!inside) gb.at(c, iy, ix) += gy.at(c, iy, ix);
            }
          }
        }
      }
    });
  }

  Var sum(Var x) {
    T s = 0;
    for (T v : val(x).data) s += v;
    return emit(Tensor<T>::scalar(s), {x}, [x](Tape& t, Var out) {
      if (!t.needs_grad(x)) return;
      const T g = t.grad(out).data[0];
      for (auto& v : t.grad(x).data) v += g;
    });
  }

  Var add_scalar(Var a, Var b) {
    return emit(Tensor<T>::scalar(val(a).data[0] + val(b).data[0]), {a, b},
                [a, b](Tape& t, Var out) {
                  const T g = t.grad(out).data[0];
                  if (t.needs_grad(a)) t.grad(a).data[0] += g;
                  if (t.needs_grad(b)) t.grad(b).data[0] += g;
                });
  }

  // A scalar op with a precomputed gradient with respect to its input;
  // used for the detection loss whose value and input-gradient are both
  // evaluated analytically at forward time.
  Var custom_scalar(Var x, T value, std::shared_ptr<Tensor<T>> grad_x) {
    return emit(Tensor<T>::scalar(value), {x}, [x, grad_x](Tape& t, Var out) {
      if (!t.needs_grad(x)) return;
      const T g = t.grad(out).data[0];
      Tensor<T>& gx = t.grad(x);
      for (long i = 0; i < gx.numel(); ++i) gx.data[i] += g * grad_x->data[i];
    });
  }

  // Accumulates dLoss/dVar for every var with requires_grad reachable from
  // the loss. Visits records in reverse execution order exactly once.
  void backward(Var loss) {
    if (val(loss).numel() != 1) throw std::invalid_argument("backward: loss not scalar");
    if (!recording) throw std::logic_error("backward: tape was not recording");
    grads_.resize(vals_.size());
    grad(loss).data[0] = T(1);
    for (int i = loss; i >= 0; --i) {
      auto& node = nodes_[static_cast<size_t>(i)];
      if (!node.back) continue;
      if (!has_grad(i)) continue;  // not reachable from the loss
      node.back(*this, i);
    }
  }

  size_t size() const { return vals_.size(); }

 private:
  struct Node {
    std::function<void(Tape&, Var)> back;
  };

  Var emit(Tensor<T> y, std::vector<Var> inputs, std::function<void(Tape&, Var)> back) {
    bool ng = false;
    for (Var v : inputs) ng = ng || needs_grad(v);
    vals_.push_back(std::move(y));
    needs_grad_.push_back((ng && recording) ? 1 : 0);
    Node n;
    if (recording && ng) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<Var>(vals_.size() - 1);
  }

  std::vector<Tensor<T>> vals_;
  std::vector<Tensor<T>> grads_;
  std::vector<char> needs_grad_;
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Finite-difference checking
// ---------------------------------------------------------------------------

struct GradCheckReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  long checked = 0;
};

// Central finite differences against the analytic gradient. `f` rebuilds the
// computation from scratch on the given inputs and returns the scalar loss
// var plus the tape (so input leaves can be perturbed).
template <class T>
GradCheckReport grad_check(
    const std::function<T(const std::vector<Tensor<T>>&)>& f,
    std::vector<Tensor<T>> inputs,
    const std::function<std::vector<Tensor<T>>(const std::vector<Tensor<T>>&)>& analytic,
    T h = T(1e-5)) {
  GradCheckReport rep;
  const std::vector<Tensor<T>> g = analytic(inputs);
  for (size_t i = 0; i < inputs.size(); ++i) {
    for (long j = 0; j < inputs[i].numel(); ++j) {
      const T orig = inputs[i].data[j];
      inputs[i].data[j] = orig + h;
      const T fp = f(inputs);
      inputs[i].data[j] = orig - h;
      const T fm = f(inputs);
      inputs[i].data[j] = orig;
      const double fd = (static_cast<double>(fp) - static_cast<double>(fm)) / (2.0 * h);
      const double an = static_cast<double>(g[i].data[j]);
      const double abs_err = std::fabs(fd - an);
      const double denom = std::max(1.0, std::max(std::fabs(fd), std::fabs(an)));
      rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
      rep.max_rel_err = std::max(rep.max_rel_err, abs_err / denom);
      ++rep.checked;
    }
  }
  return rep;
}

template <class T>
Tensor<T> random_tensor(std::vector<int> shape, std::mt19937_64& rng, T lo = T(-1),
                        T hi = T(1)) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> d(static_cast<double>(lo), static_cast<double>(hi));
  for (auto& v : t.data) v = static_cast<T>(d(rng));
  return t;
}

}  // namespace strobe::te
