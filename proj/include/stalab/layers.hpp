#pragma once

// NCHW layer primitives with custom backward closures: convolution,
// transposed convolution, max pooling, batch norm, layer norm.

#include <cmath>
#include <string>
#include <vector>

#include "stalab/tensor.hpp"

namespace stalab {

namespace detail {

// Zero-padded copy of an NCHW buffer, padding `p` on each spatial side.
template <typename T>
std::vector<T> pad_nchw(const T* x, int64_t n, int64_t c, int64_t h, int64_t w, int64_t p) {
  const int64_t hp = h + 2 * p, wp = w + 2 * p;
  std::vector<T> out(static_cast<size_t>(n * c * hp * wp), T(0));
  for (int64_t i = 0; i < n * c; ++i)
    for (int64_t r = 0; r < h; ++r) {
      const T* src = x + (i * h + r) * w;
      T* dst = out.data() + (i * hp + r + p) * wp + p;
      std::copy(src, src + w, dst);
    }
  return out;
}

}  // namespace detail

// 2-D convolution. x [N,Cin,H,W], w [Cout,Cin/groups,K,K], optional bias
// [Cout]. Square kernel, symmetric zero padding. The padded input is
// materialized so every output element touches exactly K*K*Cin/groups
// input positions, zeros included.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int64_t stride,
                 int64_t pad, int64_t groups = 1) {
  if (x.rank() != 4 || w.rank() != 4)
    throw ShapeError("conv2d: x " + shape_str(x.shape()) + ", w " + shape_str(w.shape()));
  const int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int64_t cout = w.dim(0), k = w.dim(2);
  if (w.dim(2) != w.dim(3)) throw ShapeError("conv2d: kernel not square " + shape_str(w.shape()));
  if (groups < 1 || cin % groups != 0 || cout % groups != 0)
    throw ShapeError("conv2d: groups " + std::to_string(groups) + " does not divide channels " +
                     std::to_string(cin) + "/" + std::to_string(cout));
  const int64_t cipg = cin / groups, copg = cout / groups;
  if (w.dim(1) != cipg)
    throw ShapeError("conv2d: w " + shape_str(w.shape()) + " expects Cin/groups " +
                     std::to_string(cipg));
  if (bias.defined() && bias.shape() != Shape{cout})
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " vs Cout " +
                     std::to_string(cout));
  if (stride < 1 || pad < 0) throw ShapeError("conv2d: bad stride/pad");
  const int64_t ho = (h + 2 * pad - k) / stride + 1;
  const int64_t wo = (wd + 2 * pad - k) / stride + 1;
  if (h + 2 * pad < k || wd + 2 * pad < k)
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " exceeds padded input " +
                     shape_str(x.shape()));

  const int64_t hp = h + 2 * pad, wp = wd + 2 * pad;
  std::vector<T> xpad = detail::pad_nchw(x.data().data(), n, cin, h, wd, pad);
  std::vector<T> out(static_cast<size_t>(n * cout * ho * wo), T(0));
  const T* pw = w.data().data();
  for (int64_t ni = 0; ni < n; ++ni)
    for (int64_t co = 0; co < cout; ++co) {
      const int64_t ci0 = (co / copg) * cipg;
      for (int64_t ci = 0; ci < cipg; ++ci)
        for (int64_t kh = 0; kh < k; ++kh)
          for (int64_t kw = 0; kw < k; ++kw) {
            const T wv = pw[((co * cipg + ci) * k + kh) * k + kw];
            for (int64_t r = 0; r < ho; ++r) {
              const T* src = xpad.data() + ((ni * cin + ci0 + ci) * hp + r * stride + kh) * wp + kw;
              T* dst = out.data() + ((ni * cout + co) * ho + r) * wo;
              for (int64_t cc = 0; cc < wo; ++cc) dst[cc] = dst[cc] + wv * src[cc * stride];
            }
          }
      if (bias.defined()) {
        const T bv = bias.data()[static_cast<size_t>(co)];
        T* dst = out.data() + (ni * cout + co) * ho * wo;
        for (int64_t i = 0; i < ho * wo; ++i) dst[i] = dst[i] + bv;
      }
    }

  std::vector<std::shared_ptr<Node<T>>> inputs{x.node(), w.node()};
  if (bias.defined()) inputs.push_back(bias.node());
  Tensor<T> res = detail::make_op_node<T>({n, cout, ho, wo}, std::move(out), std::move(inputs));
  if (res.requires_grad()) {
    Node<T>* self = res.node().get();
    Node<T>* xn = x.node().get();
    Node<T>* wn = w.node().get();
    Node<T>* bn = bias.defined() ? bias.node().get() : nullptr;
    self->backward = [self, xn, wn, bn, n, cin, cout, h, wd, k, stride, pad, groups, cipg, copg,
                      ho, wo, hp, wp]() {
      const T* g = self->grad.data();
      std::vector<T> xpad = detail::pad_nchw(xn->data.data(), n, cin, h, wd, pad);
      std::vector<T> gxpad;
      if (xn->requires_grad) gxpad.assign(xpad.size(), T(0));
      if (wn->requires_grad) wn->ensure_grad();
      for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t co = 0; co < cout; ++co) {
          const int64_t ci0 = (co / copg) * cipg;
          for (int64_t ci = 0; ci < cipg; ++ci)
            for (int64_t kh = 0; kh < k; ++kh)
              for (int64_t kw = 0; kw < k; ++kw) {
                const int64_t widx = ((co * cipg + ci) * k + kh) * k + kw;
                const T wv = wn->data[static_cast<size_t>(widx)];
                T wacc(0);
                for (int64_t r = 0; r < ho; ++r) {
                  const int64_t prow = ((ni * cin + ci0 + ci) * hp + r * stride + kh) * wp + kw;
                  const T* grow = g + ((ni * cout + co) * ho + r) * wo;
                  if (wn->requires_grad) {
                    const T* src = xpad.data() + prow;
                    for (int64_t cc = 0; cc < wo; ++cc) wacc = wacc + grow[cc] * src[cc * stride];
                  }
                  if (xn->requires_grad) {
                    T* gx = gxpad.data() + prow;
                    for (int64_t cc = 0; cc < wo; ++cc)
                      gx[cc * stride] = gx[cc * stride] + grow[cc] * wv;
                  }
                }
                if (wn->requires_grad)
                  wn->grad[static_cast<size_t>(widx)] =
                      wn->grad[static_cast<size_t>(widx)] + wacc;
              }
          if (bn && bn->requires_grad) {
            bn->ensure_grad();
            T acc(0);
            const T* grow = g + (ni * cout + co) * ho * wo;
            for (int64_t i = 0; i < ho * wo; ++i) acc = acc + grow[i];
            bn->grad[static_cast<size_t>(co)] = bn->grad[static_cast<size_t>(co)] + acc;
          }
        }
      if (xn->requires_grad) {
        xn->ensure_grad();  // crop padding back off
        for (int64_t i = 0; i < n * cin; ++i)
          for (int64_t r = 0; r < h; ++r) {
            const T* src = gxpad.data() + (i * hp + r + pad) * wp + pad;
            T* dst = xn->grad.data() + (i * h + r) * wd;
            for (int64_t cc = 0; cc < wd; ++cc) dst[cc] = dst[cc] + src[cc];
          }
      }
    };
  }
  return res;
}

// Transposed 2-D convolution, no padding. x [N,Cin,H,W], w [Cin,Cout,K,K],
// output [N,Cout,(H-1)*stride+K,(W-1)*stride+K]. Each input element scatters
// into a K*K window of the output.
template <typename T>
Tensor<T> transposed_conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                            int64_t stride) {
  if (x.rank() != 4 || w.rank() != 4)
    throw ShapeError("transposed_conv2d: x " + shape_str(x.shape()) + ", w " +
                     shape_str(w.shape()));
  const int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int64_t cout = w.dim(1), k = w.dim(2);
  if (w.dim(0) != cin || w.dim(2) != w.dim(3))
    throw ShapeError("transposed_conv2d: w " + shape_str(w.shape()) + " vs Cin " +
                     std::to_string(cin));
  if (bias.defined() && bias.shape() != Shape{cout})
    throw ShapeError("transposed_conv2d: bias " + shape_str(bias.shape()));
  if (stride < 1) throw ShapeError("transposed_conv2d: bad stride");
  const int64_t ho = (h - 1) * stride + k;
  const int64_t wo = (wd - 1) * stride + k;

  std::vector<T> out(static_cast<size_t>(n * cout * ho * wo), T(0));
  const T* px = x.data().data();
  const T* pw = w.data().data();
  for (int64_t ni = 0; ni < n; ++ni)
    for (int64_t ci = 0; ci < cin; ++ci)
      for (int64_t co = 0; co < cout; ++co)
        for (int64_t kh = 0; kh < k; ++kh)
          for (int64_t kw = 0; kw < k; ++kw) {
            const T wv = pw[((ci * cout + co) * k + kh) * k + kw];
            for (int64_t r = 0; r < h; ++r) {
              const T* src = px + ((ni * cin + ci) * h + r) * wd;
              T* dst = out.data() + ((ni * cout + co) * ho + r * stride + kh) * wo + kw;
              for (int64_t cc = 0; cc < wd; ++cc)
                dst[cc * stride] = dst[cc * stride] + src[cc] * wv;
            }
          }
  if (bias.defined())
    for (int64_t ni = 0; ni < n; ++ni)
      for (int64_t co = 0; co < cout; ++co) {
        const T bv = bias.data()[static_cast<size_t>(co)];
        T* dst = out.data() + (ni * cout + co) * ho * wo;
        for (int64_t i = 0; i < ho * wo; ++i) dst[i] = dst[i] + bv;
      }

  std::vector<std::shared_ptr<Node<T>>> inputs{x.node(), w.node()};
  if (bias.defined()) inputs.push_back(bias.node());
  Tensor<T> res = detail::make_op_node<T>({n, cout, ho, wo}, std::move(out), std::move(inputs));
  if (res.requires_grad()) {
    Node<T>* self = res.node().get();
    Node<T>* xn = x.node().get();
    Node<T>* wn = w.node().get();
    Node<T>* bn = bias.defined() ? bias.node().get() : nullptr;
    self->backward = [self, xn, wn, bn, n, cin, cout, h, wd, k, stride, ho, wo]() {
      const T* g = self->grad.data();
      if (xn->requires_grad) xn->ensure_grad();
      if (wn->requires_grad) wn->ensure_grad();
      for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t ci = 0; ci < cin; ++ci)
          for (int64_t co = 0; co < cout; ++co)
            for (int64_t kh = 0; kh < k; ++kh)
              for (int64_t kw = 0; kw < k; ++kw) {
                const int64_t widx = ((ci * cout + co) * k + kh) * k + kw;
                const T wv = wn->data[static_cast<size_t>(widx)];
                T wacc(0);
                for (int64_t r = 0; r < h; ++r) {
                  const T* grow = g + ((ni * cout + co) * ho + r * stride + kh) * wo + kw;
                  const T* src = xn->data.data() + ((ni * cin + ci) * h + r) * wd;
                  if (wn->requires_grad)
                    for (int64_t cc = 0; cc < wd; ++cc)
                      wacc = wacc + src[cc] * grow[cc * stride];
                  if (xn->requires_grad) {
                    T* gx = xn->grad.data() + ((ni * cin + ci) * h + r) * wd;
                    for (int64_t cc = 0; cc < wd; ++cc)
                      gx[cc] = gx[cc] + grow[cc * stride] * wv;
                  }
                }
                if (wn->requires_grad)
                  wn->grad[static_cast<size_t>(widx)] =
                      wn->grad[static_cast<size_t>(widx)] + wacc;
              }
      if (bn && bn->requires_grad) {
        bn->ensure_grad();
        for (int64_t ni = 0; ni < n; ++ni)
          for (int64_t co = 0; co < cout; ++co) {
            T acc(0);
            const T* grow = g + (ni * cout + co) * ho * wo;
            for (int64_t i = 0; i < ho * wo; ++i) acc = acc + grow[i];
            bn->grad[static_cast<size_t>(co)] = bn->grad[static_cast<size_t>(co)] + acc;
          }
      }
    };
  }
  return res;
}

// Max pooling. Floor semantics: trailing rows/columns that do not fill a
// window are dropped. Ties resolve to the first element in scan order.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, int64_t k, int64_t stride) {
  if (x.rank() != 4) throw ShapeError("maxpool2d: x " + shape_str(x.shape()));
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  if (k < 1 || stride < 1 || h < k || wd < k)
    throw ShapeError("maxpool2d: window " + std::to_string(k) + " on " + shape_str(x.shape()));
  const int64_t ho = (h - k) / stride + 1;
  const int64_t wo = (wd - k) / stride + 1;

  std::vector<T> out(static_cast<size_t>(n * c * ho * wo));
  std::vector<int64_t> argmax(out.size());
  const T* px = x.data().data();
  for (int64_t i = 0; i < n * c; ++i)
    for (int64_t r = 0; r < ho; ++r)
      for (int64_t cc = 0; cc < wo; ++cc) {
        int64_t best = (i * h + r * stride) * wd + cc * stride;
        T bv = px[best];
        for (int64_t kh = 0; kh < k; ++kh)
          for (int64_t kw = 0; kw < k; ++kw) {
            const int64_t idx = (i * h + r * stride + kh) * wd + cc * stride + kw;
            if (px[idx] > bv) {
              bv = px[idx];
              best = idx;
            }
          }
        const int64_t o = (i * ho + r) * wo + cc;
        out[static_cast<size_t>(o)] = bv;
        argmax[static_cast<size_t>(o)] = best;
      }

  Tensor<T> res = detail::make_op_node<T>({n, c, ho, wo}, std::move(out), {x.node()});
  if (res.requires_grad()) {
    Node<T>* self = res.node().get();
    Node<T>* xn = x.node().get();
    self->backward = [self, xn, argmax = std::move(argmax)]() {
      xn->ensure_grad();
      for (size_t o = 0; o < self->grad.size(); ++o) {
        const size_t s = static_cast<size_t>(argmax[o]);
        xn->grad[s] = xn->grad[s] + self->grad[o];
      }
    };
  }
  return res;
}

// Batch norm over (N,H,W) per channel. gamma/beta are learnable [C];
// running_mean/running_var are plain state tensors updated in place during
// training (biased variance throughout) and consumed in eval:
//   running <- (1-momentum)*running + momentum*batch
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                      T momentum = T(0.1), T eps = T(1e-5)) {
  if (x.rank() != 4) throw ShapeError("batchnorm2d: x " + shape_str(x.shape()));
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const Shape cs{c};
  if (gamma.shape() != cs || beta.shape() != cs || running_mean.shape() != cs ||
      running_var.shape() != cs)
    throw ShapeError("batchnorm2d: parameter shapes must be [" + std::to_string(c) + "]");
  const int64_t m = n * h * wd;
  const int64_t hw = h * wd;

  std::vector<T> mean(static_cast<size_t>(c)), sigma(static_cast<size_t>(c));
  if (training) {
    for (int64_t ch = 0; ch < c; ++ch) {
      T s(0);
      for (int64_t ni = 0; ni < n; ++ni) {
        const T* src = x.data().data() + (ni * c + ch) * hw;
        for (int64_t i = 0; i < hw; ++i) s = s + src[i];
      }
      const T mu = s / T(static_cast<double>(m));
      T v(0);
      for (int64_t ni = 0; ni < n; ++ni) {
        const T* src = x.data().data() + (ni * c + ch) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          const T d = src[i] - mu;
          v = v + uncounted_mul(d, d);
        }
      }
      const T var = v / T(static_cast<double>(m));
      mean[static_cast<size_t>(ch)] = mu;
      using std::sqrt;
      sigma[static_cast<size_t>(ch)] = sqrt(var + eps);
      T& rm = running_mean.data()[static_cast<size_t>(ch)];
      T& rv = running_var.data()[static_cast<size_t>(ch)];
      rm = uncounted_mul(T(1) - momentum, rm) + uncounted_mul(momentum, mu);
      rv = uncounted_mul(T(1) - momentum, rv) + uncounted_mul(momentum, var);
    }
  } else {
    for (int64_t ch = 0; ch < c; ++ch) {
      mean[static_cast<size_t>(ch)] = running_mean.data()[static_cast<size_t>(ch)];
      using std::sqrt;
      sigma[static_cast<size_t>(ch)] =
          sqrt(running_var.data()[static_cast<size_t>(ch)] + eps);
    }
  }

  std::vector<T> xhat(static_cast<size_t>(x.numel()));
  std::vector<T> out(static_cast<size_t>(x.numel()));
  for (int64_t ni = 0; ni < n; ++ni)
    for (int64_t ch = 0; ch < c; ++ch) {
      const T mu = mean[static_cast<size_t>(ch)];
      const T sg = sigma[static_cast<size_t>(ch)];
      const T gm = gamma.data()[static_cast<size_t>(ch)];
      const T bt = beta.data()[static_cast<size_t>(ch)];
      const T* src = x.data().data() + (ni * c + ch) * hw;
      T* ph = xhat.data() + (ni * c + ch) * hw;
      T* po = out.data() + (ni * c + ch) * hw;
      for (int64_t i = 0; i < hw; ++i) {
        ph[i] = (src[i] - mu) / sg;
        po[i] = uncounted_mul(gm, ph[i]) + bt;
      }
    }

  Tensor<T> res =
      detail::make_op_node<T>(x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()});
  if (res.requires_grad()) {
    Node<T>* self = res.node().get();
    Node<T>* xn = x.node().get();
    Node<T>* gn = gamma.node().get();
    Node<T>* btn = beta.node().get();
    self->backward = [self, xn, gn, btn, n, c, hw, m, training, xhat = std::move(xhat),
                      sigma = std::move(sigma)]() {
      const T* g = self->grad.data();
      if (gn->requires_grad) gn->ensure_grad();
      if (btn->requires_grad) btn->ensure_grad();
      if (xn->requires_grad) xn->ensure_grad();
      for (int64_t ch = 0; ch < c; ++ch) {
        T gsum(0), gxsum(0);
        for (int64_t ni = 0; ni < n; ++ni) {
          const int64_t base = (ni * c + ch) * hw;
          for (int64_t i = 0; i < hw; ++i) {
            gsum = gsum + g[base + i];
            gxsum = gxsum + g[base + i] * xhat[static_cast<size_t>(base + i)];
          }
        }
        if (gn->requires_grad)
          gn->grad[static_cast<size_t>(ch)] = gn->grad[static_cast<size_t>(ch)] + gxsum;
        if (btn->requires_grad)
          btn->grad[static_cast<size_t>(ch)] = btn->grad[static_cast<size_t>(ch)] + gsum;
        if (xn->requires_grad) {
          const T gm = gn->data[static_cast<size_t>(ch)];
          const T sg = sigma[static_cast<size_t>(ch)];
          if (training) {
            // batch statistics depend on x: full normalization backward
            const T mg = gsum / T(static_cast<double>(m));
            const T mgx = gxsum / T(static_cast<double>(m));
            for (int64_t ni = 0; ni < n; ++ni) {
              const int64_t base = (ni * c + ch) * hw;
              for (int64_t i = 0; i < hw; ++i) {
                const T xh = xhat[static_cast<size_t>(base + i)];
                const T d = gm * (g[base + i] - mg - xh * mgx) / sg;
                xn->grad[static_cast<size_t>(base + i)] =
                    xn->grad[static_cast<size_t>(base + i)] + d;
              }
            }
          } else {
            // running statistics are constants
            for (int64_t ni = 0; ni < n; ++ni) {
              const int64_t base = (ni * c + ch) * hw;
              for (int64_t i = 0; i < hw; ++i)
                xn->grad[static_cast<size_t>(base + i)] =
                    xn->grad[static_cast<size_t>(base + i)] + gm * g[base + i] / sg;
            }
          }
        }
      }
    };
  }
  return res;
}

// Layer norm over the last axis. x [..,D], gamma/beta [D], biased variance.
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    T eps = T(1e-5)) {
  if (x.rank() < 1) throw ShapeError("layernorm: x " + shape_str(x.shape()));
  const int64_t d = x.dim(x.rank() - 1);
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d})
    throw ShapeError("layernorm: gamma/beta must be [" + std::to_string(d) + "], got " +
                     shape_str(gamma.shape()) + "/" + shape_str(beta.shape()));
  const int64_t rows = x.numel() / d;

  std::vector<T> xhat(static_cast<size_t>(x.numel()));
  std::vector<T> out(static_cast<size_t>(x.numel()));
  std::vector<T> sigma(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const T* src = x.data().data() + r * d;
    T s(0);
    for (int64_t i = 0; i < d; ++i) s = s + src[i];
    const T mu = s / T(static_cast<double>(d));
    T v(0);
    for (int64_t i = 0; i < d; ++i) {
      const T dv = src[i] - mu;
      v = v + uncounted_mul(dv, dv);
    }
    using std::sqrt;
    const T sg = sqrt(v / T(static_cast<double>(d)) + eps);
    sigma[static_cast<size_t>(r)] = sg;
    T* ph = xhat.data() + r * d;
    T* po = out.data() + r * d;
    for (int64_t i = 0; i < d; ++i) {
      ph[i] = (src[i] - mu) / sg;
      po[i] = uncounted_mul(gamma.data()[static_cast<size_t>(i)], ph[i]) +
              beta.data()[static_cast<size_t>(i)];
    }
  }

  Tensor<T> res =
      detail::make_op_node<T>(x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()});
  if (res.requires_grad()) {
    Node<T>* self = res.node().get();
    Node<T>* xn = x.node().get();
    Node<T>* gn = gamma.node().get();
    Node<T>* btn = beta.node().get();
    self->backward = [self, xn, gn, btn, rows, d, xhat = std::move(xhat),
                      sigma = std::move(sigma)]() {
      const T* g = self->grad.data();
      if (gn->requires_grad) gn->ensure_grad();
      if (btn->requires_grad) btn->ensure_grad();
      if (xn->requires_grad) xn->ensure_grad();
      for (int64_t r = 0; r < rows; ++r) {
        const int64_t base = r * d;
        if (gn->requires_grad || btn->requires_grad)
          for (int64_t i = 0; i < d; ++i) {
            if (gn->requires_grad)
              gn->grad[static_cast<size_t>(i)] =
                  gn->grad[static_cast<size_t>(i)] +
                  g[base + i] * xhat[static_cast<size_t>(base + i)];
            if (btn->requires_grad)
              btn->grad[static_cast<size_t>(i)] = btn->grad[static_cast<size_t>(i)] + g[base + i];
          }
        if (xn->requires_grad) {
          // h = g*gamma; dx = (h - mean(h) - xhat*mean(h*xhat)) / sigma
          T hs(0), hxs(0);
          for (int64_t i = 0; i < d; ++i) {
            const T hv = g[base + i] * gn->data[static_cast<size_t>(i)];
            hs = hs + hv;
            hxs = hxs + hv * xhat[static_cast<size_t>(base + i)];
          }
          const T mh = hs / T(static_cast<double>(d));
          const T mhx = hxs / T(static_cast<double>(d));
          const T sg = sigma[static_cast<size_t>(r)];
          for (int64_t i = 0; i < d; ++i) {
            const T hv = g[base + i] * gn->data[static_cast<size_t>(i)];
            xn->grad[static_cast<size_t>(base + i)] =
                xn->grad[static_cast<size_t>(base + i)] +
                (hv - mh - xhat[static_cast<size_t>(base + i)] * mhx) / sg;
          }
        }
      }
    };
  }
  return res;
}

}  // namespace stalab
