#pragma once

// Super token attention: pixels associate with a 3x3 window of coarse
// "super tokens" (border-clamped), the super tokens are refined by one
// weighted-pooling step, self-attention runs on the small super-token set,
// and the result is scattered back through the same sparse association.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "stalab/layers.hpp"
#include "stalab/tensor.hpp"

namespace stalab {

// Fixed sparse structure tying H*W pixel tokens to a gh*gw super-token grid.
// Pixel i belongs to the grid cell covering it; its neighborhood is the 3x3
// block of cells around that cell, clamped at the borders, kept in ascending
// cell order. Interior pixels see 9 cells, edges 6, corners 4 (fewer still
// when the grid itself is narrower than 3).
struct TokenGrid {
  int64_t h = 0, w = 0;    // pixel extent
  int64_t th = 0, tw = 0;  // super token patch size
  int64_t gh = 0, gw = 0;  // super token grid extent
  int64_t n = 0, m = 0;    // pixel count, super token count
  std::vector<int32_t> cell;     // [n] cell id containing each pixel
  std::vector<int32_t> nbr;      // concatenated neighbor cell ids
  std::vector<int32_t> nbr_off;  // [n+1] row offsets into nbr
};

inline TokenGrid make_token_grid(int64_t h, int64_t w, int64_t th, int64_t tw) {
  if (h < 1 || w < 1 || th < 1 || tw < 1 || h % th != 0 || w % tw != 0)
    throw ShapeError("make_token_grid: token " + std::to_string(th) + "x" + std::to_string(tw) +
                     " must tile " + std::to_string(h) + "x" + std::to_string(w));
  TokenGrid g;
  g.h = h;
  g.w = w;
  g.th = th;
  g.tw = tw;
  g.gh = h / th;
  g.gw = w / tw;
  g.n = h * w;
  g.m = g.gh * g.gw;
  g.cell.resize(static_cast<size_t>(g.n));
  g.nbr_off.assign(static_cast<size_t>(g.n) + 1, 0);
  g.nbr.reserve(static_cast<size_t>(g.n) * 9);
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w; ++c) {
      const int64_t i = r * w + c;
      const int64_t gi = r / th, gj = c / tw;
      g.cell[static_cast<size_t>(i)] = static_cast<int32_t>(gi * g.gw + gj);
      const int64_t r0 = gi > 0 ? gi - 1 : 0, r1 = gi + 1 < g.gh ? gi + 1 : g.gh - 1;
      const int64_t c0 = gj > 0 ? gj - 1 : 0, c1 = gj + 1 < g.gw ? gj + 1 : g.gw - 1;
      for (int64_t ci = r0; ci <= r1; ++ci)
        for (int64_t cj = c0; cj <= c1; ++cj)
          g.nbr.push_back(static_cast<int32_t>(ci * g.gw + cj));
      g.nbr_off[static_cast<size_t>(i) + 1] = static_cast<int32_t>(g.nbr.size());
    }
  return g;
}

// Total pixel-to-neighbor pairs; the per-sample cost of associate, update
// and upsample is this times the channel count (in multiplies).
inline int64_t grid_pair_count(const TokenGrid& g) {
  return static_cast<int64_t>(g.nbr.size());
}

namespace detail {

template <typename T>
void expect_tokens(const Tensor<T>& x, const TokenGrid& g, const char* who) {
  if (x.rank() != 2 || x.dim(0) != g.n)
    throw ShapeError(std::string(who) + ": tokens " + shape_str(x.shape()) + " vs grid n=" +
                     std::to_string(g.n));
}

template <typename T>
void expect_supers(const Tensor<T>& s, const TokenGrid& g, int64_t c, const char* who) {
  if (s.rank() != 2 || s.dim(0) != g.m || s.dim(1) != c)
    throw ShapeError(std::string(who) + ": super tokens " + shape_str(s.shape()) +
                     " vs expected [" + std::to_string(g.m) + "," + std::to_string(c) + "]");
}

}  // namespace detail

// Initial super tokens: each cell averages its own patch of pixel tokens.
// X [n,C] -> S0 [m,C].
template <typename T>
Tensor<T> init_super_tokens(const Tensor<T>& x, const TokenGrid& g) {
  detail::expect_tokens(x, g, "init_super_tokens");
  const int64_t c = x.dim(1);
  const T patch = T(static_cast<double>(g.th * g.tw));
  std::vector<T> out(static_cast<size_t>(g.m * c), T(0));
  for (int64_t i = 0; i < g.n; ++i) {
    const int64_t j = g.cell[static_cast<size_t>(i)];
    const T* src = x.data().data() + i * c;
    T* dst = out.data() + j * c;
    for (int64_t k = 0; k < c; ++k) dst[k] = dst[k] + src[k];
  }
  for (auto& v : out) v = v / patch;

  Tensor<T> res = detail::make_op_node<T>({g.m, c}, std::move(out), {x.node()});
  if (res.requires_grad()) {
    Node<T>* self = res.node().get();
    Node<T>* xn = x.node().get();
    // the grid is copied into the closure; callers may discard theirs
    self->backward = [self, xn, g, c, patch]() {
      xn->ensure_grad();
      for (int64_t i = 0; i < g.n; ++i) {
        const int64_t j = g.cell[static_cast<size_t>(i)];
        const T* gs = self->grad.data() + j * c;
        T* gx = xn->grad.data() + i * c;
        for (int64_t k = 0; k < c; ++k) gx[k] = gx[k] + gs[k] / patch;
      }
    };
  }
  return res;
}

// Sparse pixel-to-super-token association. Row i of the result holds
// softmax over j in N(i) of (X_i . S_j) / sqrt(C), stored flat in the
// grid's CSR layout. X [n,C], S [m,C] -> Q [pairs].
template <typename T>
Tensor<T> associate(const Tensor<T>& x, const Tensor<T>& s, const TokenGrid& g) {
  detail::expect_tokens(x, g, "associate");
  const int64_t c = x.dim(1);
  detail::expect_supers(s, g, c, "associate");
  const int64_t pairs = grid_pair_count(g);
  using std::sqrt;
  const T scale = sqrt(T(static_cast<double>(c)));

  std::vector<T> q(static_cast<size_t>(pairs));
  const T* px = x.data().data();
  const T* ps = s.data().data();
  for (int64_t i = 0; i < g.n; ++i) {
    const int32_t b = g.nbr_off[static_cast<size_t>(i)];
    const int32_t e = g.nbr_off[static_cast<size_t>(i) + 1];
    for (int32_t idx = b; idx < e; ++idx) {
      const int64_t j = g.nbr[static_cast<size_t>(idx)];
      T acc(0);
      const T* xv = px + i * c;
      const T* sv = ps + j * c;
      for (int64_t k = 0; k < c; ++k) acc = acc + xv[k] * sv[k];
      q[static_cast<size_t>(idx)] = acc / scale;
    }
    // softmax over the row segment
    T mx = q[static_cast<size_t>(b)];
    for (int32_t idx = b + 1; idx < e; ++idx)
      if (mx < q[static_cast<size_t>(idx)]) mx = q[static_cast<size_t>(idx)];
    T denom(0);
    for (int32_t idx = b; idx < e; ++idx) {
      using std::exp;
      T ev = exp(q[static_cast<size_t>(idx)] - mx);
      q[static_cast<size_t>(idx)] = ev;
      denom = denom + ev;
    }
    for (int32_t idx = b; idx < e; ++idx)
      q[static_cast<size_t>(idx)] = q[static_cast<size_t>(idx)] / denom;
  }

  Tensor<T> res = detail::make_op_node<T>({pairs}, std::move(q), {x.node(), s.node()});
  if (res.requires_grad()) {
    Node<T>* self = res.node().get();
    Node<T>* xn = x.node().get();
    Node<T>* sn = s.node().get();
    self->backward = [self, xn, sn, g, c, scale]() {
      if (xn->requires_grad) xn->ensure_grad();
      if (sn->requires_grad) sn->ensure_grad();
      const T* qv = self->data.data();
      const T* gq = self->grad.data();
      for (int64_t i = 0; i < g.n; ++i) {
        const int32_t b = g.nbr_off[static_cast<size_t>(i)];
        const int32_t e = g.nbr_off[static_cast<size_t>(i) + 1];
        // softmax backward on the row segment
        T dot(0);
        for (int32_t idx = b; idx < e; ++idx)
          dot = dot + gq[idx] * qv[idx];
        for (int32_t idx = b; idx < e; ++idx) {
          const T dlogit = (gq[idx] - dot) * qv[idx];
          const T dl = dlogit / scale;
          const int64_t j = g.nbr[static_cast<size_t>(idx)];
          if (xn->requires_grad) {
            T* gx = xn->grad.data() + i * c;
            const T* sv = sn->data.data() + j * c;
            for (int64_t k = 0; k < c; ++k) gx[k] = gx[k] + dl * sv[k];
          }
          if (sn->requires_grad) {
            T* gs = sn->grad.data() + j * c;
            const T* xv = xn->data.data() + i * c;
            for (int64_t k = 0; k < c; ++k) gs[k] = gs[k] + dl * xv[k];
          }
        }
      }
    };
  }
  return res;
}

// One refinement step: S_j = (sum_i Q_ij X_i) / (sum_i Q_ij), summing over
// pixels whose neighborhood contains j. Q [pairs], X [n,C] -> S [m,C].
// Column sums are strictly positive: every cell is in its own pixels'
// neighborhoods and softmax rows are positive.
template <typename T>
Tensor<T> update_super_tokens(const Tensor<T>& q, const Tensor<T>& x, const TokenGrid& g) {
  detail::expect_tokens(x, g, "update_super_tokens");
  const int64_t c = x.dim(1);
  const int64_t pairs = grid_pair_count(g);
  if (q.rank() != 1 || q.dim(0) != pairs)
    throw ShapeError("update_super_tokens: q " + shape_str(q.shape()) + " vs pairs " +
                     std::to_string(pairs));

  std::vector<T> colsum(static_cast<size_t>(g.m), T(0));
  std::vector<T> out(static_cast<size_t>(g.m * c), T(0));
  const T* pq = q.data().data();
  const T* px = x.data().data();
  for (int64_t i = 0; i < g.n; ++i) {
    const int32_t b = g.nbr_off[static_cast<size_t>(i)];
    const int32_t e = g.nbr_off[static_cast<size_t>(i) + 1];
    for (int32_t idx = b; idx < e; ++idx) {
      const int64_t j = g.nbr[static_cast<size_t>(idx)];
      const T qv = pq[idx];
      colsum[static_cast<size_t>(j)] = colsum[static_cast<size_t>(j)] + qv;
      const T* xv = px + i * c;
      T* dst = out.data() + j * c;
      for (int64_t k = 0; k < c; ++k) dst[k] = dst[k] + qv * xv[k];
    }
  }
  for (int64_t j = 0; j < g.m; ++j) {
    T* dst = out.data() + j * c;
    const T cs = colsum[static_cast<size_t>(j)];
    for (int64_t k = 0; k < c; ++k) dst[k] = dst[k] / cs;
  }

  Tensor<T> res = detail::make_op_node<T>({g.m, c}, std::move(out), {q.node(), x.node()});
  if (res.requires_grad()) {
    Node<T>* self = res.node().get();
    Node<T>* qn = q.node().get();
    Node<T>* xn = x.node().get();
    self->backward = [self, qn, xn, g, c, colsum = std::move(colsum)]() {
      if (qn->requires_grad) qn->ensure_grad();
      if (xn->requires_grad) xn->ensure_grad();
      const T* gs = self->grad.data();
      const T* sv = self->data.data();
      // d_j = gS_j / c_j, e_j = (gS_j . S_j) / c_j, then
      // dQ_ij = d_j . X_i - e_j and dX_i += sum_j Q_ij d_j
      std::vector<T> d(static_cast<size_t>(g.m * c));
      std::vector<T> e(static_cast<size_t>(g.m), T(0));
      for (int64_t j = 0; j < g.m; ++j) {
        const T cs = colsum[static_cast<size_t>(j)];
        T acc(0);
        for (int64_t k = 0; k < c; ++k) {
          const size_t o = static_cast<size_t>(j * c + k);
          d[o] = gs[o] / cs;
          acc = acc + gs[o] * sv[o];
        }
        e[static_cast<size_t>(j)] = acc / cs;
      }
      for (int64_t i = 0; i < g.n; ++i) {
        const int32_t b = g.nbr_off[static_cast<size_t>(i)];
        const int32_t en = g.nbr_off[static_cast<size_t>(i) + 1];
        for (int32_t idx = b; idx < en; ++idx) {
          const int64_t j = g.nbr[static_cast<size_t>(idx)];
          const T* dj = d.data() + j * c;
          const T* xv = xn->data.data() + i * c;
          if (qn->requires_grad) {
            T acc(0);
            for (int64_t k = 0; k < c; ++k) acc = acc + dj[k] * xv[k];
            qn->grad[static_cast<size_t>(idx)] =
                qn->grad[static_cast<size_t>(idx)] + acc - e[static_cast<size_t>(j)];
          }
          if (xn->requires_grad) {
            const T qv = qn->data[static_cast<size_t>(idx)];
            T* gx = xn->grad.data() + i * c;
            for (int64_t k = 0; k < c; ++k) gx[k] = gx[k] + qv * dj[k];
          }
        }
      }
    };
  }
  return res;
}

// Scatter attended super tokens back to pixels through the association:
// X_out_i = sum_{j in N(i)} Q_ij A_j. Q [pairs], A [m,C] -> [n,C].
template <typename T>
Tensor<T> upsample_tokens(const Tensor<T>& q, const Tensor<T>& a, const TokenGrid& g) {
  const int64_t c = a.rank() == 2 ? a.dim(1) : -1;
  detail::expect_supers(a, g, c, "upsample_tokens");
  const int64_t pairs = grid_pair_count(g);
  if (q.rank() != 1 || q.dim(0) != pairs)
    throw ShapeError("upsample_tokens: q " + shape_str(q.shape()) + " vs pairs " +
                     std::to_string(pairs));

  std::vector<T> out(static_cast<size_t>(g.n * c), T(0));
  const T* pq = q.data().data();
  const T* pa = a.data().data();
  for (int64_t i = 0; i < g.n; ++i) {
    const int32_t b = g.nbr_off[static_cast<size_t>(i)];
    const int32_t e = g.nbr_off[static_cast<size_t>(i) + 1];
    T* dst = out.data() + i * c;
    for (int32_t idx = b; idx < e; ++idx) {
      const int64_t j = g.nbr[static_cast<size_t>(idx)];
      const T qv = pq[idx];
      const T* av = pa + j * c;
      for (int64_t k = 0; k < c; ++k) dst[k] = dst[k] + qv * av[k];
    }
  }

  Tensor<T> res = detail::make_op_node<T>({g.n, c}, std::move(out), {q.node(), a.node()});
  if (res.requires_grad()) {
    Node<T>* self = res.node().get();
    Node<T>* qn = q.node().get();
    Node<T>* an = a.node().get();
    self->backward = [self, qn, an, g, c]() {
      if (qn->requires_grad) qn->ensure_grad();
      if (an->requires_grad) an->ensure_grad();
      const T* go = self->grad.data();
      for (int64_t i = 0; i < g.n; ++i) {
        const int32_t b = g.nbr_off[static_cast<size_t>(i)];
        const int32_t e = g.nbr_off[static_cast<size_t>(i) + 1];
        const T* gi = go + i * c;
        for (int32_t idx = b; idx < e; ++idx) {
          const int64_t j = g.nbr[static_cast<size_t>(idx)];
          if (qn->requires_grad) {
            const T* av = an->data.data() + j * c;
            T acc(0);
            for (int64_t k = 0; k < c; ++k) acc = acc + gi[k] * av[k];
            qn->grad[static_cast<size_t>(idx)] = qn->grad[static_cast<size_t>(idx)] + acc;
          }
          if (an->requires_grad) {
            const T qv = qn->data[static_cast<size_t>(idx)];
            T* ga = an->grad.data() + j * c;
            for (int64_t k = 0; k < c; ++k) ga[k] = ga[k] + qv * gi[k];
          }
        }
      }
    };
  }
  return res;
}

// Multi-head self-attention over the super tokens. S [m,C]; wq/wk/wv [C,C],
// no biases and no output projection; per-head scale sqrt(C/heads).
template <typename T>
Tensor<T> super_attention(const Tensor<T>& s, const Tensor<T>& wq, const Tensor<T>& wk,
                          const Tensor<T>& wv, int64_t heads) {
  if (s.rank() != 2) throw ShapeError("super_attention: s " + shape_str(s.shape()));
  const int64_t c = s.dim(1);
  if (heads < 1 || c % heads != 0)
    throw ShapeError("super_attention: heads " + std::to_string(heads) +
                     " must divide channels " + std::to_string(c));
  const Shape ww{c, c};
  if (wq.shape() != ww || wk.shape() != ww || wv.shape() != ww)
    throw ShapeError("super_attention: projection weights must be [" + std::to_string(c) + "," +
                     std::to_string(c) + "]");
  const int64_t dh = c / heads;
  using std::sqrt;
  const T scale = sqrt(T(static_cast<double>(dh)));

  Tensor<T> q = matmul(s, wq);
  Tensor<T> k = matmul(s, wk);
  Tensor<T> v = matmul(s, wv);
  std::vector<Tensor<T>> outs;
  outs.reserve(static_cast<size_t>(heads));
  for (int64_t hh = 0; hh < heads; ++hh) {
    Tensor<T> qh = slice(q, 1, hh * dh, dh);
    Tensor<T> kh = slice(k, 1, hh * dh, dh);
    Tensor<T> vh = slice(v, 1, hh * dh, dh);
    Tensor<T> logits = div_scalar(matmul(qh, transpose2d(kh)), scale);
    Tensor<T> attn = softmax(logits, 1);
    outs.push_back(matmul(attn, vh));
  }
  return concat(outs, 1);
}

// Parameters of one attention block operating on [N,C,H,W] feature maps.
template <typename T>
struct StaBlockParams {
  Tensor<T> cpe_w, cpe_b;       // depthwise 3x3 [C,1,3,3], [C]
  Tensor<T> ln_gamma, ln_beta;  // [C]
  Tensor<T> wq, wk, wv;         // [C,C]
  int64_t heads = 1;
};

namespace detail {

// One sample's feature map as channel-last pixel tokens: [1,C,H,W] -> [HW,C].
template <typename T>
Tensor<T> tokens_from_image(const Tensor<T>& x) {
  const int64_t c = x.dim(1), h = x.dim(2), w = x.dim(3);
  return transpose(reshape(x, {c, h * w}), 0, 1);
}

template <typename T>
Tensor<T> image_from_tokens(const Tensor<T>& t, int64_t c, int64_t h, int64_t w) {
  return reshape(transpose(t, 0, 1), {1, c, h, w});
}

}  // namespace detail

// Full block: depthwise positional conv residual, then layer norm, sparse
// association against mean-pooled super tokens, one refinement step,
// multi-head attention over the super tokens, upsample back through the
// association, and a residual join. x [N,C,H,W], token patch th x tw.
template <typename T>
Tensor<T> sta_block(const Tensor<T>& x, const StaBlockParams<T>& p, const TokenGrid& g) {
  if (x.rank() != 4) throw ShapeError("sta_block: x " + shape_str(x.shape()));
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h != g.h || w != g.w)
    throw ShapeError("sta_block: x " + shape_str(x.shape()) + " vs grid " + std::to_string(g.h) +
                     "x" + std::to_string(g.w));
  if (p.cpe_w.shape() != Shape{c, 1, 3, 3})
    throw ShapeError("sta_block: cpe weights " + shape_str(p.cpe_w.shape()) + " vs channels " +
                     std::to_string(c));

  // positional encoding: depthwise conv residual on the whole batch
  Tensor<T> xp = add(conv2d(x, p.cpe_w, p.cpe_b, 1, 1, c), x);

  std::vector<Tensor<T>> outs;
  outs.reserve(static_cast<size_t>(n));
  for (int64_t s = 0; s < n; ++s) {
    Tensor<T> xs = slice(xp, 0, s, 1);
    Tensor<T> tokens = detail::tokens_from_image(xs);
    Tensor<T> ln = layernorm(tokens, p.ln_gamma, p.ln_beta);
    Tensor<T> s0 = init_super_tokens(ln, g);
    Tensor<T> q = associate(ln, s0, g);
    Tensor<T> st = update_super_tokens(q, ln, g);
    Tensor<T> at = super_attention(st, p.wq, p.wk, p.wv, p.heads);
    Tensor<T> up = upsample_tokens(q, at, g);
    Tensor<T> y = add(up, tokens);  // residual joins the pre-norm tokens
    outs.push_back(detail::image_from_tokens(y, c, h, w));
  }
  return n == 1 ? outs[0] : concat(outs, 0);
}

}  // namespace stalab
