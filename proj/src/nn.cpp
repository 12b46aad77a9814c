#include "mvrec/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace mvrec {

namespace {
void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}
}  // namespace

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require(x.shape.size() == 2, "layer_norm: x must be 2-D");
  int r = x.shape[0], d = x.shape[1];
  require(d >= 1, "layer_norm: d must be >= 1");
  require(gain.shape == Shape{d} && bias.shape == Shape{d}, "layer_norm: gain/bias must be {d}");

  Tensor out = Tensor::zeros({r, d});
  auto xhat = std::make_shared<std::vector<double>>((size_t)r * d);
  auto inv_std = std::make_shared<std::vector<double>>(r);
  for (int i = 0; i < r; ++i) {
    const double* xi = x.ptr() + (size_t)i * d;
    double mu = 0;
    for (int j = 0; j < d; ++j) mu += xi[j];
    mu /= d;
    double var = 0;
    for (int j = 0; j < d; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= d;
    double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (int j = 0; j < d; ++j) {
      double xh = (xi[j] - mu) * is;
      (*xhat)[(size_t)i * d + j] = xh;
      out.at((size_t)i * d + j) = xh * gain.at(j) + bias.at(j);
    }
  }

  Graph* g = x.graph ? x.graph : (gain.graph ? gain.graph : bias.graph);
  if (!g) return out;
  std::vector<int> ids;
  bool tx = x.tracked(), tg = gain.tracked(), tb = bias.tracked();
  if (tx) ids.push_back(x.node);
  if (tg) ids.push_back(gain.node);
  if (tb) ids.push_back(bias.node);
  auto dgain = gain.data;
  return g->track(
      std::move(out), "layer_norm", std::move(ids),
      [r, d, xhat, inv_std, dgain, tx, tg, tb](const std::vector<double>& gr,
                                               const std::vector<std::vector<double>*>& gin) {
        size_t k = 0;
        std::vector<double>* gx = tx ? gin[k++] : nullptr;
        std::vector<double>* gg = tg ? gin[k++] : nullptr;
        std::vector<double>* gb = tb ? gin[k] : nullptr;
        for (int i = 0; i < r; ++i) {
          const double* xh = xhat->data() + (size_t)i * d;
          const double* gi = gr.data() + (size_t)i * d;
          if (gg || gb) {
            for (int j = 0; j < d; ++j) {
              if (gg) (*gg)[j] += gi[j] * xh[j];
              if (gb) (*gb)[j] += gi[j];
            }
          }
          if (gx) {
            // d/dx of the normalized value, with mean/var both functions of x
            double mean_gy = 0, mean_gy_xh = 0;
            for (int j = 0; j < d; ++j) {
              double gy = gi[j] * (*dgain)[j];
              mean_gy += gy;
              mean_gy_xh += gy * xh[j];
            }
            mean_gy /= d;
            mean_gy_xh /= d;
            double is = (*inv_std)[i];
            for (int j = 0; j < d; ++j) {
              double gy = gi[j] * (*dgain)[j];
              (*gx)[(size_t)i * d + j] += is * (gy - mean_gy - xh[j] * mean_gy_xh);
            }
          }
        }
      });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return row_broadcast_add(matmul(x, w), b);
}

Tensor mh_attention(const Tensor& q_tokens, const Tensor& kv_tokens, int n_heads,
                    const AttentionWeights& w) {
  require(q_tokens.shape.size() == 2 && kv_tokens.shape.size() == 2, "mh_attention: 2-D tokens");
  int d = q_tokens.shape[1];
  require(kv_tokens.shape[1] == d, "mh_attention: embed dim mismatch");
  require(d % n_heads == 0, "mh_attention: dim not divisible by heads");
  int dh = d / n_heads;

  Tensor q = linear(q_tokens, w.wq, w.bq);
  Tensor k = linear(kv_tokens, w.wk, w.bk);
  Tensor v = linear(kv_tokens, w.wv, w.bv);
  double scale = 1.0 / std::sqrt((double)dh);

  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  for (int h = 0; h < n_heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
    Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
    Tensor scores = scale_const(matmul(qh, transpose(kh)), scale);
    Tensor attn = softmax_rows(scores);
    heads.push_back(matmul(attn, vh));
  }
  Tensor concat = n_heads == 1 ? heads[0] : concat_cols(heads);
  return linear(concat, w.wo, w.bo);
}

Tensor conv2d_s1(const Tensor& x, const Tensor& kernels) {
  require(x.shape.size() == 3, "conv2d_s1: x must be {Cin,H,W}");
  require(kernels.shape.size() == 4, "conv2d_s1: kernels must be {Cout,Cin,k,k}");
  int cin = x.shape[0], ih = x.shape[1], iw = x.shape[2];
  int cout = kernels.shape[0], k = kernels.shape[2];
  require(kernels.shape[1] == cin, "conv2d_s1: channel mismatch");
  require(kernels.shape[3] == k, "conv2d_s1: kernel must be square");
  require(k % 2 == 1, "conv2d_s1: kernel size must be odd");
  int pad = (k - 1) / 2;

  Tensor out = Tensor::zeros({cout, ih, iw});
  const double* px = x.ptr();
  const double* pk = kernels.ptr();
  double* po = out.ptr();
  size_t plane = (size_t)ih * iw;
  for (int co = 0; co < cout; ++co) {
    for (int ci = 0; ci < cin; ++ci) {
      const double* xc = px + (size_t)ci * plane;
      const double* kc = pk + (((size_t)co * cin + ci) * k) * k;
      double* oc = po + (size_t)co * plane;
      for (int dy = 0; dy < k; ++dy) {
        for (int dx = 0; dx < k; ++dx) {
          double kv = kc[(size_t)dy * k + dx];
          if (kv == 0.0) continue;
          int y0 = std::max(0, pad - dy), y1 = std::min(ih, ih + pad - dy);
          int x0 = std::max(0, pad - dx), x1 = std::min(iw, iw + pad - dx);
          for (int y = y0; y < y1; ++y) {
            const double* xr = xc + (size_t)(y + dy - pad) * iw + (x0 + dx - pad);
            double* orow = oc + (size_t)y * iw + x0;
            int span = x1 - x0;
            for (int xx = 0; xx < span; ++xx) orow[xx] += kv * xr[xx];
          }
        }
      }
    }
  }

  auto dx = x.data;
  auto dk = kernels.data;
  bool txx = x.tracked(), tk = kernels.tracked();
  Graph* g = txx ? x.graph : (tk ? kernels.graph : nullptr);
  if (txx && tk) require(x.graph == kernels.graph, "conv2d_s1: mixed graphs");
  if (!g) {
    if (!all_finite(*out.data)) throw std::runtime_error("conv2d_s1: non-finite output");
    return out;
  }
  std::vector<int> ids;
  if (txx) ids.push_back(x.node);
  if (tk) ids.push_back(kernels.node);
  return g->track(
      std::move(out), "conv2d_s1", std::move(ids),
      [dx, dk, cin, cout, ih, iw, k, pad, txx, tk](const std::vector<double>& gr,
                                                   const std::vector<std::vector<double>*>& gin) {
        size_t plane = (size_t)ih * iw;
        size_t idx = 0;
        std::vector<double>* gx = txx ? gin[idx++] : nullptr;
        std::vector<double>* gk = tk ? gin[idx] : nullptr;
        for (int co = 0; co < cout; ++co) {
          const double* gc = gr.data() + (size_t)co * plane;
          for (int ci = 0; ci < cin; ++ci) {
            const double* xc = dx->data() + (size_t)ci * plane;
            const double* kc = dk->data() + (((size_t)co * cin + ci) * k) * k;
            for (int dy = 0; dy < k; ++dy) {
              for (int dxk = 0; dxk < k; ++dxk) {
                double kv = kc[(size_t)dy * k + dxk];
                int y0 = std::max(0, pad - dy), y1 = std::min(ih, ih + pad - dy);
                int x0 = std::max(0, pad - dxk), x1 = std::min(iw, iw + pad - dxk);
                double kacc = 0;
                for (int y = y0; y < y1; ++y) {
                  const double* grow = gc + (size_t)y * iw + x0;
                  size_t xoff = (size_t)(y + dy - pad) * iw + (x0 + dxk - pad);
                  int span = x1 - x0;
                  if (gx) {
                    double* gxr = gx->data() + (size_t)ci * plane + xoff;
                    for (int xx = 0; xx < span; ++xx) gxr[xx] += kv * grow[xx];
                  }
                  if (gk) {
                    const double* xr = xc + xoff;
                    for (int xx = 0; xx < span; ++xx) kacc += grow[xx] * xr[xx];
                  }
                }
                if (gk) (*gk)[(((size_t)co * cin + ci) * k + dy) * k + dxk] += kacc;
              }
            }
          }
        }
      });
}

Tensor add_chan_bias(const Tensor& x, const Tensor& b) {
  require(x.shape.size() == 3 && b.shape.size() == 1 && x.shape[0] == b.shape[0],
          "add_chan_bias: want {C,H,W} + {C}");
  int c = x.shape[0];
  size_t plane = (size_t)x.shape[1] * x.shape[2];
  Tensor out = Tensor::zeros(x.shape);
  for (int ci = 0; ci < c; ++ci) {
    double bv = b.at(ci);
    for (size_t p = 0; p < plane; ++p) out.at((size_t)ci * plane + p) = x.at((size_t)ci * plane + p) + bv;
  }
  bool txx = x.tracked(), tb = b.tracked();
  Graph* g = txx ? x.graph : (tb ? b.graph : nullptr);
  if (!g) return out;
  std::vector<int> ids;
  if (txx) ids.push_back(x.node);
  if (tb) ids.push_back(b.node);
  return g->track(std::move(out), "add_chan_bias", std::move(ids),
                  [c, plane, txx, tb](const std::vector<double>& gr,
                                      const std::vector<std::vector<double>*>& gin) {
                    size_t idx = 0;
                    if (txx) {
                      std::vector<double>& gx = *gin[idx++];
                      for (size_t i = 0; i < gr.size(); ++i) gx[i] += gr[i];
                    }
                    if (tb) {
                      std::vector<double>& gb = *gin[idx];
                      for (int ci = 0; ci < c; ++ci) {
                        double acc = 0;
                        for (size_t p = 0; p < plane; ++p) acc += gr[(size_t)ci * plane + p];
                        gb[ci] += acc;
                      }
                    }
                  });
}

namespace {

// Shared helper for pure index permutations: out[i] = in[perm[i]].
Tensor permutation_op(const Tensor& x, Shape out_shape, const char* name,
                      std::vector<long long> perm) {
  Tensor out = Tensor::zeros(std::move(out_shape));
  for (size_t i = 0; i < perm.size(); ++i) out.at(i) = x.at(perm[i]);
  if (!x.tracked()) return out;
  auto p = std::make_shared<std::vector<long long>>(std::move(perm));
  return x.graph->track(std::move(out), name, {x.node},
                        [p](const std::vector<double>& g, const std::vector<std::vector<double>*>& gin) {
                          for (size_t i = 0; i < p->size(); ++i) (*gin[0])[(*p)[i]] += g[i];
                        });
}

}  // namespace

Tensor extract_patches(const Tensor& x, int p) {
  require(x.shape.size() == 3, "extract_patches: x must be {C,H,W}");
  int c = x.shape[0], h = x.shape[1], w = x.shape[2];
  require(p >= 1 && h % p == 0 && w % p == 0, "extract_patches: resolution not divisible by patch");
  int gh = h / p, gw = w / p;
  std::vector<long long> perm((size_t)c * h * w);
  long long o = 0;
  for (int ty = 0; ty < gh; ++ty)
    for (int tx = 0; tx < gw; ++tx)
      for (int ci = 0; ci < c; ++ci)
        for (int dy = 0; dy < p; ++dy)
          for (int dx = 0; dx < p; ++dx)
            perm[o++] = ((size_t)ci * h + (ty * p + dy)) * w + (tx * p + dx);
  return permutation_op(x, {gh * gw, c * p * p}, "extract_patches", std::move(perm));
}

Tensor pixel_shuffle(const Tensor& x, int p) {
  require(x.shape.size() == 3, "pixel_shuffle: x must be {C,h,w}");
  int cin = x.shape[0], h = x.shape[1], w = x.shape[2];
  require(p >= 1 && cin % (p * p) == 0, "pixel_shuffle: channels not divisible by p^2");
  int c = cin / (p * p);
  std::vector<long long> perm((size_t)cin * h * w);
  long long o = 0;
  for (int co = 0; co < c; ++co)
    for (int y = 0; y < h * p; ++y)
      for (int xx = 0; xx < w * p; ++xx) {
        int ys = y / p, dy = y % p, xs = xx / p, dx = xx % p;
        int ci = (co * p + dy) * p + dx;
        perm[o++] = ((size_t)ci * h + ys) * w + xs;
      }
  return permutation_op(x, {c, h * p, w * p}, "pixel_shuffle", std::move(perm));
}

Tensor pixel_unshuffle(const Tensor& x, int p) {
  require(x.shape.size() == 3, "pixel_unshuffle: x must be {c,H,W}");
  int c = x.shape[0], hp = x.shape[1], wp = x.shape[2];
  require(p >= 1 && hp % p == 0 && wp % p == 0, "pixel_unshuffle: size not divisible by p");
  int h = hp / p, w = wp / p;
  std::vector<long long> perm((size_t)c * hp * wp);
  long long o = 0;
  for (int ci = 0; ci < c * p * p; ++ci) {
    int co = ci / (p * p), dy = (ci / p) % p, dx = ci % p;
    for (int ys = 0; ys < h; ++ys)
      for (int xs = 0; xs < w; ++xs)
        perm[o++] = ((size_t)co * hp + (ys * p + dy)) * wp + (xs * p + dx);
  }
  return permutation_op(x, {c * p * p, h, w}, "pixel_unshuffle", std::move(perm));
}

Tensor tokens_to_chw(const Tensor& t, int h, int w) {
  require(t.shape.size() == 2 && t.shape[0] == h * w, "tokens_to_chw: token count mismatch");
  int c = t.shape[1];
  std::vector<long long> perm((size_t)c * h * w);
  long long o = 0;
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) perm[o++] = (size_t)(y * w + xx) * c + ci;
  return permutation_op(t, {c, h, w}, "tokens_to_chw", std::move(perm));
}

Tensor chw_to_tokens(const Tensor& x) {
  if (x.shape.size() != 3) throw std::invalid_argument("chw_to_tokens: x must be {C,h,w}");
  int c = x.shape[0], h = x.shape[1], w = x.shape[2];
  std::vector<long long> perm((size_t)c * h * w);
  long long o = 0;
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      for (int ci = 0; ci < c; ++ci) perm[o++] = ((size_t)ci * h + y) * w + xx;
  return permutation_op(x, {h * w, c}, "chw_to_tokens", std::move(perm));
}

Tensor concat_chan(const Tensor& a, const Tensor& b) {
  require(a.shape.size() == 3 && b.shape.size() == 3 && a.shape[1] == b.shape[1] &&
              a.shape[2] == b.shape[2],
          "concat_chan: spatial mismatch");
  int ca = a.shape[0], cb = b.shape[0], h = a.shape[1], w = a.shape[2];
  Tensor out = Tensor::zeros({ca + cb, h, w});
  std::copy(a.ptr(), a.ptr() + a.size(), out.ptr());
  std::copy(b.ptr(), b.ptr() + b.size(), out.ptr() + a.size());
  bool ta = a.tracked(), tb = b.tracked();
  Graph* g = ta ? a.graph : (tb ? b.graph : nullptr);
  if (!g) return out;
  std::vector<int> ids;
  if (ta) ids.push_back(a.node);
  if (tb) ids.push_back(b.node);
  long long na = a.size(), nb = b.size();
  return g->track(std::move(out), "concat_chan", std::move(ids),
                  [na, nb, ta, tb](const std::vector<double>& gr,
                                   const std::vector<std::vector<double>*>& gin) {
                    size_t k = 0;
                    if (ta) {
                      for (long long i = 0; i < na; ++i) (*gin[k])[i] += gr[i];
                      ++k;
                    }
                    if (tb)
                      for (long long i = 0; i < nb; ++i) (*gin[k])[i] += gr[na + i];
                  });
}

Tensor slice_chan(const Tensor& x, int c0, int c1) {
  require(x.shape.size() == 3 && 0 <= c0 && c0 < c1 && c1 <= x.shape[0], "slice_chan: bad range");
  int h = x.shape[1], w = x.shape[2];
  size_t plane = (size_t)h * w;
  std::vector<long long> perm((size_t)(c1 - c0) * plane);
  long long o = 0;
  for (int ci = c0; ci < c1; ++ci)
    for (size_t p = 0; p < plane; ++p) perm[o++] = (size_t)ci * plane + p;
  return permutation_op(x, {c1 - c0, h, w}, "slice_chan", std::move(perm));
}

Tensor avgpool2(const Tensor& x) {
  require(x.shape.size() == 3 && x.shape[1] % 2 == 0 && x.shape[2] % 2 == 0,
          "avgpool2: want {C,H,W} with even H,W");
  int c = x.shape[0], h = x.shape[1], w = x.shape[2];
  int oh = h / 2, ow = w / 2;
  Tensor out = Tensor::zeros({c, oh, ow});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        double s = x.at(((size_t)ci * h + 2 * y) * w + 2 * xx) +
                   x.at(((size_t)ci * h + 2 * y) * w + 2 * xx + 1) +
                   x.at(((size_t)ci * h + 2 * y + 1) * w + 2 * xx) +
                   x.at(((size_t)ci * h + 2 * y + 1) * w + 2 * xx + 1);
        out.at(((size_t)ci * oh + y) * ow + xx) = 0.25 * s;
      }
  if (!x.tracked()) return out;
  return x.graph->track(std::move(out), "avgpool2", {x.node},
                        [c, h, w, oh, ow](const std::vector<double>& g,
                                          const std::vector<std::vector<double>*>& gin) {
                          for (int ci = 0; ci < c; ++ci)
                            for (int y = 0; y < oh; ++y)
                              for (int xx = 0; xx < ow; ++xx) {
                                double gv = 0.25 * g[((size_t)ci * oh + y) * ow + xx];
                                (*gin[0])[((size_t)ci * h + 2 * y) * w + 2 * xx] += gv;
                                (*gin[0])[((size_t)ci * h + 2 * y) * w + 2 * xx + 1] += gv;
                                (*gin[0])[((size_t)ci * h + 2 * y + 1) * w + 2 * xx] += gv;
                                (*gin[0])[((size_t)ci * h + 2 * y + 1) * w + 2 * xx + 1] += gv;
                              }
                        });
}

Tensor sum_chan(const Tensor& x) {
  require(x.shape.size() == 3, "sum_chan: x must be {C,H,W}");
  int c = x.shape[0];
  size_t plane = (size_t)x.shape[1] * x.shape[2];
  Tensor out = Tensor::zeros({(int)plane});
  for (int ci = 0; ci < c; ++ci)
    for (size_t p = 0; p < plane; ++p) out.at(p) += x.at((size_t)ci * plane + p);
  if (!x.tracked()) return out;
  return x.graph->track(std::move(out), "sum_chan", {x.node},
                        [c, plane](const std::vector<double>& g,
                                   const std::vector<std::vector<double>*>& gin) {
                          for (int ci = 0; ci < c; ++ci)
                            for (size_t p = 0; p < plane; ++p)
                              (*gin[0])[(size_t)ci * plane + p] += g[p];
                        });
}

}  // namespace mvrec
