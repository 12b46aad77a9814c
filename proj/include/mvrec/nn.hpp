#pragma once

#include "mvrec/tensor.hpp"

namespace mvrec {

// Per-last-axis normalization to zero mean / unit variance (eps inside the
// denominator), then affine. x is {rows, d}; gain/bias are {d}.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// x {rows, in} * w {in, out} + b {out}
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

struct AttentionWeights {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

// Scaled dot-product attention, heads split along the embedding axis and
// concatenated before the output projection. Self-attention is the special
// case q_tokens == kv_tokens.
Tensor mh_attention(const Tensor& q_tokens, const Tensor& kv_tokens, int n_heads,
                    const AttentionWeights& w);

// Stride-1 cross-correlation with zero padding (k-1)/2; spatial size is
// preserved. x {Cin,H,W}, kernels {Cout,Cin,k,k}.
Tensor conv2d_s1(const Tensor& x, const Tensor& kernels);
Tensor add_chan_bias(const Tensor& x, const Tensor& b);  // {C,H,W} + {C}

// Non-overlapping p x p patches flattened to rows: {C,H,W} -> {T, C*p*p},
// T = (H/p)*(W/p). Patch vector layout is channel-major, then dy, dx.
Tensor extract_patches(const Tensor& x, int p);

// {(c*p*p), h, w} -> {c, h*p, w*p}; exact rearrangement, bijective.
Tensor pixel_shuffle(const Tensor& x, int p);
// Inverse rearrangement: {c, h*p, w*p} -> {(c*p*p), h, w}.
Tensor pixel_unshuffle(const Tensor& x, int p);

// Token matrix {h*w, C} laid out row-major over the grid -> {C, h, w}.
Tensor tokens_to_chw(const Tensor& t, int h, int w);
// Inverse: {C, h, w} -> {h*w, C}.
Tensor chw_to_tokens(const Tensor& x);

Tensor concat_chan(const Tensor& a, const Tensor& b);      // {Ca,H,W}+{Cb,H,W}
Tensor slice_chan(const Tensor& x, int c0, int c1);        // {C,H,W} -> {c1-c0,H,W}
Tensor avgpool2(const Tensor& x);                          // {C,H,W} -> {C,H/2,W/2}
Tensor sum_chan(const Tensor& x);                          // {C,H,W} -> {H*W}

}  // namespace mvrec
