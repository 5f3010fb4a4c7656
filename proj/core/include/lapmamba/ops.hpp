#pragma once

#include <vector>

#include "lapmamba/tensor.hpp"

namespace lapmamba::ops {

enum class PadMode { Zeros, Reflect };

// ---- pointwise suite ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// a * s where s is a learnable single-element tensor; grads flow to both.
Tensor scale_by(const Tensor& a, const Tensor& s);
Tensor add_scalar(const Tensor& a, double s);
Tensor relu(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor exp_t(const Tensor& x);
Tensor abs_t(const Tensor& x);
// Inference-only range clamp; not differentiable, rejects active tapes.
Tensor clamp01(const Tensor& x);

// ---- reductions ----
Tensor sum(const Tensor& x);   // -> scalar
Tensor mean(const Tensor& x);  // -> scalar

// ---- shape ----
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor concat_channels(const std::vector<Tensor>& parts);          // NCHW dim 1
std::vector<Tensor> split_channels(const Tensor& x, int n_parts);  // even split
// (N,L,D): y[n,i,:] = x[n,perm[i],:]; perm must be a permutation of 0..L-1.
Tensor permute_sites(const Tensor& x, const std::vector<std::int64_t>& perm);
Tensor nchw_to_nlc(const Tensor& x);  // (N,C,H,W) -> (N,H*W,C), row-major sites
Tensor nlc_to_nchw(const Tensor& x, std::int64_t h, std::int64_t w);

// ---- linear algebra ----
// x: (..., Din), w: (Dout, Din), b: (Dout) or undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
// Normalizes over the channel dim per (n,h,w) location; gamma/beta: (C).
Tensor layer_norm_channels(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

// ---- convolution ----
Tensor pad2d(const Tensor& x, int top, int bottom, int left, int right, PadMode mode);
// x: NCHW, w: OIHW (I = in/groups), b: (O) or undefined. Cross-correlation.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1, int padding = 0,
              PadMode mode = PadMode::Zeros, int dilation = 1, int groups = 1);

// ---- resampling ----
Tensor downsample2(const Tensor& x);    // keep even rows/cols -> ceil(H/2) x ceil(W/2)
Tensor zero_upsample2(const Tensor& x); // zero-insertion to 2H x 2W
Tensor crop2d(const Tensor& x, std::int64_t h, std::int64_t w);  // top-left crop
Tensor avg_pool_patch(const Tensor& x, int p);  // ceil-mode p x p mean pooling
Tensor global_avg_pool(const Tensor& x);        // -> (N,C,1,1)
// out(i,j) = in(i/p, j/p); inverse of ceil-mode patch pooling's shape map.
Tensor upsample_patch(const Tensor& x, int p, std::int64_t out_h, std::int64_t out_w);
Tensor upsample_bilinear(const Tensor& x, std::int64_t out_h, std::int64_t out_w);
// x: NCHW, gains: (N,C,1,1) broadcast over spatial dims.
Tensor mul_channel_gains(const Tensor& x, const Tensor& gains);

// ---- selective scan ----
// u, delta: (N,L,D); b_seq, c_seq: (N,L,S); a: (D,S) negative entries;
// d_skip: (D). h_t = exp(delta_t * a) . h_{t-1} + delta_t * b_t * u_t,
// y_t = <c_t, h_t> + d_skip * u_t, h_0 = 0. delta must already be positive.
Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& b_seq,
                      const Tensor& c_seq, const Tensor& a, const Tensor& d_skip);

}  // namespace lapmamba::ops
