#pragma once

#include "lapmamba/nn.hpp"
#include "lapmamba/ssm2d.hpp"

namespace lapmamba::blocks {

// Squeeze-excite style channel attention: global average pool -> two 1x1
// convs with ReLU between -> sigmoid. Returns per-channel gains in (0,1);
// applying them is the caller's choice.
struct ChannelAttention {
  nn::Conv2dLayer reduce, expand;

  ChannelAttention() = default;
  ChannelAttention(nn::ParamStore& ps, const std::string& prefix, int channels, Rng& rng,
                   int reduction = 4);

  Tensor gains(const Tensor& x) const;
};

// Conv3 -> ReLU -> Conv3 with identity shortcut.
struct ResGroup {
  nn::Conv2dLayer c1, c2;

  ResGroup() = default;
  ResGroup(nn::ParamStore& ps, const std::string& prefix, int channels, Rng& rng);

  Tensor forward(const Tensor& x) const;
};

// Multi-Domain Fusion Module: convex per-pixel blend of the spatial skip
// branch F_s and the frequency branch F_l through a learned weight map W.
struct Mdfm {
  nn::Conv2dLayer conv_s, conv_f, fuse_in, fuse_out;
  ResGroup resg;
  ChannelAttention ca;

  Mdfm() = default;
  Mdfm(nn::ParamStore& ps, const std::string& prefix, int channels, Rng& rng);

  // W in [0,1] elementwise (sigmoid-terminated).
  Tensor weight_map(const Tensor& f_s, const Tensor& f_l) const;
  // F_l .* W + F_s .* (1 - W). force_w_one / force_w_zero pin W to the
  // endpoints (ablation/test hooks), collapsing the blend to F_l or F_s.
  Tensor forward(const Tensor& f_s, const Tensor& f_l, bool force_w_one = false,
                 bool force_w_zero = false) const;
};

// Gated feed-forward: LN -> 1x1 expand x2 -> DWConv -> simple gate (split
// halves, multiply) -> DWConv.
struct Gffn {
  nn::LayerNormLayer ln;
  nn::Conv2dLayer pw, dw_expand, dw_out;

  Gffn() = default;
  Gffn(nn::ParamStore& ps, const std::string& prefix, int channels, Rng& rng);

  Tensor forward(const Tensor& x) const;
};

// Low-frequency Structure Restoration Block:
//   Z   = VSSM(LN(x)) + beta * x
//   out = GFFN(Z) + gamma * Z
struct Lsrb {
  nn::LayerNormLayer ln;
  ssm2d::Vssm vssm;
  Gffn gffn;
  Tensor beta, gamma;  // learnable scalars, start at 1

  Lsrb() = default;
  Lsrb(nn::ParamStore& ps, const std::string& prefix, int channels, const ssm2d::VssmConfig& cfg,
       Rng& rng);

  Tensor forward(const Tensor& x) const;
};

// Patch-pooled attention gate applied to a learned projection of the input.
// Pooling is ceil-mode so any spatial size works; patch=1 degenerates to
// per-pixel channel gating.
struct PixelAttention {
  int patch = 2;
  nn::Conv2dLayer proj, a1, a2;

  PixelAttention() = default;
  PixelAttention(nn::ParamStore& ps, const std::string& prefix, int channels, int patch, Rng& rng);

  Tensor forward(const Tensor& f) const;
};

// High-frequency Detail Enhancement Block. Attention weights come from the
// restored low band (bilinearly upsampled to the high band's resolution when
// it arrives at half size):
//   W   = sigmoid(ReLU(DConv(F_l*)) + PA4(F_l*) + PA2(F_l*))
//   out = GFFN(Conv(ReLU(DConv(W .* F_h))))
struct Hdeb {
  nn::Conv2dLayer dconv_low, dconv_high, conv;
  PixelAttention pa2, pa4;
  Gffn gffn;

  Hdeb() = default;
  Hdeb(nn::ParamStore& ps, const std::string& prefix, int channels, Rng& rng,
       bool dilated = false);

  Tensor attention(const Tensor& f_low) const;
  Tensor forward(const Tensor& f_low, const Tensor& f_high) const;
};

}  // namespace lapmamba::blocks
