#include "lapmamba/blocks.hpp"

namespace lapmamba::blocks {

using namespace ops;

ChannelAttention::ChannelAttention(nn::ParamStore& ps, const std::string& prefix, int channels,
                                   Rng& rng, int reduction) {
  const int mid = std::max(1, channels / reduction);
  reduce = nn::Conv2dLayer(ps, prefix + ".reduce", channels, mid, 1, rng);
  expand = nn::Conv2dLayer(ps, prefix + ".expand", mid, channels, 1, rng);
}

Tensor ChannelAttention::gains(const Tensor& x) const {
  return sigmoid(expand.forward(relu(reduce.forward(global_avg_pool(x)))));
}

ResGroup::ResGroup(nn::ParamStore& ps, const std::string& prefix, int channels, Rng& rng) {
  c1 = nn::Conv2dLayer(ps, prefix + ".c1", channels, channels, 3, rng);
  c2 = nn::Conv2dLayer(ps, prefix + ".c2", channels, channels, 3, rng);
}

Tensor ResGroup::forward(const Tensor& x) const {
  return add(x, c2.forward(relu(c1.forward(x))));
}

Mdfm::Mdfm(nn::ParamStore& ps, const std::string& prefix, int channels, Rng& rng) {
  conv_s = nn::Conv2dLayer(ps, prefix + ".conv_s", channels, channels, 3, rng);
  conv_f = nn::Conv2dLayer(ps, prefix + ".conv_f", channels, channels, 5, rng);
  fuse_in = nn::Conv2dLayer(ps, prefix + ".fuse_in", 2 * channels, channels, 1, rng);
  fuse_out = nn::Conv2dLayer(ps, prefix + ".fuse_out", channels, channels, 1, rng);
  resg = ResGroup(ps, prefix + ".resg", channels, rng);
  ca = ChannelAttention(ps, prefix + ".ca", channels, rng);
}

Tensor Mdfm::weight_map(const Tensor& f_s, const Tensor& f_l) const {
  const Tensor y1 = relu(conv_s.forward(f_s));
  const Tensor y2 = relu(conv_f.forward(f_l));
  const Tensor z = fuse_out.forward(resg.forward(fuse_in.forward(concat_channels({y1, y2}))));
  return sigmoid(mul_channel_gains(z, ca.gains(z)));
}

Tensor Mdfm::forward(const Tensor& f_s, const Tensor& f_l, bool force_w_one,
                     bool force_w_zero) const {
  if (!f_s.same_shape(f_l)) {
    throw DimensionError("mdfm: branch shapes differ, " + shape_str(f_s.shape()) + " vs " +
                         shape_str(f_l.shape()));
  }
  if (force_w_one && force_w_zero) throw ContractError("mdfm: W pinned to both endpoints");
  if (force_w_one) return f_l;
  if (force_w_zero) return f_s;
  const Tensor w = weight_map(f_s, f_l);
  // F_l .* W + F_s .* (1 - W)
  return add(mul(f_l, w), sub(f_s, mul(f_s, w)));
}

Gffn::Gffn(nn::ParamStore& ps, const std::string& prefix, int channels, Rng& rng) {
  if (channels < 1) throw ConfigError("gffn: channel count must be positive");
  ln = nn::LayerNormLayer(ps, prefix + ".ln", channels);
  pw = nn::Conv2dLayer(ps, prefix + ".pw", channels, 2 * channels, 1, rng);
  dw_expand = nn::Conv2dLayer(ps, prefix + ".dw_expand", 2 * channels, 2 * channels, 3, rng, 1, -1,
                              2 * channels);
  dw_out = nn::Conv2dLayer(ps, prefix + ".dw_out", channels, channels, 3, rng, 1, -1, channels);
}

Tensor Gffn::forward(const Tensor& x) const {
  Tensor t = dw_expand.forward(pw.forward(ln.forward(x)));
  auto halves = split_channels(t, 2);  // simple gate
  return dw_out.forward(mul(halves[0], halves[1]));
}

Lsrb::Lsrb(nn::ParamStore& ps, const std::string& prefix, int channels,
           const ssm2d::VssmConfig& cfg, Rng& rng) {
  ln = nn::LayerNormLayer(ps, prefix + ".ln", channels);
  vssm = ssm2d::Vssm(ps, prefix + ".vssm", channels, cfg, rng);
  gffn = Gffn(ps, prefix + ".gffn", channels, rng);
  beta = ps.add(prefix + ".beta", Tensor::scalar(1.0));
  gamma = ps.add(prefix + ".gamma", Tensor::scalar(1.0));
}

Tensor Lsrb::forward(const Tensor& x) const {
  const Tensor z = add(vssm.forward(ln.forward(x)), scale_by(x, beta));
  return add(gffn.forward(z), scale_by(z, gamma));
}

PixelAttention::PixelAttention(nn::ParamStore& ps, const std::string& prefix, int channels,
                               int patch_, Rng& rng)
    : patch(patch_) {
  if (patch < 1) throw ConfigError("pixel_attention: patch must be >= 1");
  proj = nn::Conv2dLayer(ps, prefix + ".proj", channels, channels, 1, rng);
  a1 = nn::Conv2dLayer(ps, prefix + ".a1", channels, channels, 1, rng);
  a2 = nn::Conv2dLayer(ps, prefix + ".a2", channels, channels, 1, rng);
}

Tensor PixelAttention::forward(const Tensor& f) const {
  const Tensor pooled = avg_pool_patch(f, patch);
  const Tensor att = sigmoid(a2.forward(relu(a1.forward(pooled))));
  const Tensor up = upsample_patch(att, patch, f.dim(2), f.dim(3));
  return mul(proj.forward(f), up);
}

Hdeb::Hdeb(nn::ParamStore& ps, const std::string& prefix, int channels, Rng& rng, bool dilated) {
  const int dil = dilated ? 2 : 1;
  dconv_low = nn::Conv2dLayer(ps, prefix + ".dconv_low", channels, channels, 3, rng, 1, -1,
                              channels, dil);
  dconv_high = nn::Conv2dLayer(ps, prefix + ".dconv_high", channels, channels, 3, rng, 1, -1,
                               channels, dil);
  conv = nn::Conv2dLayer(ps, prefix + ".conv", channels, channels, 3, rng);
  pa2 = PixelAttention(ps, prefix + ".pa2", channels, 2, rng);
  pa4 = PixelAttention(ps, prefix + ".pa4", channels, 4, rng);
  gffn = Gffn(ps, prefix + ".gffn", channels, rng);
}

Tensor Hdeb::attention(const Tensor& f_low) const {
  return sigmoid(
      add(add(relu(dconv_low.forward(f_low)), pa4.forward(f_low)), pa2.forward(f_low)));
}

Tensor Hdeb::forward(const Tensor& f_low, const Tensor& f_high) const {
  Tensor low = f_low;
  if (low.dim(2) != f_high.dim(2) || low.dim(3) != f_high.dim(3)) {
    low = upsample_bilinear(low, f_high.dim(2), f_high.dim(3));
  }
  if (!low.same_shape(f_high)) {
    throw DimensionError("hdeb: guidance " + shape_str(low.shape()) +
                         " incompatible with high band " + shape_str(f_high.shape()));
  }
  const Tensor w = attention(low);
  return gffn.forward(conv.forward(relu(dconv_high.forward(mul(w, f_high)))));
}

}  // namespace lapmamba::blocks
