#include "lapmamba/nn.hpp"

#include <cmath>

namespace lapmamba::nn {

Tensor init_uniform(Shape shape, std::int64_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::int64_t>(fan_in, 1)));
  return Tensor::uniform(std::move(shape), rng, -bound, bound);
}

Conv2dLayer::Conv2dLayer(ParamStore& ps, const std::string& prefix, int in_ch, int out_ch, int k,
                         Rng& rng, int stride_, int padding_, int groups_, int dilation_, bool bias,
                         ops::PadMode mode_) {
  if (in_ch % groups_ != 0 || out_ch % groups_ != 0) {
    throw ConfigError("conv layer " + prefix + ": groups " + std::to_string(groups_) +
                      " does not divide channels");
  }
  stride = stride_;
  padding = padding_ >= 0 ? padding_ : dilation_ * (k - 1) / 2;
  groups = groups_;
  dilation = dilation_;
  mode = mode_;
  const int ig = in_ch / groups_;
  const std::int64_t fan_in = static_cast<std::int64_t>(ig) * k * k;
  w = ps.add(prefix + ".w", init_uniform({out_ch, ig, k, k}, fan_in, rng));
  if (bias) b = ps.add(prefix + ".b", Tensor::zeros({out_ch}));
}

LinearLayer::LinearLayer(ParamStore& ps, const std::string& prefix, int d_in, int d_out, Rng& rng,
                         bool bias) {
  w = ps.add(prefix + ".w", init_uniform({d_out, d_in}, d_in, rng));
  if (bias) b = ps.add(prefix + ".b", Tensor::zeros({d_out}));
}

LayerNormLayer::LayerNormLayer(ParamStore& ps, const std::string& prefix, int channels) {
  gamma = ps.add(prefix + ".gamma", Tensor::full({channels}, 1.0));
  beta = ps.add(prefix + ".beta", Tensor::zeros({channels}));
}

}  // namespace lapmamba::nn
