#pragma once

#include <map>
#include <string>

#include "lapmamba/ops.hpp"
#include "lapmamba/rng.hpp"
#include "lapmamba/tensor.hpp"

namespace lapmamba::nn {

// Named registry of trainable tensors. Iteration order (lexicographic) is the
// canonical parameter order used by the optimizer and checkpoints.
struct ParamStore {
  std::map<std::string, Tensor> params;

  Tensor& add(const std::string& name, Tensor t) {
    if (params.count(name)) throw ContractError("parameter registered twice: " + name);
    t.set_requires_grad(true);
    auto [it, ok] = params.emplace(name, std::move(t));
    (void)ok;
    return it->second;
  }

  Tensor& at(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
  }

  std::int64_t total_elements() const {
    std::int64_t n = 0;
    for (const auto& [k, v] : params) n += v.numel();
    return n;
  }
};

// Fan-in scaled uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor init_uniform(Shape shape, std::int64_t fan_in, Rng& rng);

struct Conv2dLayer {
  Tensor w, b;
  int stride = 1, padding = 0, dilation = 1, groups = 1;
  ops::PadMode mode = ops::PadMode::Zeros;

  Conv2dLayer() = default;
  // padding = -1 means "same" (for odd kernels at stride 1 semantics).
  Conv2dLayer(ParamStore& ps, const std::string& prefix, int in_ch, int out_ch, int k, Rng& rng,
              int stride = 1, int padding = -1, int groups = 1, int dilation = 1, bool bias = true,
              ops::PadMode mode = ops::PadMode::Zeros);

  Tensor forward(const Tensor& x) const {
    return ops::conv2d(x, w, b, stride, padding, mode, dilation, groups);
  }
};

struct LinearLayer {
  Tensor w, b;

  LinearLayer() = default;
  LinearLayer(ParamStore& ps, const std::string& prefix, int d_in, int d_out, Rng& rng,
              bool bias = true);

  Tensor forward(const Tensor& x) const { return ops::linear(x, w, b); }
};

struct LayerNormLayer {
  Tensor gamma, beta;
  double eps = 1e-6;

  LayerNormLayer() = default;
  LayerNormLayer(ParamStore& ps, const std::string& prefix, int channels);

  Tensor forward(const Tensor& x) const {
    return ops::layer_norm_channels(x, gamma, beta, eps);
  }
};

}  // namespace lapmamba::nn
