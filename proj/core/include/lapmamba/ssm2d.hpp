#pragma once

#include <array>

#include "lapmamba/nn.hpp"
#include "lapmamba/tensor.hpp"

namespace lapmamba::ssm2d {

enum class MergeMode { Sum, Mean };

// Fixed site orders for the four axial scan paths over an H x W grid, as
// permutations of row-major site indices:
//   0: left-to-right, row-major        1: reverse of 0
//   2: top-to-bottom, column-major     3: reverse of 2
std::array<std::vector<std::int64_t>, 4> direction_perms(std::int64_t h, std::int64_t w);
std::vector<std::int64_t> invert_perm(const std::vector<std::int64_t>& p);

struct DirectionalSequences {
  std::array<Tensor, 4> seq;  // each (N, H*W, C) in its scan order
  std::int64_t h = 0, w = 0;
};

DirectionalSequences expand_4dir(const Tensor& x_nchw);
// Inverse-permutes each sequence to the grid and combines (sum by default).
Tensor merge_4dir(const DirectionalSequences& seqs, MergeMode mode = MergeMode::Sum);

struct VssmConfig {
  int nstate = 8;
  MergeMode merge = MergeMode::Sum;
};

// Vision State Space Module:
//   X1  = SiLU(DWConv(Linear(x)))
//   X2  = LN(2D-SSM(X1))
//   out = Linear(X2 .* SiLU(Linear(x)))
// The 2D-SSM runs the selective scan along all four directions; B, C, delta
// are per-site linear projections of X1; A and the skip gain are shared
// across directions.
struct Vssm {
  VssmConfig cfg;
  int channels = 0;
  nn::LinearLayer in_proj, gate_proj, out_proj, b_proj, c_proj, dt_proj;
  nn::Conv2dLayer dwconv;
  nn::LayerNormLayer ln;
  Tensor a_log;   // (D, S); A = -exp(a_log)
  Tensor d_skip;  // (D)

  Vssm() = default;
  Vssm(nn::ParamStore& ps, const std::string& prefix, int channels, const VssmConfig& cfg,
       Rng& rng);

  Tensor forward(const Tensor& x) const;
};

}  // namespace lapmamba::ssm2d
