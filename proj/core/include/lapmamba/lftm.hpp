#pragma once

#include <vector>

#include "lapmamba/tensor.hpp"

namespace lapmamba::lftm {

// One pyramid level: a half-resolution low band plus the full-resolution
// residual needed to reconstruct the input exactly.
struct FreqPair {
  Tensor low;   // (N,C,ceil(H/2),ceil(W/2))
  Tensor high;  // (N,C,H,W)
  std::int64_t orig_h = 0;
  std::int64_t orig_w = 0;
};

// low = downsample2(blur(x)); high = x - upsample2(low). The residual makes
// the split lossless by construction. Blur is the separable 5-tap binomial
// [1,4,6,4,1]/16 with reflect borders.
FreqPair decompose(const Tensor& x);

// upsample2(low) + high, cropped to the recorded original size.
Tensor reconstruct(const FreqPair& fp);

// Blurred zero-insertion expand of a low band back to (h, w).
Tensor expand_low(const Tensor& low, std::int64_t h, std::int64_t w);

struct MultiLevel {
  std::vector<Tensor> highs;  // level 0 is full resolution
  Tensor low;                 // final low band
  std::vector<std::pair<std::int64_t, std::int64_t>> sizes;  // per-level (H,W)
};

MultiLevel lft_multi(const Tensor& x, int levels);
Tensor reconstruct_multi(const MultiLevel& ml);

}  // namespace lapmamba::lftm
