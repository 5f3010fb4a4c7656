#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lapmamba/rng.hpp"
#include "lapmamba/tensor.hpp"

namespace lapmamba::hazegen {

// Atmospheric scattering parameters: I = J * t + A * (1 - t), t = exp(-beta*d).
struct HazeParams {
  double beta = 1.0;  // scattering coefficient, sampled from [0.6, 2.5]
  double a = 0.9;     // atmospheric light, sampled from [0.7, 1.0]
  Tensor depth;       // (1,1,H,W) in [0,1]
  std::uint64_t seed = 0;

  // Enforces the sampling ranges above (used for datasets/manifests).
  void validate() const;
};

// Deterministic piecewise-smooth synthetic scene: colored gradients, a few
// geometric shapes, mild texture; rescaled so values span roughly
// [0.02, 0.98]. Returns (1,3,H,W).
Tensor generate_clear(std::uint64_t seed, std::int64_t h, std::int64_t w);

// Smooth synthetic depth field in [0,1], (1,1,H,W).
Tensor generate_depth(Rng& rng, std::int64_t h, std::int64_t w);

// Samples beta/A uniformly from the stated ranges plus a fresh depth field.
HazeParams sample_params(Rng& rng, std::int64_t h, std::int64_t w);

// Applies the scattering model. Requires beta >= 0 (beta outside the
// sampling range is allowed for testing), A in [0,1], and a matching depth
// map; output is guaranteed to stay in [0,1] when J is.
Tensor synthesize_haze(const Tensor& j, const HazeParams& p);

struct Pair {
  Tensor clear;  // ground truth J
  Tensor hazy;   // degraded input I
  HazeParams params;
};

Pair make_pair(std::uint64_t seed, std::int64_t h, std::int64_t w);

// Identical geometric transform (rotation by a multiple of 90 degrees,
// horizontal/vertical flips, random crop) applied to both images.
Pair augment(const Pair& p, std::uint64_t seed, std::int64_t crop_h, std::int64_t crop_w);

// Dataset layout: <root>/clear/NNNN.png, <root>/hazy/NNNN.png, manifest.txt
// listing seed, beta, A per pair.
void write_dataset(const std::string& root, int count, std::int64_t size, std::uint64_t seed);
std::vector<Pair> load_dataset(const std::string& root);

// One-level frequency variance per image (per channel, averaged), the Fig.-3
// style color-variance analysis.
struct VarianceRow {
  double var_low = 0.0;
  double var_high = 0.0;
};
struct VarianceReport {
  std::vector<VarianceRow> rows;
  VarianceRow mean;

  std::string to_csv() const;
  std::string summary() const;
};
VarianceReport variance_analysis(const std::vector<Tensor>& corpus, int levels = 1);

}  // namespace lapmamba::hazegen
