#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lapmamba/blocks.hpp"
#include "lapmamba/lftm.hpp"

namespace lapmamba::network {

struct NetworkConfig {
  // Per-stage block counts across the 7 stages (3 encoder, middle, 3 decoder).
  std::vector<int> lsrb_counts{1, 1, 2, 4, 2, 1, 1};
  std::vector<int> hdeb_counts{1, 1, 1, 2, 1, 1, 1};
  // Channel widths per stage; decoder widths must mirror the encoder.
  std::vector<int> channels{16, 32, 64, 128, 64, 32, 16};
  int in_channels = 3;
  int nstate = 8;
  ssm2d::MergeMode merge = ssm2d::MergeMode::Sum;
  bool dilated_dconv = false;

  // Test/ablation hooks.
  bool stub_blocks = false;   // replace LSRB/HDEB stacks with identity
  bool mdfm_w_one = false;    // force the fusion weight map to 1 (skip MDFM)
  bool identity_io = false;   // drop stem/head/transition convs; all widths
                              // must equal in_channels

  void validate() const;  // throws ConfigError
};

// Spatial divisibility the forward pass requires (3 encoder splits + one in
// the middle stage).
constexpr std::int64_t kSizeMultiple = 16;

struct EncoderStage {
  nn::Conv2dLayer spatial_down;  // 3x3 stride-2 branch producing F_s
  blocks::Mdfm mdfm;
  std::vector<blocks::Lsrb> lsrbs;
  std::vector<blocks::Hdeb> hdebs;
  nn::Conv2dLayer transition;  // 1x1 widening onto the next stage
};

struct MiddleStage {
  std::vector<blocks::Lsrb> lsrbs;
  std::vector<blocks::Hdeb> hdebs;
};

struct DecoderStage {
  nn::Conv2dLayer transition;  // 1x1 narrowing from the previous stage
  std::vector<blocks::Lsrb> lsrbs;
  std::vector<blocks::Hdeb> hdebs;
};

struct Model {
  NetworkConfig cfg;
  nn::ParamStore params;
  nn::Conv2dLayer stem, head;
  std::array<EncoderStage, 3> enc;
  MiddleStage mid;
  std::array<DecoderStage, 3> dec;

  // Deterministic parameter initialization from the seed.
  static Model build(const NetworkConfig& cfg, std::uint64_t seed);

  // x: (N, in_channels, H, W) with H, W divisible by kSizeMultiple, values in
  // [0,1]. Output has the input's shape; clamped to [0,1] when !training.
  Tensor forward(const Tensor& x, bool training = false) const;

  std::int64_t parameter_count() const { return params.total_elements(); }
  std::string describe(std::int64_t h = 64, std::int64_t w = 64) const;
};

struct FlopReport {
  std::int64_t conv_macs = 0;
  std::int64_t linear_macs = 0;
  std::int64_t scan_macs = 0;           // scans as configured (low bands)
  std::int64_t scan_macs_full_res = 0;  // hypothetical full-resolution scans
  std::int64_t high_branch_macs = 0;    // HDEB path share of conv_macs
  std::int64_t low_branch_macs = 0;     // LSRB/MDFM path share

  std::int64_t total() const { return conv_macs + linear_macs + scan_macs; }
  std::string to_string() const;
};

// Analytic multiply-accumulate counts for one forward pass at H x W.
FlopReport flop_estimate(const NetworkConfig& cfg, std::int64_t h, std::int64_t w);

}  // namespace lapmamba::network
