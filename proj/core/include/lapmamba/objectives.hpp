#pragma once

#include "lapmamba/lftm.hpp"
#include "lapmamba/ops.hpp"

namespace lapmamba::objectives {

// Composite loss report; total = recon + lambda * freq exactly as computed.
struct LossReport {
  Tensor recon;
  Tensor freq;
  Tensor total;
  double lambda = 0.1;
};

// Mean absolute error over all elements.
Tensor l1_recon(const Tensor& pred, const Tensor& gt);

// L1 distance between the multi-level frequency bands of pred and gt,
// normalized by the total band element count.
Tensor freq_loss(const Tensor& pred, const Tensor& gt, int levels = 3);

LossReport total_loss(const Tensor& pred, const Tensor& gt, double lambda = 0.1, int levels = 3);

// Peak L = 1; zero MSE returns the 99.0 dB sentinel. Inputs are clamped to
// [0,1] before comparison. Not differentiable.
double psnr(const Tensor& pred, const Tensor& gt);

// Mean local SSIM with the standard 11x11 Gaussian window (sigma 1.5),
// K1=0.01, K2=0.03, L=1, valid region only, averaged over channels.
double ssim(const Tensor& pred, const Tensor& gt);

}  // namespace lapmamba::objectives
