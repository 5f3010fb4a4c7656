#include "lapmamba/objectives.hpp"

#include <algorithm>
#include <cmath>

namespace lapmamba::objectives {

using namespace ops;

Tensor l1_recon(const Tensor& pred, const Tensor& gt) {
  if (!pred.same_shape(gt)) {
    throw DimensionError("l1_recon: shape mismatch, " + shape_str(pred.shape()) + " vs " +
                         shape_str(gt.shape()));
  }
  return mean(abs_t(sub(pred, gt)));
}

Tensor freq_loss(const Tensor& pred, const Tensor& gt, int levels) {
  if (!pred.same_shape(gt)) {
    throw DimensionError("freq_loss: shape mismatch, " + shape_str(pred.shape()) + " vs " +
                         shape_str(gt.shape()));
  }
  if (levels < 1) throw ConfigError("freq_loss: levels must be >= 1");
  const auto h = pred.dim(pred.rank() - 2), w = pred.dim(pred.rank() - 1);
  if (std::min(h, w) < (std::int64_t{1} << levels)) {
    throw ConfigError("freq_loss: image " + std::to_string(h) + "x" + std::to_string(w) +
                      " too small for " + std::to_string(levels) + " levels");
  }
  const lftm::MultiLevel mp = lftm::lft_multi(pred, levels);
  const lftm::MultiLevel mg = lftm::lft_multi(gt, levels);

  Tensor acc = sum(abs_t(sub(mp.low, mg.low)));
  std::int64_t count = mp.low.numel();
  for (size_t i = 0; i < mp.highs.size(); ++i) {
    acc = add(acc, sum(abs_t(sub(mp.highs[i], mg.highs[i]))));
    count += mp.highs[i].numel();
  }
  return scale(acc, 1.0 / static_cast<double>(count));
}

LossReport total_loss(const Tensor& pred, const Tensor& gt, double lambda, int levels) {
  LossReport r;
  r.lambda = lambda;
  r.recon = l1_recon(pred, gt);
  r.freq = freq_loss(pred, gt, levels);
  r.total = add(r.recon, scale(r.freq, lambda));
  return r;
}

double psnr(const Tensor& pred, const Tensor& gt) {
  if (!pred.same_shape(gt)) {
    throw DimensionError("psnr: shape mismatch, " + shape_str(pred.shape()) + " vs " +
                         shape_str(gt.shape()));
  }
  const auto& a = pred.data();
  const auto& b = gt.data();
  double mse = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double x = std::clamp(a[i], 0.0, 1.0);
    const double y = std::clamp(b[i], 0.0, 1.0);
    mse += (x - y) * (x - y);
  }
  mse /= static_cast<double>(a.size());
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

namespace {

std::vector<double> gaussian_window(int n, double sigma) {
  std::vector<double> w(static_cast<size_t>(n));
  const double c = (n - 1) / 2.0;
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    w[static_cast<size_t>(i)] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
    s += w[static_cast<size_t>(i)];
  }
  for (auto& v : w) v /= s;
  return w;
}

// Separable valid-region filtering of an H x W plane with a 1-D window.
std::vector<double> filter_valid(const std::vector<double>& img, std::int64_t h, std::int64_t w,
                                 const std::vector<double>& win) {
  const auto k = static_cast<std::int64_t>(win.size());
  const auto oh = h - k + 1, ow = w - k + 1;
  std::vector<double> rows(static_cast<size_t>(h * ow), 0.0);
  for (std::int64_t i = 0; i < h; ++i) {
    for (std::int64_t j = 0; j < ow; ++j) {
      double acc = 0.0;
      for (std::int64_t t = 0; t < k; ++t)
        acc += win[static_cast<size_t>(t)] * img[static_cast<size_t>(i * w + j + t)];
      rows[static_cast<size_t>(i * ow + j)] = acc;
    }
  }
  std::vector<double> out(static_cast<size_t>(oh * ow), 0.0);
  for (std::int64_t i = 0; i < oh; ++i) {
    for (std::int64_t j = 0; j < ow; ++j) {
      double acc = 0.0;
      for (std::int64_t t = 0; t < k; ++t)
        acc += win[static_cast<size_t>(t)] * rows[static_cast<size_t>((i + t) * ow + j)];
      out[static_cast<size_t>(i * ow + j)] = acc;
    }
  }
  return out;
}

}  // namespace

double ssim(const Tensor& pred, const Tensor& gt) {
  if (!pred.same_shape(gt)) {
    throw DimensionError("ssim: shape mismatch, " + shape_str(pred.shape()) + " vs " +
                         shape_str(gt.shape()));
  }
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  constexpr double kC1 = 0.01 * 0.01;  // (K1 * L)^2, L = 1
  constexpr double kC2 = 0.03 * 0.03;
  const auto h = pred.dim(pred.rank() - 2), w = pred.dim(pred.rank() - 1);
  if (h < kWin || w < kWin) {
    throw DimensionError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) +
                         " smaller than the 11x11 window");
  }
  const auto plane = static_cast<size_t>(h * w);
  const auto nplanes = static_cast<size_t>(pred.numel()) / plane;
  const auto win = gaussian_window(kWin, kSigma);

  double total = 0.0;
  for (size_t p = 0; p < nplanes; ++p) {
    std::vector<double> x(pred.data().begin() + static_cast<std::ptrdiff_t>(p * plane),
                          pred.data().begin() + static_cast<std::ptrdiff_t>((p + 1) * plane));
    std::vector<double> y(gt.data().begin() + static_cast<std::ptrdiff_t>(p * plane),
                          gt.data().begin() + static_cast<std::ptrdiff_t>((p + 1) * plane));
    std::vector<double> xx(plane), yy(plane), xy(plane);
    for (size_t i = 0; i < plane; ++i) {
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mu_x = filter_valid(x, h, w, win);
    const auto mu_y = filter_valid(y, h, w, win);
    const auto m_xx = filter_valid(xx, h, w, win);
    const auto m_yy = filter_valid(yy, h, w, win);
    const auto m_xy = filter_valid(xy, h, w, win);
    double acc = 0.0;
    for (size_t i = 0; i < mu_x.size(); ++i) {
      const double sx = m_xx[i] - mu_x[i] * mu_x[i];
      const double sy = m_yy[i] - mu_y[i] * mu_y[i];
      const double sxy = m_xy[i] - mu_x[i] * mu_y[i];
      acc += (2.0 * mu_x[i] * mu_y[i] + kC1) * (2.0 * sxy + kC2) /
             ((mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + kC1) * (sx + sy + kC2));
    }
    total += acc / static_cast<double>(mu_x.size());
  }
  return total / static_cast<double>(nplanes);
}

}  // namespace lapmamba::objectives
