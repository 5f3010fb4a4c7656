#include <doctest.h>

#include <cmath>
#include <vector>

#include "lapmamba/gradcheck.hpp"
#include "lapmamba/objectives.hpp"

using namespace lapmamba;

namespace {

// Second, deliberately independent SSIM implementation: direct 2-D window
// sums (no separable pass), same standard constants.
double ssim_ref(const Tensor& pred, const Tensor& gt) {
  const int win = 11;
  const double sigma = 1.5, c1 = 1e-4, c2 = 9e-4;
  std::vector<double> k(static_cast<size_t>(win * win));
  double ksum = 0.0;
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) {
      const double di = i - 5.0, dj = j - 5.0;
      k[static_cast<size_t>(i * win + j)] = std::exp(-(di * di + dj * dj) / (2 * sigma * sigma));
      ksum += k[static_cast<size_t>(i * win + j)];
    }
  for (auto& v : k) v /= ksum;

  const auto h = pred.dim(pred.rank() - 2), w = pred.dim(pred.rank() - 1);
  const auto plane = static_cast<size_t>(h * w);
  const auto nplanes = static_cast<size_t>(pred.numel()) / plane;
  double total = 0.0;
  for (size_t p = 0; p < nplanes; ++p) {
    const double* x = pred.data().data() + p * plane;
    const double* y = gt.data().data() + p * plane;
    double acc = 0.0;
    std::int64_t count = 0;
    for (std::int64_t oy = 0; oy + win <= h; ++oy)
      for (std::int64_t ox = 0; ox + win <= w; ++ox) {
        double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
        for (int i = 0; i < win; ++i)
          for (int j = 0; j < win; ++j) {
            const double kv = k[static_cast<size_t>(i * win + j)];
            const double xv = x[(oy + i) * w + ox + j];
            const double yv = y[(oy + i) * w + ox + j];
            mx += kv * xv;
            my += kv * yv;
            mxx += kv * xv * xv;
            myy += kv * yv * yv;
            mxy += kv * xv * yv;
          }
        const double sx = mxx - mx * mx, sy = myy - my * my, sxy = mxy - mx * my;
        acc += (2 * mx * my + c1) * (2 * sxy + c2) / ((mx * mx + my * my + c1) * (sx + sy + c2));
        ++count;
      }
    total += acc / static_cast<double>(count);
  }
  return total / static_cast<double>(nplanes);
}

}  // namespace

TEST_CASE("l1_recon basics and the loop oracle") {
  Rng rng(1);
  Tensor a = Tensor::uniform({1, 3, 5, 5}, rng, 0.0, 1.0);
  CHECK(objectives::l1_recon(a, a).item() == 0.0);
  const Tensor b = ops::add_scalar(a, 0.5);
  CHECK(objectives::l1_recon(b, a).item() == doctest::Approx(0.5).epsilon(1e-12));

  Tensor c = Tensor::uniform({2, 3, 4, 4}, rng, -1.0, 1.0);
  Tensor d = Tensor::uniform({2, 3, 4, 4}, rng, -1.0, 1.0);
  double oracle = 0.0;
  for (size_t i = 0; i < c.data().size(); ++i) oracle += std::abs(c.data()[i] - d.data()[i]);
  oracle /= static_cast<double>(c.numel());
  CHECK(std::abs(objectives::l1_recon(c, d).item() - oracle) <= 1e-12);
  CHECK_THROWS_AS(objectives::l1_recon(c, a), DimensionError);
}

TEST_CASE("freq_loss: zero at identity, matches the compositional oracle") {
  Rng rng(2);
  Tensor a = Tensor::uniform({1, 3, 24, 24}, rng, 0.0, 1.0);
  CHECK(objectives::freq_loss(a, a, 3).item() == 0.0);

  Tensor b = Tensor::uniform({1, 3, 24, 24}, rng, 0.0, 1.0);
  const lftm::MultiLevel ma = lftm::lft_multi(a, 2);
  const lftm::MultiLevel mb = lftm::lft_multi(b, 2);
  double acc = 0.0;
  std::int64_t count = ma.low.numel();
  for (std::int64_t i = 0; i < ma.low.numel(); ++i)
    acc += std::abs(ma.low.data()[static_cast<size_t>(i)] - mb.low.data()[static_cast<size_t>(i)]);
  for (size_t lvl = 0; lvl < ma.highs.size(); ++lvl) {
    for (std::int64_t i = 0; i < ma.highs[lvl].numel(); ++i)
      acc += std::abs(ma.highs[lvl].data()[static_cast<size_t>(i)] -
                      mb.highs[lvl].data()[static_cast<size_t>(i)]);
    count += ma.highs[lvl].numel();
  }
  CHECK(std::abs(objectives::freq_loss(a, b, 2).item() - acc / static_cast<double>(count)) <= 1e-10);
  CHECK_THROWS_AS(objectives::freq_loss(a, b, 0), ConfigError);
  CHECK_THROWS_AS(objectives::freq_loss(a, b, 6), ConfigError);
}

TEST_CASE("freq_loss of a constant offset equals the transformed-constant L1") {
  Rng rng(3);
  Tensor x = Tensor::uniform({1, 1, 16, 16}, rng, 0.2, 0.8);
  const double c = 0.25;
  const Tensor xc = ops::add_scalar(x, c);
  // By linearity the band difference is the transform of the constant image:
  // residual bands vanish and the low band carries c everywhere.
  const double got = objectives::freq_loss(xc, x, 2).item();
  const Tensor const_img = Tensor::full({1, 1, 16, 16}, c);
  const lftm::MultiLevel ml = lftm::lft_multi(const_img, 2);
  double acc = 0.0;
  std::int64_t count = ml.low.numel();
  for (double v : ml.low.data()) acc += std::abs(v);
  for (const auto& hb : ml.highs) {
    for (double v : hb.data()) acc += std::abs(v);
    count += hb.numel();
  }
  CHECK(got == doctest::Approx(acc / static_cast<double>(count)).epsilon(1e-9));
}

TEST_CASE("total_loss combines components with lambda = 0.1") {
  Rng rng(4);
  Tensor a = Tensor::uniform({1, 3, 16, 16}, rng, 0.0, 1.0);
  const objectives::LossReport zero = objectives::total_loss(a, a);
  CHECK(zero.recon.item() == 0.0);
  CHECK(zero.freq.item() == 0.0);
  CHECK(zero.total.item() == 0.0);

  Tensor b = Tensor::uniform({1, 3, 16, 16}, rng, 0.0, 1.0);
  const objectives::LossReport r = objectives::total_loss(a, b);
  CHECK(r.lambda == 0.1);
  CHECK(r.total.item() == r.recon.item() + 0.1 * r.freq.item());
  // The documented reference point: recon 1.0, freq 2.0 -> total 1.2.
  CHECK(1.0 + 0.1 * 2.0 == 1.2);
}

TEST_CASE("total_loss gradient matches the lambda-weighted finite difference") {
  Rng rng(5);
  Tensor pred = Tensor::uniform({1, 3, 8, 8}, rng, 0.3, 0.7);
  Tensor gt = Tensor::zeros({1, 3, 8, 8});
  for (size_t i = 0; i < gt.data().size(); ++i) {
    gt.data()[i] = pred.data()[i] + (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 0.3);
  }
  const double err = gradcheck::max_rel_error(
      [&] { return objectives::total_loss(pred, gt, 0.1, 2).total; }, {pred});
  CHECK(err < 1e-4);
}

TEST_CASE("psnr reference points") {
  Tensor a = Tensor::full({1, 3, 8, 8}, 0.5);
  CHECK(objectives::psnr(a, a) == 99.0);
  const Tensor b = ops::add_scalar(a, 0.1);
  CHECK(std::abs(objectives::psnr(b, a) - 20.0) <= 1e-9);
  const Tensor c = Tensor::full({1, 3, 8, 8}, 1.0);
  const Tensor zero = Tensor::zeros({1, 3, 8, 8});
  const Tensor half_err = Tensor::full({1, 3, 8, 8}, 0.5);
  CHECK(objectives::psnr(half_err, zero) == doctest::Approx(10.0 * std::log10(4.0)).epsilon(1e-9));
  (void)c;
}

TEST_CASE("psnr is monotone decreasing in MSE") {
  Tensor gt = Tensor::full({1, 1, 8, 8}, 0.5);
  double prev = 1e9;
  for (double e : {0.05, 0.1, 0.2, 0.4}) {
    const double p = objectives::psnr(ops::add_scalar(gt, e), gt);
    CHECK(p < prev);
    prev = p;
  }
}

TEST_CASE("ssim: identity, anti-correlation, and the independent reference") {
  Rng rng(6);
  Tensor x = Tensor::uniform({1, 1, 16, 16}, rng, 0.0, 1.0);
  CHECK(std::abs(objectives::ssim(x, x) - 1.0) <= 1e-9);

  // Binary checkerboard against its inverse: strongly negative structure.
  Tensor cb = Tensor::zeros({1, 1, 16, 16});
  for (std::int64_t i = 0; i < 16; ++i)
    for (std::int64_t j = 0; j < 16; ++j)
      cb.data()[static_cast<size_t>(i * 16 + j)] = static_cast<double>((i + j) % 2);
  Tensor inv = Tensor::zeros({1, 1, 16, 16});
  for (size_t i = 0; i < inv.data().size(); ++i) inv.data()[i] = 1.0 - cb.data()[i];
  CHECK(objectives::ssim(cb, inv) < 0.0);

  for (int rep = 0; rep < 20; ++rep) {
    Tensor a = Tensor::uniform({1, 3, 14, 17}, rng, 0.0, 1.0);
    Tensor b = Tensor::uniform({1, 3, 14, 17}, rng, 0.0, 1.0);
    CHECK(std::abs(objectives::ssim(a, b) - ssim_ref(a, b)) <= 1e-6);
  }
  CHECK_THROWS_AS(objectives::ssim(Tensor::zeros({1, 1, 8, 8}), Tensor::zeros({1, 1, 8, 8})),
                  DimensionError);
}
