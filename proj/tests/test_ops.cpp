#include <doctest.h>

#include <cmath>
#include <vector>

#include "lapmamba/gradcheck.hpp"
#include "lapmamba/ops.hpp"

using namespace lapmamba;

namespace {

// Independent direct-convolution reference: plain nested loops, zero padding.
Tensor conv_ref(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad,
                int dilation, int groups) {
  const auto n = x.dim(0), ci = x.dim(1), h = x.dim(2), ww = x.dim(3);
  const auto co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const auto oh = (h + 2 * pad - dilation * (kh - 1) - 1) / stride + 1;
  const auto ow = (ww + 2 * pad - dilation * (kw - 1) - 1) / stride + 1;
  const auto ci_g = ci / groups, co_g = co / groups;
  Tensor out = Tensor::zeros({n, co, oh, ow});
  for (std::int64_t ni = 0; ni < n; ++ni)
    for (std::int64_t oc = 0; oc < co; ++oc)
      for (std::int64_t oy = 0; oy < oh; ++oy)
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          double acc = b.defined() ? b.data()[static_cast<size_t>(oc)] : 0.0;
          const auto g = oc / co_g;
          for (std::int64_t ic = 0; ic < ci_g; ++ic)
            for (std::int64_t ky = 0; ky < kh; ++ky)
              for (std::int64_t kx = 0; kx < kw; ++kx) {
                const auto iy = oy * stride - pad + ky * dilation;
                const auto ix = ox * stride - pad + kx * dilation;
                if (iy < 0 || iy >= h || ix < 0 || ix >= ww) continue;
                acc += x.data()[static_cast<size_t>(((ni * ci + g * ci_g + ic) * h + iy) * ww + ix)] *
                       w.data()[static_cast<size_t>(((oc * ci_g + ic) * kh + ky) * kw + kx)];
              }
          out.data()[static_cast<size_t>(((ni * co + oc) * oh + oy) * ow + ox)] = acc;
        }
  return out;
}

// Explicit per-step scan recurrence, one (n, d) lane at a time.
Tensor scan_ref(const Tensor& u, const Tensor& delta, const Tensor& bs, const Tensor& cs,
                const Tensor& a, const Tensor& dk) {
  const auto n = u.dim(0), l = u.dim(1), d = u.dim(2), s = bs.dim(2);
  Tensor y = Tensor::zeros({n, l, d});
  for (std::int64_t ni = 0; ni < n; ++ni)
    for (std::int64_t di = 0; di < d; ++di) {
      std::vector<double> h(static_cast<size_t>(s), 0.0);
      for (std::int64_t t = 0; t < l; ++t) {
        const double ut = u.data()[static_cast<size_t>((ni * l + t) * d + di)];
        const double dt = delta.data()[static_cast<size_t>((ni * l + t) * d + di)];
        double out = dk.data()[static_cast<size_t>(di)] * ut;
        for (std::int64_t si = 0; si < s; ++si) {
          const double ai = a.data()[static_cast<size_t>(di * s + si)];
          const double bt = bs.data()[static_cast<size_t>((ni * l + t) * s + si)];
          const double ct = cs.data()[static_cast<size_t>((ni * l + t) * s + si)];
          h[static_cast<size_t>(si)] = std::exp(dt * ai) * h[static_cast<size_t>(si)] + dt * bt * ut;
          out += ct * h[static_cast<size_t>(si)];
        }
        y.data()[static_cast<size_t>((ni * l + t) * d + di)] = out;
      }
    }
  return y;
}

}  // namespace

TEST_CASE("conv2d matches the nested-loop reference across configurations") {
  Rng rng(11);
  struct Case {
    std::int64_t n, ci, h, w, co;
    int k, stride, pad, dilation, groups;
  };
  const Case cases[] = {
      {1, 3, 7, 8, 4, 3, 1, 1, 1, 1}, {2, 4, 6, 6, 6, 3, 2, 1, 1, 1},
      {1, 4, 9, 7, 4, 3, 1, 2, 2, 1}, {1, 6, 8, 8, 6, 3, 1, 1, 1, 6},
      {1, 4, 5, 5, 2, 1, 1, 0, 1, 2}, {1, 3, 10, 9, 5, 5, 2, 2, 1, 1},
  };
  for (const auto& c : cases) {
    Tensor x = Tensor::uniform({c.n, c.ci, c.h, c.w}, rng, -1.0, 1.0);
    Tensor w = Tensor::uniform({c.co, c.ci / c.groups, c.k, c.k}, rng, -1.0, 1.0);
    Tensor b = Tensor::uniform({c.co}, rng, -0.5, 0.5);
    const Tensor got = ops::conv2d(x, w, b, c.stride, c.pad, ops::PadMode::Zeros, c.dilation, c.groups);
    const Tensor want = conv_ref(x, w, b, c.stride, c.pad, c.dilation, c.groups);
    REQUIRE(got.same_shape(want));
    for (std::int64_t i = 0; i < got.numel(); ++i) {
      CHECK(got.data()[static_cast<size_t>(i)] ==
            doctest::Approx(want.data()[static_cast<size_t>(i)]).epsilon(1e-12));
    }
  }
}

TEST_CASE("selective_scan matches the per-step recurrence oracle") {
  Rng rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    const std::int64_t l = 3 + static_cast<std::int64_t>(rng.uniform_int(30));
    const std::int64_t d = 1 + static_cast<std::int64_t>(rng.uniform_int(6));
    const std::int64_t s = 1 + static_cast<std::int64_t>(rng.uniform_int(6));
    Tensor u = Tensor::uniform({2, l, d}, rng, -1.0, 1.0);
    Tensor delta = Tensor::uniform({2, l, d}, rng, 0.001, 0.5);
    Tensor bs = Tensor::uniform({2, l, s}, rng, -1.0, 1.0);
    Tensor cs = Tensor::uniform({2, l, s}, rng, -1.0, 1.0);
    Tensor a = Tensor::uniform({d, s}, rng, -2.0, -0.05);
    Tensor dk = Tensor::uniform({d}, rng, -1.0, 1.0);
    const Tensor got = ops::selective_scan(u, delta, bs, cs, a, dk);
    const Tensor want = scan_ref(u, delta, bs, cs, a, dk);
    for (std::int64_t i = 0; i < got.numel(); ++i) {
      CHECK(std::abs(got.data()[static_cast<size_t>(i)] - want.data()[static_cast<size_t>(i)]) <= 1e-12);
    }
  }
}

TEST_CASE("selective_scan rejects non-positive delta") {
  Rng rng(3);
  Tensor u = Tensor::uniform({1, 4, 2}, rng, -1.0, 1.0);
  Tensor delta = Tensor::uniform({1, 4, 2}, rng, 0.01, 0.1);
  delta.data()[3] = -0.01;
  Tensor bs = Tensor::uniform({1, 4, 3}, rng, -1.0, 1.0);
  Tensor cs = Tensor::uniform({1, 4, 3}, rng, -1.0, 1.0);
  Tensor a = Tensor::uniform({2, 3}, rng, -1.0, -0.1);
  Tensor dk = Tensor::zeros({2});
  CHECK_THROWS_AS(ops::selective_scan(u, delta, bs, cs, a, dk), ContractError);
}

TEST_CASE("selective_scan gradients agree with finite differences") {
  Rng rng(17);
  Tensor u = Tensor::uniform({1, 6, 3}, rng, -1.0, 1.0);
  Tensor delta = Tensor::uniform({1, 6, 3}, rng, 0.05, 0.4);
  Tensor bs = Tensor::uniform({1, 6, 2}, rng, -1.0, 1.0);
  Tensor cs = Tensor::uniform({1, 6, 2}, rng, -1.0, 1.0);
  Tensor a = Tensor::uniform({3, 2}, rng, -1.5, -0.1);
  Tensor dk = Tensor::uniform({3}, rng, -1.0, 1.0);
  Tensor rw = Tensor::uniform({1, 6, 3}, rng, -1.0, 1.0);
  const double err = gradcheck::max_rel_error(
      [&] { return ops::sum(ops::mul(ops::selective_scan(u, delta, bs, cs, a, dk), rw)); },
      {u, delta, bs, cs, a, dk});
  CHECK(err < 1e-6);
}

TEST_CASE("pad2d reflect mirrors without repeating the border sample") {
  Tensor x = Tensor::from_data({1, 1, 1, 4}, {1.0, 2.0, 3.0, 4.0});
  const Tensor p = ops::pad2d(x, 0, 0, 2, 2, ops::PadMode::Reflect);
  const std::vector<double> want = {3.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 2.0};
  REQUIRE(p.numel() == 8);
  for (size_t i = 0; i < want.size(); ++i) CHECK(p.data()[i] == want[i]);
}

TEST_CASE("downsample2 keeps even sites; zero_upsample2 interleaves zeros") {
  Tensor x = Tensor::from_data({1, 1, 3, 3}, {0, 1, 2, 3, 4, 5, 6, 7, 8});
  const Tensor d = ops::downsample2(x);
  REQUIRE(d.shape() == Shape{1, 1, 2, 2});
  CHECK(d.data() == std::vector<double>{0, 2, 6, 8});
  const Tensor u = ops::zero_upsample2(d);
  REQUIRE(u.shape() == Shape{1, 1, 4, 4});
  CHECK(u.data()[0] == 0.0);
  CHECK(u.data()[2] == 2.0);
  CHECK(u.data()[1] == 0.0);
  CHECK(u.data()[8] == 6.0);
}

TEST_CASE("ceil-mode patch pooling and its paired upsampling") {
  Tensor x = Tensor::from_data({1, 1, 3, 3}, {0, 1, 2, 3, 4, 5, 6, 7, 8});
  const Tensor p = ops::avg_pool_patch(x, 2);
  REQUIRE(p.shape() == Shape{1, 1, 2, 2});
  CHECK(p.data()[0] == doctest::Approx((0 + 1 + 3 + 4) / 4.0));
  CHECK(p.data()[1] == doctest::Approx((2 + 5) / 2.0));  // ragged right column
  CHECK(p.data()[3] == doctest::Approx(8.0));
  const Tensor up = ops::upsample_patch(p, 2, 3, 3);
  CHECK(up.data()[8] == doctest::Approx(8.0));
  CHECK(up.data()[0] == doctest::Approx(2.0));
}

TEST_CASE("bilinear upsampling is exact on linear ramps") {
  Tensor x = Tensor::from_data({1, 1, 2, 2}, {0.0, 1.0, 2.0, 3.0});
  const Tensor up = ops::upsample_bilinear(x, 3, 3);
  // align-corners-free interpolation must reproduce corner samples and stay
  // within the input range.
  for (double v : up.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 3.0);
  }
  CHECK(up.data()[0] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(up.data()[8] == doctest::Approx(3.0).epsilon(1e-9));
}

TEST_CASE("permute_sites round trip via its inverse") {
  Rng rng(9);
  Tensor x = Tensor::uniform({2, 6, 3}, rng, -1.0, 1.0);
  std::vector<std::int64_t> perm = {3, 0, 5, 1, 4, 2};
  std::vector<std::int64_t> inv(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<std::int64_t>(i);
  const Tensor rt = ops::permute_sites(ops::permute_sites(x, perm), inv);
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    CHECK(rt.data()[static_cast<size_t>(i)] == x.data()[static_cast<size_t>(i)]);
  }
}

TEST_CASE("layer_norm_channels normalizes each site to zero mean unit variance") {
  Rng rng(21);
  Tensor x = Tensor::uniform({1, 5, 3, 3}, rng, -2.0, 2.0);
  Tensor gamma = Tensor::full({5}, 1.0);
  Tensor beta = Tensor::zeros({5});
  const Tensor y = ops::layer_norm_channels(x, gamma, beta, 1e-12);
  const auto plane = 9;
  for (std::int64_t i = 0; i < plane; ++i) {
    double m = 0.0, v = 0.0;
    for (std::int64_t c = 0; c < 5; ++c) m += y.data()[static_cast<size_t>(c * plane + i)];
    m /= 5.0;
    for (std::int64_t c = 0; c < 5; ++c) {
      const double d = y.data()[static_cast<size_t>(c * plane + i)] - m;
      v += d * d;
    }
    CHECK(std::abs(m) < 1e-9);
    CHECK(v / 5.0 == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("elementwise op gradients pass finite-difference checks") {
  Rng rng(33);
  Tensor x = Tensor::uniform({2, 3, 4}, rng, -1.5, 1.5);
  Tensor rw = Tensor::uniform({2, 3, 4}, rng, -1.0, 1.0);
  auto check = [&](const char* name, const std::function<Tensor()>& fn) {
    INFO(name);
    CHECK(gradcheck::max_rel_error(fn, {x}) < 1e-6);
  };
  check("silu", [&] { return ops::sum(ops::mul(ops::silu(x), rw)); });
  check("sigmoid", [&] { return ops::sum(ops::mul(ops::sigmoid(x), rw)); });
  check("softplus", [&] { return ops::sum(ops::mul(ops::softplus(x), rw)); });
  check("exp", [&] { return ops::sum(ops::mul(ops::exp_t(x), rw)); });
  check("mean", [&] { return ops::mean(ops::mul(x, x)); });
}

TEST_CASE("shape errors are reported as dimension errors") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({3, 2});
  CHECK_THROWS_AS(ops::add(a, b), DimensionError);
  CHECK_THROWS_AS(ops::mul(a, b), DimensionError);
}
