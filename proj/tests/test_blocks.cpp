#include <doctest.h>

#include <cmath>

#include "lapmamba/blocks.hpp"
#include "lapmamba/gradcheck.hpp"

using namespace lapmamba;

TEST_CASE("channel attention emits per-channel gains in (0,1)") {
  Rng rng(1);
  nn::ParamStore ps;
  blocks::ChannelAttention ca(ps, "ca", 8, rng);
  Tensor x = Tensor::uniform({2, 8, 5, 5}, rng, -1.0, 1.0);
  const Tensor g = ca.gains(x);
  CHECK(g.shape() == Shape{2, 8, 1, 1});
  for (double v : g.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("mdfm weight map stays in [0,1] and the fusion is convex") {
  Rng rng(2);
  nn::ParamStore ps;
  blocks::Mdfm mdfm(ps, "m", 4, rng);
  Tensor fs = Tensor::uniform({1, 4, 6, 6}, rng, 0.0, 1.0);
  Tensor fl = Tensor::uniform({1, 4, 6, 6}, rng, 0.0, 1.0);
  const Tensor w = mdfm.weight_map(fs, fl);
  for (double v : w.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  const Tensor out = mdfm.forward(fs, fl);
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    const double lo = std::min(fs.data()[static_cast<size_t>(i)], fl.data()[static_cast<size_t>(i)]);
    const double hi = std::max(fs.data()[static_cast<size_t>(i)], fl.data()[static_cast<size_t>(i)]);
    CHECK(out.data()[static_cast<size_t>(i)] >= lo - 1e-12);
    CHECK(out.data()[static_cast<size_t>(i)] <= hi + 1e-12);
  }
}

TEST_CASE("mdfm collapse identities: W forced to one returns F_l exactly") {
  Rng rng(3);
  nn::ParamStore ps;
  blocks::Mdfm mdfm(ps, "m", 3, rng);
  Tensor fs = Tensor::uniform({1, 3, 4, 4}, rng, -1.0, 1.0);
  Tensor fl = Tensor::uniform({1, 3, 4, 4}, rng, -1.0, 1.0);
  const Tensor out = mdfm.forward(fs, fl, /*force_w_one=*/true);
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    CHECK(out.data()[static_cast<size_t>(i)] == fl.data()[static_cast<size_t>(i)]);
  }
  CHECK_THROWS_AS(mdfm.forward(fs, Tensor::zeros({1, 3, 5, 5})), DimensionError);
}

TEST_CASE("lsrb with beta=gamma=0 collapses to GFFN(VSSM(LN(x)))") {
  Rng rng(4);
  nn::ParamStore ps;
  blocks::Lsrb lsrb(ps, "l", 4, {4, ssm2d::MergeMode::Sum}, rng);
  lsrb.beta.data()[0] = 0.0;
  lsrb.gamma.data()[0] = 0.0;
  Tensor x = Tensor::uniform({1, 4, 5, 5}, rng, -1.0, 1.0);
  const Tensor got = lsrb.forward(x);
  const Tensor want = lsrb.gffn.forward(lsrb.vssm.forward(lsrb.ln.forward(x)));
  for (std::int64_t i = 0; i < got.numel(); ++i) {
    CHECK(std::abs(got.data()[static_cast<size_t>(i)] - want.data()[static_cast<size_t>(i)]) <= 1e-12);
  }
}

TEST_CASE("lsrb default residual scalars start at one") {
  Rng rng(5);
  nn::ParamStore ps;
  blocks::Lsrb lsrb(ps, "l", 4, {4, ssm2d::MergeMode::Sum}, rng);
  CHECK(lsrb.beta.data()[0] == 1.0);
  CHECK(lsrb.gamma.data()[0] == 1.0);
}

TEST_CASE("gffn halves its doubled channels through the gate") {
  Rng rng(6);
  nn::ParamStore ps;
  blocks::Gffn gffn(ps, "g", 6, rng);
  Tensor x = Tensor::uniform({2, 6, 4, 4}, rng, -1.0, 1.0);
  CHECK(gffn.forward(x).same_shape(x));
}

TEST_CASE("pixel attention works on sizes not divisible by the patch") {
  Rng rng(7);
  nn::ParamStore ps;
  blocks::PixelAttention pa(ps, "p", 3, 4, rng);
  Tensor x = Tensor::uniform({1, 3, 7, 9}, rng, -1.0, 1.0);
  CHECK(pa.forward(x).same_shape(x));
}

TEST_CASE("hdeb upsamples half-resolution guidance internally") {
  Rng rng(8);
  nn::ParamStore ps;
  blocks::Hdeb hdeb(ps, "h", 4, rng);
  Tensor fl = Tensor::uniform({1, 4, 3, 4}, rng, -1.0, 1.0);
  Tensor fh = Tensor::uniform({1, 4, 6, 8}, rng, -1.0, 1.0);
  CHECK(hdeb.forward(fl, fh).same_shape(fh));
  // Same-resolution guidance is used as-is.
  Tensor fl_full = Tensor::uniform({1, 4, 6, 8}, rng, -1.0, 1.0);
  CHECK(hdeb.forward(fl_full, fh).same_shape(fh));
  CHECK_THROWS_AS(hdeb.forward(Tensor::zeros({1, 3, 3, 4}), fh), DimensionError);
}

TEST_CASE("hdeb attention map lies in (0,1)") {
  Rng rng(9);
  nn::ParamStore ps;
  blocks::Hdeb hdeb(ps, "h", 4, rng);
  Tensor fl = Tensor::uniform({1, 4, 6, 6}, rng, -1.0, 1.0);
  const Tensor w = hdeb.attention(fl);
  for (double v : w.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("resgroup keeps the identity path") {
  Rng rng(10);
  nn::ParamStore ps;
  blocks::ResGroup resg(ps, "r", 3, rng);
  // Zero both conv kernels: the block must reduce to the identity.
  std::fill(ps.at("r.c2.w").data().begin(), ps.at("r.c2.w").data().end(), 0.0);
  std::fill(ps.at("r.c2.b").data().begin(), ps.at("r.c2.b").data().end(), 0.0);
  Tensor x = Tensor::uniform({1, 3, 4, 4}, rng, -1.0, 1.0);
  const Tensor y = resg.forward(x);
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    CHECK(y.data()[static_cast<size_t>(i)] == x.data()[static_cast<size_t>(i)]);
  }
}
