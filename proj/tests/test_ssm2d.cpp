#include <doctest.h>

#include <cmath>

#include "lapmamba/gradcheck.hpp"
#include "lapmamba/ssm2d.hpp"

using namespace lapmamba;

TEST_CASE("direction permutations on the labeled 2x2 grid") {
  // Grid [[1,2],[3,4]] in row-major order: the four paths must read
  // [1,2,3,4], [4,3,2,1], [1,3,2,4], [4,2,3,1].
  Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  const auto seqs = ssm2d::expand_4dir(x);
  auto values = [&](int d) {
    std::vector<double> v;
    for (std::int64_t i = 0; i < 4; ++i) v.push_back(seqs.seq[static_cast<size_t>(d)].data()[static_cast<size_t>(i)]);
    return v;
  };
  CHECK(values(0) == std::vector<double>{1, 2, 3, 4});
  CHECK(values(1) == std::vector<double>{4, 3, 2, 1});
  CHECK(values(2) == std::vector<double>{1, 3, 2, 4});
  CHECK(values(3) == std::vector<double>{4, 2, 3, 1});
}

TEST_CASE("1x1 grids collapse all four paths to the single pixel") {
  Tensor x = Tensor::from_data({1, 2, 1, 1}, {0.5, -0.25});
  const auto seqs = ssm2d::expand_4dir(x);
  for (int d = 0; d < 4; ++d) {
    CHECK(seqs.seq[static_cast<size_t>(d)].data()[0] == 0.5);
    CHECK(seqs.seq[static_cast<size_t>(d)].data()[1] == -0.25);
  }
}

TEST_CASE("permutations are invertible bijections") {
  const auto perms = ssm2d::direction_perms(3, 5);
  for (const auto& p : perms) {
    const auto inv = ssm2d::invert_perm(p);
    for (size_t i = 0; i < p.size(); ++i) {
      CHECK(inv[static_cast<size_t>(p[i])] == static_cast<std::int64_t>(i));
    }
  }
}

TEST_CASE("identity-scan round trip returns 4x the input") {
  Rng rng(4);
  Tensor x = Tensor::uniform({2, 3, 3, 5}, rng, -1.0, 1.0);
  const auto seqs = ssm2d::expand_4dir(x);
  const Tensor merged = ssm2d::merge_4dir(seqs);
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    CHECK(merged.data()[static_cast<size_t>(i)] ==
          doctest::Approx(4.0 * x.data()[static_cast<size_t>(i)]).epsilon(1e-12));
  }
  const Tensor mean_merged = ssm2d::merge_4dir(seqs, ssm2d::MergeMode::Mean);
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    CHECK(mean_merged.data()[static_cast<size_t>(i)] ==
          doctest::Approx(x.data()[static_cast<size_t>(i)]).epsilon(1e-12));
  }
}

TEST_CASE("merge_4dir validates sequence lengths") {
  Rng rng(6);
  Tensor x = Tensor::uniform({1, 2, 2, 3}, rng, -1.0, 1.0);
  auto seqs = ssm2d::expand_4dir(x);
  seqs.seq[1] = Tensor::zeros({1, 5, 2});
  CHECK_THROWS_AS(ssm2d::merge_4dir(seqs), DimensionError);
}

TEST_CASE("scan linearity in the input sequence") {
  Rng rng(8);
  const std::int64_t l = 12, d = 3, s = 4;
  Tensor u = Tensor::uniform({1, l, d}, rng, -1.0, 1.0);
  Tensor delta = Tensor::uniform({1, l, d}, rng, 0.01, 0.3);
  Tensor bs = Tensor::uniform({1, l, s}, rng, -1.0, 1.0);
  Tensor cs = Tensor::uniform({1, l, s}, rng, -1.0, 1.0);
  Tensor a = Tensor::uniform({d, s}, rng, -2.0, -0.1);
  Tensor dk = Tensor::uniform({d}, rng, -1.0, 1.0);
  const Tensor y1 = ops::selective_scan(u, delta, bs, cs, a, dk);
  const Tensor y2 = ops::selective_scan(ops::scale(u, 2.5), delta, bs, cs, a, dk);
  for (std::int64_t i = 0; i < y1.numel(); ++i) {
    CHECK(y2.data()[static_cast<size_t>(i)] ==
          doctest::Approx(2.5 * y1.data()[static_cast<size_t>(i)]).epsilon(1e-10));
  }
}

TEST_CASE("vssm preserves shape and maps zero input to zero") {
  Rng rng(10);
  nn::ParamStore ps;
  ssm2d::Vssm vssm(ps, "v", 6, {4, ssm2d::MergeMode::Sum}, rng);
  Tensor x = Tensor::uniform({2, 6, 4, 5}, rng, -1.0, 1.0);
  const Tensor y = vssm.forward(x);
  CHECK(y.same_shape(x));

  // SiLU(Linear(0)) gates the scan output with SiLU(b_gate); the scan path of
  // a zero input is zero only when the input projection bias is zero, so zero
  // biases must give an exactly zero output.
  for (auto& [name, p] : ps.params) {
    if (name == "v.in_proj.b" || name == "v.gate_proj.b" || name == "v.out_proj.b") {
      std::fill(p.data().begin(), p.data().end(), 0.0);
    }
  }
  const Tensor z = vssm.forward(Tensor::zeros({1, 6, 3, 3}));
  for (double v : z.data()) CHECK(v == 0.0);
}

TEST_CASE("vssm gradient w.r.t. input passes finite differences") {
  Rng rng(12);
  nn::ParamStore ps;
  ssm2d::Vssm vssm(ps, "v", 4, {4, ssm2d::MergeMode::Sum}, rng);
  Tensor x = Tensor::uniform({1, 4, 4, 4}, rng, -1.0, 1.0);
  const double err =
      gradcheck::max_rel_error([&] { return ops::mean(vssm.forward(x)); }, {x});
  CHECK(err < 1e-4);
}

TEST_CASE("vssm rejects channel mismatches") {
  Rng rng(14);
  nn::ParamStore ps;
  ssm2d::Vssm vssm(ps, "v", 4, {4, ssm2d::MergeMode::Sum}, rng);
  CHECK_THROWS_AS(vssm.forward(Tensor::zeros({1, 5, 4, 4})), DimensionError);
}
