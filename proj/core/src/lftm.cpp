#include "lapmamba/lftm.hpp"

#include "lapmamba/ops.hpp"

namespace lapmamba::lftm {

namespace {

// Burt-Adelson binomial kernel, rows sum to 1 so DC stays in the low band.
constexpr double kTap[5] = {1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0};

Tensor tap_weight(std::int64_t c, bool vertical, double gain) {
  Shape shape = vertical ? Shape{c, 1, 5, 1} : Shape{c, 1, 1, 5};
  std::vector<double> w(static_cast<size_t>(c) * 5);
  for (std::int64_t ci = 0; ci < c; ++ci)
    for (int k = 0; k < 5; ++k) w[static_cast<size_t>(ci * 5 + k)] = kTap[k] * gain;
  return Tensor::from_data(std::move(shape), std::move(w));
}

// Separable depthwise blur with reflect borders; gain scales each 1-D pass.
Tensor blur(const Tensor& x, double gain) {
  const auto c = x.dim(1);
  Tensor t = ops::pad2d(x, 2, 2, 0, 0, ops::PadMode::Reflect);
  t = ops::conv2d(t, tap_weight(c, true, gain), Tensor(), 1, 0, ops::PadMode::Zeros, 1,
                  static_cast<int>(c));
  t = ops::pad2d(t, 0, 0, 2, 2, ops::PadMode::Reflect);
  t = ops::conv2d(t, tap_weight(c, false, gain), Tensor(), 1, 0, ops::PadMode::Zeros, 1,
                  static_cast<int>(c));
  return t;
}

}  // namespace

FreqPair decompose(const Tensor& x) {
  if (x.rank() != 4) throw DimensionError("decompose: expected NCHW, got " + shape_str(x.shape()));
  const auto h = x.dim(2), w = x.dim(3);
  if (h < 2 || w < 2) {
    throw Error("decompose: degenerate spatial extent " + std::to_string(h) + "x" +
                std::to_string(w) + ", need at least 2x2");
  }
  FreqPair fp;
  fp.orig_h = h;
  fp.orig_w = w;
  fp.low = ops::downsample2(blur(x, 1.0));
  fp.high = ops::sub(x, expand_low(fp.low, h, w));
  return fp;
}

Tensor expand_low(const Tensor& low, std::int64_t h, std::int64_t w) {
  // Zero-insertion then the same blur with x2 gain per pass keeps constants
  // constant; crop drops the padding row/col introduced by odd sizes.
  return ops::crop2d(blur(ops::zero_upsample2(low), 2.0), h, w);
}

Tensor reconstruct(const FreqPair& fp) {
  if (fp.high.dim(2) != fp.orig_h || fp.high.dim(3) != fp.orig_w) {
    throw DimensionError("reconstruct: high band " + shape_str(fp.high.shape()) +
                         " inconsistent with recorded size " + std::to_string(fp.orig_h) + "x" +
                         std::to_string(fp.orig_w));
  }
  if (fp.low.dim(2) != (fp.orig_h + 1) / 2 || fp.low.dim(3) != (fp.orig_w + 1) / 2) {
    throw DimensionError("reconstruct: low band " + shape_str(fp.low.shape()) +
                         " is not the ceil-halved map of " + std::to_string(fp.orig_h) + "x" +
                         std::to_string(fp.orig_w));
  }
  return ops::add(expand_low(fp.low, fp.orig_h, fp.orig_w), fp.high);
}

MultiLevel lft_multi(const Tensor& x, int levels) {
  if (levels < 1) throw ConfigError("lft_multi: levels must be >= 1");
  const auto h = x.dim(2), w = x.dim(3);
  if (std::min(h, w) < (std::int64_t{1} << levels)) {
    throw ConfigError("lft_multi: " + std::to_string(levels) + " levels need spatial size >= " +
                      std::to_string(std::int64_t{1} << levels) + ", got " + std::to_string(h) +
                      "x" + std::to_string(w));
  }
  MultiLevel ml;
  Tensor cur = x;
  for (int i = 0; i < levels; ++i) {
    FreqPair fp = decompose(cur);
    ml.highs.push_back(fp.high);
    ml.sizes.emplace_back(fp.orig_h, fp.orig_w);
    cur = fp.low;
  }
  ml.low = cur;
  return ml;
}

Tensor reconstruct_multi(const MultiLevel& ml) {
  Tensor cur = ml.low;
  for (auto i = static_cast<std::int64_t>(ml.highs.size()) - 1; i >= 0; --i) {
    FreqPair fp;
    fp.low = cur;
    fp.high = ml.highs[static_cast<size_t>(i)];
    fp.orig_h = ml.sizes[static_cast<size_t>(i)].first;
    fp.orig_w = ml.sizes[static_cast<size_t>(i)].second;
    cur = reconstruct(fp);
  }
  return cur;
}

}  // namespace lapmamba::lftm
