#include "lapmamba/hazegen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lapmamba/image_io.hpp"
#include "lapmamba/lftm.hpp"

namespace lapmamba::hazegen {

namespace fs = std::filesystem;

void HazeParams::validate() const {
  if (beta < 0.6 || beta > 2.5) {
    throw ConfigError("haze params: beta " + std::to_string(beta) + " outside [0.6, 2.5]");
  }
  if (a < 0.7 || a > 1.0) {
    throw ConfigError("haze params: atmospheric light " + std::to_string(a) +
                      " outside [0.7, 1.0]");
  }
}

Tensor generate_clear(std::uint64_t seed, std::int64_t h, std::int64_t w) {
  Rng rng(seed);
  Tensor img = Tensor::zeros({1, 3, h, w});
  auto& d = img.data();
  const auto plane = h * w;

  // Per-channel linear gradients.
  double base[3], gx[3], gy[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = rng.uniform(0.2, 0.8);
    gx[c] = rng.uniform(-0.5, 0.5);
    gy[c] = rng.uniform(-0.5, 0.5);
  }
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const double fx = static_cast<double>(x) / static_cast<double>(std::max<std::int64_t>(1, w - 1));
      const double fy = static_cast<double>(y) / static_cast<double>(std::max<std::int64_t>(1, h - 1));
      for (int c = 0; c < 3; ++c) {
        d[static_cast<size_t>(c * plane + y * w + x)] = base[c] + gx[c] * fx + gy[c] * fy;
      }
    }
  }

  // A few filled shapes (circles and axis-aligned rectangles), alpha-blended.
  const int nshapes = 4 + static_cast<int>(rng.uniform_int(5));
  for (int s = 0; s < nshapes; ++s) {
    const bool circle = rng.uniform() < 0.5;
    const double cx = rng.uniform(0.1, 0.9) * static_cast<double>(w);
    const double cy = rng.uniform(0.1, 0.9) * static_cast<double>(h);
    const double rx = rng.uniform(0.05, 0.3) * static_cast<double>(w);
    const double ry = rng.uniform(0.05, 0.3) * static_cast<double>(h);
    const double alpha = rng.uniform(0.4, 0.9);
    double color[3];
    for (int c = 0; c < 3; ++c) color[c] = rng.uniform(0.0, 1.0);
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        const double dx = (static_cast<double>(x) - cx) / rx;
        const double dy = (static_cast<double>(y) - cy) / ry;
        const bool inside = circle ? (dx * dx + dy * dy <= 1.0)
                                   : (std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0);
        if (!inside) continue;
        for (int c = 0; c < 3; ++c) {
          auto& v = d[static_cast<size_t>(c * plane + y * w + x)];
          v = (1.0 - alpha) * v + alpha * color[c];
        }
      }
    }
  }

  // Mild texture: a few low-amplitude sinusoids shared across channels.
  for (int k = 0; k < 3; ++k) {
    const double fx = rng.uniform(1.0, 6.0);
    const double fy = rng.uniform(1.0, 6.0);
    const double ph = rng.uniform(0.0, 6.283185307179586);
    const double amp = rng.uniform(0.01, 0.03);
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        const double v = amp * std::sin(6.283185307179586 *
                                            (fx * static_cast<double>(x) / static_cast<double>(w) +
                                             fy * static_cast<double>(y) / static_cast<double>(h)) +
                                        ph);
        for (int c = 0; c < 3; ++c) d[static_cast<size_t>(c * plane + y * w + x)] += v;
      }
    }
  }

  // Global affine rescale so the histogram spans [0.02, 0.98].
  const auto [mn_it, mx_it] = std::minmax_element(d.begin(), d.end());
  const double mn = *mn_it, mx = *mx_it;
  if (mx > mn) {
    for (auto& v : d) v = 0.02 + 0.96 * (v - mn) / (mx - mn);
  } else {
    std::fill(d.begin(), d.end(), 0.5);
  }
  return img;
}

Tensor generate_depth(Rng& rng, std::int64_t h, std::int64_t w) {
  Tensor depth = Tensor::zeros({1, 1, h, w});
  auto& d = depth.data();
  const double gx = rng.uniform(-1.0, 1.0);
  const double gy = rng.uniform(-1.0, 1.0);
  struct Bump {
    double cx, cy, sx, sy, amp;
  };
  Bump bumps[3];
  for (auto& b : bumps) {
    b = {rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), rng.uniform(0.1, 0.4),
         rng.uniform(0.1, 0.4), rng.uniform(-1.0, 1.0)};
  }
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const double fx = static_cast<double>(x) / static_cast<double>(std::max<std::int64_t>(1, w - 1));
      const double fy = static_cast<double>(y) / static_cast<double>(std::max<std::int64_t>(1, h - 1));
      double v = gx * fx + gy * fy;
      for (const auto& b : bumps) {
        const double dx = (fx - b.cx) / b.sx;
        const double dy = (fy - b.cy) / b.sy;
        v += b.amp * std::exp(-0.5 * (dx * dx + dy * dy));
      }
      d[static_cast<size_t>(y * w + x)] = v;
    }
  }
  const auto [mn_it, mx_it] = std::minmax_element(d.begin(), d.end());
  const double mn = *mn_it, mx = *mx_it;
  for (auto& v : d) v = mx > mn ? (v - mn) / (mx - mn) : 0.5;
  return depth;
}

HazeParams sample_params(Rng& rng, std::int64_t h, std::int64_t w) {
  HazeParams p;
  p.beta = rng.uniform(0.6, 2.5);
  p.a = rng.uniform(0.7, 1.0);
  p.depth = generate_depth(rng, h, w);
  return p;
}

Tensor synthesize_haze(const Tensor& j, const HazeParams& p) {
  if (p.beta < 0.0) throw ConfigError("synthesize_haze: beta must be >= 0");
  if (p.a < 0.0 || p.a > 1.0) throw ConfigError("synthesize_haze: A must be in [0,1]");
  if (!p.depth.defined() || p.depth.rank() != 4 || p.depth.dim(2) != j.dim(2) ||
      p.depth.dim(3) != j.dim(3)) {
    throw DimensionError("synthesize_haze: depth map does not match image size");
  }
  Tensor out = Tensor::zeros(j.shape());
  const auto plane = j.dim(2) * j.dim(3);
  const auto channels = j.numel() / plane;
  const auto& jd = j.data();
  const auto& dd = p.depth.data();
  auto& od = out.data();
  for (std::int64_t i = 0; i < plane; ++i) {
    const double t = std::exp(-p.beta * dd[static_cast<size_t>(i)]);
    for (std::int64_t c = 0; c < channels; ++c) {
      const auto idx = static_cast<size_t>(c * plane + i);
      od[idx] = jd[idx] * t + p.a * (1.0 - t);
    }
  }
  return out;
}

Pair make_pair(std::uint64_t seed, std::int64_t h, std::int64_t w) {
  Pair pr;
  pr.clear = generate_clear(seed, h, w);
  // Decouple the parameter stream from the scene stream.
  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  pr.params = sample_params(rng, h, w);
  pr.params.seed = seed;
  pr.hazy = synthesize_haze(pr.clear, pr.params);
  return pr;
}

namespace {

// Plain data-plane helpers; augmentation never needs gradients.
Tensor rot90(const Tensor& x, int k) {
  k = ((k % 4) + 4) % 4;
  if (k == 0) return x;
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto oh = (k % 2 == 0) ? h : w;
  const auto ow = (k % 2 == 0) ? w : h;
  Tensor out = Tensor::zeros({n, c, oh, ow});
  const auto& src = x.data();
  auto& dst = out.data();
  for (std::int64_t p = 0; p < n * c; ++p) {
    const auto so = p * h * w, dofs = p * oh * ow;
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t xx = 0; xx < w; ++xx) {
        std::int64_t oy, ox;
        switch (k) {
          case 1: oy = w - 1 - xx, ox = y; break;           // 90 degrees CCW
          case 2: oy = h - 1 - y, ox = w - 1 - xx; break;   // 180
          default: oy = xx, ox = h - 1 - y; break;          // 270
        }
        dst[static_cast<size_t>(dofs + oy * ow + ox)] = src[static_cast<size_t>(so + y * w + xx)];
      }
    }
  }
  return out;
}

Tensor flip(const Tensor& x, bool horizontal) {
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out = Tensor::zeros(x.shape());
  const auto& src = x.data();
  auto& dst = out.data();
  for (std::int64_t p = 0; p < n * c; ++p) {
    const auto o = p * h * w;
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t xx = 0; xx < w; ++xx) {
        const auto oy = horizontal ? y : h - 1 - y;
        const auto ox = horizontal ? w - 1 - xx : xx;
        dst[static_cast<size_t>(o + oy * w + ox)] = src[static_cast<size_t>(o + y * w + xx)];
      }
    }
  }
  return out;
}

Tensor crop(const Tensor& x, std::int64_t top, std::int64_t left, std::int64_t ch,
            std::int64_t cw) {
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out = Tensor::zeros({n, c, ch, cw});
  const auto& src = x.data();
  auto& dst = out.data();
  for (std::int64_t p = 0; p < n * c; ++p) {
    for (std::int64_t y = 0; y < ch; ++y) {
      for (std::int64_t xx = 0; xx < cw; ++xx) {
        dst[static_cast<size_t>((p * ch + y) * cw + xx)] =
            src[static_cast<size_t>((p * h + top + y) * w + left + xx)];
      }
    }
  }
  return out;
}

}  // namespace

Pair augment(const Pair& p, std::uint64_t seed, std::int64_t crop_h, std::int64_t crop_w) {
  Rng rng(seed);
  const int k = static_cast<int>(rng.uniform_int(4));
  const bool fh = rng.uniform() < 0.5;
  const bool fv = rng.uniform() < 0.5;

  auto geo = [&](const Tensor& t) {
    Tensor out = rot90(t, k);
    if (fh) out = flip(out, true);
    if (fv) out = flip(out, false);
    return out;
  };
  Tensor clear = geo(p.clear);
  Tensor hazy = geo(p.hazy);

  const auto h = clear.dim(2), w = clear.dim(3);
  if (crop_h > h || crop_w > w) {
    throw ConfigError("augment: crop " + std::to_string(crop_h) + "x" + std::to_string(crop_w) +
                      " exceeds image " + std::to_string(h) + "x" + std::to_string(w));
  }
  const auto top = static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(h - crop_h + 1)));
  const auto left = static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(w - crop_w + 1)));

  Pair out;
  out.clear = crop(clear, top, left, crop_h, crop_w);
  out.hazy = crop(hazy, top, left, crop_h, crop_w);
  out.params = p.params;
  return out;
}

void write_dataset(const std::string& root, int count, std::int64_t size, std::uint64_t seed) {
  if (count < 1) throw ConfigError("write_dataset: count must be >= 1");
  fs::create_directories(fs::path(root) / "clear");
  fs::create_directories(fs::path(root) / "hazy");
  std::ofstream manifest(fs::path(root) / "manifest.txt");
  if (!manifest) throw FormatError("cannot write manifest in " + root);
  manifest << "# idx seed beta A\n";
  char name[32];
  for (int i = 0; i < count; ++i) {
    const std::uint64_t pair_seed = seed + static_cast<std::uint64_t>(i);
    Pair p = make_pair(pair_seed, size, size);
    p.params.validate();
    std::snprintf(name, sizeof(name), "%04d.png", i);
    imageio::write_image((fs::path(root) / "clear" / name).string(), p.clear);
    imageio::write_image((fs::path(root) / "hazy" / name).string(), p.hazy);
    char line[128];
    std::snprintf(line, sizeof(line), "%d %llu %.17g %.17g\n", i,
                  static_cast<unsigned long long>(pair_seed), p.params.beta, p.params.a);
    manifest << line;
  }
}

std::vector<Pair> load_dataset(const std::string& root) {
  std::ifstream manifest(fs::path(root) / "manifest.txt");
  if (!manifest) throw FormatError("no manifest.txt in " + root);
  std::vector<Pair> out;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    int idx;
    unsigned long long pair_seed;
    Pair p;
    if (!(is >> idx >> pair_seed >> p.params.beta >> p.params.a)) {
      throw FormatError("malformed manifest line in " + root + ": " + line);
    }
    p.params.seed = pair_seed;
    char name[32];
    std::snprintf(name, sizeof(name), "%04d.png", idx);
    p.clear = imageio::read_image((fs::path(root) / "clear" / name).string());
    p.hazy = imageio::read_image((fs::path(root) / "hazy" / name).string());
    out.push_back(std::move(p));
  }
  if (out.empty()) throw FormatError("empty dataset in " + root);
  return out;
}

namespace {

double band_variance(const Tensor& t) {
  const auto& d = t.data();
  const auto plane = t.dim(2) * t.dim(3);
  const auto channels = t.numel() / plane;
  double acc = 0.0;
  for (std::int64_t c = 0; c < channels; ++c) {
    double mean = 0.0;
    for (std::int64_t i = 0; i < plane; ++i) mean += d[static_cast<size_t>(c * plane + i)];
    mean /= static_cast<double>(plane);
    double var = 0.0;
    for (std::int64_t i = 0; i < plane; ++i) {
      const double v = d[static_cast<size_t>(c * plane + i)] - mean;
      var += v * v;
    }
    acc += var / static_cast<double>(plane);
  }
  return acc / static_cast<double>(channels);
}

}  // namespace

VarianceReport variance_analysis(const std::vector<Tensor>& corpus, int levels) {
  if (corpus.empty()) throw ConfigError("variance_analysis: empty corpus");
  if (levels < 1) throw ConfigError("variance_analysis: levels must be >= 1");
  VarianceReport rep;
  NoGradScope ng;
  for (const auto& img : corpus) {
    const lftm::MultiLevel ml = lftm::lft_multi(img, levels);
    VarianceRow row;
    row.var_low = band_variance(ml.low);
    double acc = 0.0;
    std::int64_t count = 0;
    for (const auto& hb : ml.highs) {
      acc += band_variance(hb) * static_cast<double>(hb.numel());
      count += hb.numel();
    }
    row.var_high = acc / static_cast<double>(count);
    rep.rows.push_back(row);
    rep.mean.var_low += row.var_low;
    rep.mean.var_high += row.var_high;
  }
  rep.mean.var_low /= static_cast<double>(rep.rows.size());
  rep.mean.var_high /= static_cast<double>(rep.rows.size());
  return rep;
}

std::string VarianceReport::to_csv() const {
  std::ostringstream os;
  os << "index,var_low,var_high\n";
  char line[96];
  for (size_t i = 0; i < rows.size(); ++i) {
    std::snprintf(line, sizeof(line), "%zu,%.12g,%.12g\n", i, rows[i].var_low, rows[i].var_high);
    os << line;
  }
  return os.str();
}

std::string VarianceReport::summary() const {
  double lo_min = rows[0].var_low, lo_max = rows[0].var_low;
  double hi_min = rows[0].var_high, hi_max = rows[0].var_high;
  for (const auto& r : rows) {
    lo_min = std::min(lo_min, r.var_low);
    lo_max = std::max(lo_max, r.var_low);
    hi_min = std::min(hi_min, r.var_high);
    hi_max = std::max(hi_max, r.var_high);
  }
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "images: %zu\nvar_low  mean %.6g  min %.6g  max %.6g\n"
                "var_high mean %.6g  min %.6g  max %.6g\n",
                rows.size(), mean.var_low, lo_min, lo_max, mean.var_high, hi_min, hi_max);
  return buf;
}

}  // namespace lapmamba::hazegen
