#include "lapmamba/network.hpp"

#include <sstream>

namespace lapmamba::network {

using blocks::Hdeb;
using blocks::Lsrb;
using lftm::FreqPair;

void NetworkConfig::validate() const {
  if (lsrb_counts.size() != 7 || hdeb_counts.size() != 7) {
    throw ConfigError("network: lsrb/hdeb count lists must have exactly 7 entries, got " +
                      std::to_string(lsrb_counts.size()) + "/" +
                      std::to_string(hdeb_counts.size()));
  }
  if (channels.size() != 7) {
    throw ConfigError("network: channel schedule must have 7 entries");
  }
  for (int m : lsrb_counts)
    if (m < 0) throw ConfigError("network: negative LSRB count");
  for (int n : hdeb_counts)
    if (n < 0) throw ConfigError("network: negative HDEB count");
  for (int c : channels)
    if (c < 1) throw ConfigError("network: channel widths must be positive");
  for (int i = 0; i < 3; ++i) {
    if (channels[static_cast<size_t>(6 - i)] != channels[static_cast<size_t>(i)]) {
      throw ConfigError("network: decoder widths must mirror the encoder (stage " +
                        std::to_string(6 - i) + " is " +
                        std::to_string(channels[static_cast<size_t>(6 - i)]) + ", expected " +
                        std::to_string(channels[static_cast<size_t>(i)]) + ")");
    }
  }
  if (nstate < 1) throw ConfigError("network: nstate must be >= 1");
  if (identity_io) {
    for (int c : channels) {
      if (c != in_channels) {
        throw ConfigError("network: identity_io requires every width to equal in_channels");
      }
    }
  }
}

Model Model::build(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  Rng rng(seed);
  auto& ps = m.params;
  const ssm2d::VssmConfig vssm_cfg{cfg.nstate, cfg.merge};
  const auto& ch = cfg.channels;

  auto make_lsrbs = [&](const std::string& prefix, int count, int c) {
    std::vector<Lsrb> v;
    for (int k = 0; k < count; ++k) {
      v.emplace_back(ps, prefix + ".lsrb" + std::to_string(k), c, vssm_cfg, rng);
    }
    return v;
  };
  auto make_hdebs = [&](const std::string& prefix, int count, int c) {
    std::vector<Hdeb> v;
    for (int k = 0; k < count; ++k) {
      v.emplace_back(ps, prefix + ".hdeb" + std::to_string(k), c, rng, cfg.dilated_dconv);
    }
    return v;
  };

  if (!cfg.identity_io) {
    m.stem = nn::Conv2dLayer(ps, "stem", cfg.in_channels, ch[0], 3, rng);
  }
  for (int i = 0; i < 3; ++i) {
    auto& st = m.enc[static_cast<size_t>(i)];
    const std::string p = "enc" + std::to_string(i);
    const int c = ch[static_cast<size_t>(i)];
    st.spatial_down = nn::Conv2dLayer(ps, p + ".spatial_down", c, c, 3, rng, /*stride=*/2);
    st.mdfm = blocks::Mdfm(ps, p + ".mdfm", c, rng);
    st.lsrbs = make_lsrbs(p, cfg.lsrb_counts[static_cast<size_t>(i)], c);
    st.hdebs = make_hdebs(p, cfg.hdeb_counts[static_cast<size_t>(i)], c);
    if (!cfg.identity_io) {
      st.transition = nn::Conv2dLayer(ps, p + ".transition", c, ch[static_cast<size_t>(i) + 1], 1, rng);
    }
  }
  m.mid.lsrbs = make_lsrbs("mid", cfg.lsrb_counts[3], ch[3]);
  m.mid.hdebs = make_hdebs("mid", cfg.hdeb_counts[3], ch[3]);
  for (int j = 0; j < 3; ++j) {
    auto& st = m.dec[static_cast<size_t>(j)];
    const std::string p = "dec" + std::to_string(j);
    const int c = ch[static_cast<size_t>(4 + j)];
    if (!cfg.identity_io) {
      st.transition = nn::Conv2dLayer(ps, p + ".transition", ch[static_cast<size_t>(3 + j)], c, 1, rng);
    }
    st.lsrbs = make_lsrbs(p, cfg.lsrb_counts[static_cast<size_t>(4 + j)], c);
    st.hdebs = make_hdebs(p, cfg.hdeb_counts[static_cast<size_t>(4 + j)], c);
  }
  if (!cfg.identity_io) {
    m.head = nn::Conv2dLayer(ps, "head", ch[6], cfg.in_channels, 3, rng);
  }
  return m;
}

Tensor Model::forward(const Tensor& x, bool training) const {
  if (x.rank() != 4 || x.dim(1) != cfg.in_channels) {
    throw DimensionError("model: expected (N," + std::to_string(cfg.in_channels) +
                         ",H,W) input, got " + shape_str(x.shape()));
  }
  const auto h = x.dim(2), w = x.dim(3);
  if (h % kSizeMultiple != 0 || w % kSizeMultiple != 0) {
    throw DimensionError(
        "model: spatial size " + std::to_string(h) + "x" + std::to_string(w) +
        " must be divisible by " + std::to_string(kSizeMultiple) +
        "; pad the input (next valid size " +
        std::to_string((h + kSizeMultiple - 1) / kSizeMultiple * kSizeMultiple) + "x" +
        std::to_string((w + kSizeMultiple - 1) / kSizeMultiple * kSizeMultiple) + ")");
  }

  Tensor t = cfg.identity_io ? x : stem.forward(x);
  struct Skip {
    Tensor high;
    std::int64_t h, w;
  };
  std::array<Skip, 3> skips;

  for (int i = 0; i < 3; ++i) {
    const auto& st = enc[static_cast<size_t>(i)];
    FreqPair fp = lftm::decompose(t);
    Tensor fl = fp.low;
    if (cfg.mdfm_w_one) {
      fl = st.mdfm.forward(fl, fl, /*force_w_one=*/true);
    } else {
      fl = st.mdfm.forward(st.spatial_down.forward(t), fl);
    }
    if (!cfg.stub_blocks) {
      for (const auto& b : st.lsrbs) fl = b.forward(fl);
    }
    Tensor fh = fp.high;
    if (!cfg.stub_blocks) {
      for (const auto& b : st.hdebs) fh = b.forward(fl, fh);
    }
    skips[static_cast<size_t>(i)] = {fh, fp.orig_h, fp.orig_w};
    t = cfg.identity_io ? fl : st.transition.forward(fl);
  }

  {
    FreqPair fp = lftm::decompose(t);
    Tensor fl = fp.low;
    Tensor fh = fp.high;
    if (!cfg.stub_blocks) {
      for (const auto& b : mid.lsrbs) fl = b.forward(fl);
      for (const auto& b : mid.hdebs) fh = b.forward(fl, fh);
    }
    fp.low = fl;
    fp.high = fh;
    t = lftm::reconstruct(fp);
  }

  for (int j = 0; j < 3; ++j) {
    const auto& st = dec[static_cast<size_t>(j)];
    Tensor fl = cfg.identity_io ? t : st.transition.forward(t);
    if (!cfg.stub_blocks) {
      for (const auto& b : st.lsrbs) fl = b.forward(fl);
    }
    const auto& sk = skips[static_cast<size_t>(2 - j)];
    Tensor fh = sk.high;
    if (!cfg.stub_blocks) {
      for (const auto& b : st.hdebs) fh = b.forward(fl, fh);
    }
    FreqPair fp;
    fp.low = fl;
    fp.high = fh;
    fp.orig_h = sk.h;
    fp.orig_w = sk.w;
    t = lftm::reconstruct(fp);
  }

  Tensor out = cfg.identity_io ? t : head.forward(t);
  if (!training) out = ops::clamp01(out);
  return out;
}

namespace {

struct MacWalk {
  FlopReport r;

  void conv(std::int64_t out_h, std::int64_t out_w, std::int64_t in_c, std::int64_t out_c,
            std::int64_t k, std::int64_t groups, std::int64_t* branch) {
    const std::int64_t macs = out_h * out_w * out_c * (in_c / groups) * k * k;
    r.conv_macs += macs;
    if (branch) *branch += macs;
  }
  void lin(std::int64_t sites, std::int64_t din, std::int64_t dout, std::int64_t* branch) {
    const std::int64_t macs = sites * din * dout;
    r.linear_macs += macs;
    if (branch) *branch += macs;
  }
  // 4 MACs per (site, channel, state): state decay, input injection (2), readout.
  void scan4dir(std::int64_t sites, std::int64_t c, std::int64_t s) {
    r.scan_macs += 4 * sites * 4 * c * s;
  }
  std::int64_t scan4dir_cost(std::int64_t sites, std::int64_t c, std::int64_t s) const {
    return 4 * sites * 4 * c * s;
  }

  void lftm_split(std::int64_t h, std::int64_t w, std::int64_t c) {
    // decompose + eventual reconstruct: four separable 5-tap depthwise passes
    // at full resolution plus two at the expanded size.
    r.conv_macs += 8 * h * w * c * 5;
  }

  void vssm(std::int64_t lh, std::int64_t lw, std::int64_t c, std::int64_t s) {
    const std::int64_t sites = lh * lw;
    auto* low = &r.low_branch_macs;
    lin(sites, c, c, low);      // in_proj
    lin(sites, c, c, low);      // gate_proj
    lin(sites, c, c, low);      // out_proj
    lin(sites, c, c, low);      // dt_proj
    lin(sites, c, s, low);      // b_proj
    lin(sites, c, s, low);      // c_proj
    conv(lh, lw, c, c, 3, c, low);  // dwconv
    scan4dir(sites, c, s);
    // The scan runs on the half-resolution band; the hypothetical
    // full-resolution scan covers four times the sites.
    r.scan_macs_full_res += scan4dir_cost(4 * sites, c, s);
  }

  void gffn(std::int64_t h, std::int64_t w, std::int64_t c, std::int64_t* branch) {
    conv(h, w, c, 2 * c, 1, 1, branch);
    conv(h, w, 2 * c, 2 * c, 3, 2 * c, branch);
    conv(h, w, c, c, 3, c, branch);
  }

  void mdfm(std::int64_t lh, std::int64_t lw, std::int64_t c) {
    auto* low = &r.low_branch_macs;
    conv(lh, lw, c, c, 3, 1, low);
    conv(lh, lw, c, c, 5, 1, low);
    conv(lh, lw, 2 * c, c, 1, 1, low);
    conv(lh, lw, c, c, 3, 1, low);  // resg c1
    conv(lh, lw, c, c, 3, 1, low);  // resg c2
    conv(lh, lw, c, c, 1, 1, low);  // fuse_out
    const std::int64_t mid_c = std::max<std::int64_t>(1, c / 4);
    conv(1, 1, c, mid_c, 1, 1, low);
    conv(1, 1, mid_c, c, 1, 1, low);
  }

  void pixel_attention(std::int64_t h, std::int64_t w, std::int64_t c, int p,
                       std::int64_t* branch) {
    const auto ph = (h + p - 1) / p, pw = (w + p - 1) / p;
    conv(ph, pw, c, c, 1, 1, branch);  // a1
    conv(ph, pw, c, c, 1, 1, branch);  // a2
    conv(h, w, c, c, 1, 1, branch);    // proj
  }

  void hdeb(std::int64_t h, std::int64_t w, std::int64_t c) {
    auto* hi = &r.high_branch_macs;
    conv(h, w, c, c, 3, c, hi);  // dconv_low on upsampled guidance
    pixel_attention(h, w, c, 2, hi);
    pixel_attention(h, w, c, 4, hi);
    conv(h, w, c, c, 3, c, hi);  // dconv_high
    conv(h, w, c, c, 3, 1, hi);  // conv
    gffn(h, w, c, hi);
  }

  void stage(std::int64_t h, std::int64_t w, std::int64_t c, int m_count, int n_count,
             std::int64_t s, bool with_mdfm) {
    const auto lh = (h + 1) / 2, lw = (w + 1) / 2;
    lftm_split(h, w, c);
    if (with_mdfm) {
      conv(lh, lw, c, c, 3, 1, &r.low_branch_macs);  // spatial_down
      mdfm(lh, lw, c);
    }
    for (int k = 0; k < m_count; ++k) {
      vssm(lh, lw, c, s);
      gffn(lh, lw, c, &r.low_branch_macs);
    }
    for (int k = 0; k < n_count; ++k) hdeb(h, w, c);
  }
};

}  // namespace

FlopReport flop_estimate(const NetworkConfig& cfg, std::int64_t h, std::int64_t w) {
  cfg.validate();
  MacWalk mw;
  const auto& ch = cfg.channels;
  const std::int64_t s = cfg.nstate;
  if (!cfg.identity_io) mw.conv(h, w, cfg.in_channels, ch[0], 3, 1, nullptr);  // stem

  std::int64_t ch_prev = ch[0];
  std::int64_t cur_h = h, cur_w = w;
  for (int i = 0; i < 3; ++i) {
    const std::int64_t c = ch[static_cast<size_t>(i)];
    mw.stage(cur_h, cur_w, c, cfg.lsrb_counts[static_cast<size_t>(i)],
             cfg.hdeb_counts[static_cast<size_t>(i)], s, /*with_mdfm=*/true);
    cur_h = (cur_h + 1) / 2;
    cur_w = (cur_w + 1) / 2;
    if (!cfg.identity_io) {
      mw.conv(cur_h, cur_w, c, ch[static_cast<size_t>(i) + 1], 1, 1, nullptr);  // transition
    }
    ch_prev = ch[static_cast<size_t>(i) + 1];
  }
  mw.stage(cur_h, cur_w, ch[3], cfg.lsrb_counts[3], cfg.hdeb_counts[3], s, /*with_mdfm=*/false);
  for (int j = 0; j < 3; ++j) {
    const std::int64_t c = ch[static_cast<size_t>(4 + j)];
    if (!cfg.identity_io) mw.conv(cur_h, cur_w, ch_prev, c, 1, 1, nullptr);
    // Decoder LSRBs run at the incoming (half) resolution; HDEBs at the
    // skip's full resolution.
    for (int k = 0; k < cfg.lsrb_counts[static_cast<size_t>(4 + j)]; ++k) {
      mw.vssm(cur_h, cur_w, c, s);
      mw.gffn(cur_h, cur_w, c, &mw.r.low_branch_macs);
    }
    cur_h *= 2;
    cur_w *= 2;
    for (int k = 0; k < cfg.hdeb_counts[static_cast<size_t>(4 + j)]; ++k) mw.hdeb(cur_h, cur_w, c);
    mw.r.conv_macs += 2 * cur_h * cur_w * c * 5;  // inverse-transform expand
    ch_prev = c;
  }
  if (!cfg.identity_io) mw.conv(cur_h, cur_w, ch[6], cfg.in_channels, 3, 1, nullptr);  // head
  return mw.r;
}

std::string FlopReport::to_string() const {
  std::ostringstream os;
  const double g = 1e9;
  os << "MAC estimate\n"
     << "  conv:             " << conv_macs << " (" << conv_macs / g << " G)\n"
     << "  linear:           " << linear_macs << " (" << linear_macs / g << " G)\n"
     << "  scan:             " << scan_macs << " (" << scan_macs / g << " G)\n"
     << "  total:            " << total() << " (" << total() / g << " G)\n"
     << "  low-branch share: " << low_branch_macs << "\n"
     << "  high-branch share:" << high_branch_macs << "\n"
     << "  scan @ full res:  " << scan_macs_full_res << " (ratio "
     << (scan_macs > 0 ? static_cast<double>(scan_macs_full_res) / static_cast<double>(scan_macs)
                       : 0.0)
     << "x)\n";
  return os.str();
}

std::string Model::describe(std::int64_t h, std::int64_t w) const {
  std::ostringstream os;
  auto prefix_params = [this](const std::string& p) {
    std::int64_t n = 0;
    for (const auto& [k, v] : params.params) {
      if (k.rfind(p, 0) == 0) n += v.numel();
    }
    return n;
  };
  os << "stage        res        ch   LSRB HDEB params\n";
  std::int64_t cur_h = h, cur_w = w;
  for (int i = 0; i < 3; ++i) {
    os << "enc" << i << "        " << cur_h << "x" << cur_w << "      " << cfg.channels[static_cast<size_t>(i)]
       << "   " << cfg.lsrb_counts[static_cast<size_t>(i)] << "    " << cfg.hdeb_counts[static_cast<size_t>(i)]
       << "    " << prefix_params("enc" + std::to_string(i) + ".") << "\n";
    cur_h = (cur_h + 1) / 2;
    cur_w = (cur_w + 1) / 2;
  }
  os << "mid         " << cur_h << "x" << cur_w << "        " << cfg.channels[3] << "  "
     << cfg.lsrb_counts[3] << "    " << cfg.hdeb_counts[3] << "    " << prefix_params("mid.")
     << "\n";
  for (int j = 0; j < 3; ++j) {
    cur_h *= 2;
    cur_w *= 2;
    os << "dec" << j << "        " << cur_h << "x" << cur_w << "      "
       << cfg.channels[static_cast<size_t>(4 + j)] << "   " << cfg.lsrb_counts[static_cast<size_t>(4 + j)]
       << "    " << cfg.hdeb_counts[static_cast<size_t>(4 + j)] << "    "
       << prefix_params("dec" + std::to_string(j) + ".") << "\n";
  }
  os << "total parameters: " << parameter_count() << "\n";
  os << flop_estimate(cfg, h, w).to_string();
  return os.str();
}

}  // namespace lapmamba::network
