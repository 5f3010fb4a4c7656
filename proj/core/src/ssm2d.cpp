#include "lapmamba/ssm2d.hpp"

#include <cmath>

namespace lapmamba::ssm2d {

std::array<std::vector<std::int64_t>, 4> direction_perms(std::int64_t h, std::int64_t w) {
  const auto l = h * w;
  std::array<std::vector<std::int64_t>, 4> perms;
  for (auto& p : perms) p.resize(static_cast<size_t>(l));
  for (std::int64_t k = 0; k < l; ++k) {
    perms[0][static_cast<size_t>(k)] = k;
    perms[1][static_cast<size_t>(k)] = l - 1 - k;
    const std::int64_t col_site = (k % h) * w + k / h;
    perms[2][static_cast<size_t>(k)] = col_site;
    perms[3][static_cast<size_t>(l - 1 - k)] = col_site;
  }
  return perms;
}

std::vector<std::int64_t> invert_perm(const std::vector<std::int64_t>& p) {
  std::vector<std::int64_t> inv(p.size());
  for (size_t i = 0; i < p.size(); ++i) inv[static_cast<size_t>(p[i])] = static_cast<std::int64_t>(i);
  return inv;
}

DirectionalSequences expand_4dir(const Tensor& x_nchw) {
  if (x_nchw.rank() != 4) {
    throw DimensionError("expand_4dir: expected NCHW, got " + shape_str(x_nchw.shape()));
  }
  DirectionalSequences out;
  out.h = x_nchw.dim(2);
  out.w = x_nchw.dim(3);
  const Tensor sites = ops::nchw_to_nlc(x_nchw);
  const auto perms = direction_perms(out.h, out.w);
  for (int d = 0; d < 4; ++d) out.seq[static_cast<size_t>(d)] = ops::permute_sites(sites, perms[static_cast<size_t>(d)]);
  return out;
}

Tensor merge_4dir(const DirectionalSequences& seqs, MergeMode mode) {
  const auto l = seqs.h * seqs.w;
  for (const auto& s : seqs.seq) {
    if (s.dim(1) != l) {
      throw DimensionError("merge_4dir: sequence length " + std::to_string(s.dim(1)) +
                           " != H*W " + std::to_string(l));
    }
  }
  const auto perms = direction_perms(seqs.h, seqs.w);
  Tensor acc;
  for (int d = 0; d < 4; ++d) {
    Tensor grid = ops::permute_sites(seqs.seq[static_cast<size_t>(d)], invert_perm(perms[static_cast<size_t>(d)]));
    acc = d == 0 ? grid : ops::add(acc, grid);
  }
  if (mode == MergeMode::Mean) acc = ops::scale(acc, 0.25);
  return ops::nlc_to_nchw(acc, seqs.h, seqs.w);
}

Vssm::Vssm(nn::ParamStore& ps, const std::string& prefix, int channels_, const VssmConfig& cfg_,
           Rng& rng)
    : cfg(cfg_), channels(channels_) {
  const int s = cfg.nstate;
  in_proj = nn::LinearLayer(ps, prefix + ".in_proj", channels, channels, rng);
  gate_proj = nn::LinearLayer(ps, prefix + ".gate_proj", channels, channels, rng);
  out_proj = nn::LinearLayer(ps, prefix + ".out_proj", channels, channels, rng);
  b_proj = nn::LinearLayer(ps, prefix + ".b_proj", channels, s, rng);
  c_proj = nn::LinearLayer(ps, prefix + ".c_proj", channels, s, rng);
  dt_proj = nn::LinearLayer(ps, prefix + ".dt_proj", channels, channels, rng, /*bias=*/false);
  dwconv = nn::Conv2dLayer(ps, prefix + ".dwconv", channels, channels, 3, rng, 1, -1, channels);
  ln = nn::LayerNormLayer(ps, prefix + ".ln", channels);

  // HiPPO-inspired ramp: A[d,s] = -(s+1).
  std::vector<double> alog(static_cast<size_t>(channels * s));
  for (int d = 0; d < channels; ++d)
    for (int k = 0; k < s; ++k) alog[static_cast<size_t>(d * s + k)] = std::log(double(k + 1));
  a_log = ps.add(prefix + ".a_log", Tensor::from_data({channels, s}, std::move(alog)));
  d_skip = ps.add(prefix + ".d_skip", Tensor::full({channels}, 1.0));

  // Bias the step size so softplus(dt_bias) lands in [1e-3, 1e-1].
  std::vector<double> dtb(static_cast<size_t>(channels));
  for (int d = 0; d < channels; ++d) {
    const double dt = 1e-3 * std::pow(100.0, rng.uniform());  // log-uniform in [1e-3, 1e-1]
    dtb[static_cast<size_t>(d)] = std::log(std::expm1(dt));   // inverse softplus
  }
  dt_proj.b = ps.add(prefix + ".dt_proj.b", Tensor::from_data({channels}, std::move(dtb)));
}

Tensor Vssm::forward(const Tensor& x) const {
  if (x.dim(1) != channels) {
    throw DimensionError("vssm: input has " + std::to_string(x.dim(1)) + " channels, expected " +
                         std::to_string(channels));
  }
  const auto h = x.dim(2), w = x.dim(3);
  const Tensor x_sites = ops::nchw_to_nlc(x);

  Tensor x1 = ops::silu(dwconv.forward(ops::nlc_to_nchw(in_proj.forward(x_sites), h, w)));
  const Tensor u = ops::nchw_to_nlc(x1);
  const Tensor delta = ops::softplus(dt_proj.forward(u));
  const Tensor b_map = b_proj.forward(u);
  const Tensor c_map = c_proj.forward(u);
  const Tensor a = ops::scale(ops::exp_t(a_log), -1.0);

  const auto perms = direction_perms(h, w);
  Tensor acc;
  for (int d = 0; d < 4; ++d) {
    const auto& p = perms[static_cast<size_t>(d)];
    Tensor y = ops::selective_scan(ops::permute_sites(u, p), ops::permute_sites(delta, p),
                                   ops::permute_sites(b_map, p), ops::permute_sites(c_map, p), a,
                                   d_skip);
    y = ops::permute_sites(y, invert_perm(p));
    acc = d == 0 ? y : ops::add(acc, y);
  }
  if (cfg.merge == MergeMode::Mean) acc = ops::scale(acc, 0.25);

  Tensor x2 = ln.forward(ops::nlc_to_nchw(acc, h, w));
  Tensor gate = ops::silu(gate_proj.forward(x_sites));
  Tensor fused = ops::mul(ops::nchw_to_nlc(x2), gate);
  return ops::nlc_to_nchw(out_proj.forward(fused), h, w);
}

}  // namespace lapmamba::ssm2d
