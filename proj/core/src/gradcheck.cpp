#include "lapmamba/gradcheck.hpp"

#include <cmath>

#include "lapmamba/blocks.hpp"
#include "lapmamba/objectives.hpp"

namespace lapmamba::gradcheck {

double max_rel_error(const std::function<Tensor()>& loss_fn, const std::vector<Tensor>& wrt,
                     double h) {
  for (const auto& t : wrt) {
    const_cast<Tensor&>(t).set_requires_grad(true);
    const_cast<Tensor&>(t).zero_grad();
  }
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tensor loss = loss_fn();
    tape.backward(loss);
  }
  for (const auto& t : wrt) analytic.push_back(t.grad());

  double worst = 0.0;
  NoGradScope ng;
  for (size_t ti = 0; ti < wrt.size(); ++ti) {
    auto& d = const_cast<Tensor&>(wrt[ti]).data();
    for (size_t i = 0; i < d.size(); ++i) {
      const double saved = d[i];
      d[i] = saved + h;
      const double fp = loss_fn().item();
      d[i] = saved - h;
      const double fm = loss_fn().item();
      d[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[ti][i];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

namespace {

// Generic scalar readout: dot with a fixed random weighting so every output
// element contributes a distinct gradient path.
Tensor readout(const Tensor& out, const Tensor& weights) {
  return ops::sum(ops::mul(out, weights));
}

}  // namespace

std::vector<CheckResult> run_suite(std::uint64_t seed, double tol) {
  std::vector<CheckResult> results;
  auto record = [&](const std::string& name, double err) {
    results.push_back({name, err, err <= tol});
  };

  Rng rng(seed);
  const ssm2d::VssmConfig vcfg{4, ssm2d::MergeMode::Sum};

  {
    nn::ParamStore ps;
    nn::Conv2dLayer conv(ps, "conv", 3, 4, 3, rng, /*stride=*/1, /*padding=*/-1);
    Tensor x = Tensor::uniform({1, 3, 6, 6}, rng, -1.0, 1.0);
    Tensor rw = Tensor::uniform({1, 4, 6, 6}, rng, -1.0, 1.0);
    std::vector<Tensor> wrt{x};
    for (auto& [k, v] : ps.params) wrt.push_back(v);
    record("conv2d", max_rel_error([&] { return readout(conv.forward(x), rw); }, wrt));
  }
  {
    nn::ParamStore ps;
    nn::LinearLayer lin(ps, "lin", 5, 7, rng);
    Tensor x = Tensor::uniform({2, 6, 5}, rng, -1.0, 1.0);
    Tensor rw = Tensor::uniform({2, 6, 7}, rng, -1.0, 1.0);
    std::vector<Tensor> wrt{x};
    for (auto& [k, v] : ps.params) wrt.push_back(v);
    record("linear", max_rel_error([&] { return readout(lin.forward(x), rw); }, wrt));
  }
  {
    nn::ParamStore ps;
    nn::LayerNormLayer ln(ps, "ln", 5);
    Tensor x = Tensor::uniform({1, 5, 4, 4}, rng, -1.0, 1.0);
    Tensor rw = Tensor::uniform({1, 5, 4, 4}, rng, -1.0, 1.0);
    std::vector<Tensor> wrt{x};
    for (auto& [k, v] : ps.params) wrt.push_back(v);
    record("layer_norm", max_rel_error([&] { return readout(ln.forward(x), rw); }, wrt));
  }
  {
    nn::ParamStore ps;
    blocks::Gffn gffn(ps, "gffn", 4, rng);
    Tensor x = Tensor::uniform({1, 4, 5, 5}, rng, -1.0, 1.0);
    Tensor rw = Tensor::uniform({1, 4, 5, 5}, rng, -1.0, 1.0);
    std::vector<Tensor> wrt{x};
    for (auto& [k, v] : ps.params) wrt.push_back(v);
    record("gffn", max_rel_error([&] { return readout(gffn.forward(x), rw); }, wrt));
  }
  {
    nn::ParamStore ps;
    ssm2d::Vssm vssm(ps, "vssm", 4, vcfg, rng);
    Tensor x = Tensor::uniform({1, 4, 4, 5}, rng, -1.0, 1.0);
    Tensor rw = Tensor::uniform({1, 4, 4, 5}, rng, -1.0, 1.0);
    std::vector<Tensor> wrt{x};
    for (auto& [k, v] : ps.params) wrt.push_back(v);
    record("vssm", max_rel_error([&] { return readout(vssm.forward(x), rw); }, wrt));
  }
  {
    nn::ParamStore ps;
    blocks::Lsrb lsrb(ps, "lsrb", 4, vcfg, rng);
    Tensor x = Tensor::uniform({1, 4, 4, 4}, rng, -1.0, 1.0);
    Tensor rw = Tensor::uniform({1, 4, 4, 4}, rng, -1.0, 1.0);
    std::vector<Tensor> wrt{x};
    for (auto& [k, v] : ps.params) wrt.push_back(v);
    record("lsrb", max_rel_error([&] { return readout(lsrb.forward(x), rw); }, wrt));
  }
  {
    nn::ParamStore ps;
    blocks::Mdfm mdfm(ps, "mdfm", 4, rng);
    Tensor fs = Tensor::uniform({1, 4, 4, 4}, rng, -1.0, 1.0);
    Tensor fl = Tensor::uniform({1, 4, 4, 4}, rng, -1.0, 1.0);
    Tensor rw = Tensor::uniform({1, 4, 4, 4}, rng, -1.0, 1.0);
    std::vector<Tensor> wrt{fs, fl};
    for (auto& [k, v] : ps.params) wrt.push_back(v);
    record("mdfm", max_rel_error([&] { return readout(mdfm.forward(fs, fl), rw); }, wrt));
  }
  {
    nn::ParamStore ps;
    blocks::Hdeb hdeb(ps, "hdeb", 4, rng);
    Tensor fl = Tensor::uniform({1, 4, 3, 3}, rng, -1.0, 1.0);
    Tensor fh = Tensor::uniform({1, 4, 6, 6}, rng, -1.0, 1.0);
    Tensor rw = Tensor::uniform({1, 4, 6, 6}, rng, -1.0, 1.0);
    std::vector<Tensor> wrt{fl, fh};
    for (auto& [k, v] : ps.params) wrt.push_back(v);
    record("hdeb", max_rel_error([&] { return readout(hdeb.forward(fl, fh), rw); }, wrt));
  }
  {
    // Composite loss w.r.t. the prediction. Keep |pred - gt| bounded away
    // from zero so the L1 subgradient is smooth at every probe.
    Tensor pred = Tensor::uniform({1, 3, 8, 8}, rng, 0.3, 0.7);
    Tensor gt = Tensor::zeros({1, 3, 8, 8});
    for (size_t i = 0; i < gt.data().size(); ++i) {
      gt.data()[i] = pred.data()[i] + (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 0.25);
    }
    std::vector<Tensor> wrt{pred};
    record("total_loss",
           max_rel_error([&] { return objectives::total_loss(pred, gt, 0.1, 2).total; }, wrt));
  }
  return results;
}

bool all_pass(const std::vector<CheckResult>& results) {
  for (const auto& r : results)
    if (!r.pass) return false;
  return !results.empty();
}

}  // namespace lapmamba::gradcheck
