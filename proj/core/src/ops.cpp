#include "lapmamba/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace lapmamba::ops {

namespace {

using Impl = std::shared_ptr<TensorImpl>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank4(const Tensor& x, const char* op) {
  if (x.rank() != 4) {
    throw DimensionError(std::string(op) + ": expected NCHW tensor, got " + shape_str(x.shape()));
  }
}

// The output grad may never have been touched; treat that as all-zero and skip.
const std::vector<double>* out_grad(const Impl& out) {
  return out->grad.empty() ? nullptr : &out->grad;
}

Tensor binary_ew(const Tensor& a, const Tensor& b, const char* name, double (*f)(double, double),
                 void (*df)(double, double, double, double&, double&)) {
  require_same_shape(a, b, name);
  const auto n = a.data().size();
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = f(a.data()[i], b.data()[i]);
  Tensor y = make_tensor(a.shape(), std::move(out));
  check_finite(y, name);
  if (grad_enabled({&a, &b})) {
    y.set_requires_grad(true);
    Impl ai = a.impl(), bi = b.impl(), yi = y.impl();
    Tape::active()->record([ai, bi, yi, df] {
      const auto* gy = out_grad(yi);
      if (!gy) return;
      auto& ga = ai->ensure_grad();
      auto& gb = bi->ensure_grad();
      for (size_t i = 0; i < gy->size(); ++i) {
        double da = 0, db = 0;
        df(ai->data[i], bi->data[i], (*gy)[i], da, db);
        ga[i] += da;
        gb[i] += db;
      }
    });
  }
  return y;
}

Tensor unary_ew(const Tensor& x, const char* name, double (*f)(double),
                double (*df)(double /*x*/, double /*y*/)) {
  const auto n = x.data().size();
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = f(x.data()[i]);
  Tensor y = make_tensor(x.shape(), std::move(out));
  check_finite(y, name);
  if (grad_enabled({&x})) {
    y.set_requires_grad(true);
    Impl xi = x.impl(), yi = y.impl();
    Tape::active()->record([xi, yi, df] {
      const auto* gy = out_grad(yi);
      if (!gy) return;
      auto& gx = xi->ensure_grad();
      for (size_t i = 0; i < gy->size(); ++i) gx[i] += (*gy)[i] * df(xi->data[i], yi->data[i]);
    });
  }
  return y;
}

double sigmoid_scalar(double v) { return 1.0 / (1.0 + std::exp(-v)); }

double softplus_scalar(double v) {
  if (v > 30.0) return v;
  return std::log1p(std::exp(v));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_ew(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double g, double& da, double& db) {
        da = g;
        db = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_ew(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double g, double& da, double& db) {
        da = g;
        db = -g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_ew(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y, double g, double& da, double& db) {
        da = g * y;
        db = g * x;
      });
}

Tensor scale(const Tensor& a, double s) {
  const auto n = a.data().size();
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = a.data()[i] * s;
  Tensor y = make_tensor(a.shape(), std::move(out));
  check_finite(y, "scale");
  if (grad_enabled({&a})) {
    y.set_requires_grad(true);
    Impl ai = a.impl(), yi = y.impl();
    Tape::active()->record([ai, yi, s] {
      const auto* gy = out_grad(yi);
      if (!gy) return;
      auto& ga = ai->ensure_grad();
      for (size_t i = 0; i < gy->size(); ++i) ga[i] += (*gy)[i] * s;
    });
  }
  return y;
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) {
    throw DimensionError("scale_by: scale must be a single element, got " + shape_str(s.shape()));
  }
  const double sv = s.data()[0];
  const auto n = a.data().size();
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = a.data()[i] * sv;
  Tensor y = make_tensor(a.shape(), std::move(out));
  check_finite(y, "scale_by");
  if (grad_enabled({&a, &s})) {
    y.set_requires_grad(true);
    Impl ai = a.impl(), si = s.impl(), yi = y.impl();
    Tape::active()->record([ai, si, yi] {
      const auto* gy = out_grad(yi);
      if (!gy) return;
      auto& ga = ai->ensure_grad();
      auto& gs = si->ensure_grad();
      const double sv2 = si->data[0];
      double acc = 0.0;
      for (size_t i = 0; i < gy->size(); ++i) {
        ga[i] += (*gy)[i] * sv2;
        acc += (*gy)[i] * ai->data[i];
      }
      gs[0] += acc;
    });
  }
  return y;
}

Tensor add_scalar(const Tensor& a, double s) {
  const auto n = a.data().size();
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = a.data()[i] + s;
  Tensor y = make_tensor(a.shape(), std::move(out));
  if (grad_enabled({&a})) {
    y.set_requires_grad(true);
    Impl ai = a.impl(), yi = y.impl();
    Tape::active()->record([ai, yi] {
      const auto* gy = out_grad(yi);
      if (!gy) return;
      auto& ga = ai->ensure_grad();
      for (size_t i = 0; i < gy->size(); ++i) ga[i] += (*gy)[i];
    });
  }
  return y;
}

Tensor relu(const Tensor& x) {
  return unary_ew(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor silu(const Tensor& x) {
  return unary_ew(
      x, "silu", [](double v) { return v * sigmoid_scalar(v); },
      [](double v, double) {
        const double s = sigmoid_scalar(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary_ew(
      x, "sigmoid", [](double v) { return sigmoid_scalar(v); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& x) {
  return unary_ew(
      x, "softplus", [](double v) { return softplus_scalar(v); },
      [](double v, double) { return sigmoid_scalar(v); });
}

Tensor exp_t(const Tensor& x) {
  return unary_ew(
      x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor abs_t(const Tensor& x) {
  return unary_ew(
      x, "abs", [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor clamp01(const Tensor& x) {
  if (grad_enabled({&x})) {
    throw ContractError("clamp01 is inference-only; no gradient is defined");
  }
  const auto n = x.data().size();
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = std::clamp(x.data()[i], 0.0, 1.0);
  return make_tensor(x.shape(), std::move(out));
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor y = Tensor::scalar(acc);
  if (grad_enabled({&x})) {
    y.set_requires_grad(true);
    Impl xi = x.impl(), yi = y.impl();
    Tape::active()->record([xi, yi] {
      const auto* gy = out_grad(yi);
      if (!gy) return;
      auto& gx = xi->ensure_grad();
      for (auto& g : gx) g += (*gy)[0];
    });
  }
  return y;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(new_shape));
  }
  Tensor y = make_tensor(std::move(new_shape), x.data());
  if (grad_enabled({&x})) {
    y.set_requires_grad(true);
    Impl xi = x.impl(), yi = y.impl();
    Tape::active()->record([xi, yi] {
      const auto* gy = out_grad(yi);
      if (!gy) return;
      auto& gx = xi->ensure_grad();
      for (size_t i = 0; i < gy->size(); ++i) gx[i] += (*gy)[i];
    });
  }
  return y;
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  require_rank4(parts[0], "concat");
  const auto n = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
  std::int64_t c_total = 0;
  for (const auto& p : parts) {
    require_rank4(p, "concat");
    if (p.dim(0) != n || p.dim(2) != h || p.dim(3) != w) {
      throw DimensionError("concat: incompatible shapes " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    c_total += p.dim(1);
  }
  const auto hw = static_cast<size_t>(h * w);
  std::vector<double> out(static_cast<size_t>(n * c_total) * hw);
  size_t c_off = 0;
  for (const auto& p : parts) {
    const auto pc = static_cast<size_t>(p.dim(1));
    for (std::int64_t ni = 0; ni < n; ++ni) {
      const double* src = p.data().data() + static_cast<size_t>(ni) * pc * hw;
      double* dst = out.data() + (static_cast<size_t>(ni) * static_cast<size_t>(c_total) + c_off) * hw;
      std::memcpy(dst, src, pc * hw * sizeof(double));
    }
    c_off += pc;
  }
  Tensor y = make_tensor({n, c_total, h, w}, std::move(out));
  bool rec = false;
  for (const auto& p : parts)
    if (grad_enabled({&p})) rec = true;
  if (rec) {
    y.set_requires_grad(true);
    std::vector<Impl> impls;
    for (const auto& p : parts) impls.push_back(p.impl());
    Impl yi = y.impl();
    Tape::active()->record([impls, yi, n, c_total, hw] {
      const auto* gy = out_grad(yi);
      if (!gy) return;
      size_t off = 0;
      for (const auto& pi : impls) {
        const auto pc = static_cast<size_t>(pi->shape[1]);
        auto& gp = pi->ensure_grad();
        for (std::int64_t ni = 0; ni < n; ++ni) {
          const double* src =
              gy->data() + (static_cast<size_t>(ni) * static_cast<size_t>(c_total) + off) * hw;
          double* dst = gp.data() + static_cast<size_t>(ni) * pc * hw;
          for (size_t i = 0; i < pc * hw; ++i) dst[i] += src[i];
        }
        off += pc;
      }
    });
  }
  return y;
}

std::vector<Tensor> split_channels(const Tensor& x, int n_parts) {
  require_rank4(x, "split");
  const auto c = x.dim(1);
  if (n_parts <= 0 || c % n_parts != 0) {
    throw DimensionError("split: channel count " + std::to_string(c) + " not divisible into " +
                         std::to_string(n_parts) + " parts");
  }
  const auto n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const auto pc = c / n_parts;
  const auto hw = static_cast<size_t>(h * w);
  std::vector<Tensor> parts;
  for (int k = 0; k < n_parts; ++k) {
    std::vector<double> out(static_cast<size_t>(n * pc) * hw);
    for (std::int64_t ni = 0; ni < n; ++ni) {
      const double* src =
          x.data().data() + (static_cast<size_t>(ni * c) + static_cast<size_t>(k * pc)) * hw;
      std::memcpy(out.data() + static_cast<size_t>(ni * pc) * hw, src,
                  static_cast<size_t>(pc) * hw * sizeof(double));
    }
    Tensor part = make_tensor({n, pc, h, w}, std::move(out));
    if (grad_enabled({&x})) {
      part.set_requires_grad(true);
      Impl xi = x.impl(), pi = part.impl();
      Tape::active()->record([xi, pi, n, c, pc, k, hw] {
        const auto* gp = out_grad(pi);
        if (!gp) return;
        auto& gx = xi->ensure_grad();
        for (std::int64_t ni = 0; ni < n; ++ni) {
          double* dst = gx.data() + (static_cast<size_t>(ni * c) + static_cast<size_t>(k * pc)) * hw;
          const double* src = gp->data() + static_cast<size_t>(ni * pc) * hw;
          for (size_t i = 0; i < static_cast<size_t>(pc) * hw; ++i) dst[i] += src[i];
        }
      });
    }
    parts.push_back(std::move(part));
  }
  return parts;
}

Tensor permute_sites(const Tensor& x, const std::vector<std::int64_t>& perm) {
  if (x.rank() != 3) throw DimensionError("permute_sites: expected (N,L,D), got " + shape_str(x.shape()));
  const auto n = x.dim(0), l = x.dim(1), d = x.dim(2);
  if (static_cast<std::int64_t>(perm.size()) != l) {
    throw DimensionError("permute_sites: permutation length " + std::to_string(perm.size()) +
                         " != L " + std::to_string(l));
  }
  std::vector<double> out(x.data().size());
  const auto ds = static_cast<size_t>(d);
  for (std::int64_t ni = 0; ni < n; ++ni) {
    const size_t base = static_cast<size_t>(ni * l) * ds;
    for (std::int64_t i = 0; i < l; ++i) {
      std::memcpy(out.data() + base + static_cast<size_t>(i) * ds,
                  x.data().data() + base + static_cast<size_t>(perm[static_cast<size_t>(i)]) * ds,
                  ds * sizeof(double));
    }
  }
  Tensor y = make_tensor(x.shape(), std::move(out));
  if (grad_enabled({&x})) {
    y.set_requires_grad(true);
    Impl xi = x.impl(), yi = y.impl();
    auto p = perm;
    Tape::active()->record([xi, yi, p, n, l, ds] {
      const auto* gy = out_grad(yi);
      if (!gy) return;
      auto& gx = xi->ensure_grad();
      for (std::int64_t ni = 0; ni < n; ++ni) {
        const size_t base = static_cast<size_t>(ni * l) * ds;
        for (std::int64_t i = 0; i < l; ++i) {
          double* dst = gx.data() + base + static_cast<size_t>(p[static_cast<size_t>(i)]) * ds;
          const double* src = gy->data() + base + static_cast<size_t>(i) * ds;
          for (size_t k = 0; k < ds; ++k) dst[k] += src[k];
        }
      }
    });
  }
  return y;
}

Tensor nchw_to_nlc(const Tensor& x) {
  require_rank4(x, "nchw_to_nlc");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto l = h * w;
  std::vector<double> out(x.data().size());
  for (std::int64_t ni = 0; ni < n; ++ni)
    for (std::int64_t ci = 0; ci < c; ++ci) {
      const double* src = x.data().data() + static_cast<size_t>((ni * c + ci) * l);
      double* dst = out.data() + static_cast<size_t>(ni * l * c + ci);
      for (std::int64_t s = 0; s < l; ++s) dst[static_cast<size_t>(s * c)] = src[s];
    }
  Tensor y = make_tensor({n, l, c}, std::move(out));
  if (grad_enabled({&x})) {
    y.set_requires_grad(true);
    Impl xi = x.impl(), yi = y.impl();
    Tape::active()->record([xi, yi, n, c, l] {
      const auto* gy = out_grad(yi);
      if (!gy) return;
      auto& gx = xi->ensure_grad();
      for (std::int64_t ni = 0; ni < n; ++ni)
        for (std::int64_t ci = 0; ci < c; ++ci) {
          double* dst = gx.data() + static_cast<size_t>((ni * c + ci) * l);
          const double* src = gy->data() + static_cast<size_t>(ni * l * c + ci);
          for (std::int64_t s = 0; s < l; ++s) dst[s] += src[static_cast<size_t>(s * c)];
        }
    });
  }
  return y;
}

Tensor nlc_to_nchw(const Tensor& x, std::int64_t h, std::int64_t w) {
  if (x.rank() != 3) throw DimensionError("nlc_to_nchw: expected (N,L,C), got " + shape_str(x.shape()));
  const auto n = x.dim(0), l = x.dim(1), c = x.dim(2);
  if (l != h * w) {
    throw DimensionError("nlc_to_nchw: L " + std::to_string(l) + " != H*W " + std::to_string(h * w));
  }
  std::vector<double> out(x.data().size());
  for (std::int64_t ni = 0; ni < n; ++ni)
    for (std::int64_t ci = 0; ci < c; ++ci) {
      double* dst = out.data() + static_cast<size_t>((ni * c + ci) * l);
      const double* src = x.data().data() + static_cast<size_t>(ni * l * c + ci);
      for (std::int64_t s = 0; s < l; ++s) dst[s] = src[static_cast<size_t>(s * c)];
    }
  Tensor y = make_tensor({n, c, h, w}, std::move(out));
  if (grad_enabled({&x})) {
    y.set_requires_grad(true);
    Impl xi = x.impl(), yi = y.impl();
    Tape::active()->record([xi, yi, n, c, l] {
      const auto* gy = out_grad(yi);
      if (!gy) return;
      auto& gx = xi->ensure_grad();
      for (std::int64_t ni = 0; ni < n; ++ni)
        for (std::int64_t ci = 0; ci < c; ++ci) {
          const double* src = gy->data() + static_cast<size_t>((ni * c + ci) * l);
          double* dst = gx.data() + static_cast<size_t>(ni * l * c + ci);
          for (std::int64_t s = 0; s < l; ++s) dst[static_cast<size_t>(s * c)] += src[s];
        }
    });
  }
  return y;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() < 1 || w.rank() != 2) {
    throw DimensionError("linear: x " + shape_str(x.shape()) + ", w " + shape_str(w.shape()));
  }
  const auto din = x.dim(x.rank() - 1);
  const auto dout = w.dim(0);
  if (w.dim(1) != din) {
    throw DimensionError("linear: inner dimension mismatch, x has " + std::to_string(din) +
                         ", w expects " + std::to_string(w.dim(1)));
  }
  if (b.defined() && (b.rank() != 1 || b.dim(0) != dout)) {
    throw DimensionError("linear: bias shape " + shape_str(b.shape()) + " != (" +
                         std::to_string(dout) + ")");
  }
  const auto rows = x.numel() / din;
  Shape out_shape = x.shape();
  out_shape.back() = dout;
  std::vector<double> out(static_cast<size_t>(rows * dout), 0.0);
  const double* xd = x.data().data();
  const double* wd = w.data().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = xd + static_cast<size_t>(r * din);
    double* yr = out.data() + static_cast<size_t>(r * dout);
    for (std::int64_t o = 0; o < dout; ++o) {
      const double* wr = wd + static_cast<size_t>(o * din);
      double acc = b.defined() ? b.data()[static_cast<size_t>(o)] : 0.0;
      for (std::int64_t i = 0; i < din; ++i) acc += xr[i] * wr[i];
      yr[o] = acc;
    }
  }
  Tensor y = make_tensor(std::move(out_shape), std::move(out));
  check_finite(y, "linear");
  if (grad_enabled({&x, &w, &b})) {
    y.set_requires_grad(true);
    Impl xi = x.impl(), wi = w.impl(), yi = y.impl();
    Impl bi = b.defined() ? b.impl() : nullptr;
    Tape::active()->record([xi, wi, bi, yi, rows, din, dout] {
      const auto* gy = out_grad(yi);
      if (!gy) return;
      auto& gx = xi->ensure_grad();
      auto& gw = wi->ensure_grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        const double* gyr = gy->data() + static_cast<size_t>(r * dout);
        const double* xr = xi->data.data() + static_cast<size_t>(r * din);
        double* gxr = gx.data() + static_cast<size_t>(r * din);
        for (std::int64_t o = 0; o < dout; ++o) {
          const double g = gyr[o];
          if (g == 0.0) continue;
          const double* wr = wi->data.data() + static_cast<size_t>(o * din);
          double* gwr = gw.data() + static_cast<size_t>(o * din);
          for (std::int64_t i = 0; i < din; ++i) {
            gxr[i] += g * wr[i];
            gwr[i] += g * xr[i];
          }
        }
      }
      if (bi) {
        auto& gb = bi->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
          const double* gyr = gy->data() + static_cast<size_t>(r * dout);
          for (std::int64_t o = 0; o < dout; ++o) gb[static_cast<size_t>(o)] += gyr[o];
        }
      }
    });
  }
  return y;
}

Tensor layer_norm_channels(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank4(x, "layer_norm");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (gamma.rank() != 1 || gamma.dim(0) != c || beta.rank() != 1 || beta.dim(0) != c) {
    throw DimensionError("layer_norm: gamma/beta must be (" + std::to_string(c) + ")");
  }
  if (eps <= 0.0) throw ContractError("layer_norm: eps must be > 0");
  const auto hw = h * w;
  std::vector<double> out(x.data().size());
  std::vector<double> means(static_cast<size_t>(n * hw)), inv_stds(static_cast<size_t>(n * hw));
  const double* xd = x.data().data();
  for (std::int64_t ni = 0; ni < n; ++ni)
    for (std::int64_t s = 0; s < hw; ++s) {
      double m = 0.0;
      for (std::int64_t ci = 0; ci < c; ++ci) m += xd[static_cast<size_t>((ni * c + ci) * hw + s)];
      m /= static_cast<double>(c);
      double var = 0.0;
      for (std::int64_t ci = 0; ci < c; ++ci) {
        const double d = xd[static_cast<size_t>((ni * c + ci) * hw + s)] - m;
        var += d * d;
      }
      var /= static_cast<double>(c);
      const double inv = 1.0 / std::sqrt(var + eps);
      means[static_cast<size_t>(ni * hw + s)] = m;
      inv_stds[static_cast<size_t>(ni * hw + s)] = inv;
      for (std::int64_t ci = 0; ci < c; ++ci) {
        const size_t idx = static_cast<size_t>((ni * c + ci) * hw + s);
        out[idx] = gamma.data()[static_cast<size_t>(ci)] * (xd[idx] - m) * inv +
                   beta.data()[static_cast<size_t>(ci)];
      }
    }
  Tensor y = make_tensor(x.shape(), std::move(out));
  check_finite(y, "layer_norm");
  if (grad_enabled({&x, &gamma, &beta})) {
    y.set_requires_grad(true);
    Impl xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), yi = y.impl();
    Tape::active()->record([xi, gi, bi, yi, n, c, hw, means, inv_stds] {
      const auto* gy = out_grad(yi);
      if (!gy) return;
      auto& gx = xi->ensure_grad();
      auto& gg = gi->ensure_grad();
      auto& gb = bi->ensure_grad();
      const double cn = static_cast<double>(c);
      for (std::int64_t ni = 0; ni < n; ++ni)
        for (std::int64_t s = 0; s < hw; ++s) {
          const double m = means[static_cast<size_t>(ni * hw + s)];
          const double inv = inv_stds[static_cast<size_t>(ni * hw + s)];
          // dxhat accumulators
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (std::int64_t ci = 0; ci < c; ++ci) {
            const size_t idx = static_cast<size_t>((ni * c + ci) * hw + s);
            const double xhat = (xi->data[idx] - m) * inv;
            const double dxhat = (*gy)[idx] * gi->data[static_cast<size_t>(ci)];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
            gg[static_cast<size_t>(ci)] += (*gy)[idx] * xhat;
            gb[static_cast<size_t>(ci)] += (*gy)[idx];
          }
          for (std::int64_t ci = 0; ci < c; ++ci) {
            const size_t idx = static_cast<size_t>((ni * c + ci) * hw + s);
            const double xhat = (xi->data[idx] - m) * inv;
            const double dxhat = (*gy)[idx] * gi->data[static_cast<size_t>(ci)];
            gx[idx] += inv * (dxhat - sum_dxhat / cn - xhat * sum_dxhat_xhat / cn);
          }
        }
    });
  }
  return y;
}

Tensor pad2d(const Tensor& x, int top, int bottom, int left, int right, PadMode mode) {
  require_rank4(x, "pad2d");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto oh = h + top + bottom, ow = w + left + right;
  // Mirror without repeating the edge sample (reflect-101 indexing). Folding
  // is periodic so padding wider than the input extent still resolves.
  auto mirror = [](std::int64_t i, std::int64_t ext) {
    if (ext == 1) return std::int64_t{0};
    const std::int64_t period = 2 * ext - 2;
    i = std::abs(i) % period;
    return i < ext ? i : period - i;
  };
  std::vector<double> out(static_cast<size_t>(n * c * oh * ow), 0.0);
  const double* xd = x.data().data();
  for (std::int64_t nc = 0; nc < n * c; ++nc) {
    const double* src = xd + static_cast<size_t>(nc * h * w);
    double* dst = out.data() + static_cast<size_t>(nc * oh * ow);
    for (std::int64_t i = 0; i < oh; ++i)
      for (std::int64_t j = 0; j < ow; ++j) {
        const std::int64_t si = i - top, sj = j - left;
        if (si >= 0 && si < h && sj >= 0 && sj < w) {
          dst[i * ow + j] = src[si * w + sj];
        } else if (mode == PadMode::Reflect) {
          dst[i * ow + j] = src[mirror(si, h) * w + mirror(sj, w)];
        }
      }
  }
  Tensor y = make_tensor({n, c, oh, ow}, std::move(out));
  if (grad_enabled({&x})) {
    y.set_requires_grad(true);
    Impl xi = x.impl(), yi = y.impl();
    Tape::active()->record([xi, yi, n, c, h, w, oh, ow, top, left, mode, mirror] {
      const auto* gy = out_grad(yi);
      if (!gy) return;
      auto& gx = xi->ensure_grad();
      for (std::int64_t nc = 0; nc < n * c; ++nc) {
        double* dst = gx.data() + static_cast<size_t>(nc * h * w);
        const double* src = gy->data() + static_cast<size_t>(nc * oh * ow);
        for (std::int64_t i = 0; i < oh; ++i)
          for (std::int64_t j = 0; j < ow; ++j) {
            const std::int64_t si = i - top, sj = j - left;
            if (si >= 0 && si < h && sj >= 0 && sj < w) {
              dst[si * w + sj] += src[i * ow + j];
            } else if (mode == PadMode::Reflect) {
              dst[mirror(si, h) * w + mirror(sj, w)] += src[i * ow + j];
            }
          }
      }
    });
  }
  return y;
}

namespace {

// Convolution core without padding; called after any pad2d.
Tensor conv2d_core(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int dilation,
                   int groups) {
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), wi_ = x.dim(3);
  const auto o = w.dim(0), ig = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (c % groups != 0 || o % groups != 0) {
    throw ConfigError("conv2d: groups " + std::to_string(groups) + " does not divide channels (in " +
                      std::to_string(c) + ", out " + std::to_string(o) + ")");
  }
  if (ig != c / groups) {
    throw DimensionError("conv2d: weight expects " + std::to_string(ig) +
                         " input channels per group, input provides " + std::to_string(c / groups));
  }
  const auto oh = (h - static_cast<std::int64_t>(dilation) * (kh - 1) - 1) / stride + 1;
  const auto ow = (wi_ - static_cast<std::int64_t>(dilation) * (kw - 1) - 1) / stride + 1;
  if (oh <= 0 || ow <= 0) {
    throw DimensionError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " does not fit input " + shape_str(x.shape()));
  }
  const auto opg = o / groups;
  std::vector<double> out(static_cast<size_t>(n * o * oh * ow), 0.0);
  const double* xd = x.data().data();
  const double* wd = w.data().data();
  for (std::int64_t ni = 0; ni < n; ++ni)
    for (std::int64_t oi = 0; oi < o; ++oi) {
      const std::int64_t g = oi / opg;
      const double bias = b.defined() ? b.data()[static_cast<size_t>(oi)] : 0.0;
      double* yplane = out.data() + static_cast<size_t>((ni * o + oi) * oh * ow);
      for (std::int64_t yy = 0; yy < oh; ++yy)
        for (std::int64_t xx = 0; xx < ow; ++xx) {
          double acc = bias;
          for (std::int64_t ci = 0; ci < ig; ++ci) {
            const double* xplane =
                xd + static_cast<size_t>((ni * c + g * ig + ci) * h * wi_);
            const double* wplane = wd + static_cast<size_t>(((oi * ig) + ci) * kh * kw);
            for (std::int64_t ky = 0; ky < kh; ++ky) {
              const double* xrow = xplane + (yy * stride + ky * dilation) * wi_ + xx * stride;
              const double* wrow = wplane + ky * kw;
              for (std::int64_t kx = 0; kx < kw; ++kx) acc += xrow[kx * dilation] * wrow[kx];
            }
          }
          yplane[yy * ow + xx] = acc;
        }
    }
  Tensor y = make_tensor({n, o, oh, ow}, std::move(out));
  check_finite(y, "conv2d");
  if (grad_enabled({&x, &w, &b})) {
    y.set_requires_grad(true);
    Impl xi = x.impl(), wim = w.impl(), yi = y.impl();
    Impl bi = b.defined() ? b.impl() : nullptr;
    Tape::active()->record([xi, wim, bi, yi, n, c, h, wi_, o, ig, kh, kw, oh, ow, stride, dilation,
                            opg] {
      const auto* gy = out_grad(yi);
      if (!gy) return;
      auto& gx = xi->ensure_grad();
      auto& gw = wim->ensure_grad();
      for (std::int64_t ni = 0; ni < n; ++ni)
        for (std::int64_t oi = 0; oi < o; ++oi) {
          const std::int64_t g = oi / opg;
          const double* gplane = gy->data() + static_cast<size_t>((ni * o + oi) * oh * ow);
          if (bi) {
            auto& gb = bi->ensure_grad();
            double acc = 0.0;
            for (std::int64_t s = 0; s < oh * ow; ++s) acc += gplane[s];
            gb[static_cast<size_t>(oi)] += acc;
          }
          for (std::int64_t yy = 0; yy < oh; ++yy)
            for (std::int64_t xx = 0; xx < ow; ++xx) {
              const double gval = gplane[yy * ow + xx];
              if (gval == 0.0) continue;
              for (std::int64_t ci = 0; ci < ig; ++ci) {
                const size_t xbase = static_cast<size_t>((ni * c + g * ig + ci) * h * wi_);
                const size_t wbase = static_cast<size_t>(((oi * ig) + ci) * kh * kw);
                for (std::int64_t ky = 0; ky < kh; ++ky) {
                  const std::int64_t row = yy * stride + ky * dilation;
                  for (std::int64_t kx = 0; kx < kw; ++kx) {
                    const std::int64_t col = xx * stride + kx * dilation;
                    gx[xbase + static_cast<size_t>(row * wi_ + col)] +=
                        gval * wim->data[wbase + static_cast<size_t>(ky * kw + kx)];
                    gw[wbase + static_cast<size_t>(ky * kw + kx)] +=
                        gval * xi->data[xbase + static_cast<size_t>(row * wi_ + col)];
                  }
                }
              }
            }
        }
    });
  }
  return y;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding,
              PadMode mode, int dilation, int groups) {
  require_rank4(x, "conv2d");
  if (w.rank() != 4) throw DimensionError("conv2d: weight must be OIHW, got " + shape_str(w.shape()));
  if (stride < 1 || dilation < 1 || groups < 1 || padding < 0) {
    throw ConfigError("conv2d: invalid stride/padding/dilation/groups");
  }
  const Tensor padded = padding > 0 ? pad2d(x, padding, padding, padding, padding, mode) : x;
  return conv2d_core(padded, w, b, stride, dilation, groups);
}

Tensor downsample2(const Tensor& x) {
  require_rank4(x, "downsample2");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto oh = (h + 1) / 2, ow = (w + 1) / 2;
  std::vector<double> out(static_cast<size_t>(n * c * oh * ow));
  for (std::int64_t nc = 0; nc < n * c; ++nc) {
    const double* src = x.data().data() + static_cast<size_t>(nc * h * w);
    double* dst = out.data() + static_cast<size_t>(nc * oh * ow);
    for (std::int64_t i = 0; i < oh; ++i)
      for (std::int64_t j = 0; j < ow; ++j) dst[i * ow + j] = src[(2 * i) * w + 2 * j];
  }
  Tensor y = make_tensor({n, c, oh, ow}, std::move(out));
  if (grad_enabled({&x})) {
    y.set_requires_grad(true);
    Impl xi = x.impl(), yi = y.impl();
    Tape::active()->record([xi, yi, n, c, h, w, oh, ow] {
      const auto* gy = out_grad(yi);
      if (!gy) return;
      auto& gx = xi->ensure_grad();
      for (std::int64_t nc = 0; nc < n * c; ++nc) {
        double* dst = gx.data() + static_cast<size_t>(nc * h * w);
        const double* src = gy->data() + static_cast<size_t>(nc * oh * ow);
        for (std::int64_t i = 0; i < oh; ++i)
          for (std::int64_t j = 0; j < ow; ++j) dst[(2 * i) * w + 2 * j] += src[i * ow + j];
      }
    });
  }
  return y;
}

Tensor zero_upsample2(const Tensor& x) {
  require_rank4(x, "zero_upsample2");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto oh = 2 * h, ow = 2 * w;
  std::vector<double> out(static_cast<size_t>(n * c * oh * ow), 0.0);
  for (std::int64_t nc = 0; nc < n * c; ++nc) {
    const double* src = x.data().data() + static_cast<size_t>(nc * h * w);
    double* dst = out.data() + static_cast<size_t>(nc * oh * ow);
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < w; ++j) dst[(2 * i) * ow + 2 * j] = src[i * w + j];
  }
  Tensor y = make_tensor({n, c, oh, ow}, std::move(out));
  if (grad_enabled({&x})) {
    y.set_requires_grad(true);
    Impl xi = x.impl(), yi = y.impl();
    Tape::active()->record([xi, yi, n, c, h, w, oh, ow] {
      const auto* gy = out_grad(yi);
      if (!gy) return;
      auto& gx = xi->ensure_grad();
      for (std::int64_t nc = 0; nc < n * c; ++nc) {
        double* dst = gx.data() + static_cast<size_t>(nc * h * w);
        const double* src = gy->data() + static_cast<size_t>(nc * oh * ow);
        for (std::int64_t i = 0; i < h; ++i)
          for (std::int64_t j = 0; j < w; ++j) dst[i * w + j] += src[(2 * i) * ow + 2 * j];
      }
    });
  }
  return y;
}

Tensor crop2d(const Tensor& x, std::int64_t h, std::int64_t w) {
  require_rank4(x, "crop2d");
  const auto n = x.dim(0), c = x.dim(1), ih = x.dim(2), iw = x.dim(3);
  if (h > ih || w > iw) {
    throw DimensionError("crop2d: target " + std::to_string(h) + "x" + std::to_string(w) +
                         " exceeds input " + std::to_string(ih) + "x" + std::to_string(iw));
  }
  std::vector<double> out(static_cast<size_t>(n * c * h * w));
  for (std::int64_t nc = 0; nc < n * c; ++nc) {
    const double* src = x.data().data() + static_cast<size_t>(nc * ih * iw);
    double* dst = out.data() + static_cast<size_t>(nc * h * w);
    for (std::int64_t i = 0; i < h; ++i)
      std::memcpy(dst + i * w, src + i * iw, static_cast<size_t>(w) * sizeof(double));
  }
  Tensor y = make_tensor({n, c, h, w}, std::move(out));
  if (grad_enabled({&x})) {
    y.set_requires_grad(true);
    Impl xi = x.impl(), yi = y.impl();
    Tape::active()->record([xi, yi, n, c, ih, iw, h, w] {
      const auto* gy = out_grad(yi);
      if (!gy) return;
      auto& gx = xi->ensure_grad();
      for (std::int64_t nc = 0; nc < n * c; ++nc) {
        double* dst = gx.data() + static_cast<size_t>(nc * ih * iw);
        const double* src = gy->data() + static_cast<size_t>(nc * h * w);
        for (std::int64_t i = 0; i < h; ++i)
          for (std::int64_t j = 0; j < w; ++j) dst[i * iw + j] += src[i * w + j];
      }
    });
  }
  return y;
}

Tensor avg_pool_patch(const Tensor& x, int p) {
  require_rank4(x, "avg_pool");
  if (p < 1) throw ConfigError("avg_pool: patch must be >= 1");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto oh = (h + p - 1) / p, ow = (w + p - 1) / p;
  std::vector<double> out(static_cast<size_t>(n * c * oh * ow));
  for (std::int64_t nc = 0; nc < n * c; ++nc) {
    const double* src = x.data().data() + static_cast<size_t>(nc * h * w);
    double* dst = out.data() + static_cast<size_t>(nc * oh * ow);
    for (std::int64_t i = 0; i < oh; ++i)
      for (std::int64_t j = 0; j < ow; ++j) {
        const auto r0 = i * p, r1 = std::min<std::int64_t>(r0 + p, h);
        const auto c0 = j * p, c1 = std::min<std::int64_t>(c0 + p, w);
        double acc = 0.0;
        for (std::int64_t r = r0; r < r1; ++r)
          for (std::int64_t cc = c0; cc < c1; ++cc) acc += src[r * w + cc];
        dst[i * ow + j] = acc / static_cast<double>((r1 - r0) * (c1 - c0));
      }
  }
  Tensor y = make_tensor({n, c, oh, ow}, std::move(out));
  if (grad_enabled({&x})) {
    y.set_requires_grad(true);
    Impl xi = x.impl(), yi = y.impl();
    Tape::active()->record([xi, yi, n, c, h, w, oh, ow, p] {
      const auto* gy = out_grad(yi);
      if (!gy) return;
      auto& gx = xi->ensure_grad();
      for (std::int64_t nc = 0; nc < n * c; ++nc) {
        double* dst = gx.data() + static_cast<size_t>(nc * h * w);
        const double* src = gy->data() + static_cast<size_t>(nc * oh * ow);
        for (std::int64_t i = 0; i < oh; ++i)
          for (std::int64_t j = 0; j < ow; ++j) {
            const auto r0 = i * p, r1 = std::min<std::int64_t>(r0 + p, h);
            const auto c0 = j * p, c1 = std::min<std::int64_t>(c0 + p, w);
            const double g = src[i * ow + j] / static_cast<double>((r1 - r0) * (c1 - c0));
            for (std::int64_t r = r0; r < r1; ++r)
              for (std::int64_t cc = c0; cc < c1; ++cc) dst[r * w + cc] += g;
          }
      }
    });
  }
  return y;
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank4(x, "global_avg_pool");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto hw = h * w;
  std::vector<double> out(static_cast<size_t>(n * c));
  for (std::int64_t nc = 0; nc < n * c; ++nc) {
    const double* src = x.data().data() + static_cast<size_t>(nc * hw);
    double acc = 0.0;
    for (std::int64_t s = 0; s < hw; ++s) acc += src[s];
    out[static_cast<size_t>(nc)] = acc / static_cast<double>(hw);
  }
  Tensor y = make_tensor({n, c, 1, 1}, std::move(out));
  if (grad_enabled({&x})) {
    y.set_requires_grad(true);
    Impl xi = x.impl(), yi = y.impl();
    Tape::active()->record([xi, yi, n, c, hw] {
      const auto* gy = out_grad(yi);
      if (!gy) return;
      auto& gx = xi->ensure_grad();
      for (std::int64_t nc = 0; nc < n * c; ++nc) {
        const double g = (*gy)[static_cast<size_t>(nc)] / static_cast<double>(hw);
        double* dst = gx.data() + static_cast<size_t>(nc * hw);
        for (std::int64_t s = 0; s < hw; ++s) dst[s] += g;
      }
    });
  }
  return y;
}

Tensor upsample_patch(const Tensor& x, int p, std::int64_t out_h, std::int64_t out_w) {
  require_rank4(x, "upsample_patch");
  if (p < 1) throw ConfigError("upsample_patch: patch must be >= 1");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if ((out_h + p - 1) / p != h || (out_w + p - 1) / p != w) {
    throw DimensionError("upsample_patch: input " + shape_str(x.shape()) +
                         " is not the ceil-pooled map of " + std::to_string(out_h) + "x" +
                         std::to_string(out_w) + " with patch " + std::to_string(p));
  }
  std::vector<double> out(static_cast<size_t>(n * c * out_h * out_w));
  for (std::int64_t nc = 0; nc < n * c; ++nc) {
    const double* src = x.data().data() + static_cast<size_t>(nc * h * w);
    double* dst = out.data() + static_cast<size_t>(nc * out_h * out_w);
    for (std::int64_t i = 0; i < out_h; ++i)
      for (std::int64_t j = 0; j < out_w; ++j) dst[i * out_w + j] = src[(i / p) * w + (j / p)];
  }
  Tensor y = make_tensor({n, c, out_h, out_w}, std::move(out));
  if (grad_enabled({&x})) {
    y.set_requires_grad(true);
    Impl xi = x.impl(), yi = y.impl();
    Tape::active()->record([xi, yi, n, c, h, w, out_h, out_w, p] {
      const auto* gy = out_grad(yi);
      if (!gy) return;
      auto& gx = xi->ensure_grad();
      for (std::int64_t nc = 0; nc < n * c; ++nc) {
        double* dst = gx.data() + static_cast<size_t>(nc * h * w);
        const double* src = gy->data() + static_cast<size_t>(nc * out_h * out_w);
        for (std::int64_t i = 0; i < out_h; ++i)
          for (std::int64_t j = 0; j < out_w; ++j) dst[(i / p) * w + (j / p)] += src[i * out_w + j];
      }
    });
  }
  return y;
}

Tensor upsample_bilinear(const Tensor& x, std::int64_t out_h, std::int64_t out_w) {
  require_rank4(x, "upsample_bilinear");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  // Precompute sample positions (align_corners = false convention).
  struct Lerp {
    std::int64_t i0, i1;
    double w0, w1;
  };
  auto build = [](std::int64_t in, std::int64_t outn) {
    std::vector<Lerp> v(static_cast<size_t>(outn));
    const double r = static_cast<double>(in) / static_cast<double>(outn);
    for (std::int64_t i = 0; i < outn; ++i) {
      double src = (static_cast<double>(i) + 0.5) * r - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto i0 = static_cast<std::int64_t>(std::floor(src));
      const auto i1 = std::min(i0 + 1, in - 1);
      const double f = src - static_cast<double>(i0);
      v[static_cast<size_t>(i)] = {i0, i1, 1.0 - f, f};
    }
    return v;
  };
  const auto rows = build(h, out_h), cols = build(w, out_w);
  std::vector<double> out(static_cast<size_t>(n * c * out_h * out_w));
  for (std::int64_t nc = 0; nc < n * c; ++nc) {
    const double* src = x.data().data() + static_cast<size_t>(nc * h * w);
    double* dst = out.data() + static_cast<size_t>(nc * out_h * out_w);
    for (std::int64_t i = 0; i < out_h; ++i) {
      const auto& ri = rows[static_cast<size_t>(i)];
      for (std::int64_t j = 0; j < out_w; ++j) {
        const auto& cj = cols[static_cast<size_t>(j)];
        dst[i * out_w + j] = ri.w0 * (cj.w0 * src[ri.i0 * w + cj.i0] + cj.w1 * src[ri.i0 * w + cj.i1]) +
                             ri.w1 * (cj.w0 * src[ri.i1 * w + cj.i0] + cj.w1 * src[ri.i1 * w + cj.i1]);
      }
    }
  }
  Tensor y = make_tensor({n, c, out_h, out_w}, std::move(out));
  if (grad_enabled({&x})) {
    y.set_requires_grad(true);
    Impl xi = x.impl(), yi = y.impl();
    Tape::active()->record([xi, yi, n, c, h, w, out_h, out_w, rows, cols] {
      const auto* gy = out_grad(yi);
      if (!gy) return;
      auto& gx = xi->ensure_grad();
      for (std::int64_t nc = 0; nc < n * c; ++nc) {
        double* dst = gx.data() + static_cast<size_t>(nc * h * w);
        const double* src = gy->data() + static_cast<size_t>(nc * out_h * out_w);
        for (std::int64_t i = 0; i < out_h; ++i) {
          const auto& ri = rows[static_cast<size_t>(i)];
          for (std::int64_t j = 0; j < out_w; ++j) {
            const auto& cj = cols[static_cast<size_t>(j)];
            const double g = src[i * out_w + j];
            dst[ri.i0 * w + cj.i0] += g * ri.w0 * cj.w0;
            dst[ri.i0 * w + cj.i1] += g * ri.w0 * cj.w1;
            dst[ri.i1 * w + cj.i0] += g * ri.w1 * cj.w0;
            dst[ri.i1 * w + cj.i1] += g * ri.w1 * cj.w1;
          }
        }
      }
    });
  }
  return y;
}

Tensor mul_channel_gains(const Tensor& x, const Tensor& gains) {
  require_rank4(x, "mul_channel_gains");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (gains.rank() != 4 || gains.dim(0) != n || gains.dim(1) != c || gains.dim(2) != 1 ||
      gains.dim(3) != 1) {
    throw DimensionError("mul_channel_gains: gains must be (N,C,1,1), got " +
                         shape_str(gains.shape()));
  }
  const auto hw = h * w;
  std::vector<double> out(x.data().size());
  for (std::int64_t nc = 0; nc < n * c; ++nc) {
    const double g = gains.data()[static_cast<size_t>(nc)];
    const double* src = x.data().data() + static_cast<size_t>(nc * hw);
    double* dst = out.data() + static_cast<size_t>(nc * hw);
    for (std::int64_t s = 0; s < hw; ++s) dst[s] = src[s] * g;
  }
  Tensor y = make_tensor(x.shape(), std::move(out));
  if (grad_enabled({&x, &gains})) {
    y.set_requires_grad(true);
    Impl xi = x.impl(), gi = gains.impl(), yi = y.impl();
    Tape::active()->record([xi, gi, yi, n, c, hw] {
      const auto* gy = out_grad(yi);
      if (!gy) return;
      auto& gx = xi->ensure_grad();
      auto& gg = gi->ensure_grad();
      for (std::int64_t nc = 0; nc < n * c; ++nc) {
        const double g = gi->data[static_cast<size_t>(nc)];
        const double* gyp = gy->data() + static_cast<size_t>(nc * hw);
        const double* xp = xi->data.data() + static_cast<size_t>(nc * hw);
        double* gxp = gx.data() + static_cast<size_t>(nc * hw);
        double acc = 0.0;
        for (std::int64_t s = 0; s < hw; ++s) {
          gxp[s] += gyp[s] * g;
          acc += gyp[s] * xp[s];
        }
        gg[static_cast<size_t>(nc)] += acc;
      }
    });
  }
  return y;
}

Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& b_seq,
                      const Tensor& c_seq, const Tensor& a, const Tensor& d_skip) {
  if (u.rank() != 3 || delta.rank() != 3 || b_seq.rank() != 3 || c_seq.rank() != 3 ||
      a.rank() != 2 || d_skip.rank() != 1) {
    throw DimensionError("selective_scan: expected u/delta (N,L,D), B/C (N,L,S), A (D,S), D (D)");
  }
  const auto n = u.dim(0), l = u.dim(1), d = u.dim(2);
  const auto s = a.dim(1);
  require_same_shape(u, delta, "selective_scan(delta)");
  require_same_shape(b_seq, c_seq, "selective_scan(B/C)");
  if (b_seq.dim(0) != n || b_seq.dim(1) != l || a.dim(0) != d || d_skip.dim(0) != d) {
    throw DimensionError("selective_scan: parameter shapes inconsistent with input " +
                         shape_str(u.shape()));
  }
  if (l < 1) throw ContractError("selective_scan: L must be >= 1");
  for (double v : delta.data()) {
    if (!(v > 0.0)) {
      throw ContractError("selective_scan: delta must be positive (apply softplus first)");
    }
  }

  const size_t ds = static_cast<size_t>(d), ss = static_cast<size_t>(s);
  // Hidden states are saved for the backward pass: (N,L,D,S).
  auto hsave = std::make_shared<std::vector<double>>(static_cast<size_t>(n * l) * ds * ss, 0.0);
  std::vector<double> out(static_cast<size_t>(n * l) * ds, 0.0);
  const double* ud = u.data().data();
  const double* dd = delta.data().data();
  const double* bd = b_seq.data().data();
  const double* cd = c_seq.data().data();
  const double* ad = a.data().data();
  const double* skd = d_skip.data().data();

  std::vector<double> h(ds * ss);
  for (std::int64_t ni = 0; ni < n; ++ni) {
    std::fill(h.begin(), h.end(), 0.0);
    for (std::int64_t t = 0; t < l; ++t) {
      const size_t td = (static_cast<size_t>(ni * l + t)) * ds;
      const size_t ts = (static_cast<size_t>(ni * l + t)) * ss;
      for (std::int64_t di = 0; di < d; ++di) {
        const double dt = dd[td + static_cast<size_t>(di)];
        const double ut = ud[td + static_cast<size_t>(di)];
        double* hd = h.data() + static_cast<size_t>(di) * ss;
        const double* ar = ad + static_cast<size_t>(di) * ss;
        double y = skd[di] * ut;
        for (std::int64_t si = 0; si < s; ++si) {
          const double abar = std::exp(dt * ar[si]);
          hd[si] = abar * hd[si] + dt * bd[ts + static_cast<size_t>(si)] * ut;
          y += cd[ts + static_cast<size_t>(si)] * hd[si];
        }
        out[td + static_cast<size_t>(di)] = y;
        std::memcpy(hsave->data() + td * ss + static_cast<size_t>(di) * ss, hd,
                    ss * sizeof(double));
      }
    }
  }
  Tensor y = make_tensor({n, l, d}, std::move(out));
  check_finite(y, "selective_scan");
  if (grad_enabled({&u, &delta, &b_seq, &c_seq, &a, &d_skip})) {
    y.set_requires_grad(true);
    Impl ui = u.impl(), di_ = delta.impl(), bi = b_seq.impl(), ci = c_seq.impl(), ai = a.impl(),
         ski = d_skip.impl(), yi = y.impl();
    Tape::active()->record([ui, di_, bi, ci, ai, ski, yi, hsave, n, l, d, ds, ss, s] {
      const auto* gy = out_grad(yi);
      if (!gy) return;
      auto& gu = ui->ensure_grad();
      auto& gdt = di_->ensure_grad();
      auto& gb = bi->ensure_grad();
      auto& gc = ci->ensure_grad();
      auto& ga = ai->ensure_grad();
      auto& gsk = ski->ensure_grad();
      std::vector<double> gh(ds * ss);
      for (std::int64_t ni = 0; ni < n; ++ni) {
        std::fill(gh.begin(), gh.end(), 0.0);
        for (std::int64_t t = l - 1; t >= 0; --t) {
          const size_t td = (static_cast<size_t>(ni * l + t)) * ds;
          const size_t ts = (static_cast<size_t>(ni * l + t)) * ss;
          for (std::int64_t dii = 0; dii < d; ++dii) {
            const double g = (*gy)[td + static_cast<size_t>(dii)];
            const double dt = di_->data[td + static_cast<size_t>(dii)];
            const double ut = ui->data[td + static_cast<size_t>(dii)];
            const double* ht = hsave->data() + td * ss + static_cast<size_t>(dii) * ss;
            const double* hprev =
                t > 0 ? hsave->data() + (td - ds) * ss + static_cast<size_t>(dii) * ss : nullptr;
            const double* ar = ai->data.data() + static_cast<size_t>(dii) * ss;
            double* ghd = gh.data() + static_cast<size_t>(dii) * ss;
            gsk[static_cast<size_t>(dii)] += g * ut;
            double gu_acc = g * ski->data[static_cast<size_t>(dii)];
            double gdt_acc = 0.0;
            for (std::int64_t si = 0; si < s; ++si) {
              gc[ts + static_cast<size_t>(si)] += g * ht[si];
              double ghs = ghd[si] + g * ci->data[ts + static_cast<size_t>(si)];
              const double abar = std::exp(dt * ar[si]);
              const double hp = hprev ? hprev[si] : 0.0;
              gdt_acc += ghs * (hp * ar[si] * abar + bi->data[ts + static_cast<size_t>(si)] * ut);
              ga[static_cast<size_t>(dii) * ss + static_cast<size_t>(si)] += ghs * hp * dt * abar;
              gb[ts + static_cast<size_t>(si)] += ghs * dt * ut;
              gu_acc += ghs * dt * bi->data[ts + static_cast<size_t>(si)];
              ghd[si] = ghs * abar;  // adjoint flows to h_{t-1}
            }
            gdt[td + static_cast<size_t>(dii)] += gdt_acc;
            gu[td + static_cast<size_t>(dii)] += gu_acc;
          }
        }
      }
    });
  }
  return y;
}

}  // namespace lapmamba::ops
