#include "lapmamba/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "lapmamba/objectives.hpp"

namespace lapmamba::trainer {

namespace fs = std::filesystem;

double cosine_lr(std::int64_t step, std::int64_t total, double lr_max, double lr_min) {
  if (total < 1) throw ConfigError("cosine_lr: total must be >= 1");
  if (step < 0) throw ConfigError("cosine_lr: negative step");
  if (step >= total) return lr_min;
  const double frac = static_cast<double>(step) / static_cast<double>(total);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(3.14159265358979323846 * frac));
}

void adam_step(nn::ParamStore& params, OptimState& state, double lr, const AdamConfig& cfg) {
  // Global gradient norm (and the NaN scan) first, before touching anything.
  double sq = 0.0;
  for (auto& [name, p] : params.params) {
    const auto g = p.grad();
    for (double v : g) {
      if (!std::isfinite(v)) {
        throw Error("adam_step: non-finite gradient in parameter '" + name + "'");
      }
      sq += v * v;
    }
  }
  const double norm = std::sqrt(sq);
  const double scale =
      (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) ? cfg.clip_norm / norm : 1.0;

  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

  for (auto& [name, p] : params.params) {
    auto g = p.grad();
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) m.assign(g.size(), 0.0);
    if (v.empty()) v.assign(g.size(), 0.0);
    if (m.size() != g.size() || v.size() != g.size()) {
      throw ContractError("adam_step: moment buffer shape mismatch for '" + name + "'");
    }
    auto& d = p.data();
    for (size_t i = 0; i < g.size(); ++i) {
      const double gi = g[i] * scale;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      d[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    p.zero_grad();
  }
}

std::uint64_t hash_string(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace {

constexpr char kMagic[4] = {'L', 'P', 'M', 'B'};

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T read_pod(std::istream& is, const std::string& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(v))) {
    throw FormatError("truncated checkpoint " + path);
  }
  return v;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  os.write(kMagic, 4);
  write_pod(os, ck.version);
  write_pod(os, ck.config_hash);
  write_pod(os, ck.sched_step);
  write_pod(os, ck.dataset_seed);
  write_pod(os, static_cast<std::uint64_t>(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    write_pod(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(os, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) write_pod(os, e);
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.data().size() * sizeof(double)));
  }
  if (!os) throw FormatError("short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError(path + " is not a checkpoint (bad magic)");
  }
  Checkpoint ck;
  ck.version = read_pod<std::uint32_t>(is, path);
  if (ck.version != 1) {
    throw FormatError("unsupported checkpoint version " + std::to_string(ck.version) + " in " +
                      path);
  }
  ck.config_hash = read_pod<std::uint64_t>(is, path);
  ck.sched_step = read_pod<std::uint64_t>(is, path);
  ck.dataset_seed = read_pod<std::uint64_t>(is, path);
  const auto count = read_pod<std::uint64_t>(is, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint32_t>(is, path);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw FormatError("truncated checkpoint " + path);
    const auto rank = read_pod<std::uint32_t>(is, path);
    Shape shape(rank);
    for (auto& e : shape) e = read_pod<std::int64_t>(is, path);
    std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
    if (!is.read(reinterpret_cast<char*>(data.data()),
                 static_cast<std::streamsize>(data.size() * sizeof(double)))) {
      throw FormatError("truncated checkpoint " + path);
    }
    ck.tensors.emplace(std::move(name), Tensor::from_data(std::move(shape), std::move(data)));
  }
  return ck;
}

Checkpoint snapshot(const network::Model& model, const OptimState& state,
                    std::uint64_t config_hash, std::uint64_t dataset_seed) {
  Checkpoint ck;
  ck.config_hash = config_hash;
  ck.sched_step = static_cast<std::uint64_t>(state.step);
  ck.dataset_seed = dataset_seed;
  for (const auto& [name, t] : model.params.params) {
    ck.tensors.emplace(name, Tensor::from_data(t.shape(), t.data()));
  }
  for (const auto& [name, buf] : state.m) {
    ck.tensors.emplace("opt.m." + name,
                       Tensor::from_data({static_cast<std::int64_t>(buf.size())}, buf));
  }
  for (const auto& [name, buf] : state.v) {
    ck.tensors.emplace("opt.v." + name,
                       Tensor::from_data({static_cast<std::int64_t>(buf.size())}, buf));
  }
  return ck;
}

void restore(network::Model& model, OptimState& state, const Checkpoint& ck) {
  state.m.clear();
  state.v.clear();
  state.step = static_cast<std::int64_t>(ck.sched_step);
  for (const auto& [name, t] : ck.tensors) {
    if (name.rfind("opt.m.", 0) == 0) {
      state.m[name.substr(6)] = t.data();
    } else if (name.rfind("opt.v.", 0) == 0) {
      state.v[name.substr(6)] = t.data();
    } else {
      auto& p = model.params.at(name);
      if (p.numel() != t.numel()) {
        throw FormatError("checkpoint tensor '" + name + "' has " + std::to_string(t.numel()) +
                          " elements, model expects " + std::to_string(p.numel()));
      }
      p.data() = t.data();
      p.zero_grad();
    }
  }
}

namespace {

Tensor stack_batch(const std::vector<Tensor>& imgs) {
  const auto c = imgs[0].dim(1), h = imgs[0].dim(2), w = imgs[0].dim(3);
  Tensor out = Tensor::zeros({static_cast<std::int64_t>(imgs.size()), c, h, w});
  auto& d = out.data();
  const auto stride = static_cast<size_t>(c * h * w);
  for (size_t i = 0; i < imgs.size(); ++i) {
    std::copy(imgs[i].data().begin(), imgs[i].data().end(), d.begin() + static_cast<std::ptrdiff_t>(i * stride));
  }
  return out;
}

}  // namespace

std::string TrainResult::csv() const {
  std::string out = "step,lr,recon,freq,total,psnr_val\n";
  char line[160];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%lld,%.10g,%.10g,%.10g,%.10g,%.6g\n",
                  static_cast<long long>(r.step), r.lr, r.recon, r.freq, r.total, r.psnr_val);
    out += line;
  }
  return out;
}

TrainResult train(network::Model& model, const std::vector<hazegen::Pair>& train_set,
                  const std::vector<hazegen::Pair>& val_set, const TrainConfig& cfg,
                  const std::string& out_dir, OptimState* state, std::int64_t start_step,
                  std::int64_t stop_step) {
  if (train_set.empty()) throw ConfigError("train: empty training set");
  if (cfg.iterations < 1) throw ConfigError("train: iterations must be >= 1");
  if (cfg.batch < 1) throw ConfigError("train: batch must be >= 1");
  const std::int64_t end = stop_step < 0 ? cfg.iterations : std::min(stop_step, cfg.iterations);

  OptimState local_state;
  OptimState& st = state ? *state : local_state;
  AdamConfig adam;
  adam.clip_norm = cfg.clip_norm;

  TrainResult res;
  std::ofstream log;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    log.open(fs::path(out_dir) / "log.csv", start_step == 0 ? std::ios::trunc : std::ios::app);
    if (start_step == 0) log << "step,lr,recon,freq,total,psnr_val\n";
  }

  auto validate = [&]() {
    if (val_set.empty()) return std::pair<double, double>{0.0, 0.0};
    NoGradScope ng;
    double acc_out = 0.0, acc_hazy = 0.0;
    for (const auto& p : val_set) {
      const Tensor pred = model.forward(p.hazy, /*training=*/false);
      acc_out += objectives::psnr(pred, p.clear);
      acc_hazy += objectives::psnr(p.hazy, p.clear);
    }
    const auto n = static_cast<double>(val_set.size());
    return std::pair<double, double>{acc_out / n, acc_hazy / n};
  };

  for (std::int64_t step = start_step; step < end; ++step) {
    // Batch sampling is keyed by (seed, step) so resumed runs replay the
    // exact data stream.
    Rng rng(splitmix64(cfg.seed ^ splitmix64(static_cast<std::uint64_t>(step))));
    std::vector<Tensor> hazy, clear;
    for (int b = 0; b < cfg.batch; ++b) {
      const auto idx = rng.uniform_int(train_set.size());
      const auto aug_seed = rng.next_u64();
      hazegen::Pair p = hazegen::augment(train_set[idx], aug_seed, cfg.crop, cfg.crop);
      hazy.push_back(p.hazy);
      clear.push_back(p.clear);
    }
    const Tensor x = stack_batch(hazy);
    const Tensor y = stack_batch(clear);

    Tape tape;
    const Tensor pred = model.forward(x, /*training=*/true);
    const objectives::LossReport loss = objectives::total_loss(pred, y, cfg.lambda, cfg.freq_levels);
    const double total = loss.total.item();
    if (!std::isfinite(total)) {
      throw Error("train: non-finite loss at step " + std::to_string(step + 1) +
                  "; last checkpoint retained");
    }
    if (step == start_step) res.initial_loss = total;
    res.final_loss = total;
    tape.backward(loss.total);

    const double lr = cosine_lr(step, cfg.iterations, cfg.lr_max, cfg.lr_min);
    adam_step(model.params, st, lr, adam);

    const bool log_now =
        (step == start_step) || ((step + 1) % cfg.log_every == 0) || (step + 1 == end);
    if (log_now) {
      LogRow row;
      row.step = step + 1;
      row.lr = lr;
      row.recon = loss.recon.item();
      row.freq = loss.freq.item();
      row.total = total;
      {
        NoGradScope ng;
        Tensor clamped = ops::clamp01(pred);
        row.psnr_val = objectives::psnr(clamped, y);
      }
      res.rows.push_back(row);
      if (log.is_open()) {
        char line[160];
        std::snprintf(line, sizeof(line), "%lld,%.10g,%.10g,%.10g,%.10g,%.6g\n",
                      static_cast<long long>(row.step), row.lr, row.recon, row.freq, row.total,
                      row.psnr_val);
        log << line << std::flush;
      }
    }
    if (!out_dir.empty() && ((step + 1) % cfg.ckpt_every == 0 || step + 1 == end)) {
      save_checkpoint((fs::path(out_dir) / "ckpt_latest.lpmb").string(),
                      snapshot(model, st, cfg.config_hash, cfg.dataset_seed));
    }
  }

  const auto [psnr_out, psnr_hazy] = validate();
  res.val_psnr_out = psnr_out;
  res.val_psnr_hazy = psnr_hazy;
  if (!out_dir.empty()) {
    save_checkpoint((fs::path(out_dir) / "ckpt_final.lpmb").string(),
                    snapshot(model, st, cfg.config_hash, cfg.dataset_seed));
  }
  return res;
}

}  // namespace lapmamba::trainer
