#pragma once

#include <map>
#include <string>
#include <vector>

#include "lapmamba/hazegen.hpp"
#include "lapmamba/network.hpp"

namespace lapmamba::trainer {

// lr_min + 0.5 * (lr_max - lr_min) * (1 + cos(pi * step / total)); steps past
// `total` clamp to lr_min.
double cosine_lr(std::int64_t step, std::int64_t total, double lr_max = 5e-4,
                 double lr_min = 1e-7);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // global-norm gradient clip; <= 0 disables
};

struct OptimState {
  std::map<std::string, std::vector<double>> m, v;
  std::int64_t step = 0;
};

// One bias-corrected Adam update over every parameter in the store, consuming
// accumulated gradients (and zeroing them). Throws on non-finite gradients,
// naming the offending parameter.
void adam_step(nn::ParamStore& params, OptimState& state, double lr, const AdamConfig& cfg = {});

struct Checkpoint {
  std::uint32_t version = 1;
  std::uint64_t config_hash = 0;
  std::uint64_t sched_step = 0;
  std::uint64_t dataset_seed = 0;
  // Parameters plus optimizer buffers ("opt.m.<name>", "opt.v.<name>").
  std::map<std::string, Tensor> tensors;
};

// Little-endian binary: magic "LPMB", u32 version, u64 config hash, u64
// scheduler step, u64 dataset seed, u64 tensor count, then per-tensor
// records (u32 name length, name bytes, u32 rank, i64 extents, f64 data).
void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint snapshot(const network::Model& model, const OptimState& state,
                    std::uint64_t config_hash, std::uint64_t dataset_seed);
void restore(network::Model& model, OptimState& state, const Checkpoint& ck);

// FNV-1a, used for the config hash embedded in checkpoints.
std::uint64_t hash_string(const std::string& s);

struct TrainConfig {
  std::int64_t iterations = 2000;
  int batch = 4;
  std::int64_t crop = 64;
  double lr_max = 5e-4;
  double lr_min = 1e-7;
  double lambda = 0.1;
  int freq_levels = 3;
  double clip_norm = 1.0;
  std::int64_t log_every = 50;
  std::int64_t ckpt_every = 500;
  std::uint64_t seed = 1;
  std::uint64_t config_hash = 0;
  std::uint64_t dataset_seed = 0;
};

struct LogRow {
  std::int64_t step = 0;
  double lr = 0, recon = 0, freq = 0, total = 0, psnr_val = 0;
};

struct TrainResult {
  std::vector<LogRow> rows;
  double initial_loss = 0;
  double final_loss = 0;
  double val_psnr_hazy = 0;  // PSNR(hazy, clear) over the validation set
  double val_psnr_out = 0;   // PSNR(dehazed, clear)
  std::string csv() const;
};

// Deterministic given (config, seeds). Batches are sampled and augmented from
// a per-step seed, so a run resumed at `start_step` with restored state
// reproduces the uninterrupted run exactly. `stop_step` halts before
// cfg.iterations without shortening the LR schedule (-1 runs to the end).
// out_dir may be empty (no files); otherwise writes log.csv and
// ckpt_latest.lpmb / ckpt_final.lpmb.
TrainResult train(network::Model& model, const std::vector<hazegen::Pair>& train_set,
                  const std::vector<hazegen::Pair>& val_set, const TrainConfig& cfg,
                  const std::string& out_dir = "", OptimState* state = nullptr,
                  std::int64_t start_step = 0, std::int64_t stop_step = -1);

}  // namespace lapmamba::trainer
