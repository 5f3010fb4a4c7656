// lapmamba: batch experiment driver for the dehazing network.
//
// Subcommands: gen, train, infer, decompose, analyze, gradcheck, bench.
// Exit codes: 0 success, 1 runtime failure, 2 configuration error.

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "lapmamba/config.hpp"
#include "lapmamba/gradcheck.hpp"
#include "lapmamba/image_io.hpp"
#include "lapmamba/objectives.hpp"
#include "lapmamba/trainer.hpp"

namespace fs = std::filesystem;
using namespace lapmamba;

namespace {

int g_max_threads = 1;

void read_thread_cap() {
  const char* env = std::getenv("LAPLAMBA_THREADS");
  if (!env) return;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || v < 1) {
    throw ConfigError("LAPLAMBA_THREADS must be a positive integer, got '" + std::string(env) +
                      "'");
  }
  g_max_threads = static_cast<int>(v);
}

config::RunConfig load_config(const std::string& config_path,
                              const std::vector<std::string>& overrides) {
  config::RunConfig cfg;
  if (!config_path.empty()) cfg = config::RunConfig::from_file(config_path);
  for (const auto& ov : overrides) {
    const auto kvs = config::parse_kv(ov);
    if (kvs.size() != 1) throw ConfigError("--set expects a single key=value, got '" + ov + "'");
    cfg.apply(kvs[0].first, kvs[0].second);
  }
  return cfg;
}

void echo_config(const config::RunConfig& cfg, const std::string& out_dir) {
  std::cout << "# resolved configuration\n" << cfg.echo();
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream os(fs::path(out_dir) / "config.txt");
    os << cfg.echo();
  }
}

std::vector<std::string> collect_images(const std::string& in) {
  std::vector<std::string> files;
  if (fs::is_directory(in)) {
    for (const auto& e : fs::directory_iterator(in)) {
      const auto ext = e.path().extension().string();
      if (ext == ".png" || ext == ".ppm") files.push_back(e.path().string());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(in);
  }
  if (files.empty()) throw ConfigError("no .png/.ppm images found under " + in);
  return files;
}

// Reflect-pads to the network's size multiple; returns the original size so
// the output can be cropped back.
Tensor pad_for_network(const Tensor& img, std::int64_t& orig_h, std::int64_t& orig_w) {
  orig_h = img.dim(2);
  orig_w = img.dim(3);
  const auto m = network::kSizeMultiple;
  const auto ph = (orig_h + m - 1) / m * m - orig_h;
  const auto pw = (orig_w + m - 1) / m * m - orig_w;
  if (ph == 0 && pw == 0) return img;
  if (orig_h < 2 || orig_w < 2) {
    throw DimensionError("image " + std::to_string(orig_h) + "x" + std::to_string(orig_w) +
                         " is too small to pad to the required multiple of " + std::to_string(m));
  }
  return ops::pad2d(img, 0, static_cast<int>(ph), 0, static_cast<int>(pw),
                    ops::PadMode::Reflect);
}

int cmd_gen(const std::string& out, int count, int size, std::uint64_t seed, bool force) {
  if (fs::exists(out) && !fs::is_empty(out) && !force) {
    throw ConfigError("output directory " + out + " is not empty (use --force to overwrite)");
  }
  std::cout << "# resolved configuration\nout=" << out << "\ncount=" << count << "\nsize=" << size
            << "\nseed=" << seed << "\n";
  hazegen::write_dataset(out, count, size, seed);
  std::cout << "wrote " << count << " pairs to " << out << "\n";
  return 0;
}

int cmd_train(const std::string& data, const std::string& config_path, const std::string& out,
              const std::vector<std::string>& overrides, const std::string& resume) {
  config::RunConfig cfg = load_config(config_path, overrides);
  cfg.net.validate();
  echo_config(cfg, out);

  auto all = hazegen::load_dataset(data);
  const size_t val_n = std::min<size_t>(static_cast<size_t>(cfg.val_pairs), all.size() / 2);
  std::vector<hazegen::Pair> val(all.end() - static_cast<std::ptrdiff_t>(val_n), all.end());
  all.resize(all.size() - val_n);

  network::Model model = network::Model::build(cfg.net, cfg.train.seed);
  trainer::TrainConfig tc = cfg.train;
  tc.config_hash = cfg.hash();
  tc.dataset_seed = cfg.data_seed;

  trainer::OptimState state;
  std::int64_t start_step = 0;
  if (!resume.empty()) {
    const trainer::Checkpoint ck = trainer::load_checkpoint(resume);
    if (ck.config_hash != tc.config_hash) {
      throw ConfigError("checkpoint " + resume + " was written with a different configuration");
    }
    trainer::restore(model, state, ck);
    start_step = state.step;
    std::cout << "resumed from " << resume << " at step " << start_step << "\n";
  }

  const auto t0 = std::chrono::steady_clock::now();
  const trainer::TrainResult res =
      trainer::train(model, all, val, tc, out, &state, start_step);
  const auto secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::cout << "trained " << tc.iterations - start_step << " steps in " << secs << " s\n"
            << "initial loss " << res.initial_loss << ", final loss " << res.final_loss << "\n"
            << "validation PSNR: hazy " << res.val_psnr_hazy << " dB, dehazed "
            << res.val_psnr_out << " dB\n";
  return 0;
}

int cmd_infer(const std::string& ckpt_path, const std::string& in, const std::string& out,
              const std::string& gt, const std::string& config_path,
              const std::vector<std::string>& overrides) {
  std::string cfg_file = config_path;
  if (cfg_file.empty()) {
    const auto sibling = fs::path(ckpt_path).parent_path() / "config.txt";
    if (fs::exists(sibling)) cfg_file = sibling.string();
  }
  config::RunConfig cfg = load_config(cfg_file, overrides);
  cfg.net.validate();
  echo_config(cfg, out);

  const trainer::Checkpoint ck = trainer::load_checkpoint(ckpt_path);
  if (ck.config_hash != cfg.hash()) {
    throw ConfigError("checkpoint " + ckpt_path +
                      " config hash does not match the resolved configuration");
  }
  network::Model model = network::Model::build(cfg.net, cfg.train.seed);
  trainer::OptimState state;
  trainer::restore(model, state, ck);

  fs::create_directories(out);
  const auto inputs = collect_images(in);
  std::vector<std::string> gts;
  if (!gt.empty()) {
    gts = collect_images(gt);
    if (gts.size() != inputs.size()) {
      throw ConfigError("--gt image count does not match the input count");
    }
  }
  NoGradScope ng;
  for (size_t i = 0; i < inputs.size(); ++i) {
    const Tensor img = imageio::read_image(inputs[i]);
    std::int64_t h = 0, w = 0;
    const Tensor padded = pad_for_network(img, h, w);
    Tensor pred = model.forward(padded, /*training=*/false);
    pred = ops::crop2d(pred, h, w);
    const auto name = fs::path(inputs[i]).filename().string();
    imageio::write_image((fs::path(out) / name).string(), pred);
    std::cout << name;
    if (!gts.empty()) {
      const Tensor ref = imageio::read_image(gts[i]);
      std::cout << "  psnr=" << objectives::psnr(pred, ref)
                << "  ssim=" << objectives::ssim(pred, ref);
    }
    std::cout << "\n";
  }
  return 0;
}

int cmd_decompose(const std::string& in, int levels, const std::string& out) {
  if (levels < 1) throw ConfigError("--levels must be >= 1");
  fs::create_directories(out);
  const Tensor img = imageio::read_image(in);
  if (std::min(img.dim(2), img.dim(3)) < (std::int64_t{1} << levels)) {
    throw ConfigError("image too small for " + std::to_string(levels) + " pyramid levels");
  }
  NoGradScope ng;
  const lftm::MultiLevel ml = lftm::lft_multi(img, levels);
  for (size_t i = 0; i < ml.highs.size(); ++i) {
    // High bands are signed residuals; offset for display.
    Tensor vis = ops::add_scalar(ml.highs[i], 0.5);
    imageio::write_image((fs::path(out) / ("high_" + std::to_string(i) + ".png")).string(), vis);
  }
  imageio::write_image((fs::path(out) / "low.png").string(), ml.low);
  const Tensor rec = lftm::reconstruct_multi(ml);
  double max_err = 0.0;
  for (size_t i = 0; i < rec.data().size(); ++i) {
    max_err = std::max(max_err, std::abs(rec.data()[i] - img.data()[i]));
  }
  std::ofstream report(fs::path(out) / "reconstruction.txt");
  report << "levels=" << levels << "\nmax_abs_reconstruction_error=" << max_err << "\n";
  std::cout << "levels=" << levels << " bands=" << ml.highs.size() + 1
            << " max_abs_reconstruction_error=" << max_err << "\n";
  return 0;
}

int cmd_analyze(const std::string& data, const std::string& out_csv, int levels) {
  const auto pairs = hazegen::load_dataset(data);
  std::vector<Tensor> corpus;
  for (const auto& p : pairs) corpus.push_back(p.clear);
  const hazegen::VarianceReport rep = hazegen::variance_analysis(corpus, levels);
  if (!out_csv.empty()) {
    std::ofstream os(out_csv);
    os << rep.to_csv();
    std::cout << "wrote " << out_csv << "\n";
  } else {
    std::cout << rep.to_csv();
  }
  std::cout << rep.summary();
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, double tol) {
  const auto results = gradcheck::run_suite(seed, tol);
  for (const auto& r : results) {
    std::cout << (r.pass ? "PASS" : "FAIL") << "  " << r.name << "  max_rel_err=" << r.max_rel_err
              << "\n";
  }
  return gradcheck::all_pass(results) ? 0 : 1;
}

int cmd_bench(const std::string& size_str, const std::vector<std::string>& overrides) {
  config::RunConfig cfg = load_config("", overrides);
  cfg.net.validate();
  std::int64_t h = 64, w = 64;
  if (!size_str.empty()) {
    const auto x = size_str.find('x');
    if (x == std::string::npos) throw ConfigError("--size expects HxW, got '" + size_str + "'");
    h = std::stoll(size_str.substr(0, x));
    w = std::stoll(size_str.substr(x + 1));
  }

  std::cout << network::flop_estimate(cfg.net, h, w).to_string();

  // Scan wall-time vs sequence length (single channel group, fixed D/S).
  const int d = 8, s = 8;
  Rng rng(1);
  std::cout << "\nscan timing (D=" << d << ", S=" << s << ")\nL,seconds\n";
  double prev = 0.0;
  NoGradScope ng;
  for (std::int64_t len : {1024, 2048, 4096, 8192}) {
    const Tensor u = Tensor::uniform({1, len, d}, rng, -1.0, 1.0);
    const Tensor delta = Tensor::uniform({1, len, d}, rng, 0.01, 0.1);
    const Tensor b = Tensor::uniform({1, len, s}, rng, -1.0, 1.0);
    const Tensor c = Tensor::uniform({1, len, s}, rng, -1.0, 1.0);
    const Tensor a = Tensor::uniform({d, s}, rng, -1.0, -0.1);
    const Tensor dk = Tensor::uniform({d}, rng, -1.0, 1.0);
    const auto t0 = std::chrono::steady_clock::now();
    const int reps = 20;
    for (int r = 0; r < reps; ++r) ops::selective_scan(u, delta, b, c, a, dk);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / reps;
    std::cout << len << "," << secs;
    if (prev > 0.0) std::cout << "  (ratio " << secs / prev << ")";
    std::cout << "\n";
    prev = secs;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Laplacian-pyramid state-space dehazing toolkit"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a paired synthetic dataset");
  std::string gen_out;
  int gen_count = 10, gen_size = 80;
  std::uint64_t gen_seed = 42;
  bool gen_force = false;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--count", gen_count, "number of pairs");
  gen->add_option("--size", gen_size, "square image side");
  gen->add_option("--seed", gen_seed, "base seed");
  gen->add_flag("--force", gen_force, "allow writing into a non-empty directory");

  // train
  auto* train = app.add_subcommand("train", "train on a generated dataset");
  std::string train_data, train_config, train_out, train_resume;
  std::vector<std::string> train_set_kv;
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--config", train_config, "key=value config file");
  train->add_option("--out", train_out, "run output directory")->required();
  train->add_option("--set", train_set_kv, "override a single key=value");
  train->add_option("--resume", train_resume, "checkpoint to resume from");

  // infer
  auto* infer = app.add_subcommand("infer", "dehaze images with a checkpoint");
  std::string inf_ckpt, inf_in, inf_out, inf_gt, inf_config;
  std::vector<std::string> inf_set_kv;
  infer->add_option("--ckpt", inf_ckpt, "checkpoint file")->required();
  infer->add_option("--in", inf_in, "input image or directory")->required();
  infer->add_option("--out", inf_out, "output directory")->required();
  infer->add_option("--gt", inf_gt, "ground-truth image or directory (prints PSNR/SSIM)");
  infer->add_option("--config", inf_config, "config file (default: config.txt next to --ckpt)");
  infer->add_option("--set", inf_set_kv, "override a single key=value");

  // decompose
  auto* dec = app.add_subcommand("decompose", "write pyramid bands and a reconstruction report");
  std::string dec_in, dec_out;
  int dec_levels = 1;
  dec->add_option("--in", dec_in, "input image")->required();
  dec->add_option("--levels", dec_levels, "pyramid depth");
  dec->add_option("--out", dec_out, "output directory")->required();

  // analyze
  auto* ana = app.add_subcommand("analyze", "per-image frequency-band variance table");
  std::string ana_data, ana_csv;
  int ana_levels = 1;
  ana->add_option("--data", ana_data, "dataset directory")->required();
  ana->add_option("--csv", ana_csv, "write the table to this CSV file");
  ana->add_option("--levels", ana_levels, "pyramid depth for the band split");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  std::uint64_t gc_seed = 7;
  double gc_tol = 1e-4;
  gc->add_option("--seed", gc_seed, "randomization seed");
  gc->add_option("--tol", gc_tol, "relative tolerance");

  // bench
  auto* bench = app.add_subcommand("bench", "scan-time linearity and MAC report");
  std::string bench_size;
  std::vector<std::string> bench_set_kv;
  bench->add_option("--size", bench_size, "image size as HxW (default 64x64)");
  bench->add_option("--set", bench_set_kv, "override a single key=value");

  try {
    app.parse(argc, argv);
    read_thread_cap();
    (void)g_max_threads;  // all compute paths are currently single-threaded
    if (*gen) return cmd_gen(gen_out, gen_count, gen_size, gen_seed, gen_force);
    if (*train) return cmd_train(train_data, train_config, train_out, train_set_kv, train_resume);
    if (*infer) return cmd_infer(inf_ckpt, inf_in, inf_out, inf_gt, inf_config, inf_set_kv);
    if (*dec) return cmd_decompose(dec_in, dec_levels, dec_out);
    if (*ana) return cmd_analyze(ana_data, ana_csv, ana_levels);
    if (*gc) return cmd_gradcheck(gc_seed, gc_tol);
    if (*bench) return cmd_bench(bench_size, bench_set_kv);
    return 2;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
