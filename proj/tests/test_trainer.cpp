#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "lapmamba/trainer.hpp"

using namespace lapmamba;
namespace fs = std::filesystem;

namespace {

network::NetworkConfig micro_cfg() {
  network::NetworkConfig cfg;
  cfg.channels = {4, 4, 4, 4, 4, 4, 4};
  cfg.lsrb_counts = {1, 0, 0, 0, 0, 0, 1};
  cfg.hdeb_counts = {0, 0, 0, 0, 0, 0, 0};
  cfg.nstate = 2;
  return cfg;
}

std::vector<hazegen::Pair> micro_dataset(int n) {
  std::vector<hazegen::Pair> out;
  for (int i = 0; i < n; ++i) out.push_back(hazegen::make_pair(100 + static_cast<std::uint64_t>(i), 16, 16));
  return out;
}

}  // namespace

TEST_CASE("cosine schedule endpoints and midpoint") {
  CHECK(trainer::cosine_lr(0, 1000) == doctest::Approx(5e-4).epsilon(1e-12));
  CHECK(trainer::cosine_lr(1000, 1000) == doctest::Approx(1e-7).epsilon(1e-12));
  CHECK(trainer::cosine_lr(500, 1000) == doctest::Approx((5e-4 + 1e-7) / 2).epsilon(1e-9));
  CHECK(trainer::cosine_lr(2000, 1000) == 1e-7);  // clamps past the end
  double prev = 1.0;
  for (std::int64_t s = 0; s <= 100; ++s) {
    const double lr = trainer::cosine_lr(s, 100);
    CHECK(lr <= prev + 1e-15);
    prev = lr;
  }
  CHECK_THROWS_AS(trainer::cosine_lr(-1, 100), ConfigError);
}

TEST_CASE("adam: hand-evaluated first step on a scalar") {
  nn::ParamStore ps;
  Tensor w = ps.add("w", Tensor::scalar(1.0));
  {
    Tape tape;
    Tensor loss = ops::mul(w, w);  // grad = 2w = 2
    tape.backward(loss);
  }
  trainer::OptimState st;
  trainer::AdamConfig cfg;
  cfg.clip_norm = 0.0;
  trainer::adam_step(ps, st, 0.1, cfg);
  // Bias-corrected first step moves by ~lr * sign(g): mhat = g,
  // vhat = g^2 -> update = lr * g / (|g| + eps) close to 0.1.
  CHECK(w.data()[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(st.step == 1);
  CHECK(st.m.at("w")[0] != 0.0);
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
  nn::ParamStore ps;
  Tensor w = ps.add("w", Tensor::from_data({2}, {1.0, -2.0}));
  w.zero_grad();
  trainer::OptimState st;
  trainer::adam_step(ps, st, 0.1);
  CHECK(w.data()[0] == 1.0);
  CHECK(w.data()[1] == -2.0);
}

TEST_CASE("adam: converges on (w-3)^2 within 100 steps") {
  nn::ParamStore ps;
  Tensor w = ps.add("w", Tensor::scalar(0.0));
  trainer::OptimState st;
  for (int i = 0; i < 100; ++i) {
    Tape tape;
    Tensor diff = ops::add_scalar(w, -3.0);
    tape.backward(ops::mul(diff, diff));
    trainer::adam_step(ps, st, 0.1);
  }
  CHECK(std::abs(w.data()[0] - 3.0) < 0.5);
}

TEST_CASE("adam: NaN gradient aborts naming the parameter") {
  nn::ParamStore ps;
  Tensor w = ps.add("bad_param", Tensor::scalar(1.0));
  w.impl()->ensure_grad()[0] = std::nan("");
  trainer::OptimState st;
  try {
    trainer::adam_step(ps, st, 0.1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("bad_param") != std::string::npos);
  }
}

TEST_CASE("checkpoint: byte-identical round trip") {
  const auto dir = fs::temp_directory_path() / "lapmamba_ckpt_test";
  fs::create_directories(dir);
  network::Model model = network::Model::build(micro_cfg(), 5);
  trainer::OptimState st;
  st.step = 42;
  st.m["stem.w"] = std::vector<double>(8, 0.25);
  st.v["stem.w"] = std::vector<double>(8, 0.5);
  const trainer::Checkpoint ck = trainer::snapshot(model, st, 123456789ull, 42ull);

  const auto p1 = (dir / "a.lpmb").string();
  const auto p2 = (dir / "b.lpmb").string();
  trainer::save_checkpoint(p1, ck);
  const trainer::Checkpoint loaded = trainer::load_checkpoint(p1);
  CHECK(loaded.config_hash == 123456789ull);
  CHECK(loaded.sched_step == 42);
  CHECK(loaded.dataset_seed == 42);
  trainer::save_checkpoint(p2, loaded);

  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  CHECK(!b1.empty());

  for (const auto& [name, t] : ck.tensors) {
    CHECK(loaded.tensors.at(name).data() == t.data());
  }

  // Corrupt the magic: must fail cleanly with a format error.
  std::string corrupted = b1;
  corrupted[0] = 'X';
  const auto p3 = (dir / "c.lpmb").string();
  std::ofstream(p3, std::ios::binary) << corrupted;
  CHECK_THROWS_AS(trainer::load_checkpoint(p3), FormatError);

  // Truncation must also fail.
  const auto p4 = (dir / "d.lpmb").string();
  std::ofstream(p4, std::ios::binary) << b1.substr(0, b1.size() / 2);
  CHECK_THROWS_AS(trainer::load_checkpoint(p4), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("training: smoke run decreases loss and is deterministic") {
  const auto data = micro_dataset(6);
  trainer::TrainConfig tc;
  tc.iterations = 30;
  tc.batch = 2;
  tc.crop = 16;
  tc.lr_max = 2e-3;
  tc.log_every = 10;
  tc.freq_levels = 2;
  tc.seed = 9;

  network::Model m1 = network::Model::build(micro_cfg(), 9);
  const trainer::TrainResult r1 = trainer::train(m1, data, {}, tc);
  CHECK(r1.final_loss < r1.initial_loss);

  network::Model m2 = network::Model::build(micro_cfg(), 9);
  const trainer::TrainResult r2 = trainer::train(m2, data, {}, tc);
  CHECK(r1.csv() == r2.csv());
  REQUIRE(!r1.rows.empty());
  CHECK(r1.rows.front().step == 1);
  CHECK(r1.rows.back().step == 30);
}

TEST_CASE("training: resume from checkpoint replays the uninterrupted run") {
  const auto data = micro_dataset(4);
  trainer::TrainConfig tc;
  tc.iterations = 12;
  tc.batch = 2;
  tc.crop = 16;
  tc.log_every = 1;
  tc.freq_levels = 2;
  tc.seed = 21;

  // Uninterrupted reference.
  network::Model ref = network::Model::build(micro_cfg(), 21);
  trainer::OptimState ref_st;
  const trainer::TrainResult full = trainer::train(ref, data, {}, tc, "", &ref_st);

  // Stop at step 6, snapshot, restore into a fresh model, continue.
  network::Model a = network::Model::build(micro_cfg(), 21);
  trainer::OptimState st_a;
  trainer::train(a, data, {}, tc, "", &st_a, 0, /*stop_step=*/6);
  const trainer::Checkpoint ck = trainer::snapshot(a, st_a, 1, 2);

  network::Model b = network::Model::build(micro_cfg(), 999);  // different init, then restored
  trainer::OptimState st_b;
  trainer::restore(b, st_b, ck);
  const trainer::TrainResult resumed = trainer::train(b, data, {}, tc, "", &st_b, 6);

  REQUIRE(full.rows.size() == 12);
  for (size_t i = 6; i < 12; ++i) {
    CHECK(full.rows[i].total == resumed.rows[i - 6].total);
    CHECK(full.rows[i].lr == resumed.rows[i - 6].lr);
  }
  for (const auto& [name, t] : ref.params.params) {
    CHECK(b.params.at(name).data() == t.data());
  }
}

TEST_CASE("training rejects empty datasets") {
  network::Model m = network::Model::build(micro_cfg(), 1);
  trainer::TrainConfig tc;
  CHECK_THROWS_AS(trainer::train(m, {}, {}, tc), ConfigError);
}
