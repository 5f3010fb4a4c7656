#include <doctest.h>

#include <cmath>

#include "lapmamba/network.hpp"

using namespace lapmamba;

namespace {

network::NetworkConfig tiny_cfg() {
  network::NetworkConfig cfg;
  cfg.channels = {4, 6, 8, 10, 8, 6, 4};
  cfg.lsrb_counts = {1, 1, 1, 1, 1, 1, 1};
  cfg.hdeb_counts = {1, 1, 1, 1, 1, 1, 1};
  cfg.nstate = 2;
  return cfg;
}

}  // namespace

TEST_CASE("config validation rejects malformed schedules") {
  network::NetworkConfig cfg = tiny_cfg();
  cfg.channels = {4, 6, 8, 10, 8, 6, 5};  // breaks mirror symmetry
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_cfg();
  cfg.lsrb_counts = {1, 1, 1};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_cfg();
  cfg.nstate = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_cfg();
  cfg.identity_io = true;  // widths must equal in_channels
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_NOTHROW(tiny_cfg().validate());
}

TEST_CASE("forward preserves shape and enforces the size multiple") {
  network::Model model = network::Model::build(tiny_cfg(), 1);
  Rng rng(2);
  Tensor x = Tensor::uniform({1, 3, 32, 48}, rng, 0.0, 1.0);
  const Tensor y = model.forward(x);
  CHECK(y.same_shape(x));
  for (double v : y.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK_THROWS_AS(model.forward(Tensor::zeros({1, 3, 30, 32})), DimensionError);
  CHECK_THROWS_AS(model.forward(Tensor::zeros({1, 4, 32, 32})), DimensionError);
}

TEST_CASE("identity configuration reduces the network to the transform round trip") {
  network::NetworkConfig cfg;
  cfg.channels = {3, 3, 3, 3, 3, 3, 3};
  cfg.lsrb_counts = {0, 0, 0, 0, 0, 0, 0};
  cfg.hdeb_counts = {0, 0, 0, 0, 0, 0, 0};
  cfg.stub_blocks = true;
  cfg.mdfm_w_one = true;
  cfg.identity_io = true;
  network::Model model = network::Model::build(cfg, 3);
  Rng rng(4);
  Tensor x = Tensor::uniform({1, 3, 32, 32}, rng, 0.0, 1.0);
  const Tensor y = model.forward(x, /*training=*/true);
  double max_err = 0.0;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    max_err = std::max(max_err,
                       std::abs(y.data()[static_cast<size_t>(i)] - x.data()[static_cast<size_t>(i)]));
  }
  CHECK(max_err <= 1e-5);
}

TEST_CASE("parameter initialization is deterministic in the seed") {
  const network::Model a = network::Model::build(tiny_cfg(), 7);
  const network::Model b = network::Model::build(tiny_cfg(), 7);
  const network::Model c = network::Model::build(tiny_cfg(), 8);
  REQUIRE(a.params.params.size() == b.params.params.size());
  bool all_equal_ab = true, any_diff_ac = false;
  auto itb = b.params.params.begin();
  auto itc = c.params.params.begin();
  for (const auto& [name, t] : a.params.params) {
    if (t.data() != itb->second.data()) all_equal_ab = false;
    if (t.data() != itc->second.data()) any_diff_ac = true;
    ++itb;
    ++itc;
  }
  CHECK(all_equal_ab);
  CHECK(any_diff_ac);
  CHECK(a.parameter_count() > 0);
}

TEST_CASE("flop estimate: low-band scans cost a quarter of full resolution") {
  const network::FlopReport r = network::flop_estimate(tiny_cfg(), 64, 64);
  CHECK(r.scan_macs > 0);
  CHECK(r.scan_macs_full_res == 4 * r.scan_macs);
  CHECK(r.total() == r.conv_macs + r.linear_macs + r.scan_macs);
  CHECK(r.low_branch_macs > 0);
  CHECK(r.high_branch_macs > 0);

  // MAC counts scale with the block schedule.
  network::NetworkConfig wide = tiny_cfg();
  wide.lsrb_counts = {2, 2, 2, 2, 2, 2, 2};
  CHECK(network::flop_estimate(wide, 64, 64).scan_macs == 2 * r.scan_macs);
}

TEST_CASE("describe reports every stage") {
  const network::Model model = network::Model::build(tiny_cfg(), 1);
  const std::string desc = model.describe(64, 64);
  for (const char* tag : {"enc0", "enc1", "enc2", "mid", "dec0", "dec1", "dec2", "total parameters"}) {
    CHECK(desc.find(tag) != std::string::npos);
  }
}
