#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "lapmamba/config.hpp"

using namespace lapmamba;
namespace fs = std::filesystem;

TEST_CASE("kv parser: comments, blanks, and malformed lines") {
  const auto kvs = config::parse_kv("# header\n\nbatch = 8  # trailing\n seed=5 \n");
  REQUIRE(kvs.size() == 2);
  CHECK(kvs[0].first == "batch");
  CHECK(kvs[0].second == "8");
  CHECK(kvs[1].first == "seed");
  CHECK(kvs[1].second == "5");
  CHECK_THROWS_AS(config::parse_kv("not-an-assignment\n"), ConfigError);
  CHECK_THROWS_AS(config::parse_kv("=5\n"), ConfigError);
}

TEST_CASE("unknown keys are hard errors") {
  config::RunConfig cfg;
  CHECK_THROWS_AS(cfg.apply("iteratons", "100"), ConfigError);  // typo must not pass
  CHECK_THROWS_AS(cfg.apply("", "1"), ConfigError);
  CHECK_NOTHROW(cfg.apply("iterations", "100"));
  CHECK(cfg.train.iterations == 100);
}

TEST_CASE("typed values are validated") {
  config::RunConfig cfg;
  CHECK_THROWS_AS(cfg.apply("batch", "four"), ConfigError);
  CHECK_THROWS_AS(cfg.apply("lr_max", "fast"), ConfigError);
  CHECK_THROWS_AS(cfg.apply("merge", "median"), ConfigError);
  CHECK_THROWS_AS(cfg.apply("channels", ""), ConfigError);
  CHECK_NOTHROW(cfg.apply("channels", "4, 6, 8, 10, 8, 6, 4"));
  CHECK(cfg.net.channels == std::vector<int>{4, 6, 8, 10, 8, 6, 4});
  CHECK_NOTHROW(cfg.apply("merge", "mean"));
  CHECK(cfg.net.merge == ssm2d::MergeMode::Mean);
}

TEST_CASE("file round trip and stable hash") {
  const auto path = fs::temp_directory_path() / "lapmamba_cfg_test.txt";
  {
    std::ofstream os(path);
    os << "# desk-scale run\niterations=50\nbatch=2\ncrop=32\nlambda=0.2\nseed=7\n";
  }
  const config::RunConfig cfg = config::RunConfig::from_file(path.string());
  CHECK(cfg.train.iterations == 50);
  CHECK(cfg.train.batch == 2);
  CHECK(cfg.train.crop == 32);
  CHECK(cfg.train.lambda == 0.2);
  CHECK(cfg.train.seed == 7);

  // The echo must parse back to an identical configuration.
  config::RunConfig echoed;
  for (const auto& [k, v] : config::parse_kv(cfg.echo())) echoed.apply(k, v);
  CHECK(echoed.echo() == cfg.echo());
  CHECK(echoed.hash() == cfg.hash());
  CHECK(cfg.hash() != config::RunConfig{}.hash());
  fs::remove(path);
}

TEST_CASE("defaults form a valid network") {
  const config::RunConfig cfg;
  CHECK_NOTHROW(cfg.net.validate());
  CHECK(cfg.train.lr_max == 5e-4);
  CHECK(cfg.train.lr_min == 1e-7);
  CHECK(cfg.train.lambda == 0.1);
}
