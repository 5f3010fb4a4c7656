#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lapmamba/network.hpp"
#include "lapmamba/trainer.hpp"

namespace lapmamba::config {

// Plain key=value run configuration (one per line, '#' comments). Unknown
// keys are hard errors so typos cannot silently fall back to defaults.
struct RunConfig {
  network::NetworkConfig net;
  trainer::TrainConfig train;
  int pairs = 200;      // training pairs to generate/use
  int val_pairs = 8;    // held-out validation pairs
  std::int64_t size = 80;  // generated image side (crops come out of this)
  std::uint64_t data_seed = 42;

  static RunConfig from_file(const std::string& path);

  // Applies one key=value setting; throws ConfigError on unknown keys or
  // malformed values.
  void apply(const std::string& key, const std::string& value);

  // Canonical resolved key=value listing (also the config-hash input).
  std::string echo() const;
  std::uint64_t hash() const { return trainer::hash_string(echo()); }
};

// Shared parser for key=value text (file contents or single overrides).
std::vector<std::pair<std::string, std::string>> parse_kv(const std::string& text);

}  // namespace lapmamba::config
