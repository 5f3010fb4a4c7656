#include "lapmamba/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace lapmamba::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(trim(item)));
    } catch (const std::exception&) {
      throw ConfigError("config: bad integer '" + item + "' in " + key);
    }
  }
  if (out.empty()) throw ConfigError("config: empty list for " + key);
  return out;
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const int r = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer '" + v + "' for " + key);
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const auto r = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: bad unsigned integer '" + v + "' for " + key);
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: bad number '" + v + "' for " + key);
  }
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_kv(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(lineno) + " is not key=value: " + line);
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config: empty key on line " + std::to_string(lineno));
    out.emplace_back(key, value);
  }
  return out;
}

void RunConfig::apply(const std::string& key, const std::string& value) {
  if (key == "channels") {
    net.channels = parse_int_list(key, value);
  } else if (key == "lsrb_counts") {
    net.lsrb_counts = parse_int_list(key, value);
  } else if (key == "hdeb_counts") {
    net.hdeb_counts = parse_int_list(key, value);
  } else if (key == "nstate") {
    net.nstate = parse_int(key, value);
  } else if (key == "merge") {
    if (value == "sum") {
      net.merge = ssm2d::MergeMode::Sum;
    } else if (value == "mean") {
      net.merge = ssm2d::MergeMode::Mean;
    } else {
      throw ConfigError("config: merge must be 'sum' or 'mean', got '" + value + "'");
    }
  } else if (key == "dilated_dconv") {
    net.dilated_dconv = parse_int(key, value) != 0;
  } else if (key == "iterations") {
    train.iterations = parse_int(key, value);
  } else if (key == "batch") {
    train.batch = parse_int(key, value);
  } else if (key == "crop") {
    train.crop = parse_int(key, value);
  } else if (key == "lr_max") {
    train.lr_max = parse_double(key, value);
  } else if (key == "lr_min") {
    train.lr_min = parse_double(key, value);
  } else if (key == "lambda") {
    train.lambda = parse_double(key, value);
  } else if (key == "freq_levels") {
    train.freq_levels = parse_int(key, value);
  } else if (key == "clip_norm") {
    train.clip_norm = parse_double(key, value);
  } else if (key == "log_every") {
    train.log_every = parse_int(key, value);
  } else if (key == "ckpt_every") {
    train.ckpt_every = parse_int(key, value);
  } else if (key == "seed") {
    train.seed = parse_u64(key, value);
  } else if (key == "pairs") {
    pairs = parse_int(key, value);
  } else if (key == "val_pairs") {
    val_pairs = parse_int(key, value);
  } else if (key == "size") {
    size = parse_int(key, value);
  } else if (key == "data_seed") {
    data_seed = parse_u64(key, value);
  } else {
    throw ConfigError("config: unknown key '" + key + "'");
  }
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  RunConfig cfg;
  for (const auto& [k, v] : parse_kv(ss.str())) cfg.apply(k, v);
  return cfg;
}

std::string RunConfig::echo() const {
  std::ostringstream os;
  char buf[160];
  os << "channels=" << join(net.channels) << "\n";
  os << "lsrb_counts=" << join(net.lsrb_counts) << "\n";
  os << "hdeb_counts=" << join(net.hdeb_counts) << "\n";
  os << "nstate=" << net.nstate << "\n";
  os << "merge=" << (net.merge == ssm2d::MergeMode::Sum ? "sum" : "mean") << "\n";
  os << "dilated_dconv=" << (net.dilated_dconv ? 1 : 0) << "\n";
  os << "iterations=" << train.iterations << "\n";
  os << "batch=" << train.batch << "\n";
  os << "crop=" << train.crop << "\n";
  std::snprintf(buf, sizeof(buf), "lr_max=%.17g\nlr_min=%.17g\nlambda=%.17g\nclip_norm=%.17g\n",
                train.lr_max, train.lr_min, train.lambda, train.clip_norm);
  os << buf;
  os << "freq_levels=" << train.freq_levels << "\n";
  os << "log_every=" << train.log_every << "\n";
  os << "ckpt_every=" << train.ckpt_every << "\n";
  os << "seed=" << train.seed << "\n";
  os << "pairs=" << pairs << "\n";
  os << "val_pairs=" << val_pairs << "\n";
  os << "size=" << size << "\n";
  os << "data_seed=" << data_seed << "\n";
  return os.str();
}

}  // namespace lapmamba::config
