// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0

#include "idedit/run_config.hpp"

#include "idedit/image.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace idedit {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_int(const std::string& s, long long& out) {
  const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  return r.ec == std::errc() && r.ptr == s.data() + s.size();
}

bool parse_real(const std::string& s, double& out) {
  std::istringstream in(s);
  in >> out;
  return !in.fail() && in.eof();
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

}  // namespace

RunConfig::RunConfig() {
  const std::vector<std::tuple<const char*, Type, const char*>> defaults{
      {"seed", Type::integer, "0"},
      {"out", Type::text, "runs"},
      {"dataset", Type::text, "data"},
      {"ckpt", Type::text, ""},
      {"scene_id", Type::integer, "0"},
      {"source_prompt", Type::text, ""},
      {"target_prompt", Type::text, ""},
      {"object_word", Type::text, ""},
      {"parallel", Type::integer, "1"},
      {"data.n", Type::integer, "2048"},
      {"data.size", Type::integer, "32"},
      {"model.base_channels", Type::integer, "32"},
      {"train.steps", Type::integer, "20000"},
      {"train.batch", Type::integer, "4"},
      {"train.lr", Type::real, "1e-3"},
      {"train.warmup", Type::integer, "200"},
      {"train.cond_drop", Type::real, "0.1"},
      {"ft.lambda", Type::real, "0.1"},
      {"ft.lr", Type::real, "1e-4"},
      {"ft.token_lr", Type::real, "5e-3"},
      {"ft.steps", Type::integer, "200"},
      {"ft.batch", Type::integer, "1"},
      {"ft.mask_refresh", Type::integer, "50"},
      {"nti.inner_steps", Type::integer, "10"},
      {"nti.lr", Type::real, "1e-2"},
      {"nti.tol", Type::real, "1e-5"},
      {"edit.w", Type::real, "4.5"},
      {"edit.tau_inj", Type::real, "0.6"},
      {"edit.spatial_control", Type::boolean, "true"},
      {"mask.resolution", Type::integer, "16"},
      {"mask.std_factor", Type::real, "0.5"},
      {"mask.fallback_fraction", Type::real, "0.25"},
      {"eval.scenes", Type::integer, "10"},
      {"eval.first_scene", Type::integer, "0"},
      {"sweep.w_list", Type::real_list, "1,2.5,4,5.5,7.5"},
      {"compose.reference", Type::integer, "-1"},
  };
  for (const auto& [key, type, value] : defaults) {
    types_[key] = type;
    values_[key] = value;
  }
}

void RunConfig::set(const std::string& key, const std::string& raw) {
  auto it = types_.find(key);
  if (it == types_.end()) throw ConfigError("unknown config key '" + key + "'");
  const std::string value = trim(raw);
  long long i = 0;
  double d = 0.0;
  bool ok = true;
  switch (it->second) {
    case Type::text: break;
    case Type::integer: ok = parse_int(value, i); break;
    case Type::real: ok = parse_real(value, d); break;
    case Type::boolean: ok = value == "true" || value == "false"; break;
    case Type::real_list:
      for (const auto& item : split_commas(value)) ok = ok && parse_real(item, d);
      ok = ok && !value.empty();
      break;
  }
  if (!ok) throw ConfigError("bad value '" + value + "' for config key '" + key + "'");
  values_[key] = value;
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file", path);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(number) + ": expected 'key = value'");
    set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

const std::string& RunConfig::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

int RunConfig::integer(const std::string& key) const {
  long long v = 0;
  if (!parse_int(str(key), v)) throw ConfigError("config key '" + key + "' is not an integer");
  return static_cast<int>(v);
}

double RunConfig::real(const std::string& key) const {
  double v = 0.0;
  if (!parse_real(str(key), v)) throw ConfigError("config key '" + key + "' is not a number");
  return v;
}

bool RunConfig::flag(const std::string& key) const { return str(key) == "true"; }

std::vector<double> RunConfig::reals(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_commas(str(key))) {
    double v = 0.0;
    if (!parse_real(item, v)) throw ConfigError("config key '" + key + "' holds a non-number");
    out.push_back(v);
  }
  return out;
}

std::uint64_t RunConfig::seed() const {
  long long v = 0;
  if (!parse_int(str("seed"), v) || v < 0) throw ConfigError("seed must be a non-negative integer");
  return static_cast<std::uint64_t>(v);
}

std::string RunConfig::resolved() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

void RunConfig::write_resolved(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write resolved config", path);
  out << resolved();
}

}  // namespace idedit
