// SPDX-License-Identifier: Apache-2.0
#include <cnnlab/config.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <istream>
#include <sstream>

#include <fmt/format.h>

namespace cnnlab {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos)
    return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

} // namespace

std::map<std::string, std::string> parse_config(std::istream& is) {
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos)
      line.erase(hash);
    line = trim(line);
    if (line.empty())
      continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(
        fmt::format("config line {}: expected key=value, got '{}'", lineno, line));
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError(fmt::format("config line {}: empty key", lineno));
    if (!out.emplace(key, val).second)
      throw ConfigError(
        fmt::format("config line {}: duplicate key '{}'", lineno, key));
  }
  return out;
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError(fmt::format("cannot open config file '{}'", path));
  return parse_config(in);
}

ParamSet::ParamSet(const std::string& subcommand,
                   const std::map<std::string, std::string>& defaults,
                   const std::map<std::string, std::string>& given)
  : sub_(subcommand), values_(defaults) {
  std::vector<std::string> unknown;
  for (const auto& [k, v] : given) {
    auto it = values_.find(k);
    if (it == values_.end())
      unknown.push_back(k);
    else
      it->second = v;
  }
  if (!unknown.empty()) {
    std::string known;
    for (const auto& [k, v] : defaults)
      known += (known.empty() ? "" : ", ") + k;
    throw ConfigError(fmt::format("unknown key{} '{}' for subcommand {} (known: {})",
                                  unknown.size() > 1 ? "s" : "",
                                  fmt::join(unknown, "', '"), sub_, known));
  }
}

const std::string& ParamSet::raw(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end())
    throw ConfigError(fmt::format("{}: no parameter '{}'", sub_, key));
  return it->second;
}

const std::string& ParamSet::str(const std::string& key) const { return raw(key); }

double ParamSet::num(const std::string& key) const {
  const std::string& v = raw(key);
  if (v == "inf")
    return std::numeric_limits<double>::infinity();
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos == v.size())
      return d;
  } catch (const std::exception&) {
  }
  throw ConfigError(fmt::format("key '{}': '{}' is not a number", key, v));
}

std::uint64_t ParamSet::u64(const std::string& key) const {
  const std::string& v = raw(key);
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError(
      fmt::format("key '{}': '{}' is not a nonnegative integer", key, v));
  return out;
}

std::size_t ParamSet::count(const std::string& key) const {
  return static_cast<std::size_t>(u64(key));
}

bool ParamSet::flag(const std::string& key) const {
  const std::string& v = raw(key);
  if (v == "1" || v == "true" || v == "yes")
    return true;
  if (v == "0" || v == "false" || v == "no")
    return false;
  throw ConfigError(fmt::format("key '{}': '{}' is not a boolean", key, v));
}

std::vector<std::size_t> ParamSet::counts(const std::string& key) const {
  std::vector<std::size_t> out;
  std::stringstream ss(raw(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || p != item.data() + item.size())
      throw ConfigError(
        fmt::format("key '{}': '{}' is not an integer list", key, raw(key)));
    out.push_back(v);
  }
  return out;
}

std::vector<double> ParamSet::nums(const std::string& key) const {
  std::vector<double> out;
  std::stringstream ss(raw(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    try {
      std::size_t pos = 0;
      double d = std::stod(item, &pos);
      if (pos != item.size())
        throw ConfigError("");
      out.push_back(d);
    } catch (const std::exception&) {
      throw ConfigError(
        fmt::format("key '{}': '{}' is not a number list", key, raw(key)));
    }
  }
  return out;
}

} // namespace cnnlab
