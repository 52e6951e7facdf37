// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace cnnlab {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/**
 * key=value text, one pair per line. '#' starts a comment, blank lines are
 * skipped, whitespace around keys and values is trimmed. Duplicate keys are
 * an error.
 */
std::map<std::string, std::string> parse_config(std::istream& is);
std::map<std::string, std::string> parse_config_file(const std::string& path);

struct ExperimentConfig {
  std::string subcommand;
  std::map<std::string, std::string> params;
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  std::size_t threads = 1;
};

/**
 * Parameters of one subcommand resolved against its defaults. Construction
 * fails on any key that has no default.
 */
class ParamSet {
public:
  ParamSet(const std::string& subcommand,
           const std::map<std::string, std::string>& defaults,
           const std::map<std::string, std::string>& given);

  const std::string& str(const std::string& key) const;
  double num(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<std::size_t> counts(const std::string& key) const;
  std::vector<double> nums(const std::string& key) const;

  const std::map<std::string, std::string>& resolved() const { return values_; }

private:
  std::string sub_;
  std::map<std::string, std::string> values_;
  const std::string& raw(const std::string& key) const;
};

} // namespace cnnlab
