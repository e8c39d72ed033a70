#pragma once

// Resolved run settings: defaults, then a `key = value` config file, then
// command-line overrides. Unknown keys are rejected.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "toe/baselines.hpp"
#include "toe/search.hpp"
#include "toe/synth.hpp"
#include "toe/training.hpp"

namespace toe {

enum class KeyType { integer, uinteger, real, boolean, text, int_list, uint_list, real_list, text_list };

struct KeySpec {
  const char* name;
  KeyType type;
  const char* default_value;
  const char* help;
};

class RunConfig {
 public:
  RunConfig();

  static const std::vector<KeySpec>& keys();

  /// Throws UsageError on unknown keys or values that do not parse as the key's type.
  void set(const std::string& key, const std::string& value);
  /// Parses a `key=value` assignment.
  void set_assignment(const std::string& assignment);
  void load_file(const std::filesystem::path& path);
  void load_text(const std::string& text);

  const std::string& get(const std::string& key) const;
  long get_int(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  Real get_real(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;
  std::vector<std::uint64_t> get_uint_list(const std::string& key) const;
  std::vector<Real> get_real_list(const std::string& key) const;
  std::vector<std::string> get_text_list(const std::string& key) const;

  SynthConfig synth() const;
  SpuriousConfig spurious() const;
  TrainConfig train() const;
  SearchConfig search() const;

  /// `key = value` lines in declaration order.
  std::string resolved_text() const;
  Json resolved_json() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace toe
