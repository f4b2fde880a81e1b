#pragma once

// Structured text configuration. The format is line based:
//
//   # comment (also ;)
//   [section]            dotted names allowed: [detector.1]
//   key = value
//
// Getters record every key they read; finish() then rejects whatever was
// never consumed, so unknown keys and misplaced sections fail loudly with
// their file positions instead of being silently ignored.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace subqm {

class ConfigFile {
 public:
  static ConfigFile parse_file(const std::string& path);
  static ConfigFile parse_text(const std::string& text, std::string origin = "<config>");

  const std::string& origin() const { return origin_; }
  bool has_section(const std::string& section) const;
  bool has(const std::string& section, const std::string& key) const;

  // Typed getters. Missing keys throw ConfigInvalid unless a fallback is
  // given; conversion failures name the position and the offending value.
  std::string get_string(const std::string& section, const std::string& key) const;
  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key) const;
  double get_double(const std::string& section, const std::string& key,
                    double fallback) const;
  long long get_int(const std::string& section, const std::string& key) const;
  long long get_int(const std::string& section, const std::string& key,
                    long long fallback) const;
  std::uint64_t get_u64(const std::string& section, const std::string& key) const;
  std::uint64_t get_u64(const std::string& section, const std::string& key,
                        std::uint64_t fallback) const;
  bool get_bool(const std::string& section, const std::string& key) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  std::vector<double> get_double_list(const std::string& section,
                                      const std::string& key) const;

  // Sections "prefix.1" .. "prefix.N"; they must be numbered consecutively
  // from 1. Returns the full section names in order.
  std::vector<std::string> numbered_sections(const std::string& prefix) const;

  // Mark a section as recognized even when no key is read from it.
  void touch(const std::string& section) const;

  // Throws ConfigInvalid on the first section or key that was never read.
  void finish() const;

 private:
  struct Entry {
    std::string value;
    int line = 0;
    mutable bool used = false;
  };
  struct Section {
    std::map<std::string, Entry> entries;
    int line = 0;
    mutable bool touched = false;
  };

  const Entry* lookup(const std::string& section, const std::string& key) const;
  const Entry& require(const std::string& section, const std::string& key) const;
  std::string where(int line) const;

  std::map<std::string, Section> sections_;
  std::string origin_;
};

}  // namespace subqm
