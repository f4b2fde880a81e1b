#include "subqm/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "subqm/errors.hpp"

namespace subqm {

namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

bool valid_name(const std::string& s, bool allow_dot) {
  if (s.empty()) return false;
  for (char c : s) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '_' ||
                    (allow_dot && c == '.');
    if (!ok) return false;
  }
  return true;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

}  // namespace

std::string ConfigFile::where(int line) const {
  return origin_ + ":" + std::to_string(line);
}

ConfigFile ConfigFile::parse_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoFailure("cannot read config file " + path);
  return parse_text(buf.str(), path);
}

ConfigFile ConfigFile::parse_text(const std::string& text, std::string origin) {
  ConfigFile cf;
  cf.origin_ = std::move(origin);
  std::istringstream in(text);
  std::string raw;
  std::string current;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigInvalid(cf.where(line_no) + ": section header not closed");
      }
      const std::string name = trim(line.substr(1, line.size() - 2));
      if (!valid_name(name, true)) {
        throw ConfigInvalid(cf.where(line_no) + ": bad section name '" + name + "'");
      }
      if (cf.sections_.count(name)) {
        throw ConfigInvalid(cf.where(line_no) + ": section [" + name +
                            "] appears twice");
      }
      cf.sections_[name].line = line_no;
      current = name;
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigInvalid(cf.where(line_no) + ": expected [section] or key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (!valid_name(key, false)) {
      throw ConfigInvalid(cf.where(line_no) + ": bad key name '" + key + "'");
    }
    if (current.empty()) {
      throw ConfigInvalid(cf.where(line_no) + ": key '" + key +
                          "' before any [section]");
    }
    Section& sec = cf.sections_[current];
    if (sec.entries.count(key)) {
      throw ConfigInvalid(cf.where(line_no) + ": key '" + key + "' in [" + current +
                          "] appears twice");
    }
    sec.entries[key] = Entry{trim(line.substr(eq + 1)), line_no, false};
  }
  return cf;
}

bool ConfigFile::has_section(const std::string& section) const {
  return sections_.count(section) != 0;
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
  const auto s = sections_.find(section);
  return s != sections_.end() && s->second.entries.count(key) != 0;
}

void ConfigFile::touch(const std::string& section) const {
  const auto s = sections_.find(section);
  if (s != sections_.end()) s->second.touched = true;
}

const ConfigFile::Entry* ConfigFile::lookup(const std::string& section,
                                            const std::string& key) const {
  const auto s = sections_.find(section);
  if (s == sections_.end()) return nullptr;
  s->second.touched = true;
  const auto e = s->second.entries.find(key);
  if (e == s->second.entries.end()) return nullptr;
  e->second.used = true;
  return &e->second;
}

const ConfigFile::Entry& ConfigFile::require(const std::string& section,
                                             const std::string& key) const {
  const Entry* e = lookup(section, key);
  if (!e) {
    throw ConfigInvalid(origin_ + ": missing key '" + key + "' in [" + section + "]");
  }
  return *e;
}

std::string ConfigFile::get_string(const std::string& section,
                                   const std::string& key) const {
  return require(section, key).value;
}

std::string ConfigFile::get_string(const std::string& section, const std::string& key,
                                   const std::string& fallback) const {
  const Entry* e = lookup(section, key);
  return e ? e->value : fallback;
}

namespace {

double parse_double(const ConfigFile& cf, const std::string& section,
                    const std::string& key, const std::string& value, int line,
                    const std::string& origin) {
  (void)cf;
  (void)section;
  double out = 0.0;
  const char* b = value.data();
  const char* e = b + value.size();
  const auto r = std::from_chars(b, e, out);
  if (r.ec != std::errc{} || r.ptr != e) {
    throw ConfigInvalid(origin + ":" + std::to_string(line) + ": key '" + key +
                        "': cannot parse '" + value + "' as a number");
  }
  return out;
}

}  // namespace

double ConfigFile::get_double(const std::string& section, const std::string& key) const {
  const Entry& e = require(section, key);
  return parse_double(*this, section, key, e.value, e.line, origin_);
}

double ConfigFile::get_double(const std::string& section, const std::string& key,
                              double fallback) const {
  const Entry* e = lookup(section, key);
  if (!e) return fallback;
  return parse_double(*this, section, key, e->value, e->line, origin_);
}

namespace {

template <typename T>
T parse_integer(const std::string& key, const std::string& value, int line,
                const std::string& origin) {
  T out{};
  const char* b = value.data();
  const char* e = b + value.size();
  const auto r = std::from_chars(b, e, out);
  if (r.ec != std::errc{} || r.ptr != e) {
    throw ConfigInvalid(origin + ":" + std::to_string(line) + ": key '" + key +
                        "': cannot parse '" + value + "' as an integer");
  }
  return out;
}

}  // namespace

long long ConfigFile::get_int(const std::string& section, const std::string& key) const {
  const Entry& e = require(section, key);
  return parse_integer<long long>(key, e.value, e.line, origin_);
}

long long ConfigFile::get_int(const std::string& section, const std::string& key,
                              long long fallback) const {
  const Entry* e = lookup(section, key);
  if (!e) return fallback;
  return parse_integer<long long>(key, e->value, e->line, origin_);
}

std::uint64_t ConfigFile::get_u64(const std::string& section,
                                  const std::string& key) const {
  const Entry& e = require(section, key);
  return parse_integer<std::uint64_t>(key, e.value, e.line, origin_);
}

std::uint64_t ConfigFile::get_u64(const std::string& section, const std::string& key,
                                  std::uint64_t fallback) const {
  const Entry* e = lookup(section, key);
  if (!e) return fallback;
  return parse_integer<std::uint64_t>(key, e->value, e->line, origin_);
}

namespace {

bool parse_bool(const std::string& key, const std::string& value, int line,
                const std::string& origin) {
  const std::string v = lower(value);
  if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
  if (v == "false" || v == "no" || v == "off" || v == "0") return false;
  throw ConfigInvalid(origin + ":" + std::to_string(line) + ": key '" + key +
                      "': cannot parse '" + value + "' as a boolean");
}

}  // namespace

bool ConfigFile::get_bool(const std::string& section, const std::string& key) const {
  const Entry& e = require(section, key);
  return parse_bool(key, e.value, e.line, origin_);
}

bool ConfigFile::get_bool(const std::string& section, const std::string& key,
                          bool fallback) const {
  const Entry* e = lookup(section, key);
  if (!e) return fallback;
  return parse_bool(key, e->value, e->line, origin_);
}

std::vector<double> ConfigFile::get_double_list(const std::string& section,
                                                const std::string& key) const {
  const Entry& e = require(section, key);
  std::vector<double> out;
  std::string item;
  std::istringstream in(e.value);
  while (std::getline(in, item, ',')) {
    const std::string v = trim(item);
    if (v.empty()) {
      throw ConfigInvalid(where(e.line) + ": key '" + key + "': empty list item");
    }
    out.push_back(parse_double(*this, section, key, v, e.line, origin_));
  }
  if (out.empty()) {
    throw ConfigInvalid(where(e.line) + ": key '" + key + "': empty list");
  }
  return out;
}

std::vector<std::string> ConfigFile::numbered_sections(const std::string& prefix) const {
  std::vector<std::pair<long long, std::string>> found;
  const std::string head = prefix + ".";
  for (const auto& [name, sec] : sections_) {
    if (name.rfind(head, 0) != 0) continue;
    const std::string tail = name.substr(head.size());
    long long idx = 0;
    const char* b = tail.data();
    const char* e = b + tail.size();
    const auto r = std::from_chars(b, e, idx);
    if (r.ec != std::errc{} || r.ptr != e || idx < 1) {
      throw ConfigInvalid(where(sec.line) + ": section [" + name +
                          "] must be numbered [" + prefix + ".1], [" + prefix +
                          ".2], ...");
    }
    found.emplace_back(idx, name);
  }
  std::sort(found.begin(), found.end());
  std::vector<std::string> out;
  for (size_t i = 0; i < found.size(); ++i) {
    if (found[i].first != static_cast<long long>(i + 1)) {
      throw ConfigInvalid(origin_ + ": sections [" + prefix +
                          ".N] must be numbered consecutively from 1");
    }
    out.push_back(found[i].second);
  }
  return out;
}

void ConfigFile::finish() const {
  for (const auto& [name, sec] : sections_) {
    bool any_used = sec.touched;
    for (const auto& [key, entry] : sec.entries) any_used = any_used || entry.used;
    if (!any_used) {
      throw ConfigInvalid(where(sec.line) + ": unknown section [" + name + "]");
    }
    for (const auto& [key, entry] : sec.entries) {
      if (!entry.used) {
        throw ConfigInvalid(where(entry.line) + ": unknown key '" + key + "' in [" +
                            name + "]");
      }
    }
  }
}

}  // namespace subqm
