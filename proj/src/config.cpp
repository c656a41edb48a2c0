#include "dpprompt/config.hpp"

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dpprompt/errors.hpp"

namespace dpprompt {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

void flatten(const nlohmann::json& node, const std::string& prefix, Config& out) {
  if (node.is_object()) {
    for (const auto& [k, v] : node.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
    return;
  }
  if (prefix.empty()) throw ConfigError("JSON configuration must be an object");
  if (node.is_string()) {
    out.set(prefix, node.get<std::string>());
  } else if (node.is_array()) {
    std::string joined;
    for (const auto& item : node) {
      if (!joined.empty()) joined += ",";
      joined += item.is_string() ? item.get<std::string>() : item.dump();
    }
    out.set(prefix, joined);
  } else if (node.is_null()) {
    throw ConfigError("configuration key '" + prefix + "' is null");
  } else {
    out.set(prefix, node.dump());
  }
}

}  // namespace

Config Config::parse_ini(std::string_view text) {
  Config cfg;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    // '#' and ';' start a comment at the line start or after whitespace.
    for (std::size_t i = 0; i < line.size(); ++i) {
      if ((line[i] == '#' || line[i] == ';') && (i == 0 || std::isspace(static_cast<unsigned char>(line[i - 1])))) {
        line = line.substr(0, i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config line " + std::to_string(line_no) + ": unterminated section");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (section.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    cfg.set(section.empty() ? key : section + "." + key, std::string(trim(line.substr(eq + 1))));
  }
  return cfg;
}

Config Config::parse_json(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON configuration: ") + e.what());
  }
  Config cfg;
  flatten(doc, "", cfg);
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open configuration file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  const bool json = path.extension() == ".json" || (first != std::string::npos && text[first] == '{');
  Config cfg = json ? parse_json(text) : parse_ini(text);
  cfg.base_dir_ = std::filesystem::absolute(path).parent_path();
  return cfg;
}

void Config::set(std::string key, std::string value) { entries_[std::move(key)] = std::move(value); }

void Config::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override must look like section.key=value");
  const std::string key(trim(assignment.substr(0, eq)));
  if (key.empty()) throw ConfigError("override has an empty key");
  set(key, std::string(trim(assignment.substr(eq + 1))));
}

bool Config::has(std::string_view key) const { return entries_.find(key) != entries_.end(); }

std::optional<std::string> Config::find(std::string_view key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::string Config::get_string(std::string_view key, std::string_view fallback) const {
  auto v = find(key);
  return v ? *v : std::string(fallback);
}

double Config::get_double(std::string_view key, double fallback) const {
  auto v = find(key);
  if (!v) return fallback;
  const std::string s(trim(*v));
  errno = 0;
  char* end = nullptr;
  const double out = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE) {
    throw ConfigError("configuration key '" + std::string(key) + "' must be a number");
  }
  return out;
}

std::int64_t Config::get_int(std::string_view key, std::int64_t fallback) const {
  auto v = find(key);
  if (!v) return fallback;
  const std::string s(trim(*v));
  errno = 0;
  char* end = nullptr;
  const long long out = std::strtoll(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE) {
    throw ConfigError("configuration key '" + std::string(key) + "' must be an integer");
  }
  return out;
}

std::uint64_t Config::get_u64(std::string_view key, std::uint64_t fallback) const {
  auto v = find(key);
  if (!v) return fallback;
  const std::string s(trim(*v));
  errno = 0;
  char* end = nullptr;
  const unsigned long long out = std::strtoull(s.c_str(), &end, 0);
  if (s.empty() || s.front() == '-' || end != s.c_str() + s.size() || errno == ERANGE) {
    throw ConfigError("configuration key '" + std::string(key) + "' must be a non-negative integer");
  }
  return out;
}

bool Config::get_bool(std::string_view key, bool fallback) const {
  auto v = find(key);
  if (!v) return fallback;
  const std::string s = lower(trim(*v));
  if (s == "true" || s == "yes" || s == "on" || s == "1") return true;
  if (s == "false" || s == "no" || s == "off" || s == "0") return false;
  throw ConfigError("configuration key '" + std::string(key) + "' must be a boolean");
}

std::vector<std::string> Config::get_list(std::string_view key) const {
  std::vector<std::string> out;
  auto v = find(key);
  if (!v) return out;
  std::string_view rest = *v;
  while (true) {
    const auto comma = rest.find(',');
    const auto item = trim(rest.substr(0, comma));
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return out;
}

std::optional<std::filesystem::path> Config::path(std::string_view key) const {
  auto v = find(key);
  if (!v || v->empty()) return std::nullopt;
  std::filesystem::path p(*v);
  if (p.is_relative() && !base_dir_.empty()) p = base_dir_ / p;
  return p;
}

void Config::check_known(std::span<const std::string_view> known) const {
  for (const auto& [key, value] : entries_) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown configuration key '" + key + "'");
    }
  }
}

std::string Config::canonical() const {
  std::string out;
  for (const auto& [key, value] : entries_) {
    out += key;
    out += '=';
    out += value;
    out += '\n';
  }
  return out;
}

}  // namespace dpprompt
