#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dpprompt {

// Flat "section.key" -> text map read from an INI-style file:
//
//   [transfer]
//   n_teachers = 200   # comment
//
// A JSON object of objects is accepted too; nested keys are joined with '.'.
// Keys outside any section keep their bare name.
class Config {
 public:
  static Config parse_ini(std::string_view text);
  static Config parse_json(std::string_view text);
  // Chooses JSON for a .json extension or a leading '{', INI otherwise.
  // Relative paths read through path() resolve against the file's directory.
  static Config load(const std::filesystem::path& path);

  void set(std::string key, std::string value);
  // "section.key=value"
  void apply_override(std::string_view assignment);

  bool has(std::string_view key) const;
  std::optional<std::string> find(std::string_view key) const;

  std::string get_string(std::string_view key, std::string_view fallback) const;
  double get_double(std::string_view key, double fallback) const;
  std::int64_t get_int(std::string_view key, std::int64_t fallback) const;
  std::uint64_t get_u64(std::string_view key, std::uint64_t fallback) const;
  bool get_bool(std::string_view key, bool fallback) const;
  // Comma-separated list, entries trimmed, empty entries dropped.
  std::vector<std::string> get_list(std::string_view key) const;
  std::optional<std::filesystem::path> path(std::string_view key) const;

  // Rejects keys not in `known`, naming the first offender.
  void check_known(std::span<const std::string_view> known) const;

  // Sorted "key=value" lines; stable input for digests.
  std::string canonical() const;

  const std::map<std::string, std::string, std::less<>>& entries() const noexcept { return entries_; }
  const std::filesystem::path& base_dir() const noexcept { return base_dir_; }
  void set_base_dir(std::filesystem::path dir) { base_dir_ = std::move(dir); }

 private:
  std::map<std::string, std::string, std::less<>> entries_;
  std::filesystem::path base_dir_;
};

}  // namespace dpprompt
