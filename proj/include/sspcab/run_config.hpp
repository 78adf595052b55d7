#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sspcab/model.hpp"
#include "sspcab/trainer.hpp"

namespace sspcab {

/// Flat key=value configuration shared by every command. Values come from
/// built-in defaults, then a config file, then explicit overrides; each key
/// has exactly one effective source.
class RunConfig {
 public:
  enum class Source { default_value, file, flag };

  RunConfig();

  /// Reads `key=value` lines; unknown keys are rejected.
  void load_file(const std::filesystem::path& path);
  void load_text(const std::string& text, const std::string& source_name);
  void set(const std::string& key, const std::string& value, Source source = Source::flag);

  const std::string& get(const std::string& key) const;
  Source source(const std::string& key) const;
  bool is_explicit(const std::string& key) const { return source(key) != Source::default_value; }
  bool has_value(const std::string& key) const { return !get(key).empty(); }

  double get_double(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;

  /// Model configuration for inputs of the given size.
  AeConfig ae_config(std::size_t height, std::size_t width, std::size_t channels) const;
  TrainConfig train_config() const;

  static const std::vector<std::string>& known_keys();
  /// Every key with its effective value, in known_keys() order.
  std::string dump() const;

 private:
  struct Entry {
    std::string value;
    Source source = Source::default_value;
  };
  std::map<std::string, Entry> entries_;
};

}  // namespace sspcab
