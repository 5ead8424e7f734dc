#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace lsro {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Flat `section.key=value` settings. Blank lines and lines starting with
/// '#' are ignored; whitespace around keys and values is trimmed.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text, const std::string& source = "<config>") {
    KeyValueConfig cfg;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto body = trim(line);
      if (body.empty() || body.front() == '#') continue;
      const auto eq = body.find('=');
      if (eq == std::string_view::npos) {
        throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value");
      }
      const auto key = std::string(trim(body.substr(0, eq)));
      if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
      cfg.values_[key] = std::string(trim(body.substr(eq + 1)));
      cfg.lines_[key] = lineno;
    }
    cfg.source_ = source;
    return cfg;
  }

  static KeyValueConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path.string());
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  // Fails on any key not in `known`.
  void require_known(const std::vector<std::string>& known) const {
    for (const auto& [key, _] : values_) {
      bool found = false;
      for (const auto& k : known) found = found || k == key;
      if (!found) {
        throw ConfigError(source_ + ":" + std::to_string(lines_.at(key)) + ": unknown key '" + key + "'");
      }
    }
  }

  template <typename T>
  void get(const std::string& key, T& out) const {
    auto it = values_.find(key);
    if (it == values_.end()) return;
    out = convert<T>(key, it->second);
  }

  template <typename T>
  void get_list(const std::string& key, std::vector<T>& out) const {
    auto it = values_.find(key);
    if (it == values_.end()) return;
    out.clear();
    for (const auto& item : split_list(it->second)) out.push_back(convert<T>(key, item));
  }

  static std::vector<std::string> split_list(std::string_view s) {
    std::vector<std::string> out;
    if (trim(s).empty()) return out;
    std::size_t start = 0;
    while (true) {
      const auto comma = s.find(',', start);
      out.emplace_back(trim(s.substr(start, comma == std::string_view::npos ? s.npos : comma - start)));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    return out;
  }

  static std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

 private:
  template <typename T>
  T convert(const std::string& key, const std::string& text) const {
    const auto fail = [&]() -> ConfigError {
      return ConfigError(source_ + ":" + std::to_string(lines_.count(key) ? lines_.at(key) : 0) +
                         ": bad value '" + text + "' for " + key);
    };
    if constexpr (std::is_same_v<T, std::string>) {
      return text;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw fail();
    } else if constexpr (std::is_floating_point_v<T>) {
      std::size_t used = 0;
      T v{};
      try {
        v = static_cast<T>(std::stod(text, &used));
      } catch (const std::exception&) {
        throw fail();
      }
      if (used != text.size()) throw fail();
      return v;
    } else {
      T v{};
      const auto* end = text.data() + text.size();
      const auto [ptr, ec] = std::from_chars(text.data(), end, v);
      if (ec != std::errc() || ptr != end) throw fail();
      return v;
    }
  }

  std::map<std::string, std::string> values_;
  std::map<std::string, std::size_t> lines_;
  std::string source_;
};

}  // namespace lsro
