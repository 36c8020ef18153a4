#pragma once

// Small helpers for the UTF-8 key=value and whitespace-table formats.

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "needleplan/geometry.hpp"

namespace needleplan::text {

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

std::string_view trim(std::string_view s);
std::vector<std::string> split_lines(std::string_view s);
std::vector<std::string> split_ws(std::string_view s);

/// Strips '#' comments and blank lines.
std::vector<std::string> content_lines(std::string_view s);

double parse_double(std::string_view token);
long long parse_int(std::string_view token);
std::vector<double> parse_doubles(std::string_view s);
Vec3 parse_vec3(std::string_view s);

/// Shortest round-trip decimal representation.
std::string num(double value);
std::string vec3(const Vec3& v);

/// key=value lines with optional [section] headers. Keys outside any section
/// land in the section named "".
struct KeyValueDoc {
  struct Section {
    std::string name;
    std::map<std::string, std::string> values;

    bool has(const std::string& key) const { return values.count(key) > 0; }
    const std::string& get(const std::string& key) const;
    double get_double(const std::string& key) const { return parse_double(get(key)); }
    double get_double(const std::string& key, double fallback) const {
      return has(key) ? parse_double(get(key)) : fallback;
    }
    Vec3 get_vec3(const std::string& key) const { return parse_vec3(get(key)); }
  };
  std::vector<Section> sections;

  static KeyValueDoc parse(std::string_view s);
  const Section& root() const { return sections.front(); }
  std::vector<const Section*> sections_named(std::string_view prefix) const;
};

}  // namespace needleplan::text
