#include "needleplan/text.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace needleplan::text {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_lines(std::string_view s) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto end = s.find('\n', start);
    if (end == std::string_view::npos) {
      if (start < s.size()) lines.emplace_back(s.substr(start));
      break;
    }
    lines.emplace_back(s.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r' || s[i] == '\n')) ++i;
    const std::size_t start = i;
    while (i < s.size() && !(s[i] == ' ' || s[i] == '\t' || s[i] == '\r' || s[i] == '\n')) ++i;
    if (i > start) out.emplace_back(s.substr(start, i - start));
  }
  return out;
}

std::vector<std::string> content_lines(std::string_view s) {
  std::vector<std::string> out;
  for (auto& line : split_lines(s)) {
    std::string_view view = line;
    if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = trim(view);
    if (!view.empty()) out.emplace_back(view);
  }
  return out;
}

double parse_double(std::string_view token) {
  token = trim(token);
  double value = 0.0;
  const auto* end = token.data() + token.size();
  const auto [ptr, ec] = std::from_chars(token.data(), end, value);
  if (ec != std::errc() || ptr != end || token.empty()) {
    throw Error(ErrorCode::ParseError, "not a number: '" + std::string(token) + "'");
  }
  return value;
}

long long parse_int(std::string_view token) {
  token = trim(token);
  long long value = 0;
  const auto* end = token.data() + token.size();
  const auto [ptr, ec] = std::from_chars(token.data(), end, value);
  if (ec != std::errc() || ptr != end || token.empty()) {
    throw Error(ErrorCode::ParseError, "not an integer: '" + std::string(token) + "'");
  }
  return value;
}

std::vector<double> parse_doubles(std::string_view s) {
  std::vector<double> out;
  for (const auto& tok : split_ws(s)) out.push_back(parse_double(tok));
  return out;
}

Vec3 parse_vec3(std::string_view s) {
  const auto values = parse_doubles(s);
  if (values.size() != 3) throw Error(ErrorCode::ParseError, "expected 3 numbers: '" + std::string(s) + "'");
  return Vec3(values[0], values[1], values[2]);
}

std::string num(double value) { return fmt::format("{}", value); }

std::string vec3(const Vec3& v) { return fmt::format("{} {} {}", v.x(), v.y(), v.z()); }

const std::string& KeyValueDoc::Section::get(const std::string& key) const {
  const auto it = values.find(key);
  if (it == values.end()) {
    throw Error(ErrorCode::ParseError, "missing key '" + key + "'" + (name.empty() ? "" : " in [" + name + "]"));
  }
  return it->second;
}

KeyValueDoc KeyValueDoc::parse(std::string_view s) {
  KeyValueDoc doc;
  doc.sections.push_back(Section{});
  for (const auto& line : content_lines(s)) {
    if (line.front() == '[') {
      if (line.back() != ']') throw Error(ErrorCode::ParseError, "bad section header: " + line);
      doc.sections.push_back(Section{std::string(trim(std::string_view(line).substr(1, line.size() - 2))), {}});
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::ParseError, "expected key=value: " + line);
    const std::string key(trim(std::string_view(line).substr(0, eq)));
    const std::string value(trim(std::string_view(line).substr(eq + 1)));
    if (key.empty()) throw Error(ErrorCode::ParseError, "empty key: " + line);
    doc.sections.back().values[key] = value;
  }
  return doc;
}

std::vector<const KeyValueDoc::Section*> KeyValueDoc::sections_named(std::string_view prefix) const {
  std::vector<const Section*> out;
  for (const auto& s : sections) {
    if (std::string_view(s.name).substr(0, prefix.size()) == prefix && !s.name.empty()) out.push_back(&s);
  }
  return out;
}

}  // namespace needleplan::text
