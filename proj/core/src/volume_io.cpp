#include <bit>
#include <cstring>

#include <fmt/format.h>

#include "needleplan/text.hpp"
#include "needleplan/volume.hpp"

namespace needleplan {

namespace {

std::filesystem::path with_suffix(const std::filesystem::path& prefix, const char* suffix) {
  return std::filesystem::path(prefix.string() + suffix);
}

std::uint16_t to_le(std::uint16_t x) {
  if constexpr (std::endian::native == std::endian::little) return x;
  return static_cast<std::uint16_t>((x >> 8) | (x << 8));
}

}  // namespace

void write_volume(const Volume& v, const std::filesystem::path& prefix) {
  const auto& d = v.dims();
  std::string meta;
  meta += "format=int16le\n";
  meta += fmt::format("dims={} {} {}\n", d[0], d[1], d[2]);
  meta += "spacing_mm=" + text::vec3(v.spacing()) + "\n";
  meta += "origin_mm=" + text::vec3(v.origin()) + "\n";
  meta += "hu_offset=0\n";
  text::write_file(with_suffix(prefix, ".volmeta"), meta);

  std::string raw(v.data().size() * 2, '\0');
  for (std::size_t n = 0; n < v.data().size(); ++n) {
    const auto le = to_le(static_cast<std::uint16_t>(v.data()[n]));
    std::memcpy(raw.data() + 2 * n, &le, 2);
  }
  text::write_file(with_suffix(prefix, ".vol"), raw);
}

Volume read_volume(const std::filesystem::path& prefix) {
  const auto doc = text::KeyValueDoc::parse(text::read_file(with_suffix(prefix, ".volmeta")));
  const auto& meta = doc.root();
  if (meta.has("format") && meta.get("format") != "int16le") {
    throw Error(ErrorCode::ParseError, "unsupported volume format " + meta.get("format"));
  }
  const auto dims_values = text::parse_doubles(meta.get("dims"));
  if (dims_values.size() != 3) throw Error(ErrorCode::ParseError, "dims needs 3 integers");
  std::array<int, 3> dims{};
  for (int k = 0; k < 3; ++k) {
    if (dims_values[k] != std::floor(dims_values[k]) || dims_values[k] < 2 || dims_values[k] > 4096) {
      throw Error(ErrorCode::ParseError, "bad dims");
    }
    dims[k] = static_cast<int>(dims_values[k]);
  }
  const Vec3 spacing = meta.get_vec3("spacing_mm");
  const Vec3 origin = meta.get_vec3("origin_mm");
  const double offset = meta.get_double("hu_offset", 0.0);

  const std::string raw = text::read_file(with_suffix(prefix, ".vol"));
  const std::size_t count = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  if (raw.size() != count * 2) throw Error(ErrorCode::ParseError, "raw block size does not match dims");
  std::vector<std::int16_t> data(count);
  for (std::size_t n = 0; n < count; ++n) {
    std::uint16_t le;
    std::memcpy(&le, raw.data() + 2 * n, 2);
    const double hu = static_cast<std::int16_t>(to_le(le)) + offset;
    data[n] = static_cast<std::int16_t>(std::clamp(hu, -32768.0, 32767.0));
  }
  return Volume(dims, spacing, origin, std::move(data));
}

std::string format_ground_truth(const GroundTruth& truth) {
  std::string out;
  for (const auto& organ : truth.organs) {
    out += "[organ " + organ.name + "]\n";
    out += "center_mm=" + text::vec3(organ.center) + "\n";
    out += "radius_mm=" + text::num(organ.radius) + "\n";
    out += "hu=" + text::num(organ.hu) + "\n";
  }
  for (std::size_t n = 0; n < truth.balls.size(); ++n) {
    out += fmt::format("[ball {}]\n", n);
    out += "center_mm=" + text::vec3(truth.balls[n].center) + "\n";
    out += "radius_mm=" + text::num(truth.balls[n].radius) + "\n";
  }
  return out;
}

GroundTruth parse_ground_truth(const std::string& content) {
  GroundTruth truth;
  const auto doc = text::KeyValueDoc::parse(content);
  for (const auto* s : doc.sections_named("organ ")) {
    truth.organs.push_back(OrganSpec{s->name.substr(6), s->get_vec3("center_mm"), s->get_double("radius_mm"),
                                     s->get_double("hu")});
  }
  for (const auto* s : doc.sections_named("ball ")) {
    truth.balls.push_back(BallSpec{s->get_vec3("center_mm"), s->get_double("radius_mm")});
  }
  return truth;
}

}  // namespace needleplan
