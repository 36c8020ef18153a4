#include "needleplan/service/protocol.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>

#include <fmt/format.h>

namespace needleplan::service {

static_assert(std::endian::native == std::endian::little, "bulk arrays are copied as little-endian bytes");

std::string_view to_string(Kind k) {
  switch (k) {
    case Kind::request: return "request";
    case Kind::response: return "response";
    case Kind::event: return "event";
    case Kind::error: return "error";
  }
  return "error";
}

std::optional<Kind> parse_kind(std::string_view s) {
  for (Kind k : {Kind::request, Kind::response, Kind::event, Kind::error}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

Json Envelope::to_json() const {
  return Json{{"id", id}, {"kind", to_string(kind)}, {"op", op}, {"body", body}};
}

Envelope make_error(const Json& id, std::string op, std::string_view code, std::string message) {
  return Envelope{id, Kind::error, std::move(op), Json{{"code", code}, {"message", std::move(message)}}};
}

std::string encode_frame_payload(std::string_view payload) {
  const auto n = static_cast<std::uint32_t>(payload.size());
  std::string out(kFrameHeaderSize, '\0');
  out[0] = static_cast<char>((n >> 24) & 0xff);
  out[1] = static_cast<char>((n >> 16) & 0xff);
  out[2] = static_cast<char>((n >> 8) & 0xff);
  out[3] = static_cast<char>(n & 0xff);
  out.append(payload);
  return out;
}

std::string encode_frame(const Envelope& env) {
  // Replace invalid UTF-8 rather than throwing from inside the send path.
  return encode_frame_payload(env.to_json().dump(-1, ' ', false, Json::error_handler_t::replace));
}

void FrameDecoder::feed(std::string_view bytes) {
  if (oversized_) return;
  if (offset_ > 0 && offset_ >= buffer_.size() / 2) {
    buffer_.erase(0, offset_);
    offset_ = 0;
  }
  buffer_.append(bytes);
}

std::optional<std::string> FrameDecoder::next_payload() {
  if (oversized_ || buffered() < kFrameHeaderSize) return std::nullopt;
  const auto* p = reinterpret_cast<const unsigned char*>(buffer_.data() + offset_);
  const std::size_t n = (std::size_t{p[0]} << 24) | (std::size_t{p[1]} << 16) | (std::size_t{p[2]} << 8) | p[3];
  if (n > max_frame_) {
    oversized_ = true;
    return std::nullopt;
  }
  if (buffered() < kFrameHeaderSize + n) return std::nullopt;
  std::string payload = buffer_.substr(offset_ + kFrameHeaderSize, n);
  offset_ += kFrameHeaderSize + n;
  return payload;
}

Envelope parse_envelope(std::string_view payload) {
  Json j = Json::parse(payload, nullptr, false);
  if (j.is_discarded()) throw BadPayload{"payload is not valid JSON", nullptr, {}};
  if (!j.is_object()) throw BadPayload{"payload must be a JSON object", nullptr, {}};
  Envelope env;
  if (auto it = j.find("id"); it != j.end()) env.id = *it;
  if (auto it = j.find("op"); it != j.end() && it->is_string()) env.op = it->get<std::string>();
  auto kind = j.find("kind");
  if (kind == j.end() || !kind->is_string()) throw BadPayload{"missing kind", env.id, env.op};
  const auto k = parse_kind(kind->get<std::string>());
  if (!k) throw BadPayload{"unknown kind", env.id, env.op};
  env.kind = *k;
  auto op = j.find("op");
  if (op == j.end() || !op->is_string()) throw BadPayload{"missing op", env.id, env.op};
  if (auto body = j.find("body"); body != j.end()) {
    if (!body->is_object()) throw BadPayload{"body must be an object", env.id, env.op};
    env.body = *body;
  }
  return env;
}

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

constexpr std::array<int, 256> decode_table() {
  std::array<int, 256> t{};
  for (auto& v : t) v = -1;
  for (int i = 0; i < 64; ++i) t[static_cast<unsigned char>(kAlphabet[i])] = i;
  return t;
}

std::size_t dtype_size(std::string_view dtype) {
  if (dtype == "float64") return 8;
  if (dtype == "uint32") return 4;
  if (dtype == "int16") return 2;
  if (dtype == "uint8") return 1;
  return 0;
}

template <typename T>
std::vector<T> decode_as(const Json& j, std::string_view dtype) {
  const auto a = decode_array(j);
  if (a.dtype != dtype) throw BadPayload{fmt::format("expected dtype {}, got {}", dtype, a.dtype), nullptr, {}};
  std::vector<T> out(a.bytes.size() / sizeof(T));
  if (!out.empty()) std::memcpy(out.data(), a.bytes.data(), a.bytes.size());
  return out;
}

}  // namespace

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (const std::size_t rest = bytes.size() - i; rest > 0) {
    std::uint32_t v = bytes[i] << 16;
    if (rest == 2) v |= bytes[i + 1] << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += rest == 2 ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  static constexpr auto table = decode_table();
  if (text.size() % 4 != 0) throw BadPayload{"base64 length must be a multiple of 4", nullptr, {}};
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    const bool last = i + 4 == text.size();
    int pad = 0;
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=' && last && k >= 2) {
        ++pad;
        v <<= 6;
        continue;
      }
      const int d = table[static_cast<unsigned char>(c)];
      if (d < 0 || pad > 0) throw BadPayload{"invalid base64 character", nullptr, {}};
      v = (v << 6) | static_cast<std::uint32_t>(d);
    }
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(v & 0xff));
  }
  return out;
}

Json encode_array(std::string_view dtype, std::vector<std::size_t> shape, std::span<const std::uint8_t> bytes) {
  return Json{{"dtype", dtype}, {"shape", shape}, {"data", base64_encode(bytes)}};
}

Json encode_f64(std::span<const double> values, std::vector<std::size_t> shape) {
  return encode_array("float64", std::move(shape),
                      std::span(reinterpret_cast<const std::uint8_t*>(values.data()), values.size_bytes()));
}

Json encode_u32(std::span<const std::uint32_t> values, std::vector<std::size_t> shape) {
  return encode_array("uint32", std::move(shape),
                      std::span(reinterpret_cast<const std::uint8_t*>(values.data()), values.size_bytes()));
}

Json encode_u8(std::span<const std::uint8_t> values, std::vector<std::size_t> shape) {
  return encode_array("uint8", std::move(shape), values);
}

DecodedArray decode_array(const Json& j) {
  if (!j.is_object()) throw BadPayload{"array must be an object", nullptr, {}};
  const auto dt = j.find("dtype");
  const auto sh = j.find("shape");
  const auto data = j.find("data");
  if (dt == j.end() || !dt->is_string() || sh == j.end() || !sh->is_array() || data == j.end() || !data->is_string()) {
    throw BadPayload{"array needs dtype, shape and data", nullptr, {}};
  }
  DecodedArray a;
  a.dtype = dt->get<std::string>();
  const std::size_t width = dtype_size(a.dtype);
  if (width == 0) throw BadPayload{"unsupported dtype " + a.dtype, nullptr, {}};
  std::size_t count = 1;
  for (const auto& d : *sh) {
    if (!d.is_number_unsigned()) throw BadPayload{"shape entries must be non-negative integers", nullptr, {}};
    const auto n = d.get<std::size_t>();
    if (n != 0 && count > kMaxFrameSize / n) throw BadPayload{"array shape too large", nullptr, {}};
    count *= n;
    a.shape.push_back(n);
  }
  a.bytes = base64_decode(data->get_ref<const std::string&>());
  if (a.bytes.size() != count * width) throw BadPayload{"array byte count does not match shape", nullptr, {}};
  return a;
}

std::vector<double> decode_f64(const Json& j) { return decode_as<double>(j, "float64"); }
std::vector<std::uint32_t> decode_u32(const Json& j) { return decode_as<std::uint32_t>(j, "uint32"); }

std::uint64_t mesh_hash(std::span<const double> vertex_coords, std::span<const std::uint32_t> triangle_indices) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ull;
    }
  };
  mix(vertex_coords.data(), vertex_coords.size_bytes());
  mix(triangle_indices.data(), triangle_indices.size_bytes());
  return h;
}

std::uint64_t mesh_hash(const TriMesh& mesh) {
  static_assert(sizeof(Vec3) == 3 * sizeof(double));
  static_assert(sizeof(Triangle) == 3 * sizeof(std::uint32_t));
  return mesh_hash(std::span(mesh.vertices().data()->data(), mesh.vertex_count() * 3),
                   std::span(mesh.triangles().data()->data(), mesh.triangle_count() * 3));
}

std::string hex64(std::uint64_t v) { return fmt::format("{:016x}", v); }

Json vec3_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from(const Json& j, std::string_view what) {
  if (!j.is_array() || j.size() != 3) throw BadPayload{fmt::format("{} must be an array of 3 numbers", what), nullptr, {}};
  Vec3 v;
  for (int k = 0; k < 3; ++k) {
    if (!j[k].is_number()) throw BadPayload{fmt::format("{} must be an array of 3 numbers", what), nullptr, {}};
    v[k] = j[k].get<double>();
    if (!std::isfinite(v[k])) throw BadPayload{fmt::format("{} must be finite", what), nullptr, {}};
  }
  return v;
}

Json pose_json(const RigidTransform& t) {
  Json out = Json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out.push_back(t.rotation()(r, c));
    out.push_back(t.translation()[r]);
  }
  return out;
}

}  // namespace needleplan::service
