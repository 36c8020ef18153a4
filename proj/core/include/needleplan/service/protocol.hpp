#pragma once

// Wire format: every frame is a 4-byte big-endian payload length followed by a
// UTF-8 JSON object {"id", "kind", "op", "body"}. Bulk arrays travel as
// {"dtype", "shape", "data"} with little-endian bytes in base64.

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "needleplan/geometry.hpp"

namespace needleplan::service {

using Json = nlohmann::json;

constexpr std::size_t kFrameHeaderSize = 4;
constexpr std::size_t kMaxFrameSize = 64u << 20;

enum class Kind { request, response, event, error };
std::string_view to_string(Kind k);
std::optional<Kind> parse_kind(std::string_view s);

struct Envelope {
  Json id;  // echoed verbatim; null for unsolicited events
  Kind kind = Kind::request;
  std::string op;
  Json body = Json::object();

  Json to_json() const;
  bool operator==(const Envelope&) const = default;
};

/// Error codes carried in error envelopes as body.code.
namespace codes {
inline constexpr std::string_view kNoCase = "NO_CASE";
inline constexpr std::string_view kBadCase = "BAD_CASE";
inline constexpr std::string_view kBadPlane = "BAD_PLANE";
inline constexpr std::string_view kBadTarget = "BAD_TARGET";
inline constexpr std::string_view kBadTrajectory = "BAD_TRAJECTORY";
inline constexpr std::string_view kBusy = "BUSY";
inline constexpr std::string_view kPlanFailed = "PLAN_FAILED";
inline constexpr std::string_view kBadRate = "BAD_RATE";
inline constexpr std::string_view kBadRequest = "BAD_REQUEST";
inline constexpr std::string_view kUnknownOp = "UNKNOWN_OP";
inline constexpr std::string_view kFrameTooLarge = "FRAME_TOO_LARGE";
inline constexpr std::string_view kInternal = "INTERNAL";
}  // namespace codes

Envelope make_error(const Json& id, std::string op, std::string_view code, std::string message);

/// Header plus payload bytes.
std::string encode_frame(const Envelope& env);
std::string encode_frame_payload(std::string_view payload);

/// Thrown for payloads that are not a well-formed envelope. The stream stays in sync.
struct BadPayload {
  std::string message;
  Json id;  // recovered id when the JSON parsed, else null
  std::string op;
};

/// Incremental decoder; accepts the byte stream in arbitrary pieces.
class FrameDecoder {
 public:
  explicit FrameDecoder(std::size_t max_frame = kMaxFrameSize) : max_frame_(max_frame) {}

  void feed(std::string_view bytes);
  /// Next complete payload, if any. Sets `oversized()` and stops on a header
  /// above the limit; the stream cannot be resynchronized after that.
  std::optional<std::string> next_payload();
  bool oversized() const noexcept { return oversized_; }
  std::size_t buffered() const noexcept { return buffer_.size() - offset_; }

 private:
  std::string buffer_;
  std::size_t offset_ = 0;
  std::size_t max_frame_;
  bool oversized_ = false;
};

/// Parses a payload; throws BadPayload.
Envelope parse_envelope(std::string_view payload);

// ---------------------------------------------------------------------------
// Bulk arrays and small value helpers

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws BadPayload on malformed input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

Json encode_array(std::string_view dtype, std::vector<std::size_t> shape, std::span<const std::uint8_t> bytes);
Json encode_f64(std::span<const double> values, std::vector<std::size_t> shape);
Json encode_u32(std::span<const std::uint32_t> values, std::vector<std::size_t> shape);
Json encode_u8(std::span<const std::uint8_t> values, std::vector<std::size_t> shape);

struct DecodedArray {
  std::string dtype;
  std::vector<std::size_t> shape;
  std::vector<std::uint8_t> bytes;
};
/// Validates dtype, shape and byte count; throws BadPayload.
DecodedArray decode_array(const Json& j);
std::vector<double> decode_f64(const Json& j);
std::vector<std::uint32_t> decode_u32(const Json& j);

/// 64-bit FNV-1a over vertex coordinates (float64 LE) then triangle indices (uint32 LE).
std::uint64_t mesh_hash(std::span<const double> vertex_coords, std::span<const std::uint32_t> triangle_indices);
std::uint64_t mesh_hash(const TriMesh& mesh);
std::string hex64(std::uint64_t v);

Json vec3_json(const Vec3& v);
/// Throws BadPayload unless j is an array of three finite numbers.
Vec3 vec3_from(const Json& j, std::string_view what);
/// 12 numbers, row-major [R | t].
Json pose_json(const RigidTransform& t);

}  // namespace needleplan::service
