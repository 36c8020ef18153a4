#include <gtest/gtest.h>

#include <cstring>
#include <mutex>

#include "needleplan/random.hpp"
#include "needleplan/service/session.hpp"
#include "support.hpp"

using namespace needleplan;
using namespace needleplan::service;

namespace {

Envelope request(Json id, std::string op, Json body = Json::object()) {
  return Envelope{std::move(id), Kind::request, std::move(op), std::move(body)};
}

std::vector<Envelope> transcript() {
  return {
      request(1, "stats"),
      request("a-2", "get_slice", {{"plane", {{"origin", {0, 0, 0}}, {"resolution", 1.0}}}}),
      Envelope{nullptr, Kind::event, "twin_state", {{"sequence", 7}, {"q", {0, 10, 0, -70, 0, 90, 0}}}},
      Envelope{3, Kind::error, "load_case", {{"code", "BAD_CASE"}, {"message", "ünïcødé"}}},
      request(4, "check_feasibility", {{"trajectory", {{"target", {1.5, -2.25, 3e-7}}}}}),
  };
}

std::vector<Envelope> decode_all(FrameDecoder& d) {
  std::vector<Envelope> out;
  while (auto p = d.next_payload()) out.push_back(parse_envelope(*p));
  return out;
}

// Straight FNV-1a, byte by byte.
std::uint64_t fnv1a(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

template <typename T>
void append_le(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  out.insert(out.end(), raw, raw + sizeof(T));
}

}  // namespace

TEST(Frame, HeaderIsBigEndianPayloadLength) {
  const auto env = request(1, "stats");
  const std::string frame = encode_frame(env);
  const std::string payload = env.to_json().dump();
  ASSERT_EQ(frame.size(), payload.size() + 4);
  const auto* h = reinterpret_cast<const unsigned char*>(frame.data());
  EXPECT_EQ((std::size_t(h[0]) << 24) | (h[1] << 16) | (h[2] << 8) | h[3], payload.size());
  EXPECT_EQ(frame.substr(4), payload);
  EXPECT_EQ(Json::parse(payload), Json::parse(R"({"id":1,"kind":"request","op":"stats","body":{}})"));
}

TEST(Frame, TranscriptSurvivesEverySplitPoint) {
  const auto envs = transcript();
  std::string stream;
  for (const auto& e : envs) stream += encode_frame(e);
  for (std::size_t cut = 0; cut <= stream.size(); ++cut) {
    FrameDecoder d;
    d.feed(std::string_view(stream).substr(0, cut));
    auto got = decode_all(d);
    d.feed(std::string_view(stream).substr(cut));
    const auto rest = decode_all(d);
    got.insert(got.end(), rest.begin(), rest.end());
    ASSERT_EQ(got, envs) << "cut at " << cut;
    EXPECT_EQ(d.buffered(), 0u);
  }
}

TEST(Frame, ByteAtATimeFeeding) {
  const auto envs = transcript();
  std::string stream;
  for (const auto& e : envs) stream += encode_frame(e);
  FrameDecoder d;
  std::vector<Envelope> got;
  for (char c : stream) {
    d.feed(std::string_view(&c, 1));
    const auto more = decode_all(d);
    got.insert(got.end(), more.begin(), more.end());
  }
  EXPECT_EQ(got, envs);
}

TEST(Frame, OversizedHeaderStopsDecoder) {
  FrameDecoder d(1024);
  d.feed(std::string("\x00\x00\x04\x01", 4));
  EXPECT_FALSE(d.next_payload());
  EXPECT_TRUE(d.oversized());
}

TEST(Frame, EmptyPayloadIsAFrame) {
  FrameDecoder d;
  d.feed(std::string(4, '\0'));
  const auto p = d.next_payload();
  ASSERT_TRUE(p);
  EXPECT_TRUE(p->empty());
  EXPECT_THROW((void)parse_envelope(*p), BadPayload);
}

TEST(Envelope, MalformedPayloadsKeepRecoverableId) {
  try {
    (void)parse_envelope(R"({"id":5,"kind":"request","op":7,"body":{}})");
    FAIL();
  } catch (const BadPayload& e) {
    EXPECT_EQ(e.id, Json(5));
  }
  EXPECT_THROW((void)parse_envelope("[1,2]"), BadPayload);
  EXPECT_THROW((void)parse_envelope(R"({"id":1,"kind":"shout","op":"x","body":{}})"), BadPayload);
  EXPECT_THROW((void)parse_envelope(R"({"id":1,"kind":"request","op":"x","body":[]})"), BadPayload);
  EXPECT_THROW((void)parse_envelope("{\"id\":1,"), BadPayload);
}

TEST(Envelope, KindNamesRoundTrip) {
  for (auto k : {Kind::request, Kind::response, Kind::event, Kind::error}) EXPECT_EQ(parse_kind(to_string(k)), k);
  EXPECT_FALSE(parse_kind("reply"));
}

TEST(Base64, Rfc4648Vectors) {
  const std::pair<std::string, std::string> vectors[] = {{"", ""},         {"f", "Zg=="},         {"fo", "Zm8="},
                                                         {"foo", "Zm9v"},  {"foob", "Zm9vYg=="},  {"fooba", "Zm9vYmE="},
                                                         {"foobar", "Zm9vYmFy"}};
  for (const auto& [plain, coded] : vectors) {
    const std::vector<std::uint8_t> bytes(plain.begin(), plain.end());
    EXPECT_EQ(base64_encode(bytes), coded);
    EXPECT_EQ(base64_decode(coded), bytes);
  }
  EXPECT_THROW((void)base64_decode("Zm9"), BadPayload);
  EXPECT_THROW((void)base64_decode("Zm9v!A=="), BadPayload);
}

TEST(Base64, RandomRoundTrip) {
  Rng rng(40);
  for (int n = 0; n < 200; ++n) {
    std::vector<std::uint8_t> bytes(n);
    for (auto& b : bytes) b = static_cast<std::uint8_t>(rng.next());
    EXPECT_EQ(base64_decode(base64_encode(bytes)), bytes);
  }
}

TEST(Arrays, TypedRoundTripAndValidation) {
  const std::vector<double> f = {1.5, -0.0, 1e300, 3.0, 4.0, 5.0};
  const Json jf = encode_f64(f, {2, 3});
  EXPECT_EQ(jf["dtype"], "float64");
  EXPECT_EQ(jf["shape"], Json::array({2, 3}));
  EXPECT_EQ(decode_f64(jf), f);

  const std::vector<std::uint32_t> u = {0, 1, 0xffffffffu};
  EXPECT_EQ(decode_u32(encode_u32(u, {3})), u);

  Json bad = jf;
  bad["shape"] = Json::array({4, 3});
  EXPECT_THROW((void)decode_array(bad), BadPayload);
  bad = jf;
  bad["dtype"] = "float16";
  EXPECT_THROW((void)decode_array(bad), BadPayload);
  EXPECT_THROW((void)decode_u32(jf), BadPayload);
}

TEST(Arrays, LittleEndianLayout) {
  const std::vector<std::uint32_t> u = {0x01020304u};
  const auto raw = decode_array(encode_u32(u, {1})).bytes;
  EXPECT_EQ(raw, (std::vector<std::uint8_t>{4, 3, 2, 1}));
}

TEST(MeshHash, MatchesByteWiseFnv1a) {
  const auto cube = testing_support::unit_cube();
  std::vector<std::uint8_t> bytes;
  for (const auto& v : cube.vertices()) {
    for (int k = 0; k < 3; ++k) append_le(bytes, v[k]);
  }
  for (const auto& t : cube.triangles()) {
    for (int k = 0; k < 3; ++k) append_le(bytes, static_cast<std::uint32_t>(t[k]));
  }
  EXPECT_EQ(mesh_hash(cube), fnv1a(bytes));
  EXPECT_EQ(mesh_hash({}, {}), 0xcbf29ce484222325ull);
  EXPECT_EQ(hex64(0xcbf29ce484222325ull), "cbf29ce484222325");
}

TEST(Values, Vec3AndPose) {
  EXPECT_EQ(vec3_from(vec3_json(Vec3(1, 2, 3)), "p"), Vec3(1, 2, 3));
  EXPECT_THROW((void)vec3_from(Json::array({1, 2}), "p"), BadPayload);
  EXPECT_THROW((void)vec3_from(Json::array({1, "x", 3}), "p"), BadPayload);
  const RigidTransform t(axis_angle(Vec3::UnitZ(), 0.5), Vec3(7, 8, 9), Frame::B, Frame::EEF);
  const Json p = pose_json(t);
  ASSERT_EQ(p.size(), 12u);
  EXPECT_DOUBLE_EQ(p[3].get<double>(), 7.0);
  EXPECT_DOUBLE_EQ(p[1].get<double>(), t.rotation()(0, 1));
}

namespace {

struct Collector {
  std::mutex mutex;
  std::vector<Envelope> seen;
  Sink sink() {
    return [this](const Envelope& e) {
      std::lock_guard lock(mutex);
      seen.push_back(e);
    };
  }
};

// Garbage, truncated JSON, wrong types, bad kinds and unknown ops; never a case load.
std::string fuzz_payload(Rng& rng) {
  static const char* ops[] = {"stats", "get_state", "nope", "get_slice", "check_feasibility", "", "subscribe_state"};
  switch (rng.next() % 6) {
    case 0: {
      std::string s(rng.next() % 64, '\0');
      for (auto& c : s) c = static_cast<char>(rng.next());
      return s;
    }
    case 1: {
      const std::string full = request(int(rng.next() % 100), "stats").to_json().dump();
      return full.substr(0, rng.next() % full.size());
    }
    case 2: return R"({"id":)" + std::to_string(rng.next() % 9) + R"(,"kind":"request","op":[],"body":{}})";
    case 3: {
      std::string s = request(1, "stats").to_json().dump();
      return s.replace(s.find("\"request\""), 9, "\"event\"");
    }
    case 4: return "[" + std::to_string(rng.next()) + "]";
    default: {
      Json body = Json::object();
      if (rng.next() % 2) body["rate_hz"] = rng.uniform(-10.0, 500.0);
      return request(int(rng.next() % 1000), ops[rng.next() % 7], body).to_json().dump();
    }
  }
}

}  // namespace

TEST(Connection, FuzzedFramesEachGetOneReply) {
  auto ctx = std::make_shared<ServiceContext>();
  Collector out;
  Connection conn(ctx, out.sink());
  Rng rng(41);
  const int frames = 10000;
  for (int i = 0; i < frames; ++i) ASSERT_TRUE(conn.receive(encode_frame_payload(fuzz_payload(rng))));
  conn.close();
  ASSERT_EQ(out.seen.size(), static_cast<std::size_t>(frames));
  for (const auto& e : out.seen) EXPECT_TRUE(e.kind == Kind::response || e.kind == Kind::error);
}

TEST(Connection, OversizedFrameBreaksStream) {
  auto ctx = std::make_shared<ServiceContext>();
  Collector out;
  Connection conn(ctx, out.sink());
  EXPECT_FALSE(conn.receive(std::string("\xff\xff\xff\xff", 4)));
  ASSERT_EQ(out.seen.size(), 1u);
  EXPECT_EQ(out.seen[0].body["code"], codes::kFrameTooLarge);
  EXPECT_FALSE(conn.receive(encode_frame(request(1, "stats"))));
}

TEST(Connection, ErrorsEchoIdAndCode) {
  auto ctx = std::make_shared<ServiceContext>();
  Collector out;
  Connection conn(ctx, out.sink());
  conn.receive(encode_frame(request("x1", "warp_drive")));
  conn.receive(encode_frame(request(2, "get_slice")));
  conn.receive(encode_frame(Envelope{3, Kind::response, "stats", Json::object()}));
  conn.close();
  ASSERT_EQ(out.seen.size(), 3u);
  EXPECT_EQ(out.seen[0].id, Json("x1"));
  EXPECT_EQ(out.seen[0].body["code"], codes::kUnknownOp);
  EXPECT_EQ(out.seen[1].body["code"], codes::kNoCase);
  EXPECT_EQ(out.seen[2].body["code"], codes::kBadRequest);
}
