#include <gtest/gtest.h>

#include <cstdlib>
#include <set>

#include "needleplan/service/tcp.hpp"
#include "support.hpp"

using namespace needleplan;
using namespace needleplan::service;
using namespace std::chrono_literals;

namespace {

const Vec3 kEntry(-100, 80, -30);  // robot-side flank, feasible for T1

class ServiceTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    setenv("PLAN_SERVER_LOG", "warn", 0);
    configure_logging();
    ctx_ = std::make_shared<ServiceContext>();
    ctx_->cases.add(make_case("desk", testing_support::desk()));
    server_ = std::make_unique<TcpServer>(ctx_, 0);
    server_->start();
  }
  static void TearDownTestSuite() {
    server_->stop();
    server_.reset();
    ctx_.reset();
  }

  std::unique_ptr<TcpClient> connect(bool load = true) {
    auto c = std::make_unique<TcpClient>("127.0.0.1", server_->port());
    if (load) {
      const auto r = c->call("load_case", {{"case", "desk"}});
      EXPECT_EQ(r.kind, Kind::response) << r.body.dump();
    }
    return c;
  }

  static Json target_json() {
    const auto& t = testing_support::desk().scene.targets.front();
    return {{"id", t.id}, {"position", vec3_json(t.position)}, {"label", t.label}};
  }
  static Json trajectory_json(const Vec3& entry = kEntry) {
    return {{"target", target_json()}, {"insertion_point", vec3_json(entry)}};
  }

  // Waits for an event with the given op, skipping others; none on timeout.
  static std::optional<Envelope> wait_for(TcpClient& c, const std::string& op, std::chrono::milliseconds timeout) {
    const auto end = std::chrono::steady_clock::now() + timeout;
    while (std::chrono::steady_clock::now() < end) {
      const auto e = c.next_event(std::chrono::duration_cast<std::chrono::milliseconds>(end - std::chrono::steady_clock::now()));
      if (!e) return std::nullopt;
      if (e->op == op) return e;
    }
    return std::nullopt;
  }

  static inline std::shared_ptr<ServiceContext> ctx_;
  static inline std::unique_ptr<TcpServer> server_;
};

std::string code_of(const Envelope& e) { return e.kind == Kind::error ? e.body.value("code", "") : ""; }

}  // namespace

TEST_F(ServiceTest, RequestsNeedALoadedCase) {
  auto c = connect(false);
  EXPECT_EQ(code_of(c->call("get_skin_model")), codes::kNoCase);
  EXPECT_EQ(code_of(c->call("load_case", {{"case", "/nonexistent/volume"}})), codes::kBadCase);
  EXPECT_EQ(code_of(c->call("teleport")), codes::kUnknownOp);
}

TEST_F(ServiceTest, SkinModelHashRoundTrips) {
  auto c = connect();
  const auto r = c->call("get_skin_model");
  ASSERT_EQ(r.kind, Kind::response);
  const auto v = decode_f64(r.body["vertices"]);
  const auto t = decode_u32(r.body["triangles"]);
  EXPECT_EQ(v.size(), 3 * r.body["vertex_count"].get<std::size_t>());
  EXPECT_EQ(hex64(mesh_hash(v, t)), r.body["hash"]);
  EXPECT_EQ(r.body["hash"], hex64(mesh_hash(testing_support::desk().skin->mesh())));
}

TEST_F(ServiceTest, SliceMatchesLocalExtraction) {
  auto c = connect();
  SlicePlane p;
  p.origin = Vec3(-80, -60, 10);
  p.axis_u = Vec3(1, 0.2, 0).normalized();
  p.axis_v = Vec3(0, 0, 1);
  p.extent_u = 160;
  p.extent_v = 90;
  p.resolution = 1.5;
  const Json plane{{"origin", vec3_json(p.origin)}, {"axis_u", vec3_json(p.axis_u)}, {"axis_v", vec3_json(p.axis_v)},
                   {"extent_u", p.extent_u},        {"extent_v", p.extent_v},        {"resolution", p.resolution}};
  const auto r = c->call("get_slice", {{"plane", plane}});
  ASSERT_EQ(r.kind, Kind::response) << r.body.dump();
  const auto local = extract_slice(*testing_support::desk().volume, p);
  EXPECT_EQ(r.body["width"], local.width);
  EXPECT_EQ(r.body["height"], local.height);
  EXPECT_EQ(decode_f64(r.body["pixels"]), local.pixels);
}

TEST_F(ServiceTest, DegeneratePlaneRejected) {
  auto c = connect();
  const Json plane{{"origin", {0, 0, 0}}, {"axis_u", {1, 0, 0}}, {"axis_v", {1, 0, 0}},
                   {"extent_u", 10},      {"extent_v", 10},      {"resolution", 1}};
  EXPECT_EQ(code_of(c->call("get_slice", {{"plane", plane}})), codes::kBadPlane);
  EXPECT_EQ(code_of(c->call("get_slice", {{"plane", "axial"}})), codes::kBadPlane);
}

TEST_F(ServiceTest, ColormapJobMatchesSynchronousBuild) {
  auto c = connect();
  const auto r = c->call("request_colormap", {{"target", target_json()}, {"spacing", 30.0}});
  ASSERT_EQ(r.kind, Kind::response) << r.body.dump();
  const auto job = r.body["job"];
  double last = -1.0;
  std::optional<Envelope> ready;
  while (!ready) {
    const auto e = c->next_event(60s);
    ASSERT_TRUE(e);
    if (e->op == "colormap_progress") {
      EXPECT_EQ(e->body["job"], job);
      EXPECT_GE(e->body["fraction"].get<double>(), last);
      last = e->body["fraction"].get<double>();
    } else if (e->op == "colormap_ready") {
      ready = e;
    } else {
      ASSERT_NE(e->op, "colormap_failed") << e->body.dump();
    }
  }
  const auto& d = testing_support::desk();
  const auto sync = build_colormap(d.scene.targets.front(), *d.volume, d.skin->mesh(), &d.context, 1, 30.0);
  EXPECT_EQ(ready->body["colormap"].get<std::string>(), format_colormap(sync));
  EXPECT_EQ(ready->body["candidates"], sync.candidates.size());
}

TEST_F(ServiceTest, ConcurrentJobsGetDistinctIds) {
  auto c = connect();
  const Json body{{"target", target_json()}, {"spacing", 60.0}};
  const auto a = c->call("request_colormap", body);
  const auto b = c->call("request_colormap", body);
  ASSERT_EQ(a.kind, Kind::response);
  ASSERT_EQ(b.kind, Kind::response);
  EXPECT_NE(a.body["job"], b.body["job"]);
  std::set<Json> done;
  while (done.size() < 2) {
    const auto e = wait_for(*c, "colormap_ready", 60s);
    ASSERT_TRUE(e);
    done.insert(e->body["job"]);
  }
  EXPECT_TRUE(done.count(a.body["job"]) && done.count(b.body["job"]));
}

TEST_F(ServiceTest, TargetOutsideSkinRejected) {
  auto c = connect();
  Json t = target_json();
  t["position"] = {0, 0, 900};
  EXPECT_EQ(code_of(c->call("request_colormap", {{"target", t}})), codes::kBadTarget);
}

TEST_F(ServiceTest, FeasibilityVerdicts) {
  auto c = connect();
  const auto ok = c->call("check_feasibility", {{"trajectory", trajectory_json()}});
  ASSERT_EQ(ok.kind, Kind::response) << ok.body.dump();
  EXPECT_TRUE(ok.body["feasible"].get<bool>());
  EXPECT_EQ(ok.body["reason"], "none");
  const auto& t = testing_support::desk().scene.targets.front();
  EXPECT_EQ(code_of(c->call("check_feasibility", {{"trajectory", trajectory_json(t.position)}})), codes::kBadTrajectory);
  EXPECT_EQ(code_of(c->call("check_feasibility", {{"trajectory", {{"target", target_json()}}}})), codes::kBadTrajectory);
}

TEST_F(ServiceTest, PlanWithoutDriverSendsNoStates) {
  auto c = connect();
  const auto r = c->call("plan_execute", {{"trajectory", trajectory_json()}, {"driver", false}});
  ASSERT_EQ(r.kind, Kind::response) << r.body.dump();
  EXPECT_GT(r.body["waypoints"].get<int>(), 2);
  EXPECT_FALSE(c->next_event(400ms));
}

TEST_F(ServiceTest, DrivenExecutionStreamsAndEndsAtFinalWaypoint) {
  auto c = connect();
  const auto r = c->call("plan_execute", {{"trajectory", trajectory_json()}, {"driver", true}, {"time_scale", 40.0}});
  ASSERT_EQ(r.kind, Kind::response) << r.body.dump();
  EXPECT_EQ(code_of(c->call("plan_execute", {{"trajectory", trajectory_json()}, {"driver", true}})), codes::kBusy);
  EXPECT_EQ(code_of(c->call("load_case", {{"case", "desk"}})), codes::kBusy);
  std::int64_t expected = -1;
  std::optional<Envelope> done;
  while (!done) {
    const auto e = c->next_event(30s);
    ASSERT_TRUE(e);
    if (e->op == "execution_done") {
      done = e;
    } else if (e->op == "twin_state") {
      EXPECT_EQ(e->body["stream"], "execution");
      const auto seq = e->body["sequence"].get<std::int64_t>();
      if (expected >= 0) EXPECT_EQ(seq, expected);
      expected = seq + 1;
    }
  }
  EXPECT_GT(expected, 0);
  EXPECT_EQ(done->body["final_q"], r.body["final_q"]);
  const auto state = c->call("get_state");
  EXPECT_EQ(state.body["q"], r.body["final_q"]);
  EXPECT_EQ(state.body["mode"], "idle");
}

TEST_F(ServiceTest, BadRateRejected) {
  auto c = connect();
  EXPECT_EQ(code_of(c->call("subscribe_state", {{"rate_hz", 0}})), codes::kBadRate);
  EXPECT_EQ(code_of(c->call("subscribe_state", {{"rate_hz", 500}})), codes::kBadRate);
}

TEST_F(ServiceTest, SubscriptionIsGapFreeAndMatchesKinematics) {
  auto c = connect();
  ASSERT_EQ(c->call("subscribe_state", {{"rate_hz", 20}}).kind, Kind::response);
  const auto start = std::chrono::steady_clock::now();
  std::vector<Envelope> states;
  while (std::chrono::steady_clock::now() - start < 5s) {
    const auto e = c->next_event(200ms);
    if (!e || e->op != "twin_state") continue;
    c->send(Envelope{Json("ack"), Kind::request, "state_ack",
                     {{"sequence", e->body["sequence"]}, {"receive_us", monotonic_us()}}});
    states.push_back(*e);
  }
  ASSERT_EQ(c->call("unsubscribe_state").kind, Kind::response);
  EXPECT_NEAR(static_cast<double>(states.size()), 100.0, 20.0);
  const auto chain = KinematicChain::lbr_like();
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (i > 0) EXPECT_EQ(states[i].body["sequence"].get<std::int64_t>(), states[i - 1].body["sequence"].get<std::int64_t>() + 1);
    JointVector q;
    for (int k = 0; k < kJointCount; ++k) q[k] = states[i].body["q"][k].get<double>();
    const auto pose = pose_json(forward_kinematics(chain, q));
    for (int k = 0; k < 12; ++k) EXPECT_NEAR(states[i].body["eef_pose"][k].get<double>(), pose[k].get<double>(), 1e-9);
  }
  const auto stats = c->call("stats");
  ASSERT_EQ(stats.kind, Kind::response);
  EXPECT_GT(stats.body["latency"]["count"].get<int>(), 50);
  EXPECT_LT(stats.body["latency"]["p95_ms"].get<double>(), 50.0);
}
