#include "needleplan/service/session.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <fmt/format.h>

namespace needleplan::service {

namespace {

using Clock = std::chrono::steady_clock;

// Handler-level rejection, turned into an error envelope.
struct Reject {
  std::string_view code;
  std::string message;
};

const Json& field(const Json& body, const char* key, std::string_view code = codes::kBadRequest) {
  const auto it = body.find(key);
  if (it == body.end()) throw Reject{code, fmt::format("missing field '{}'", key)};
  return *it;
}

double number(const Json& body, const char* key, double fallback, std::string_view code = codes::kBadRequest) {
  const auto it = body.find(key);
  if (it == body.end()) return fallback;
  if (!it->is_number()) throw Reject{code, fmt::format("field '{}' must be a number", key)};
  const double v = it->get<double>();
  if (!std::isfinite(v)) throw Reject{code, fmt::format("field '{}' must be finite", key)};
  return v;
}

Vec3 vec3_field(const Json& body, const char* key, std::string_view code) {
  try {
    return vec3_from(field(body, key, code), key);
  } catch (const BadPayload& e) {
    throw Reject{code, e.message};
  }
}

std::string string_field(const Json& body, const char* key, std::string_view code) {
  const Json& j = field(body, key, code);
  if (!j.is_string()) throw Reject{code, fmt::format("field '{}' must be a string", key)};
  return j.get<std::string>();
}

Json q_json(const JointVector& q) {
  Json out = Json::array();
  for (int i = 0; i < kJointCount; ++i) out.push_back(q[i]);
  return out;
}

Target parse_target(const Json& j, std::string_view code) {
  if (!j.is_object()) throw Reject{code, "target must be an object"};
  Target t;
  t.id = string_field(j, "id", code);
  t.position = vec3_field(j, "position", code);
  if (const auto it = j.find("label"); it != j.end()) {
    if (!it->is_string()) throw Reject{code, "target label must be a string"};
    t.label = it->get<std::string>();
  }
  return t;
}

Json colormap_channel(const Colormap& map) {
  std::vector<double> points, hu;
  std::vector<std::uint8_t> feasible;
  for (const auto& c : map.candidates) {
    points.insert(points.end(), {c.surface_point.x(), c.surface_point.y(), c.surface_point.z()});
    hu.push_back(c.max_hu);
    feasible.push_back(c.feasible ? 1 : 0);
  }
  const std::size_t n = map.candidates.size();
  return Json{{"target_id", map.target_id},
              {"points", encode_f64(points, {n, 3})},
              {"max_hu", encode_f64(hu, {n})},
              {"feasible", encode_u8(feasible, {n})}};
}

double percentile(std::vector<double> v, double p) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

constexpr std::size_t kLatencyWindow = 10000;

struct ColormapJob {
  std::atomic<std::size_t> done{0};
  std::atomic<std::size_t> total{0};
  std::mutex mutex;
  std::condition_variable cv;
  bool finished = false;
  std::optional<Colormap> result;
  std::string error_code;
  std::string error_message;
};

}  // namespace

struct Session::Core {
  std::shared_ptr<ServiceContext> ctx;
  Sink sink;
  std::atomic<bool> closed{false};
  std::atomic<bool> cancel_jobs{false};

  std::mutex mutex;  // everything below
  std::condition_variable cv;
  std::shared_ptr<const CaseData> case_data;
  JointVector q = JointVector::Zero();
  bool executing = false;
  std::uint64_t next_job = 1;
  std::optional<Colormap> last_colormap;

  double sub_rate = 0.0;
  std::uint64_t sub_generation = 0;
  std::uint64_t sub_sequence = 0;
  std::uint64_t exec_sequence = 0;
  std::uint64_t state_events = 0;
  std::map<std::uint64_t, std::int64_t> emit_us;  // subscription sequence -> emit time
  std::deque<double> latencies_ms;
  std::map<std::string, std::uint64_t> op_counts;
  std::deque<double> request_ms;

  std::thread sub_thread;
  std::thread exec_thread;
  std::vector<std::thread> job_threads;

  void emit(const Envelope& e) {
    if (!closed.load()) sink(e);
  }

  std::shared_ptr<const CaseData> require_case() {
    std::lock_guard lock(mutex);
    if (!case_data) throw Reject{codes::kNoCase, "no case loaded"};
    return case_data;
  }

  Envelope twin_state(const CaseData& c, std::string_view stream, std::uint64_t seq, const JointVector& state) const {
    // The pose is recomputed from q for every event.
    const RigidTransform eef = forward_kinematics(c.context.chain, state);
    const std::int64_t now = monotonic_us();
    return Envelope{nullptr, Kind::event, "twin_state",
                    Json{{"stream", stream},
                         {"sequence", seq},
                         {"q", q_json(state)},
                         {"eef_pose", pose_json(eef)},
                         {"timestamp_ms", static_cast<double>(now) / 1000.0},
                         {"emit_us", now}}};
  }

  // -------------------------------------------------------------------------
  Json load_case(const Json& body) {
    const std::string name = string_field(body, "case", codes::kBadRequest);
    std::shared_ptr<const CaseData> c;
    try {
      c = ctx->cases.get(name);
    } catch (const Error& e) {
      throw Reject{codes::kBadCase, e.what()};
    }
    std::lock_guard lock(mutex);
    if (executing) throw Reject{codes::kBusy, "cannot switch cases while executing"};
    case_data = c;
    q = c->context.idle;
    last_colormap.reset();
    const auto& v = *c->volume;
    return Json{{"case", c->name},
                {"dims", v.dims()},
                {"spacing", vec3_json(v.spacing())},
                {"origin", vec3_json(v.origin())},
                {"vertex_count", c->skin->mesh().vertex_count()},
                {"triangle_count", c->skin->mesh().triangle_count()},
                {"skin_hash", hex64(c->skin_hash)},
                {"idle_q", q_json(c->context.idle)}};
  }

  Json get_skin_model(const Json&) {
    const auto c = require_case();
    const TriMesh& mesh = c->skin->mesh();
    Json out{{"vertices", encode_f64(std::span(mesh.vertices().data()->data(), mesh.vertex_count() * 3),
                                     {mesh.vertex_count(), 3})},
             {"triangles", encode_u32(std::span(mesh.triangles().data()->data(), mesh.triangle_count() * 3),
                                      {mesh.triangle_count(), 3})},
             {"vertex_count", mesh.vertex_count()},
             {"triangle_count", mesh.triangle_count()},
             {"hash", hex64(c->skin_hash)}};
    std::lock_guard lock(mutex);
    if (last_colormap) out["colormap"] = colormap_channel(*last_colormap);
    return out;
  }

  Json get_slice(const Json& body) {
    const auto c = require_case();
    const Json& pj = field(body, "plane", codes::kBadPlane);
    if (!pj.is_object()) throw Reject{codes::kBadPlane, "plane must be an object"};
    SlicePlane plane;
    plane.origin = vec3_field(pj, "origin", codes::kBadPlane);
    plane.axis_u = vec3_field(pj, "axis_u", codes::kBadPlane);
    plane.axis_v = vec3_field(pj, "axis_v", codes::kBadPlane);
    plane.extent_u = number(pj, "extent_u", 0.0, codes::kBadPlane);
    plane.extent_v = number(pj, "extent_v", 0.0, codes::kBadPlane);
    plane.resolution = number(pj, "resolution", 0.0, codes::kBadPlane);
    try {
      plane.validate();
    } catch (const Error& e) {
      throw Reject{codes::kBadPlane, e.what()};
    }
    if (static_cast<double>(plane.width()) * plane.height() > 16.0e6) {
      throw Reject{codes::kBadPlane, "slice exceeds 16 megapixels"};
    }
    std::optional<WindowLevel> window;
    if (const auto it = body.find("window"); it != body.end() && !it->is_null()) {
      if (!it->is_object()) throw Reject{codes::kBadRequest, "window must be an object"};
      WindowLevel w;
      w.center = number(*it, "center", w.center);
      w.width = number(*it, "width", w.width);
      try {
        w.validate();
      } catch (const Error& e) {
        throw Reject{codes::kBadRequest, e.what()};
      }
      window = w;
    }
    const SliceImage img = extract_slice(*c->volume, plane, window ? &*window : nullptr);
    return Json{{"plane", pj},
                {"width", img.width},
                {"height", img.height},
                {"windowed", window.has_value()},
                {"pixels", encode_f64(img.pixels, {static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width)})}};
  }

  NeedleTrajectory parse_trajectory(const Json& body, const CaseData& c) {
    const Json& tj = field(body, "trajectory", codes::kBadTrajectory);
    if (!tj.is_object()) throw Reject{codes::kBadTrajectory, "trajectory must be an object"};
    const Target target = parse_target(field(tj, "target", codes::kBadTrajectory), codes::kBadTrajectory);
    const Vec3 insertion = vec3_field(tj, "insertion_point", codes::kBadTrajectory);
    NeedleTrajectory traj = NeedleTrajectory::make(target, insertion);
    try {
      traj.validate();
      traj.max_hu = max_hu_along_segment(*c.volume, insertion, target.position);
    } catch (const Error& e) {
      throw Reject{codes::kBadTrajectory, e.what()};
    }
    return traj;
  }

  Json check_feasibility(const Json& body) {
    const auto c = require_case();
    const auto traj = parse_trajectory(body, *c);
    const auto verdict = check_trajectory(traj, c->context);
    return Json{{"feasible", verdict.feasible},
                {"reason", to_string(verdict.reason)},
                {"max_hu", traj.max_hu},
                {"insertion_depth", traj.insertion_depth},
                {"waypoints", verdict.approach.size() + verdict.stroke.size()}};
  }

  Json plan_execute(const Json& body, const std::shared_ptr<Core>& self) {
    const auto c = require_case();
    const auto traj = parse_trajectory(body, *c);
    const auto driver_it = body.find("driver");
    if (driver_it != body.end() && !driver_it->is_boolean()) throw Reject{codes::kBadRequest, "driver must be a boolean"};
    const bool driver = driver_it != body.end() && driver_it->get<bool>();
    const double time_scale = number(body, "time_scale", 1.0);
    if (!(time_scale > 0.0) || time_scale > 1000.0) throw Reject{codes::kBadRequest, "time_scale must be in (0, 1000]"};
    {
      std::lock_guard lock(mutex);
      if (executing) throw Reject{codes::kBusy, "a plan is executing"};
    }
    ExecutablePlan plan;
    try {
      plan = plan_insertion(traj, c->context);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::PlanningFailed) throw Reject{codes::kPlanFailed, e.what()};
      throw;
    }
    Json out{{"waypoints", plan.waypoints.size()},
             {"duration", plan.duration()},
             {"approach_end", plan.approach_end},
             {"stroke_end", plan.stroke_end},
             {"final_q", q_json(plan.waypoints.back())},
             {"insertion_q", q_json(plan.waypoints[plan.stroke_end])},
             {"driver", driver},
             {"time_scale", time_scale}};
    if (driver) {
      std::lock_guard lock(mutex);
      if (executing) throw Reject{codes::kBusy, "a plan is executing"};
      executing = true;
      if (exec_thread.joinable()) exec_thread.join();  // previous run already finished
      exec_thread = std::thread([self, c, plan = std::move(plan), time_scale] { self->run_execution(*c, plan, time_scale); });
    }
    return out;
  }

  void run_execution(const CaseData& c, const ExecutablePlan& plan, double time_scale) {
    const double period = 1.0 / ctx->options.execution_rate_hz;
    const double wall = plan.duration() / time_scale;
    const auto steps = static_cast<std::size_t>(std::ceil(wall / period));
    const auto start = Clock::now();
    for (std::size_t k = 0; k <= steps && !closed.load(); ++k) {
      const JointVector state =
          k == steps ? plan.waypoints.back() : sample_plan(plan, std::min(plan.duration(), k * period * time_scale));
      std::uint64_t seq = 0;
      {
        std::lock_guard lock(mutex);
        q = state;
        seq = ++exec_sequence;
        ++state_events;
      }
      emit(twin_state(c, "execution", seq, state));
      if (k == steps) break;
      std::unique_lock lock(mutex);
      cv.wait_until(lock, start + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>((k + 1) * period)),
                    [this] { return closed.load(); });
    }
    JointVector final_q;
    {
      std::lock_guard lock(mutex);
      executing = false;
      final_q = q;
    }
    emit(Envelope{nullptr, Kind::event, "execution_done", Json{{"final_q", q_json(final_q)}}});
  }

  Json request_colormap(const Json& body, const std::shared_ptr<Core>& self) {
    const auto c = require_case();
    const Target target = parse_target(field(body, "target", codes::kBadTarget), codes::kBadTarget);
    if (!c->volume->contains(target.position) || !c->skin->contains(target.position)) {
      throw Reject{codes::kBadTarget, "target is outside the skin"};
    }
    const double spacing = number(body, "spacing", kDefaultCandidateSpacing);
    if (!(spacing >= 1.0) || spacing > 500.0) throw Reject{codes::kBadRequest, "spacing must be in [1, 500] mm"};
    std::uint64_t id = 0;
    auto job = std::make_shared<ColormapJob>();
    {
      std::lock_guard lock(mutex);
      id = next_job++;
    }
    // Compute on the shared pool; a per-job thread reports progress and the result.
    ctx->pool.submit([self, c, job, target, spacing] {
      if (!self->cancel_jobs.load()) {
        try {
          job->result = build_colormap(target, *c->volume, c->skin->mesh(), &c->context, 1, spacing,
                                       [&job](std::size_t done, std::size_t total) {
                                         job->total.store(total);
                                         job->done.store(done);
                                       },
                                       &self->cancel_jobs);
        } catch (const Error& e) {
          job->error_code = e.code() == ErrorCode::NoCandidates ? std::string(codes::kBadTarget) : std::string(codes::kInternal);
          job->error_message = e.what();
        } catch (const std::exception& e) {
          job->error_code = std::string(codes::kInternal);
          job->error_message = e.what();
        }
      }
      std::lock_guard lock(job->mutex);
      job->finished = true;
      job->cv.notify_all();
    });
    std::lock_guard lock(mutex);
    job_threads.emplace_back([self, job, id] { self->report_job(*job, id); });
    return Json{{"job", id}, {"target_id", target.id}};
  }

  void report_job(ColormapJob& job, std::uint64_t id) {
    const auto interval = std::chrono::duration<double>(ctx->options.progress_interval_s);
    double last_fraction = 0.0;
    auto progress = [&](double fraction) {
      last_fraction = std::max(last_fraction, fraction);
      emit(Envelope{nullptr, Kind::event, "colormap_progress",
                    Json{{"job", id}, {"done", job.done.load()}, {"total", job.total.load()}, {"fraction", last_fraction}}});
    };
    progress(0.0);
    for (;;) {
      std::unique_lock lock(job.mutex);
      if (job.cv.wait_for(lock, interval, [&] { return job.finished || cancel_jobs.load(); })) break;
      lock.unlock();
      const std::size_t total = job.total.load();
      progress(total > 0 ? static_cast<double>(job.done.load()) / static_cast<double>(total) : 0.0);
    }
    if (cancel_jobs.load()) return;
    if (job.result) {
      progress(1.0);
      {
        std::lock_guard lock(mutex);
        last_colormap = *job.result;
      }
      const auto& map = *job.result;
      const auto feasible = std::count_if(map.candidates.begin(), map.candidates.end(), [](const auto& x) { return x.feasible; });
      emit(Envelope{nullptr, Kind::event, "colormap_ready",
                    Json{{"job", id},
                         {"target_id", map.target_id},
                         {"candidates", map.candidates.size()},
                         {"feasible", feasible},
                         {"generation_time", map.generation_time},
                         {"colormap", format_colormap(map)}}});
    } else {
      emit(Envelope{nullptr, Kind::event, "colormap_failed",
                    Json{{"job", id}, {"code", job.error_code}, {"message", job.error_message}}});
    }
  }

  Json get_state(const Json&) {
    const auto c = require_case();
    std::lock_guard lock(mutex);
    return Json{{"q", q_json(q)},
                {"eef_pose", pose_json(forward_kinematics(c->context.chain, q))},
                {"mode", executing ? "executing" : "idle"}};
  }

  Json subscribe_state(const Json& body, const std::shared_ptr<Core>& self) {
    const auto c = require_case();
    const double rate = number(body, "rate_hz", -1.0, codes::kBadRate);
    if (!(rate >= 1.0 && rate <= 100.0)) throw Reject{codes::kBadRate, "rate_hz must be within [1, 100]"};
    std::lock_guard lock(mutex);
    sub_rate = rate;
    ++sub_generation;
    cv.notify_all();
    if (!sub_thread.joinable()) sub_thread = std::thread([self, c] { self->run_subscription(*c); });
    return Json{{"rate_hz", rate}};
  }

  Json unsubscribe_state(const Json&) {
    std::thread t;
    {
      std::lock_guard lock(mutex);
      sub_rate = 0.0;
      ++sub_generation;
      t = std::move(sub_thread);
    }
    cv.notify_all();
    if (t.joinable()) t.join();
    return Json::object();
  }

  void run_subscription(const CaseData& c) {
    std::unique_lock lock(mutex);
    std::uint64_t generation = sub_generation;
    auto next = Clock::now();
    while (!closed.load() && sub_rate > 0.0) {
      const auto period = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(1.0 / sub_rate));
      const std::uint64_t seq = ++sub_sequence;
      ++state_events;
      const JointVector state = q;
      lock.unlock();
      Envelope env = twin_state(c, "subscription", seq, state);
      {
        std::lock_guard record(mutex);
        emit_us[seq] = env.body["emit_us"].get<std::int64_t>();
        while (emit_us.size() > 1000) emit_us.erase(emit_us.begin());
      }
      emit(env);
      lock.lock();
      next += period;
      // Rate changes restart the schedule from now.
      cv.wait_until(lock, next, [&] { return closed.load() || sub_rate <= 0.0 || sub_generation != generation; });
      if (sub_generation != generation) {
        generation = sub_generation;
        next = Clock::now();
      }
    }
  }

  Json state_ack(const Json& body) {
    const auto& seq_json = field(body, "sequence");
    if (!seq_json.is_number_unsigned()) throw Reject{codes::kBadRequest, "sequence must be a non-negative integer"};
    const auto seq = seq_json.get<std::uint64_t>();
    const double receive = number(body, "receive_us", -1.0);
    std::lock_guard lock(mutex);
    const auto it = emit_us.find(seq);
    if (it == emit_us.end()) return Json{{"recorded", false}};
    const double latency = (receive - static_cast<double>(it->second)) / 1000.0;
    if (!(latency >= 0.0)) return Json{{"recorded", false}};
    latencies_ms.push_back(latency);
    if (latencies_ms.size() > kLatencyWindow) latencies_ms.pop_front();
    return Json{{"recorded", true}, {"latency_ms", latency}};
  }

  Json stats(const Json&) {
    std::lock_guard lock(mutex);
    const std::vector<double> lat(latencies_ms.begin(), latencies_ms.end());
    const std::vector<double> req(request_ms.begin(), request_ms.end());
    return Json{{"state_events", state_events},
                {"subscription_sequence", sub_sequence},
                {"execution_sequence", exec_sequence},
                {"ops", op_counts},
                {"latency", {{"count", lat.size()},
                             {"p50_ms", percentile(lat, 0.5)},
                             {"p95_ms", percentile(lat, 0.95)},
                             {"max_ms", lat.empty() ? 0.0 : *std::max_element(lat.begin(), lat.end())}}},
                {"request", {{"count", req.size()}, {"p50_ms", percentile(req, 0.5)}, {"p95_ms", percentile(req, 0.95)}}}};
  }

  Json evaluate_needle(const Json& body) {
    const auto c = require_case();
    const auto traj = parse_trajectory(body, *c);
    JointVector state;
    {
      std::lock_guard lock(mutex);
      state = q;
    }
    const RigidTransform eef = forward_kinematics(c->context.chain, state);
    const RigidTransform ct_from_b = c->context.scene->ct_to_b();
    const Vec3 tip = ct_from_b.apply(eef.apply(c->context.mount.tip_in_eef()));
    const Vec3 base = ct_from_b.apply(eef.apply(c->context.mount.eef_to_needle.translation()));
    const Vec3 axis = (tip - base).normalized();
    Json out{{"tip", vec3_json(tip)},
             {"target_error", (tip + kPunchOffset * axis - traj.target.position).norm()},
             {"off_axis_error", point_line_distance(traj.target.position, tip, axis)}};
    if (const auto hit = c->skin->intersect(Ray::make(base, axis))) {
      out["surface_point_error"] = (hit->point - traj.insertion_point).norm();
    } else {
      out["surface_point_error"] = nullptr;
    }
    return out;
  }

  void shutdown() {
    closed.store(true);
    cancel_jobs.store(true);
    std::vector<std::thread> threads;
    {
      std::lock_guard lock(mutex);
      sub_rate = 0.0;
      threads.push_back(std::move(sub_thread));
      threads.push_back(std::move(exec_thread));
      for (auto& t : job_threads) threads.push_back(std::move(t));
      job_threads.clear();
    }
    cv.notify_all();
    for (auto& t : threads) {
      if (t.joinable() && t.get_id() != std::this_thread::get_id()) t.join();
    }
  }
};

Session::Session(std::shared_ptr<ServiceContext> ctx, Sink sink) : core_(std::make_shared<Core>()) {
  core_->ctx = std::move(ctx);
  core_->sink = std::move(sink);
}

Session::~Session() { close(); }

void Session::close() { core_->shutdown(); }

void Session::handle(const Envelope& request) {
  Core& c = *core_;
  const auto started = Clock::now();
  Json body;
  try {
    if (request.op == "load_case") body = c.load_case(request.body);
    else if (request.op == "get_skin_model") body = c.get_skin_model(request.body);
    else if (request.op == "get_slice") body = c.get_slice(request.body);
    else if (request.op == "request_colormap") body = c.request_colormap(request.body, core_);
    else if (request.op == "check_feasibility") body = c.check_feasibility(request.body);
    else if (request.op == "plan_execute") body = c.plan_execute(request.body, core_);
    else if (request.op == "get_state") body = c.get_state(request.body);
    else if (request.op == "subscribe_state") body = c.subscribe_state(request.body, core_);
    else if (request.op == "unsubscribe_state") body = c.unsubscribe_state(request.body);
    else if (request.op == "state_ack") body = c.state_ack(request.body);
    else if (request.op == "evaluate_needle") body = c.evaluate_needle(request.body);
    else if (request.op == "stats") body = c.stats(request.body);
    else throw Reject{codes::kUnknownOp, "unknown op '" + request.op + "'"};
  } catch (const Reject& r) {
    c.emit(make_error(request.id, request.op, r.code, r.message));
    return;
  } catch (const BadPayload& e) {
    c.emit(make_error(request.id, request.op, codes::kBadRequest, e.message));
    return;
  } catch (const Json::exception& e) {
    c.emit(make_error(request.id, request.op, codes::kBadRequest, e.what()));
    return;
  } catch (const std::exception& e) {
    c.emit(make_error(request.id, request.op, codes::kInternal, e.what()));
    return;
  }
  {
    std::lock_guard lock(c.mutex);
    ++c.op_counts[request.op];
    c.request_ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - started).count());
    if (c.request_ms.size() > kLatencyWindow) c.request_ms.pop_front();
  }
  c.emit(Envelope{request.id, Kind::response, request.op, std::move(body)});
}

}  // namespace needleplan::service
