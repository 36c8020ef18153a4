#include <chrono>
#include <cstdlib>

#include <spdlog/spdlog.h>

#include "needleplan/service/session.hpp"

namespace needleplan::service {

std::int64_t monotonic_us() {
  return std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

void configure_logging(const char* env_var) {
  const char* value = std::getenv(env_var);
  const auto level = value ? spdlog::level::from_str(value) : spdlog::level::info;
  // from_str maps unknown names to off; keep info instead.
  const bool known = !value || level != spdlog::level::off || std::string_view(value) == "off";
  spdlog::set_level(known ? level : spdlog::level::info);
  if (!known) spdlog::warn("unknown {} value '{}', using info", env_var, value);
}

std::shared_ptr<const CaseData> make_case(std::string name, const DeskCase& desk) {
  auto c = std::make_shared<CaseData>();
  c->name = std::move(name);
  c->volume = desk.volume;
  c->skin = desk.skin;
  c->context = desk.context;
  c->skin_hash = mesh_hash(desk.skin->mesh());
  return c;
}

std::shared_ptr<const CaseData> CaseRegistry::get(const std::string& name) {
  {
    std::lock_guard lock(mutex_);
    if (auto it = cases_.find(name); it != cases_.end()) return it->second;
  }
  // Built outside the lock; a concurrent loader of the same name may win the insert.
  std::shared_ptr<const CaseData> built;
  if (name == "desk") {
    built = make_case(name, build_desk_case(default_desk_scene()));
  } else {
    DeskCase desk;
    desk.scene = default_desk_scene();
    desk.volume = std::make_shared<const Volume>(read_volume(name));
    desk.skin = std::make_shared<const MeshIndex>(extract_skin_mesh(*desk.volume));
    desk.context = make_context(desk, desk.scene.b_to_ct);
    built = make_case(name, desk);
  }
  std::lock_guard lock(mutex_);
  return cases_.emplace(name, built).first->second;
}

void CaseRegistry::add(std::shared_ptr<const CaseData> c) {
  std::lock_guard lock(mutex_);
  cases_[c->name] = std::move(c);
}

JobPool::JobPool(int threads) {
  for (int i = 0; i < threads; ++i) {
    threads_.emplace_back([this] {
      for (;;) {
        std::function<void()> task;
        {
          std::unique_lock lock(mutex_);
          cv_.wait(lock, [this] { return stopping_ || !tasks_.empty(); });
          if (tasks_.empty()) return;
          task = std::move(tasks_.front());
          tasks_.pop_front();
        }
        task();
      }
    });
  }
}

JobPool::~JobPool() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  cv_.notify_all();
  for (auto& t : threads_) t.join();
}

void JobPool::submit(std::function<void()> task) {
  {
    std::lock_guard lock(mutex_);
    tasks_.push_back(std::move(task));
  }
  cv_.notify_one();
}

Connection::Connection(std::shared_ptr<ServiceContext> ctx, Sink sink)
    : sink_(sink), session_(std::move(ctx), std::move(sink)) {}

bool Connection::receive(std::string_view bytes) {
  if (broken_) return false;
  decoder_.feed(bytes);
  while (auto payload = decoder_.next_payload()) {
    Envelope env;
    try {
      env = parse_envelope(*payload);
    } catch (const BadPayload& e) {
      sink_(make_error(e.id, e.op, codes::kBadRequest, e.message));
      continue;
    }
    if (env.kind != Kind::request) {
      sink_(make_error(env.id, env.op, codes::kBadRequest, "clients may only send requests"));
      continue;
    }
    session_.handle(env);
  }
  if (decoder_.oversized()) {
    sink_(make_error(nullptr, "", codes::kFrameTooLarge, "frame length exceeds the limit"));
    broken_ = true;
    return false;
  }
  return true;
}

}  // namespace needleplan::service
