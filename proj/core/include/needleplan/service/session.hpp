#pragma once

// Request handling for one client. Transport-agnostic: outgoing envelopes go
// to a Sink, which the TCP layer turns into frames.

#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <thread>

#include "needleplan/planner.hpp"
#include "needleplan/scenario.hpp"
#include "needleplan/service/protocol.hpp"

namespace needleplan::service {

/// Immutable once built; shared by every session that loads it.
struct CaseData {
  std::string name;
  std::shared_ptr<const Volume> volume;
  std::shared_ptr<const MeshIndex> skin;
  RobotContext context;
  std::uint64_t skin_hash = 0;
};

std::shared_ptr<const CaseData> make_case(std::string name, const DeskCase& desk);

/// "desk" is the default desk scene. Anything else is read as a `.vol/.volmeta`
/// prefix and combined with the default robot placement, table and gantry.
class CaseRegistry {
 public:
  std::shared_ptr<const CaseData> get(const std::string& name);
  void add(std::shared_ptr<const CaseData> c);

 private:
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const CaseData>> cases_;
};

/// Fixed set of threads draining a FIFO of tasks.
class JobPool {
 public:
  explicit JobPool(int threads);
  ~JobPool();
  JobPool(const JobPool&) = delete;
  JobPool& operator=(const JobPool&) = delete;

  void submit(std::function<void()> task);
  int size() const noexcept { return static_cast<int>(threads_.size()); }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> tasks_;
  std::vector<std::thread> threads_;
  bool stopping_ = false;
};

struct ServiceOptions {
  int workers = 1;
  double execution_rate_hz = 50.0;
  double progress_interval_s = 0.25;
};

/// State shared by all sessions of one server.
struct ServiceContext {
  explicit ServiceContext(ServiceOptions opts = {}) : options(opts), pool(std::max(1, opts.workers)) {}
  ServiceOptions options;
  CaseRegistry cases;
  JobPool pool;
};

/// Called from request, job and timer threads; implementations must be thread-safe.
using Sink = std::function<void(const Envelope&)>;

/// Monotonic microseconds shared by every process on the host.
std::int64_t monotonic_us();

/// Log level from the environment variable (trace, debug, info, warn, error, off; default info).
void configure_logging(const char* env_var = "PLAN_SERVER_LOG");

class Session {
 public:
  Session(std::shared_ptr<ServiceContext> ctx, Sink sink);
  ~Session();
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  /// Exactly one response or error envelope per request, sent before returning.
  void handle(const Envelope& request);
  /// Stops streams and jobs; nothing is sent afterwards.
  void close();

  struct Core;

 private:
  std::shared_ptr<Core> core_;
};

/// Session plus frame decoding.
class Connection {
 public:
  Connection(std::shared_ptr<ServiceContext> ctx, Sink sink);

  /// Decodes and dispatches every complete frame. Returns false once the stream
  /// is unrecoverable (oversized header); the caller should disconnect.
  bool receive(std::string_view bytes);
  void close() { session_.close(); }

 private:
  Sink sink_;
  FrameDecoder decoder_;
  Session session_;
  bool broken_ = false;
};

}  // namespace needleplan::service
