// Digital-twin planning server.

#include <csignal>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "needleplan/service/tcp.hpp"

using namespace needleplan;

namespace {
volatile std::sig_atomic_t g_stop = 0;
void on_signal(int) { g_stop = 1; }
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Needle planning digital-twin server"};
  std::string case_name = "desk";
  int port = 7700;
  int workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  std::string bind = "127.0.0.1";
  app.add_option("--case", case_name, "Case to preload: 'desk' or a .vol/.volmeta prefix");
  app.add_option("--port", port, "TCP port (0 picks a free one)")->check(CLI::Range(0, 65535));
  app.add_option("--workers", workers, "Colormap worker threads")->check(CLI::Range(1, 256));
  app.add_option("--bind", bind, "Listen address");
  CLI11_PARSE(app, argc, argv);

  service::configure_logging();
  try {
    service::ServiceOptions options;
    options.workers = workers;
    auto ctx = std::make_shared<service::ServiceContext>(options);
    if (!case_name.empty()) {
      spdlog::info("loading case '{}'", case_name);
      const auto c = ctx->cases.get(case_name);
      spdlog::info("case ready: {} skin triangles", c->skin->mesh().triangle_count());
    }
    service::TcpServer server(ctx, static_cast<std::uint16_t>(port), bind);
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    server.start();
    spdlog::info("listening on {}:{} with {} workers", bind, server.port(), workers);
    std::cout << "port " << server.port() << std::endl;
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    spdlog::info("shutting down");
    server.stop();
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 0;
}
