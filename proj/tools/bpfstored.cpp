// bpfstored: block storage server with appcode offload.

#include <csignal>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "bpfstore/device.hpp"
#include "bpfstore/server.hpp"

using namespace bpfstore;

namespace {

std::pair<int64_t, int64_t> parse_pair(const std::string& s) {
  const auto comma = s.find(',');
  try {
    if (comma == std::string::npos) {
      const int64_t v = std::stoll(s);
      return {v, v};
    }
    return {std::stoll(s.substr(0, comma)), std::stoll(s.substr(comma + 1))};
  } catch (const std::exception&) {
    throw CLI::ValidationError("--inject-storage-delay-us", "expected <read>,<write> in microseconds");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bpfstored: block storage server with appcode offload"};
  ServerConfig cfg;
  int64_t net_delay_us = 0;
  std::string storage_delay = "0,0";
  app.add_option("--listen", cfg.listen, "address:port")->capture_default_str();
  app.add_option("--device", cfg.device, "backing file (created if missing); in-memory if omitted");
  app.add_option("--size", cfg.size, "device size in bytes; required for new or in-memory devices");
  app.add_option("--max-insns", cfg.limits.max_insns)->capture_default_str();
  app.add_option("--max-path", cfg.limits.max_path)->capture_default_str();
  app.add_option("--inject-net-delay-us", net_delay_us, "one-way delay on every request and reply")
      ->capture_default_str();
  app.add_option("--inject-storage-delay-us", storage_delay, "<read>,<write> delay per device operation")
      ->capture_default_str();
  app.add_option("--log-level", cfg.log_level, "trace, debug, info, warn, error, off")->capture_default_str();

  try {
    app.parse(argc, argv);
    const auto [rd, wr] = parse_pair(storage_delay);
    if (net_delay_us < 0 || rd < 0 || wr < 0) throw CLI::ValidationError("delays", "must not be negative");
    cfg.net_delay = std::chrono::microseconds(net_delay_us);
    cfg.storage_read_delay = std::chrono::microseconds(rd);
    cfg.storage_write_delay = std::chrono::microseconds(wr);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  spdlog::set_level(spdlog::level::from_str(cfg.log_level));

  // Block the signals before any thread starts so only sigwait sees them.
  sigset_t sigs;
  sigemptyset(&sigs);
  sigaddset(&sigs, SIGINT);
  sigaddset(&sigs, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &sigs, nullptr);

  std::unique_ptr<Device> device;
  std::unique_ptr<Server> server;
  try {
    if (cfg.device.empty()) {
      if (cfg.size == 0) throw std::invalid_argument("in-memory device needs --size");
      device = std::make_unique<MemoryDevice>(cfg.size);
    } else {
      device = std::make_unique<FileBlockStore>(cfg.device, cfg.size);
      if (device->size() == 0) throw std::invalid_argument(cfg.device + " is empty; pass --size");
    }
    server = std::make_unique<Server>(*device, cfg);
    server->start();
  } catch (const std::exception& e) {
    spdlog::critical("startup failed: {}", e.what());
    return 1;
  }
  std::cout << "listening on port " << server->port() << std::endl;

  int sig = 0;
  sigwait(&sigs, &sig);
  spdlog::info("signal {}, shutting down", sig);
  server->stop();
  return 0;
}
