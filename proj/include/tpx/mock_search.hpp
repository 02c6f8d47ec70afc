#pragma once

// Local stand-in for a web search API.
//
// GET /search?q=<query> answers 200 with a canned body, GET /health is the
// session handshake. In simulated mode the server answers at once and reports
// the configured delay in the X-Simulated-Delay-Us header, which the client
// charges to its own (virtual) timeline; otherwise it really sleeps.

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "tpx/clock.hpp"

namespace httplib {
class Server;
}

namespace tpx {

inline constexpr const char* kSimulatedDelayHeader = "X-Simulated-Delay-Us";

struct MockSearchConfig {
  std::map<std::string, std::string> bodies;  // query -> response body
  std::string default_body = "no results";
  Micros delay_us = 0;
  std::map<std::string, Micros> query_delay_us;  // per-query override
  std::set<std::string> failing;                 // queries answered with 500
  bool simulate_delay = true;

  /// {"delay_us", "bodies", "query_delay_us", "failing", "default_body"}
  static MockSearchConfig from_json(const nlohmann::json& doc);
  static MockSearchConfig load(const std::filesystem::path& path);

  Micros delay_for(const std::string& query) const;
};

struct SearchLogEntry {
  Micros arrival_us = 0;  // server wall clock since start
  std::string path;       // "/search" or "/health"
  std::string query;
  Micros delay_us = 0;
};

class MockSearchServer {
 public:
  explicit MockSearchServer(MockSearchConfig config);
  ~MockSearchServer();
  MockSearchServer(const MockSearchServer&) = delete;
  MockSearchServer& operator=(const MockSearchServer&) = delete;

  /// Binds an ephemeral port on 127.0.0.1 and serves in the background.
  /// Throws Error(StartupFailure) if the socket cannot be bound.
  void start();
  void stop();

  int port() const { return port_; }
  std::string base_url() const;

  std::vector<SearchLogEntry> log() const;
  std::size_t handshakes() const;
  /// Tab-separated: arrival_us, path, query, delay_us.
  std::string log_tsv() const;

 private:
  MockSearchConfig config_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
  RealClock wall_;
  mutable std::mutex m_;
  std::vector<SearchLogEntry> log_;
};

}  // namespace tpx
