#include <algorithm>
#include <fstream>
#include <sstream>

#include "httplib.h"
#include "tpx/builtin_tools.hpp"
#include "tpx/mock_search.hpp"

namespace tpx {

MockSearchConfig MockSearchConfig::from_json(const nlohmann::json& doc) {
  MockSearchConfig c;
  try {
    c.delay_us = doc.value("delay_us", Micros{0});
    c.default_body = doc.value("default_body", c.default_body);
    if (doc.contains("bodies")) c.bodies = doc["bodies"].get<std::map<std::string, std::string>>();
    if (doc.contains("query_delay_us")) c.query_delay_us = doc["query_delay_us"].get<std::map<std::string, Micros>>();
    if (doc.contains("failing")) c.failing = doc["failing"].get<std::set<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("search fixture: ") + e.what());
  }
  if (c.delay_us < 0) throw Error(ErrorCode::InvalidConfig, "search fixture: negative delay_us");
  for (const auto& [q, d] : c.query_delay_us) {
    if (d < 0) throw Error(ErrorCode::InvalidConfig, "search fixture: negative delay for '" + q + "'");
  }
  return c;
}

MockSearchConfig MockSearchConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidConfig, "cannot open search fixture " + path.string());
  auto doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw Error(ErrorCode::InvalidConfig, "search fixture " + path.string() + " is not JSON");
  return from_json(doc);
}

Micros MockSearchConfig::delay_for(const std::string& query) const {
  auto it = query_delay_us.find(query);
  return it == query_delay_us.end() ? delay_us : it->second;
}

MockSearchServer::MockSearchServer(MockSearchConfig config)
    : config_(std::move(config)), server_(std::make_unique<httplib::Server>()) {}

MockSearchServer::~MockSearchServer() { stop(); }

void MockSearchServer::start() {
  server_->Get("/health", [this](const httplib::Request&, httplib::Response& res) {
    {
      std::lock_guard lock(m_);
      log_.push_back({wall_.now(), "/health", "", 0});
    }
    res.set_content("ok", "text/plain");
  });
  server_->Get("/search", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string q = req.get_param_value("q");
    const Micros delay = config_.delay_for(q);
    {
      std::lock_guard lock(m_);
      log_.push_back({wall_.now(), "/search", q, delay});
    }
    if (config_.simulate_delay) {
      res.set_header(kSimulatedDelayHeader, std::to_string(delay));
    } else if (delay > 0) {
      std::this_thread::sleep_for(std::chrono::microseconds(delay));
    }
    if (config_.failing.count(q)) {
      res.status = 500;
      res.set_content("search backend error", "text/plain");
      return;
    }
    auto it = config_.bodies.find(q);
    res.set_content(it == config_.bodies.end() ? config_.default_body : it->second, "text/plain");
  });

  port_ = server_->bind_to_any_port("127.0.0.1");
  if (port_ <= 0) throw Error(ErrorCode::StartupFailure, "mock search server could not bind");
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void MockSearchServer::stop() {
  if (thread_.joinable()) {
    server_->stop();
    thread_.join();
  }
}

std::string MockSearchServer::base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }

std::vector<SearchLogEntry> MockSearchServer::log() const {
  std::lock_guard lock(m_);
  return log_;
}

std::size_t MockSearchServer::handshakes() const {
  std::lock_guard lock(m_);
  return static_cast<std::size_t>(
      std::count_if(log_.begin(), log_.end(), [](const SearchLogEntry& e) { return e.path == "/health"; }));
}

std::string MockSearchServer::log_tsv() const {
  std::ostringstream os;
  for (const auto& e : log()) os << e.arrival_us << '\t' << e.path << '\t' << e.query << '\t' << e.delay_us << '\n';
  return os.str();
}

// ---- websearch client ---------------------------------------------------------

namespace {

class WebSearchPlugin final : public ToolPlugin {
 public:
  explicit WebSearchPlugin(WebSearchConfig config) : config_(std::move(config)) {}

  void on_start(ToolContext&) override {
    client_ = std::make_unique<httplib::Client>(config_.base_url);
    const auto secs = static_cast<time_t>(config_.timeout_us / 1'000'000);
    const auto usecs = static_cast<time_t>(config_.timeout_us % 1'000'000);
    client_->set_connection_timeout(secs, usecs);
    client_->set_read_timeout(secs, usecs);
    client_->set_keep_alive(true);
    auto res = client_->Get("/health");
    if (!res) throw ToolError("cannot reach " + config_.base_url + ": " + httplib::to_string(res.error()));
    if (res->status >= 400) throw ToolError("search handshake failed with HTTP " + std::to_string(res->status));
  }

  PartialResult on_data(ToolContext& ctx, const DataPiece& piece) override {
    if (!piece.path.empty() && piece.path.back() != "query") return PartialResult::accepted();
    if (piece.text.empty()) throw ToolError("empty search query");
    auto res = client_->Get("/search", httplib::Params{{"q", piece.text}}, httplib::Headers{});
    if (!res) throw ToolError("search request failed: " + httplib::to_string(res.error()));
    if (res->has_header(kSimulatedDelayHeader) && ctx.clock_mode() == ClockMode::Virtual) {
      ctx.sleep_for(std::stoll(res->get_header_value(kSimulatedDelayHeader)));
    }
    if (res->status >= 400) throw ToolError("search returned HTTP " + std::to_string(res->status));
    results_.push_back(res->body);
    return PartialResult::accepted();
  }

  Observation on_finish(ToolContext&) override {
    if (results_.empty()) return Observation::failure("missing query");
    std::string out;
    for (std::size_t i = 0; i < results_.size(); ++i) {
      if (i) out += '\n';
      out += results_[i];
    }
    return Observation::ok(std::move(out));
  }

 private:
  WebSearchConfig config_;
  std::unique_ptr<httplib::Client> client_;
  std::vector<std::string> results_;
};

}  // namespace

ToolFactory make_websearch_factory(WebSearchConfig config) {
  return [config] { return std::make_unique<WebSearchPlugin>(config); };
}

}  // namespace tpx
