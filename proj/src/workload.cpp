#include "tpx/workload.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>

#include "tpx/builtin_tools.hpp"

#ifndef TPX_FIXTURES_DIR
#define TPX_FIXTURES_DIR "fixtures"
#endif

namespace tpx {

namespace {

[[noreturn]] void bad(const std::string& why) { throw Error(ErrorCode::InvalidConfig, "workload: " + why); }

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_relative() ? (base / path).lexically_normal() : path;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

}  // namespace

WorkloadSpec WorkloadSpec::from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  if (!doc.is_object()) bad("document must be an object");
  WorkloadSpec s;
  s.base_dir = base_dir;
  try {
    s.name = doc.at("name").get<std::string>();
    s.description = doc.value("description", std::string{});
    s.prompt = doc.value("prompt", std::string{});
    s.trace_path = resolve(base_dir, doc.at("trace").get<std::string>());

    auto grammar = parse_grammar_id(doc.at("grammar").get<std::string>());
    if (!grammar) bad("unknown grammar '" + doc["grammar"].get<std::string>() + "'");
    s.grammar = *grammar;

    std::string clock = doc.value("clock", std::string("virtual"));
    if (clock == "virtual") {
      s.clock = ClockMode::Virtual;
    } else if (clock == "real") {
      s.clock = ClockMode::Real;
    } else {
      bad("unknown clock '" + clock + "'");
    }

    if (doc.contains("modes")) {
      s.modes.clear();
      for (const auto& m : doc["modes"]) {
        auto mode = parse_serve_mode(m.get<std::string>());
        if (!mode) bad("unknown mode '" + m.get<std::string>() + "'");
        s.modes.push_back(*mode);
      }
      if (s.modes.empty()) bad("'modes' is empty");
    }
    s.max_rounds = doc.value("max_rounds", 8);
    if (s.max_rounds < 1) bad("max_rounds must be at least 1");

    if (doc.contains("search_fixture")) s.search_fixture = resolve(base_dir, doc["search_fixture"].get<std::string>());
    if (doc.contains("startup_us")) {
      for (const auto& [k, v] : doc["startup_us"].items()) {
        if (v.get<Micros>() < 0) bad("negative startup_us for '" + k + "'");
        s.startup_us[k] = v.get<Micros>();
      }
    }
    for (const auto& t : doc.at("tools")) {
      ToolSpec ts;
      ts.tool = t.at("tool").get<std::string>();
      ts.name = t.value("name", ts.tool);
      ts.bind = t.at("bind").get<std::string>();
      if (t.contains("config")) ts.config = t["config"];
      s.tools.push_back(std::move(ts));
    }
  } catch (const nlohmann::json::exception& e) {
    bad(e.what());
  }
  if (!std::filesystem::exists(s.trace_path)) bad("trace file " + s.trace_path.string() + " does not exist");
  if (s.search_fixture && !std::filesystem::exists(*s.search_fixture)) {
    bad("search fixture " + s.search_fixture->string() + " does not exist");
  }
  return s;
}

WorkloadSpec WorkloadSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) bad("cannot open " + path.string());
  auto doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded()) bad(path.string() + " is not valid JSON");
  return from_json(doc, path.parent_path());
}

std::filesystem::path fixtures_dir() {
  if (const char* env = std::getenv("TPX_FIXTURES")) return env;
  return TPX_FIXTURES_DIR;
}

const std::vector<std::string>& bundled_workloads() {
  static const std::vector<std::string> names = {"CodeGen", "Search", "Planning", "Validation", "Database", "Calculator"};
  return names;
}

std::filesystem::path resolve_workload(std::string_view name_or_path) {
  for (const auto& n : bundled_workloads()) {
    if (lower(n) == lower(name_or_path)) return fixtures_dir() / "workloads" / (lower(n) + ".json");
  }
  std::filesystem::path p(name_or_path);
  if (std::filesystem::is_regular_file(p)) return p;
  throw Error(ErrorCode::InvalidConfig, "no workload named '" + std::string(name_or_path) + "' and no such file");
}

WorkloadHarness::WorkloadHarness(WorkloadSpec spec, std::optional<ClockMode> clock_override)
    : spec_(std::move(spec)), clock_(clock_override.value_or(spec_.clock)), trace_(DecodeTrace::load(spec_.trace_path)) {
  if (spec_.search_fixture) {
    auto cfg = MockSearchConfig::load(*spec_.search_fixture);
    cfg.simulate_delay = clock_ == ClockMode::Virtual;
    server_ = std::make_unique<MockSearchServer>(std::move(cfg));
    server_->start();
  }
  for (const auto& t : spec_.tools) {
    nlohmann::json config = t.config;
    if (t.tool == "websearch" && !config.contains("base_url")) {
      if (!server_) bad("websearch tool '" + t.name + "' needs a base_url or a search_fixture");
      config["base_url"] = server_->base_url();
    }
    PluginDescriptor d = builtin_descriptor(t.tool, Binding{spec_.grammar, t.bind});
    d.name = t.name;
    registry_.register_plugin(std::move(d), make_plugin_factory(t.tool, config, spec_.base_dir));
  }
}

WorkloadHarness::~WorkloadHarness() = default;

ServeResult WorkloadHarness::run(ServeMode mode, ServeOptions options) const {
  std::unique_ptr<Clock> clock;
  if (clock_ == ClockMode::Virtual) {
    clock = std::make_unique<VirtualClock>();
  } else {
    clock = std::make_unique<RealClock>();
  }
  SimulatedDecoder decoder(trace_, *clock);
  Request req;
  req.id = spec_.name;
  req.prompt = spec_.prompt;
  req.mode = mode;
  req.grammar = registry_.grammar_for(spec_.grammar);
  req.max_rounds = spec_.max_rounds;
  for (const auto& [k, v] : spec_.startup_us) options.runtime.startup_us[k] = v;
  return serve(req, decoder, registry_, *clock, options);
}

}  // namespace tpx
