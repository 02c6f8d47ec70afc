#include "tpx/builtin_tools.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sys/wait.h>

namespace tpx {

ToolFactory make_websearch_factory(WebSearchConfig config);  // search.cpp

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string_view strip_comment(std::string_view line) {
  auto hash = line.find('#');
  return hash == std::string_view::npos ? line : line.substr(0, hash);
}

bool starts_with_word(std::string_view s, std::string_view word) {
  return s.size() >= word.size() && s.substr(0, word.size()) == word &&
         (s.size() == word.size() || std::isspace(static_cast<unsigned char>(s[word.size()])));
}

bool is_identifier(std::string_view s) {
  if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
  return std::all_of(s.begin(), s.end(),
                     [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; });
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace

// ---- interp ---------------------------------------------------------------

void Interpreter::charge(ToolContext& ctx, std::string_view kind) {
  if (auto it = config_.per_line_cost_us.find(kind); it != config_.per_line_cost_us.end()) {
    ctx.sleep_for(it->second);
  }
}

PartialResult Interpreter::feed_line(ToolContext& ctx, std::string_view line) {
  if (config_.external_mode) {
    std::string_view cmd = trim(line);
    if (!cmd.empty()) run_external(ctx, cmd);
    return PartialResult::accepted();
  }
  std::string_view code = trim(strip_comment(line));
  if (block_header_) {
    if (code.empty()) {
      run_block(ctx);
      return PartialResult::accepted();
    }
    if (code.back() == ':') throw ToolError("nested blocks are not supported: '" + std::string(code) + "'");
    block_body_.emplace_back(code);
    return PartialResult::need_more();
  }
  if (code.empty()) return PartialResult::accepted();
  if (code.back() == ':') {
    block_header_ = std::string(code.substr(0, code.size() - 1));
    block_body_.clear();
    return PartialResult::need_more();
  }
  execute(ctx, code);
  return PartialResult::accepted();
}

void Interpreter::run_block(ToolContext& ctx) {
  std::string header(trim(*block_header_));
  auto body = std::move(block_body_);
  block_header_.reset();
  block_body_.clear();

  if (starts_with_word(header, "def")) {
    std::string_view name = trim(std::string_view(header).substr(3));
    if (!is_identifier(name)) throw ToolError("bad procedure name in '" + header + "'");
    charge(ctx, "def");
    procs_[std::string(name)] = std::move(body);
    return;
  }
  if (starts_with_word(header, "repeat")) {
    double n = expr::evaluate(trim(std::string_view(header).substr(6)), env_);
    if (n < 0 || n != static_cast<double>(static_cast<long long>(n))) {
      throw ToolError("repeat count must be a non-negative integer");
    }
    charge(ctx, "repeat");
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
      for (const auto& stmt : body) execute(ctx, stmt);
    }
    return;
  }
  throw ToolError("unknown block '" + header + ":'");
}

void Interpreter::execute(ToolContext& ctx, std::string_view stmt) {
  if (starts_with_word(stmt, "import")) {
    std::string_view rest = trim(stmt.substr(6));
    auto space = rest.find(' ');
    std::string_view module = rest.substr(0, space);
    if (module.empty()) throw ToolError("import needs a module name");
    if (space != std::string_view::npos) {
      std::string_view tail = trim(rest.substr(space));
      if (!starts_with_word(tail, "as") || !is_identifier(trim(tail.substr(2)))) {
        throw ToolError("bad import statement '" + std::string(stmt) + "'");
      }
    }
    charge(ctx, "import");
    if (auto it = config_.import_cost_us.find(module); it != config_.import_cost_us.end()) ctx.sleep_for(it->second);
    imports_.emplace_back(module);
    return;
  }
  if (starts_with_word(stmt, "sleep")) {
    double ms = expr::evaluate(trim(stmt.substr(5)), env_);
    if (ms < 0) throw ToolError("negative sleep");
    charge(ctx, "sleep");
    ctx.sleep_for(static_cast<Micros>(ms * 1000.0 + 0.5));
    return;
  }
  if (starts_with_word(stmt, "let")) {
    std::string_view rest = trim(stmt.substr(3));
    auto eq = rest.find('=');
    if (eq == std::string_view::npos) throw ToolError("let needs '='");
    std::string_view name = trim(rest.substr(0, eq));
    if (!is_identifier(name)) throw ToolError("bad variable name '" + std::string(name) + "'");
    double v = expr::evaluate(rest.substr(eq + 1), env_);
    charge(ctx, "let");
    env_[std::string(name)] = v;
    return;
  }
  if (starts_with_word(stmt, "print")) {
    std::string_view arg = trim(stmt.substr(5));
    charge(ctx, "print");
    if (arg.size() >= 2 && arg.front() == '"' && arg.back() == '"') {
      output_.emplace_back(arg.substr(1, arg.size() - 2));
    } else {
      output_.push_back(expr::format_number(expr::evaluate(arg, env_)));
    }
    return;
  }
  if (starts_with_word(stmt, "call")) {
    std::string_view name = trim(stmt.substr(4));
    auto it = procs_.find(name);
    if (it == procs_.end()) throw ToolError("undefined procedure '" + std::string(name) + "'");
    if (call_depth_ >= 32) throw ToolError("call depth exceeded");
    charge(ctx, "call");
    ++call_depth_;
    for (const auto& s : it->second) execute(ctx, s);
    --call_depth_;
    return;
  }
  throw ToolError("cannot parse statement '" + std::string(stmt) + "'");
}

void Interpreter::run_external(ToolContext& ctx, std::string_view command) {
  std::string cmd(command);
  cmd += " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) throw ToolError("cannot run '" + std::string(command) + "'");
  std::string out;
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) out.append(buf.data(), n);
  int status = ::pclose(pipe);
  while (!out.empty() && out.back() == '\n') out.pop_back();
  charge(ctx, "external");
  if (status == -1 || !WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    throw ToolError("command '" + std::string(command) + "' failed: " + out);
  }
  if (!out.empty()) output_.push_back(std::move(out));
}

Observation Interpreter::finish() {
  if (block_header_) {
    return Observation::failure("incomplete input: block '" + *block_header_ + ":' was never closed",
                                join(output_, "\n"));
  }
  return Observation::ok(join(output_, "\n"));
}

// ---- validator ------------------------------------------------------------

std::optional<std::string> check_city_state(std::string_view value) {
  auto comma = value.rfind(", ");
  if (comma == std::string_view::npos) return "missing state code";
  std::string_view city = trim(value.substr(0, comma));
  std::string_view state = value.substr(comma + 2);
  if (state.size() != 2 || !std::isupper(static_cast<unsigned char>(state[0])) ||
      !std::isupper(static_cast<unsigned char>(state[1]))) {
    return "missing state code";
  }
  if (city.empty()) return "missing city name";
  return std::nullopt;
}

// ---- kvdb -----------------------------------------------------------------

namespace {

std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  for (;;) {
    auto tab = line.find('\t', pos);
    out.emplace_back(line.substr(pos, tab - pos));
    if (tab == std::string_view::npos) break;
    pos = tab + 1;
  }
  return out;
}

}  // namespace

KvTable KvTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidConfig, "cannot open table " + path.string());
  KvTable table;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (header) {
      table.columns = split_tabs(line);
      header = false;
      continue;
    }
    if (line.empty()) continue;
    table.rows.push_back(split_tabs(line));
  }
  if (header) throw Error(ErrorCode::InvalidConfig, "table " + path.string() + " has no header line");
  return table;
}

std::string KvTable::serialize_row(std::size_t i) const { return join(rows.at(i), "\t"); }

// ---- formatter ------------------------------------------------------------

std::vector<int> find_refs(std::string_view text) {
  std::vector<int> refs;
  for (std::size_t i = 0; i + 2 < text.size() + 1; ++i) {
    if (text.substr(i, 2) != "#E") continue;
    std::size_t j = i + 2;
    while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i + 2 && j - i - 2 <= 6) refs.push_back(std::stoi(std::string(text.substr(i + 2, j - i - 2))));
  }
  return refs;
}

std::string substitute_refs(std::string_view text, const std::map<std::string, std::string, std::less<>>& vars) {
  std::string out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text.substr(i, 2) == "#E") {
      std::size_t j = i + 2;
      while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
      if (j > i + 2) {
        std::string key(text.substr(i + 1, j - i - 1));
        auto it = vars.find(key);
        if (it == vars.end()) throw ToolError("undefined reference #" + key);
        out += it->second;
        i = j;
        continue;
      }
    }
    out += text[i++];
  }
  return out;
}

// ---- plugin adapters --------------------------------------------------------

namespace {

class InterpPlugin final : public ToolPlugin {
 public:
  explicit InterpPlugin(InterpConfig config) : interp_(std::move(config)) {}
  void on_start(ToolContext&) override {}
  PartialResult on_data(ToolContext& ctx, const DataPiece& piece) override { return interp_.feed_line(ctx, piece.text); }
  Observation on_finish(ToolContext&) override { return interp_.finish(); }

 private:
  Interpreter interp_;
};

class CalculatorPlugin final : public ToolPlugin {
 public:
  explicit CalculatorPlugin(CalculatorConfig config) : config_(config) {}
  void on_start(ToolContext&) override {}
  PartialResult on_data(ToolContext& ctx, const DataPiece& piece) override {
    ctx.sleep_for(config_.cost_us);
    results_.push_back(expr::format_number(expr::evaluate(piece.text)));
    return PartialResult::accepted();
  }
  Observation on_finish(ToolContext&) override {
    if (results_.empty()) return Observation::failure("no expression received");
    return Observation::ok(join(results_, "\n"));
  }

 private:
  CalculatorConfig config_;
  std::vector<std::string> results_;
};

class ValidatorPlugin final : public ToolPlugin {
 public:
  explicit ValidatorPlugin(ValidatorConfig config) : config_(std::move(config)) {}
  void on_start(ToolContext&) override {}
  PartialResult on_data(ToolContext& ctx, const DataPiece& piece) override {
    ctx.sleep_for(config_.cost_us);
    std::string field = join(piece.path, ".");
    if (field.empty()) field = "value";
    if (auto fmt = config_.formats.find(field); fmt != config_.formats.end()) {
      if (fmt->second == "city_state") {
        if (auto why = check_city_state(piece.text)) return PartialResult::abort(*why);
      }
    }
    seen_.push_back(field);
    return PartialResult::accepted();
  }
  Observation on_finish(ToolContext&) override {
    for (const auto& req : config_.required) {
      if (std::find(seen_.begin(), seen_.end(), req) == seen_.end()) {
        return Observation::failure("missing required field: " + req);
      }
    }
    return Observation::ok("valid");
  }

 private:
  ValidatorConfig config_;
  std::vector<std::string> seen_;
};

class KvdbPlugin final : public ToolPlugin {
 public:
  explicit KvdbPlugin(KvdbConfig config) : config_(std::move(config)) {}
  void on_start(ToolContext&) override { table_ = KvTable::load(config_.table_path); }
  PartialResult on_data(ToolContext&, const DataPiece& piece) override {
    fields_[join(piece.path, ".")] = piece.text;
    return PartialResult::accepted();
  }
  Observation on_finish(ToolContext& ctx) override {
    ctx.sleep_for(config_.cost_us);
    std::string op = fields_.count("op") ? fields_["op"] : "scan";
    if (op == "scan") {
      std::vector<std::string> rows;
      for (std::size_t i = 0; i < table_.rows.size(); ++i) rows.push_back(table_.serialize_row(i));
      return Observation::ok(join(rows, "\n"));
    }
    if (op == "get") {
      auto key = fields_.find("key");
      if (key == fields_.end()) return Observation::failure("get needs a key");
      for (std::size_t i = 0; i < table_.rows.size(); ++i) {
        if (!table_.rows[i].empty() && table_.rows[i][0] == key->second) return Observation::ok(table_.serialize_row(i));
      }
      return Observation::failure("key not found: " + key->second);
    }
    return Observation::failure("unknown op: " + op);
  }

 private:
  KvdbConfig config_;
  KvTable table_;
  std::map<std::string, std::string> fields_;
};

class FormatterPlugin final : public ToolPlugin {
 public:
  explicit FormatterPlugin(FormatterConfig config) : config_(std::move(config)) {}
  void on_start(ToolContext&) override {}
  PartialResult on_data(ToolContext& ctx, const DataPiece& piece) override {
    ctx.sleep_for(config_.cost_us);
    results_.push_back(substitute_refs(piece.text, config_.variables));
    return PartialResult::accepted();
  }
  Observation on_finish(ToolContext&) override {
    if (results_.empty()) return Observation::failure("no template received");
    return Observation::ok(join(results_, "\n"));
  }

 private:
  FormatterConfig config_;
  std::vector<std::string> results_;
};

std::map<std::string, Micros, std::less<>> read_cost_map(const nlohmann::json& j) {
  std::map<std::string, Micros, std::less<>> out;
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "cost map must be an object");
  for (const auto& [k, v] : j.items()) {
    Micros us = v.get<Micros>();
    if (us < 0) throw Error(ErrorCode::InvalidConfig, "negative cost for '" + k + "'");
    out[k] = us;
  }
  return out;
}

Micros read_cost(const nlohmann::json& config, const char* key) {
  Micros us = config.value(key, Micros{0});
  if (us < 0) throw Error(ErrorCode::InvalidConfig, std::string("negative ") + key);
  return us;
}

}  // namespace

const std::vector<std::string>& builtin_tool_names() {
  static const std::vector<std::string> names = {"interp", "calculator", "validator", "websearch", "kvdb", "formatter"};
  return names;
}

PluginDescriptor builtin_descriptor(std::string_view tool, Binding binding) {
  PluginDescriptor d;
  d.name = std::string(tool);
  d.binding = binding;
  switch (binding.grammar) {
    case GrammarId::Fence:
      d.granularity = Granularity::Line;
      d.start = StartCondition::OnRegionOpen;
      break;
    case GrammarId::Plan:
      d.granularity = Granularity::Stage;
      d.start = StartCondition::OnRegionOpen;
      break;
    case GrammarId::Call:
      d.granularity = (tool == "calculator" || tool == "kvdb") ? Granularity::WholeCall : Granularity::Field;
      d.start = StartCondition::OnNameParsed;
      break;
  }
  return d;
}

ToolFactory make_plugin_factory(std::string_view tool, const nlohmann::json& raw, const std::filesystem::path& base_dir) {
  const nlohmann::json config = raw.is_null() ? nlohmann::json::object() : raw;
  try {
    if (tool == "interp") {
      InterpConfig c;
      if (config.contains("per_line_cost_us")) {
        c.per_line_cost_us = read_cost_map(config["per_line_cost_us"]);
      }
      if (config.contains("import_cost_us")) {
        c.import_cost_us = read_cost_map(config["import_cost_us"]);
      }
      c.external_mode = config.value("external_mode", false);
      return [c] { return std::make_unique<InterpPlugin>(c); };
    }
    if (tool == "calculator") {
      CalculatorConfig c{read_cost(config, "cost_us")};
      return [c] { return std::make_unique<CalculatorPlugin>(c); };
    }
    if (tool == "validator") {
      ValidatorConfig c;
      c.required = config.value("required", std::vector<std::string>{});
      if (config.contains("formats")) {
        for (const auto& [k, v] : config["formats"].items()) {
          if (v.get<std::string>() != "city_state") {
            throw Error(ErrorCode::InvalidConfig, "unknown format '" + v.get<std::string>() + "'");
          }
          c.formats[k] = v.get<std::string>();
        }
      }
      c.cost_us = read_cost(config, "cost_us");
      return [c] { return std::make_unique<ValidatorPlugin>(c); };
    }
    if (tool == "websearch") {
      WebSearchConfig c;
      c.base_url = config.value("base_url", std::string{});
      if (c.base_url.empty()) throw Error(ErrorCode::InvalidConfig, "websearch needs base_url");
      return make_websearch_factory(c);
    }
    if (tool == "kvdb") {
      KvdbConfig c;
      std::filesystem::path p = config.value("table_path", std::string{});
      if (p.empty()) throw Error(ErrorCode::InvalidConfig, "kvdb needs table_path");
      c.table_path = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
      if (!std::filesystem::exists(c.table_path)) {
        throw Error(ErrorCode::InvalidConfig, "kvdb table " + c.table_path.string() + " does not exist");
      }
      c.cost_us = read_cost(config, "cost_us");
      return [c] { return std::make_unique<KvdbPlugin>(c); };
    }
    if (tool == "formatter") {
      FormatterConfig c;
      if (config.contains("variables")) {
        for (const auto& [k, v] : config["variables"].items()) c.variables[k] = v.get<std::string>();
      }
      c.cost_us = read_cost(config, "cost_us");
      return [c] { return std::make_unique<FormatterPlugin>(c); };
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string(tool) + " config: " + e.what());
  }
  throw Error(ErrorCode::InvalidConfig, "unknown builtin tool '" + std::string(tool) + "'");
}

void register_builtin(Registry& registry, std::string_view tool, Binding binding, const nlohmann::json& config,
                      const std::filesystem::path& base_dir) {
  registry.register_plugin(builtin_descriptor(tool, std::move(binding)), make_plugin_factory(tool, config, base_dir));
}

}  // namespace tpx
