#pragma once

// Deterministic tools covering each input granularity:
//
//   interp      line-by-line mini interpreter (fence regions)
//   calculator  arithmetic on a whole call or plan stage
//   validator   per-field schema check that can abort decoding
//   websearch   HTTP search issued as soon as the query field completes
//   kvdb        tab-separated table scan / get
//   formatter   #E<k> template substitution for plan stages
//
// Each tool keeps its logic in a plain class; the ToolPlugin adapters only map
// the three contract hooks onto it.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "tpx/expr.hpp"
#include "tpx/plugin_api.hpp"

namespace tpx {

// ---- interp ---------------------------------------------------------------

struct InterpConfig {
  /// Cost charged per statement kind: import, let, print, sleep, call, def, repeat.
  std::map<std::string, Micros, std::less<>> per_line_cost_us;
  /// Extra cost per imported module, on top of per_line_cost_us["import"].
  std::map<std::string, Micros, std::less<>> import_cost_us;
  /// Run every accepted line as a shell command instead of interpreting it.
  bool external_mode = false;
};

/// Statements: `import <module> [as <alias>]`, `sleep <ms>`, `let <id> = <expr>`,
/// `print <expr | "text">`, `call <proc>`. A line ending in ':' opens a block
/// (`def <proc>:` or `repeat <n>:`) that runs once a blank line arrives.
/// `#` starts a comment.
class Interpreter {
 public:
  explicit Interpreter(InterpConfig config = {}) : config_(std::move(config)) {}

  PartialResult feed_line(ToolContext& ctx, std::string_view line);
  Observation finish();

  const expr::Env& variables() const { return env_; }
  const std::vector<std::string>& imports() const { return imports_; }

 private:
  void execute(ToolContext& ctx, std::string_view statement);
  void run_block(ToolContext& ctx);
  void run_external(ToolContext& ctx, std::string_view command);
  void charge(ToolContext& ctx, std::string_view kind);

  InterpConfig config_;
  expr::Env env_;
  std::map<std::string, std::vector<std::string>, std::less<>> procs_;
  std::vector<std::string> imports_;
  std::vector<std::string> output_;
  std::optional<std::string> block_header_;
  std::vector<std::string> block_body_;
  int call_depth_ = 0;
};

// ---- calculator -----------------------------------------------------------

struct CalculatorConfig {
  Micros cost_us = 0;
};

// ---- validator ------------------------------------------------------------

struct ValidatorConfig {
  std::vector<std::string> required;
  /// field path (dot-joined) -> format name; only "city_state" is defined.
  std::map<std::string, std::string, std::less<>> formats;
  Micros cost_us = 0;
};

/// Empty when `value` is `<non-empty city>, <two uppercase letters>`,
/// otherwise the rejection reason.
std::optional<std::string> check_city_state(std::string_view value);

// ---- websearch ------------------------------------------------------------

struct WebSearchConfig {
  std::string base_url;
  Micros timeout_us = 30'000'000;
};

// ---- kvdb -----------------------------------------------------------------

struct KvdbConfig {
  std::filesystem::path table_path;
  Micros cost_us = 0;
};

struct KvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  /// Header line of column names, then tab-separated rows. Throws
  /// Error(InvalidConfig) if the file cannot be read.
  static KvTable load(const std::filesystem::path& path);
  std::string serialize_row(std::size_t i) const;
};

// ---- formatter ------------------------------------------------------------

struct FormatterConfig {
  std::map<std::string, std::string, std::less<>> variables;  // "E3" -> "3.1"
  Micros cost_us = 0;
};

/// Replaces each `#E<k>` with `variables["E<k>"]`; throws ToolError on an
/// undefined reference.
std::string substitute_refs(std::string_view text, const std::map<std::string, std::string, std::less<>>& variables);

/// Stage numbers referenced as `#E<k>` in order of appearance.
std::vector<int> find_refs(std::string_view text);

// ---- registration ---------------------------------------------------------

/// Names accepted by make_plugin_factory / register_builtin.
const std::vector<std::string>& builtin_tool_names();

/// Descriptor for a builtin tool bound to `binding`; granularity follows the
/// binding's grammar (Fence -> Line, Plan -> Stage, Call -> Field for
/// validator/websearch, WholeCall for calculator/kvdb).
PluginDescriptor builtin_descriptor(std::string_view tool, Binding binding);

/// Factory for a builtin tool configured from JSON; relative paths resolve
/// against `base_dir`. Throws Error(InvalidConfig) on an unknown tool or bad
/// settings.
ToolFactory make_plugin_factory(std::string_view tool, const nlohmann::json& config,
                                const std::filesystem::path& base_dir = {});

void register_builtin(Registry& registry, std::string_view tool, Binding binding, const nlohmann::json& config = {},
                      const std::filesystem::path& base_dir = {});

}  // namespace tpx
