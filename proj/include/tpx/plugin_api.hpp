#pragma once

// The contract a tool implements to take part in partial execution, and the
// registry that binds grammar indicators to tool implementations.
//
// A tool wraps its logic in a ToolPlugin with three hooks: on_start when its
// invocation indicator is detected, on_data for each completed piece of input
// the parser extracts, and on_finish when the region closes. All hooks for one
// plugin instance run sequentially on that instance's worker.

#include <compare>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tpx/clock.hpp"
#include "tpx/error.hpp"
#include "tpx/stream_parser.hpp"

namespace tpx {

enum class Granularity { Line, Field, Stage, WholeCall };
enum class StartCondition { OnRegionOpen, OnNameParsed };

std::string_view to_string(Granularity g);
std::string_view to_string(StartCondition s);

/// Which indicator activates a tool: a fence language tag, a call name, or a
/// plan stage name, depending on the grammar.
struct Binding {
  GrammarId grammar = GrammarId::Fence;
  std::string key;

  auto operator<=>(const Binding&) const = default;
};

struct PluginDescriptor {
  std::string name;
  Binding binding;
  Granularity granularity = Granularity::Line;
  StartCondition start = StartCondition::OnRegionOpen;

  bool operator==(const PluginDescriptor&) const = default;
};

/// Throws Error(InvalidDescriptor) when granularity, start condition and
/// binding grammar do not fit together (Line/Fence, Field/Call, Stage/Plan,
/// WholeCall/Call; OnNameParsed only for Call).
void validate(const PluginDescriptor& d);

/// A completed unit of tool input. `path` is the object-key path for field
/// pieces and empty for line and stage pieces.
struct DataPiece {
  std::string text;
  std::vector<std::string> path;

  bool operator==(const DataPiece&) const = default;
};

enum class PartialStatus { Accepted, NeedMore, Abort };

struct PartialResult {
  PartialStatus status = PartialStatus::Accepted;
  std::string abort_reason;  // non-empty iff status == Abort

  static PartialResult accepted() { return {}; }
  static PartialResult need_more() { return {PartialStatus::NeedMore, {}}; }
  static PartialResult abort(std::string reason);

  bool operator==(const PartialResult&) const = default;
};

struct Observation {
  std::string text;
  bool success = true;
  std::optional<std::string> error_detail;  // present iff !success

  static Observation ok(std::string text) { return {std::move(text), true, std::nullopt}; }
  static Observation failure(std::string detail, std::string text = {}) {
    return {std::move(text), false, std::move(detail)};
  }

  bool operator==(const Observation&) const = default;
};

/// Raised from on_data/on_finish for recoverable tool errors; the job fails
/// with an error Observation while decoding carries on.
class ToolError : public Error {
 public:
  explicit ToolError(const std::string& what) : Error(ErrorCode::ToolRuntimeError, what) {}
};

/// Execution services offered to a running tool. `sleep_for` charges the
/// worker's own timeline: logical in virtual mode, a real (cancellable) sleep
/// otherwise.
class ToolContext {
 public:
  virtual ~ToolContext() = default;
  virtual Micros now() const = 0;
  virtual void sleep_for(Micros us) = 0;
  virtual bool stop_requested() const = 0;
  virtual ClockMode clock_mode() const = 0;
};

class ToolPlugin {
 public:
  virtual ~ToolPlugin() = default;

  /// Throw to signal a startup failure.
  virtual void on_start(ToolContext& ctx) = 0;
  virtual PartialResult on_data(ToolContext& ctx, const DataPiece& piece) = 0;
  virtual Observation on_finish(ToolContext& ctx) = 0;
};

using ToolFactory = std::function<std::unique_ptr<ToolPlugin>()>;

class Registry {
 public:
  /// Throws DuplicateName for a repeated name or binding, InvalidDescriptor
  /// for an inconsistent descriptor.
  void register_plugin(PluginDescriptor descriptor, ToolFactory factory);

  /// Throws UnknownTool when nothing is bound.
  const PluginDescriptor& lookup(const Binding& binding) const;
  const PluginDescriptor* find(const Binding& binding) const noexcept;
  const PluginDescriptor* find_name(std::string_view name) const noexcept;

  /// New plugin instance for a registered name; throws UnknownTool.
  std::unique_ptr<ToolPlugin> create(std::string_view name) const;

  /// Parser configuration for this registry's bindings of `id`.
  Grammar grammar_for(GrammarId id) const;

  std::vector<PluginDescriptor> descriptors() const;
  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    PluginDescriptor descriptor;
    ToolFactory factory;
  };
  std::map<std::string, Entry, std::less<>> entries_;
  std::map<Binding, std::string> by_binding_;
};

}  // namespace tpx
