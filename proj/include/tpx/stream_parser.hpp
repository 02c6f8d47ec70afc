#pragma once

// Incremental tool-message parser.
//
// The parser consumes the decoder's token stream one fragment at a time and
// emits semantic events as soon as the text seen so far implies them. Event
// output depends only on the concatenated text, never on how it was chunked:
// every event boundary sits on an ASCII delimiter, so split multi-byte
// characters and split sentinels are buffered until they resolve.

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tpx {

enum class GrammarId { Fence, Call, Plan };

std::string_view to_string(GrammarId id);
std::optional<GrammarId> parse_grammar_id(std::string_view name);

struct Token {
  std::string text;
  std::size_t index = 0;
};

enum class EventKind { PlainText, ToolStart, ToolData, ToolEnd, FieldComplete, Diagnostic, StreamEnd };
enum class EndReason { Eos, Aborted };
enum class DiagnosticCode { MalformedToolSyntax, UnclosedToolRegion, UnknownFenceTag };

std::string_view to_string(EventKind kind);
std::string_view to_string(DiagnosticCode code);

/// One semantic event. Fields not relevant to `kind` stay default-initialized.
///
/// `raw` holds the exact input bytes attributed to the event; concatenating
/// `raw` over a stream's events reproduces the stream's text.
struct ParserEvent {
  EventKind kind = EventKind::PlainText;
  GrammarId grammar = GrammarId::Fence;
  std::string tool;                 // resolved tool name (region events)
  std::string key;                  // binding key: fence tag, call name or stage name (ToolStart)
  std::string text;                 // PlainText text, ToolData piece, field value, diagnostic message
  std::vector<std::string> path;    // FieldComplete object-key path
  DiagnosticCode diagnostic = DiagnosticCode::MalformedToolSyntax;
  EndReason reason = EndReason::Eos;
  std::string raw;

  bool operator==(const ParserEvent&) const = default;
};

std::string describe(const ParserEvent& event);

/// Grammar selection and its settings. Exactly one grammar drives a parser.
struct Grammar {
  GrammarId id = GrammarId::Fence;
  /// Fence: language tag -> tool name. Tags not listed open a plain-text region.
  std::map<std::string, std::string> fence_tools;
  /// Call: sentinel that introduces `<sentinel> NAME {json}`.
  std::string call_sentinel = "@call";

  static Grammar fence(std::map<std::string, std::string> tools) {
    Grammar g;
    g.id = GrammarId::Fence;
    g.fence_tools = std::move(tools);
    return g;
  }
  static Grammar call() {
    Grammar g;
    g.id = GrammarId::Call;
    return g;
  }
  static Grammar plan() {
    Grammar g;
    g.id = GrammarId::Plan;
    return g;
  }
};

/// A plan stage line `#E<k> = <Name>[<args>]`, split into its parts.
struct PlanStage {
  int index = 0;
  std::string tool;
  std::string args;
};

std::optional<PlanStage> match_plan_stage(std::string_view line);

class StreamParser {
 public:
  explicit StreamParser(Grammar grammar);
  ~StreamParser();
  StreamParser(StreamParser&&) noexcept;
  StreamParser& operator=(StreamParser&&) noexcept;

  /// Consumes one token and returns every event its text completes.
  /// Throws Error(ParserFinalized) after flush() or abort().
  std::vector<ParserEvent> feed(const Token& token);
  std::vector<ParserEvent> feed(std::string_view text);

  /// End of stream: emits the final buffered piece, force-closes an open
  /// region with a warning, and ends with StreamEnd(Eos).
  std::vector<ParserEvent> flush();

  /// Decoding was cancelled; drops buffered text and emits StreamEnd(Aborted).
  std::vector<ParserEvent> abort();

  bool finalized() const;
  bool in_region() const;
  const Grammar& grammar() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Reference parse: the whole text as a single token, then flush().
std::vector<ParserEvent> parse_whole(std::string_view text, const Grammar& grammar);

}  // namespace tpx
