#include "tpx/stream_parser.hpp"

#include <cctype>
#include <sstream>

#include "tpx/error.hpp"

namespace tpx {

std::string_view to_string(GrammarId id) {
  switch (id) {
    case GrammarId::Fence: return "fence";
    case GrammarId::Call: return "call";
    case GrammarId::Plan: return "plan";
  }
  return "?";
}

std::optional<GrammarId> parse_grammar_id(std::string_view name) {
  if (name == "fence") return GrammarId::Fence;
  if (name == "call") return GrammarId::Call;
  if (name == "plan") return GrammarId::Plan;
  return std::nullopt;
}

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::PlainText: return "PlainText";
    case EventKind::ToolStart: return "ToolStart";
    case EventKind::ToolData: return "ToolData";
    case EventKind::ToolEnd: return "ToolEnd";
    case EventKind::FieldComplete: return "FieldComplete";
    case EventKind::Diagnostic: return "Diagnostic";
    case EventKind::StreamEnd: return "StreamEnd";
  }
  return "?";
}

std::string_view to_string(DiagnosticCode code) {
  switch (code) {
    case DiagnosticCode::MalformedToolSyntax: return "MalformedToolSyntax";
    case DiagnosticCode::UnclosedToolRegion: return "UnclosedToolRegion";
    case DiagnosticCode::UnknownFenceTag: return "UnknownFenceTag";
  }
  return "?";
}

std::string describe(const ParserEvent& e) {
  std::ostringstream os;
  os << to_string(e.kind) << '(';
  switch (e.kind) {
    case EventKind::PlainText: os << '"' << e.text << '"'; break;
    case EventKind::ToolStart: os << e.tool << ", key=" << e.key; break;
    case EventKind::ToolData: os << e.tool << ", \"" << e.text << '"'; break;
    case EventKind::ToolEnd: os << e.tool; break;
    case EventKind::FieldComplete: {
      os << e.tool << ", [";
      for (std::size_t i = 0; i < e.path.size(); ++i) os << (i ? "," : "") << e.path[i];
      os << "], \"" << e.text << '"';
      break;
    }
    case EventKind::Diagnostic: os << to_string(e.diagnostic) << ", " << e.text; break;
    case EventKind::StreamEnd: os << (e.reason == EndReason::Eos ? "Eos" : "Aborted"); break;
  }
  os << ')';
  return os.str();
}

namespace {

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }
bool is_json_ws(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }
bool is_number_char(char c) {
  return std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '+' || c == '.' || c == 'e' ||
         c == 'E';
}

// JSON number grammar: -?(0|[1-9][0-9]*)(\.[0-9]+)?([eE][+-]?[0-9]+)?
bool valid_json_number(std::string_view s) {
  std::size_t i = 0;
  auto digit = [&](std::size_t k) { return k < s.size() && std::isdigit(static_cast<unsigned char>(s[k])); };
  if (i < s.size() && s[i] == '-') ++i;
  if (!digit(i)) return false;
  if (s[i] == '0') {
    ++i;
  } else {
    while (digit(i)) ++i;
  }
  if (i < s.size() && s[i] == '.') {
    ++i;
    if (!digit(i)) return false;
    while (digit(i)) ++i;
  }
  if (i < s.size() && (s[i] == 'e' || s[i] == 'E')) {
    ++i;
    if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
    if (!digit(i)) return false;
    while (digit(i)) ++i;
  }
  return i == s.size();
}

void append_utf8(std::string& out, unsigned cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

std::string_view strip_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

std::optional<PlanStage> match_plan_stage(std::string_view line) {
  line = strip_cr(line);
  std::size_t i = 0;
  if (line.substr(0, 2) != "#E") return std::nullopt;
  i = 2;
  std::size_t digits_begin = i;
  while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
  if (i == digits_begin || i - digits_begin > 6) return std::nullopt;
  PlanStage stage;
  stage.index = std::stoi(std::string(line.substr(digits_begin, i - digits_begin)));
  if (line.substr(i, 3) != " = ") return std::nullopt;
  i += 3;
  std::size_t name_begin = i;
  if (i >= line.size() || !is_ident_start(line[i])) return std::nullopt;
  while (i < line.size() && is_ident_char(line[i])) ++i;
  stage.tool = std::string(line.substr(name_begin, i - name_begin));
  if (i >= line.size() || line[i] != '[' || line.back() != ']') return std::nullopt;
  stage.args = std::string(line.substr(i + 1, line.size() - i - 2));
  return stage;
}

struct StreamParser::Impl {
  enum class Phase {
    // line-oriented grammars and call-grammar plain text
    Plain,
    FenceRegion,
    FenceUnknown,
    // call grammar
    Sentinel,
    Name,
    ExpectObject,
    ExpectKeyOrClose,
    ExpectKey,
    InKey,
    ExpectColon,
    ExpectValue,
    InString,
    InNumber,
    InLiteral,
    AfterValue,
  };

  Grammar grammar;
  Phase phase = Phase::Plain;
  bool done = false;

  std::string pending;  // consumed bytes not yet attributed to an event
  std::string line;     // current line content (line grammars)

  // Fence region
  std::string region_tool;
  std::string region_key;

  // Call grammar
  std::size_t sentinel_at = 0;   // offset of the sentinel inside `pending`
  std::size_t matched = 0;       // sentinel characters matched so far
  std::string name;
  std::vector<std::string> keys;  // enclosing object keys
  std::string current_key;
  std::string scalar;             // string/number/literal value under construction
  std::string literal_target;
  bool escape = false;
  int unicode_digits = -1;        // >=0 while reading \uXXXX
  unsigned unicode_value = 0;
  unsigned high_surrogate = 0;
  int depth = 0;

  std::vector<ParserEvent>* out = nullptr;

  explicit Impl(Grammar g) : grammar(std::move(g)) {}

  ParserEvent make(EventKind kind) {
    ParserEvent e;
    e.kind = kind;
    e.grammar = grammar.id;
    return e;
  }

  std::string take_pending() {
    std::string r;
    r.swap(pending);
    return r;
  }

  void emit_plain(std::string text, std::string raw) {
    auto e = make(EventKind::PlainText);
    e.text = std::move(text);
    e.raw = std::move(raw);
    out->push_back(std::move(e));
  }

  void emit_pending_plain() {
    std::string raw = take_pending();
    std::string text = raw;
    emit_plain(std::move(text), std::move(raw));
  }

  void emit_tool(EventKind kind, const std::string& tool, std::string text, std::string raw) {
    auto e = make(kind);
    e.tool = tool;
    e.text = std::move(text);
    e.raw = std::move(raw);
    out->push_back(std::move(e));
  }

  void emit_diag(DiagnosticCode code, const std::string& tool, std::string message, std::string raw) {
    auto e = make(EventKind::Diagnostic);
    e.diagnostic = code;
    e.tool = tool;
    e.text = std::move(message);
    e.raw = std::move(raw);
    out->push_back(std::move(e));
  }

  void emit_start(const std::string& tool, const std::string& key, std::string raw) {
    auto e = make(EventKind::ToolStart);
    e.tool = tool;
    e.key = key;
    e.raw = std::move(raw);
    out->push_back(std::move(e));
  }

  // ---- line grammars -------------------------------------------------------

  void fence_line() {
    std::string_view body = strip_cr(line);
    switch (phase) {
      case Phase::Plain: {
        if (body.size() > 3 && body.substr(0, 3) == "```") {
          std::string tag = trim(body.substr(3));
          if (!tag.empty() && tag.find('`') == std::string::npos) {
            auto it = grammar.fence_tools.find(tag);
            if (it != grammar.fence_tools.end()) {
              region_tool = it->second;
              region_key = tag;
              emit_start(region_tool, region_key, take_pending());
              phase = Phase::FenceRegion;
              return;
            }
            emit_diag(DiagnosticCode::UnknownFenceTag, "", "unknown fence tag '" + tag + "'", "");
            phase = Phase::FenceUnknown;
          }
        }
        emit_plain(line + '\n', take_pending());
        return;
      }
      case Phase::FenceRegion:
        if (body == "```") {
          emit_tool(EventKind::ToolEnd, region_tool, "", take_pending());
          phase = Phase::Plain;
        } else {
          emit_tool(EventKind::ToolData, region_tool, std::string(body), take_pending());
        }
        return;
      case Phase::FenceUnknown:
        if (body == "```") phase = Phase::Plain;
        emit_plain(line + '\n', take_pending());
        return;
      default:
        return;
    }
  }

  void plan_line(bool terminated) {
    std::string text = terminated ? line + '\n' : line;
    if (auto stage = match_plan_stage(line)) {
      emit_start(stage->tool, stage->tool, "");
      emit_tool(EventKind::ToolData, stage->tool, std::string(strip_cr(line)), take_pending());
      emit_tool(EventKind::ToolEnd, stage->tool, "", "");
    } else {
      emit_plain(std::move(text), take_pending());
    }
  }

  void line_char(char c) {
    pending += c;
    if (c != '\n') {
      line += c;
      return;
    }
    if (grammar.id == GrammarId::Fence) {
      fence_line();
    } else {
      plan_line(true);
    }
    line.clear();
  }

  // ---- call grammar --------------------------------------------------------

  void malformed(const std::string& why) {
    emit_diag(DiagnosticCode::MalformedToolSyntax, name, why, take_pending());
    emit_tool(EventKind::ToolEnd, name, "", "");
    reset_call();
  }

  void reset_call() {
    phase = Phase::Plain;
    keys.clear();
    current_key.clear();
    scalar.clear();
    escape = false;
    unicode_digits = -1;
    high_surrogate = 0;
    depth = 0;
  }

  void field_complete(std::string value) {
    auto e = make(EventKind::FieldComplete);
    e.tool = name;
    e.path = keys;
    e.path.push_back(current_key);
    e.text = std::move(value);
    e.raw = take_pending();
    out->push_back(std::move(e));
  }

  void close_object() {
    --depth;
    if (depth == 0) {
      emit_tool(EventKind::ToolEnd, name, "", take_pending());
      reset_call();
      return;
    }
    current_key = keys.back();
    keys.pop_back();
    phase = Phase::AfterValue;
  }

  // Handles one byte of a JSON string body (key or value). Returns true when
  // the closing quote was consumed.
  bool string_char(char c) {
    if (unicode_digits >= 0) {
      int v;
      if (c >= '0' && c <= '9') v = c - '0';
      else if (c >= 'a' && c <= 'f') v = c - 'a' + 10;
      else if (c >= 'A' && c <= 'F') v = c - 'A' + 10;
      else {
        malformed("invalid \\u escape");
        return false;
      }
      unicode_value = unicode_value * 16 + static_cast<unsigned>(v);
      if (++unicode_digits == 4) {
        unicode_digits = -1;
        if (unicode_value >= 0xD800 && unicode_value < 0xDC00) {
          high_surrogate = unicode_value;
        } else if (unicode_value >= 0xDC00 && unicode_value < 0xE000 && high_surrogate) {
          append_utf8(scalar, 0x10000 + ((high_surrogate - 0xD800) << 10) + (unicode_value - 0xDC00));
          high_surrogate = 0;
        } else {
          append_utf8(scalar, unicode_value);
        }
      }
      return false;
    }
    if (escape) {
      escape = false;
      switch (c) {
        case '"': scalar += '"'; break;
        case '\\': scalar += '\\'; break;
        case '/': scalar += '/'; break;
        case 'b': scalar += '\b'; break;
        case 'f': scalar += '\f'; break;
        case 'n': scalar += '\n'; break;
        case 'r': scalar += '\r'; break;
        case 't': scalar += '\t'; break;
        case 'u':
          unicode_digits = 0;
          unicode_value = 0;
          break;
        default: malformed(std::string("invalid escape \\") + c); break;
      }
      return false;
    }
    if (c == '\\') {
      escape = true;
      return false;
    }
    if (c == '"') return true;
    if (static_cast<unsigned char>(c) < 0x20) {
      malformed("control character in string");
      return false;
    }
    scalar += c;
    return false;
  }

  void call_char(char c) {
    switch (phase) {
      case Phase::Plain:
        pending += c;
        if (c == '\n') {
          emit_pending_plain();
        } else if (c == grammar.call_sentinel.front()) {
          sentinel_at = pending.size() - 1;
          matched = 1;
          phase = grammar.call_sentinel.size() == 1 ? Phase::Name : Phase::Sentinel;
          if (phase == Phase::Name) name.clear();
        }
        return;
      case Phase::Sentinel:
        if (matched < grammar.call_sentinel.size() && c == grammar.call_sentinel[matched]) {
          pending += c;
          ++matched;
          return;
        }
        if (matched == grammar.call_sentinel.size() && c == ' ') {
          pending += c;
          name.clear();
          phase = Phase::Name;
          return;
        }
        phase = Phase::Plain;
        call_char(c);
        return;
      case Phase::Name:
        if (name.empty() ? is_ident_start(c) : (is_ident_char(c) || c == '.' || c == '-')) {
          pending += c;
          name += c;
          return;
        }
        if (c == ' ' && !name.empty()) {
          pending += c;
          if (sentinel_at > 0) emit_plain(pending.substr(0, sentinel_at), pending.substr(0, sentinel_at));
          std::string raw = pending.substr(sentinel_at);
          pending.clear();
          emit_start(name, name, std::move(raw));
          phase = Phase::ExpectObject;
          return;
        }
        phase = Phase::Plain;
        call_char(c);
        return;
      case Phase::ExpectObject:
        pending += c;
        if (is_json_ws(c)) return;
        if (c == '{') {
          depth = 1;
          phase = Phase::ExpectKeyOrClose;
          return;
        }
        malformed("expected '{' after tool name");
        return;
      case Phase::ExpectKeyOrClose:
      case Phase::ExpectKey:
        pending += c;
        if (is_json_ws(c)) return;
        if (c == '"') {
          scalar.clear();
          phase = Phase::InKey;
          return;
        }
        if (c == '}' && phase == Phase::ExpectKeyOrClose) {
          close_object();
          return;
        }
        malformed("expected object key");
        return;
      case Phase::InKey:
        pending += c;
        if (string_char(c)) {
          current_key = scalar;
          scalar.clear();
          phase = Phase::ExpectColon;
        }
        return;
      case Phase::ExpectColon:
        pending += c;
        if (is_json_ws(c)) return;
        if (c == ':') {
          phase = Phase::ExpectValue;
          return;
        }
        malformed("expected ':' after key");
        return;
      case Phase::ExpectValue:
        pending += c;
        if (is_json_ws(c)) return;
        if (c == '"') {
          scalar.clear();
          phase = Phase::InString;
        } else if (c == '-' || std::isdigit(static_cast<unsigned char>(c))) {
          scalar.assign(1, c);
          phase = Phase::InNumber;
        } else if (c == 't' || c == 'f' || c == 'n') {
          literal_target = c == 't' ? "true" : c == 'f' ? "false" : "null";
          scalar.assign(1, c);
          phase = Phase::InLiteral;
        } else if (c == '{') {
          keys.push_back(current_key);
          current_key.clear();
          ++depth;
          phase = Phase::ExpectKeyOrClose;
        } else if (c == '[') {
          malformed("arrays are not supported");
        } else {
          malformed("expected a value");
        }
        return;
      case Phase::InString:
        pending += c;
        if (string_char(c)) {
          field_complete(std::exchange(scalar, {}));
          phase = Phase::AfterValue;
        }
        return;
      case Phase::InNumber:
        if (is_number_char(c)) {
          pending += c;
          scalar += c;
          return;
        }
        if (!valid_json_number(scalar)) {
          pending += c;
          malformed("invalid number '" + scalar + "'");
          return;
        }
        if (!is_json_ws(c) && c != ',' && c != '}') {
          pending += c;
          malformed("expected ',' or '}'");
          return;
        }
        field_complete(std::exchange(scalar, {}));
        phase = Phase::AfterValue;
        call_char(c);
        return;
      case Phase::InLiteral:
        pending += c;
        if (scalar.size() < literal_target.size() && c == literal_target[scalar.size()]) {
          scalar += c;
          if (scalar == literal_target) {
            field_complete(std::exchange(scalar, {}));
            phase = Phase::AfterValue;
          }
          return;
        }
        malformed("invalid literal");
        return;
      case Phase::AfterValue:
        pending += c;
        if (is_json_ws(c)) return;
        if (c == ',') {
          phase = Phase::ExpectKey;
          return;
        }
        if (c == '}') {
          close_object();
          return;
        }
        malformed("expected ',' or '}'");
        return;
      default:
        return;
    }
  }

  // ---- driver --------------------------------------------------------------

  void step(char c) {
    if (grammar.id == GrammarId::Call) {
      call_char(c);
    } else {
      line_char(c);
    }
  }

  void finish() {
    switch (grammar.id) {
      case GrammarId::Fence: {
        std::string_view body = strip_cr(line);
        if (phase == Phase::FenceRegion) {
          if (body == "```") {
            emit_tool(EventKind::ToolEnd, region_tool, "", take_pending());
          } else {
            if (!line.empty()) emit_tool(EventKind::ToolData, region_tool, std::string(body), take_pending());
            emit_tool(EventKind::ToolEnd, region_tool, "", take_pending());
            emit_diag(DiagnosticCode::UnclosedToolRegion, region_tool, "fence region not closed at end of stream",
                      "");
          }
        } else if (!pending.empty()) {
          emit_plain(line, take_pending());
        }
        break;
      }
      case GrammarId::Plan:
        if (!pending.empty()) plan_line(false);
        break;
      case GrammarId::Call:
        switch (phase) {
          case Phase::Plain:
          case Phase::Sentinel:
          case Phase::Name:
            if (!pending.empty()) emit_pending_plain();
            break;
          default:
            if (phase == Phase::InNumber && valid_json_number(scalar)) field_complete(std::exchange(scalar, {}));
            emit_tool(EventKind::ToolEnd, name, "", take_pending());
            emit_diag(DiagnosticCode::UnclosedToolRegion, name, "tool call not closed at end of stream", "");
            reset_call();
            break;
        }
        break;
    }
    line.clear();
    phase = Phase::Plain;
  }
};

StreamParser::StreamParser(Grammar grammar) : impl_(std::make_unique<Impl>(std::move(grammar))) {}
StreamParser::~StreamParser() = default;
StreamParser::StreamParser(StreamParser&&) noexcept = default;
StreamParser& StreamParser::operator=(StreamParser&&) noexcept = default;

std::vector<ParserEvent> StreamParser::feed(const Token& token) { return feed(std::string_view(token.text)); }

std::vector<ParserEvent> StreamParser::feed(std::string_view text) {
  if (impl_->done) throw Error(ErrorCode::ParserFinalized, "feed() after end of stream");
  std::vector<ParserEvent> events;
  impl_->out = &events;
  for (char c : text) impl_->step(c);
  impl_->out = nullptr;
  return events;
}

std::vector<ParserEvent> StreamParser::flush() {
  if (impl_->done) throw Error(ErrorCode::ParserFinalized, "flush() called twice");
  std::vector<ParserEvent> events;
  impl_->out = &events;
  impl_->finish();
  auto end = impl_->make(EventKind::StreamEnd);
  end.reason = EndReason::Eos;
  events.push_back(std::move(end));
  impl_->out = nullptr;
  impl_->done = true;
  return events;
}

std::vector<ParserEvent> StreamParser::abort() {
  if (impl_->done) return {};
  impl_->done = true;
  auto end = impl_->make(EventKind::StreamEnd);
  end.reason = EndReason::Aborted;
  return {std::move(end)};
}

bool StreamParser::finalized() const { return impl_->done; }

bool StreamParser::in_region() const {
  using P = Impl::Phase;
  P p = impl_->phase;
  return !(p == P::Plain || p == P::Sentinel || p == P::Name || p == P::FenceUnknown);
}

const Grammar& StreamParser::grammar() const { return impl_->grammar; }

std::vector<ParserEvent> parse_whole(std::string_view text, const Grammar& grammar) {
  StreamParser parser(grammar);
  auto events = parser.feed(text);
  auto tail = parser.flush();
  events.insert(events.end(), std::make_move_iterator(tail.begin()), std::make_move_iterator(tail.end()));
  return events;
}

}  // namespace tpx
