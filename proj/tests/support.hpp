#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "tpx/decoder.hpp"
#include "tpx/plugin_api.hpp"
#include "tpx/stream_parser.hpp"

namespace tpx::test {

inline std::filesystem::path fixtures() { return TPX_FIXTURES_DIR; }
inline std::filesystem::path source_dir() { return TPX_SOURCE_DIR; }

/// ToolContext with a private logical clock, for driving plugins directly.
class FakeContext final : public ToolContext {
 public:
  Micros now() const override { return now_; }
  void sleep_for(Micros us) override {
    if (us > 0) now_ += us;
  }
  bool stop_requested() const override { return false; }
  ClockMode clock_mode() const override { return ClockMode::Virtual; }

 private:
  Micros now_ = 0;
};

/// Plugin whose hooks are supplied as callables; unset hooks accept everything.
struct Hooks {
  std::function<void(ToolContext&)> start;
  std::function<PartialResult(ToolContext&, const DataPiece&)> data;
  std::function<Observation(ToolContext&)> finish;
};

class LambdaPlugin final : public ToolPlugin {
 public:
  explicit LambdaPlugin(Hooks hooks) : hooks_(std::move(hooks)) {}
  void on_start(ToolContext& ctx) override {
    if (hooks_.start) hooks_.start(ctx);
  }
  PartialResult on_data(ToolContext& ctx, const DataPiece& piece) override {
    seen_.push_back(piece.text);
    return hooks_.data ? hooks_.data(ctx, piece) : PartialResult::accepted();
  }
  Observation on_finish(ToolContext& ctx) override {
    if (hooks_.finish) return hooks_.finish(ctx);
    std::string joined;
    for (const auto& s : seen_) joined += (joined.empty() ? "" : "|") + s;
    return Observation::ok(joined);
  }

 private:
  Hooks hooks_;
  std::vector<std::string> seen_;
};

inline ToolFactory lambda_factory(Hooks hooks) {
  return [hooks] { return std::make_unique<LambdaPlugin>(hooks); };
}

inline void register_lambda(Registry& reg, const std::string& name, Binding binding, Granularity gran, Hooks hooks,
                            StartCondition start = StartCondition::OnRegionOpen) {
  reg.register_plugin(PluginDescriptor{name, std::move(binding), gran, start}, lambda_factory(std::move(hooks)));
}

/// Trace round from (text, latency) pairs.
inline TraceRound round_of(std::vector<std::pair<std::string, Micros>> tokens, Micros prefill = 0) {
  TraceRound r;
  r.prefill_latency_us = prefill;
  for (auto& [text, lat] : tokens) r.tokens.push_back({std::move(text), lat});
  return r;
}

/// Every character of `text` as its own token, each costing `latency`.
inline TraceRound char_round(const std::string& text, Micros latency, Micros prefill = 0) {
  TraceRound r;
  r.prefill_latency_us = prefill;
  for (char c : text) r.tokens.push_back({std::string(1, c), latency});
  return r;
}

// ---- random texts per grammar ---------------------------------------------

class TextGen {
 public:
  explicit TextGen(std::uint64_t seed) : rng_(seed) {}

  std::string fence() {
    static const std::vector<std::string> parts = {
        "```python\n", "```py\n", "```text\n", "```\n", "```", "let x = 1\n", "print x\n", "plain words\n",
        "caf\xC3\xA9 \xE2\x9C\x93\n", "``` python \n", "````\n", "\n", "sleep 5", " ```\n", "import m\r\n",
        "\xF0\x9F\x98\x80", "x", "`", "```python", "```\r\n"};
    return assemble(parts, 1, 14);
  }

  std::string call() {
    static const std::vector<std::string> parts = {
        "@call search {\"query\": \"a b\"}", "@call get_news {\"location\": \"Seattle, WA\", \"n\": 3}",
        "@call calc {\"e\": -1.5e3, \"ok\": true, \"no\": false, \"z\": null}",
        "@call deep {\"a\": {\"b\": {\"c\": \"d\"}}, \"e\": 0}", "@call esc {\"s\": \"q\\\"\\\\\\n\\u00e9\\ud83d\\ude00\"}",
        "@call bad {\"a\" 1}", "@call arr {\"a\": [1]}", "@call num {\"a\": 01}", "@call open {\"a\": \"b\"",
        "@call empty {}", "@call x y", "@cal", "@@call k {}", "@call  n {}", "text ", "\n", "caf\xC3\xA9",
        "\xE2\x9C\x93 ", "@", "{\"a\": 1}", "@call t\t{}", "@call lit {\"a\": tru}", "@call n2 {\"a\": 12"};
    return assemble(parts, 1, 8);
  }

  std::string plan() {
    static const std::vector<std::string> parts = {
        "#E1 = Search[Microsoft market cap]\n", "#E2 = Calculator[#E1 / 2]\n", "#E3 = Formatter[x #E2]",
        "Plan: step one\n", "#E = Bad[x]\n", "#E4 = [x]\n", "#E5 = Tool[unclosed\n", "#E6 =Tool[x]\n",
        "#E7 = Tool[a]b]\n", "\n", "caf\xC3\xA9 #E1\n", "#E8 = T\xC3\xA9st[x]\n", "#E9 = Tool[\xE2\x9C\x93]\r\n",
        "#E10 = Tool[]"};
    return assemble(parts, 1, 10);
  }

  std::string of(GrammarId id) {
    switch (id) {
      case GrammarId::Fence: return fence();
      case GrammarId::Call: return call();
      case GrammarId::Plan: return plan();
    }
    return {};
  }

  /// Split `text` into tokens at random byte offsets (possibly inside a
  /// multi-byte character); empty tokens are allowed.
  std::vector<std::string> partition(const std::string& text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    std::uniform_int_distribution<int> len(0, 6);
    while (i < text.size()) {
      std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(len(rng_)), text.size() - i);
      out.push_back(text.substr(i, n));
      i += n;
    }
    return out;
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::string assemble(const std::vector<std::string>& parts, int lo, int hi) {
    std::uniform_int_distribution<int> count(lo, hi);
    std::uniform_int_distribution<std::size_t> pick(0, parts.size() - 1);
    std::string out;
    for (int k = count(rng_); k > 0; --k) out += parts[pick(rng_)];
    return out;
  }

  std::mt19937_64 rng_;
};

inline Grammar grammar_for_tests(GrammarId id) {
  switch (id) {
    case GrammarId::Fence: return Grammar::fence({{"python", "interp"}, {"py", "interp"}});
    case GrammarId::Call: return Grammar::call();
    case GrammarId::Plan: return Grammar::plan();
  }
  return {};
}

/// Feeds `tokens` one by one, then flushes.
inline std::vector<ParserEvent> parse_tokens(const std::vector<std::string>& tokens, const Grammar& grammar) {
  StreamParser parser(grammar);
  std::vector<ParserEvent> out;
  for (const auto& t : tokens) {
    auto ev = parser.feed(std::string_view(t));
    out.insert(out.end(), ev.begin(), ev.end());
  }
  auto tail = parser.flush();
  out.insert(out.end(), tail.begin(), tail.end());
  return out;
}

/// Splits `text` at the cut points encoded in the bits of `mask`.
inline std::vector<std::string> split_by_mask(const std::string& text, std::uint32_t mask) {
  std::vector<std::string> out;
  std::size_t begin = 0;
  for (std::size_t i = 1; i < text.size(); ++i) {
    if (mask & (1u << (i - 1))) {
      out.push_back(text.substr(begin, i - begin));
      begin = i;
    }
  }
  out.push_back(text.substr(begin));
  return out;
}

}  // namespace tpx::test
