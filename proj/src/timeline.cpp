#include "tpx/timeline.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "tpx/error.hpp"

namespace tpx {

namespace {

constexpr std::string_view kKindNames[] = {
    "TokenDecoded", "ToolStart", "PieceDispatched", "PieceExecuted", "ToolDone",
    "RoundStart",   "RoundEnd",  "AbortSignal",     "ResponseReady",
};

void write_id(std::ostream& os, int id) {
  if (id < 0) {
    os << '-';
  } else {
    os << id;
  }
}

template <typename T>
T parse_number(std::string_view field, std::size_t line_no) {
  T value{};
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc{} || ptr != field.data() + field.size()) {
    throw Error(ErrorCode::InvalidConfig,
                "timeline line " + std::to_string(line_no) + ": bad number '" + std::string(field) + "'");
  }
  return value;
}

}  // namespace

std::string_view to_string(TimelineKind kind) { return kKindNames[static_cast<int>(kind)]; }

std::optional<TimelineKind> parse_timeline_kind(std::string_view name) {
  for (std::size_t i = 0; i < std::size(kKindNames); ++i) {
    if (kKindNames[i] == name) return static_cast<TimelineKind>(i);
  }
  return std::nullopt;
}

void Timeline::record(Micros t, TimelineKind kind, int round, int job, int piece, std::string detail) {
  events_.push_back(TimelineEvent{t, kind, round, job, piece, std::move(detail), next_seq_++});
}

std::vector<TimelineEvent> Timeline::sorted() const {
  auto out = events_;
  std::stable_sort(out.begin(), out.end(), [](const TimelineEvent& a, const TimelineEvent& b) {
    return a.t != b.t ? a.t < b.t : a.seq < b.seq;
  });
  return out;
}

std::string export_timeline(const std::vector<TimelineEvent>& events) {
  std::ostringstream os;
  for (const auto& e : events) {
    os << e.t << '\t' << to_string(e.kind) << '\t';
    write_id(os, e.round);
    os << '\t';
    write_id(os, e.job);
    os << '\t';
    write_id(os, e.piece);
    os << '\t' << e.detail << '\n';
  }
  return os.str();
}

std::vector<TimelineEvent> parse_timeline(std::string_view text) {
  std::vector<TimelineEvent> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty()) continue;

    std::vector<std::string_view> fields;
    for (int i = 0; i < 5; ++i) {
      auto tab = line.find('\t');
      if (tab == std::string_view::npos) {
        throw Error(ErrorCode::InvalidConfig, "timeline line " + std::to_string(line_no) + ": expected 6 fields");
      }
      fields.push_back(line.substr(0, tab));
      line = line.substr(tab + 1);
    }
    TimelineEvent e;
    e.t = parse_number<Micros>(fields[0], line_no);
    auto kind = parse_timeline_kind(fields[1]);
    if (!kind) {
      throw Error(ErrorCode::InvalidConfig,
                  "timeline line " + std::to_string(line_no) + ": unknown kind '" + std::string(fields[1]) + "'");
    }
    e.kind = *kind;
    e.round = fields[2] == "-" ? -1 : parse_number<int>(fields[2], line_no);
    e.job = fields[3] == "-" ? -1 : parse_number<int>(fields[3], line_no);
    e.piece = fields[4] == "-" ? -1 : parse_number<int>(fields[4], line_no);
    e.detail = std::string(line);
    e.seq = out.size();
    out.push_back(std::move(e));
  }
  return out;
}

std::optional<std::string> detail_field(std::string_view detail, std::string_view key) {
  std::size_t pos = 0;
  while (pos < detail.size()) {
    auto end = detail.find(' ', pos);
    if (end == std::string_view::npos) end = detail.size();
    std::string_view item = detail.substr(pos, end - pos);
    if (item.size() > key.size() && item.substr(0, key.size()) == key && item[key.size()] == '=') {
      return std::string(item.substr(key.size() + 1));
    }
    pos = end + 1;
  }
  return std::nullopt;
}

}  // namespace tpx
