#include "mrsys/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "mrsys/error.hpp"
#include "tsv.hpp"

namespace mrsys {

const char* to_string(EventKind kind) {
  return kind == EventKind::Click ? "click" : "conversion";
}

std::optional<EventKind> parse_event_kind(std::string_view text) {
  if (text == "click") return EventKind::Click;
  if (text == "conversion") return EventKind::Conversion;
  return std::nullopt;
}

std::size_t IdIndex::intern(const std::string& id) {
  auto [it, inserted] = lookup_.try_emplace(id, ids_.size());
  if (inserted) ids_.push_back(id);
  return it->second;
}

std::optional<std::size_t> IdIndex::find(const std::string& id) const {
  auto it = lookup_.find(id);
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

EventLog::EventLog(std::vector<Event> events) : events_(std::move(events)) {
  std::stable_sort(events_.begin(), events_.end(),
                   [](const Event& a, const Event& b) { return a.timestamp < b.timestamp; });
  user_index_.reserve(events_.size());
  item_index_.reserve(events_.size());
  for (const auto& e : events_) {
    require(e.timestamp >= 0, "event timestamp must be non-negative");
    user_index_.push_back(users_.intern(e.user_id));
    item_index_.push_back(items_.intern(e.item_id));
  }
}

std::optional<std::int64_t> EventLog::min_timestamp() const {
  if (events_.empty()) return std::nullopt;
  return events_.front().timestamp;
}

std::optional<std::int64_t> EventLog::max_timestamp() const {
  if (events_.empty()) return std::nullopt;
  return events_.back().timestamp;
}

EventLog EventLog::filter(const std::function<bool(const Event&)>& keep) const {
  std::vector<Event> kept;
  for (const auto& e : events_)
    if (keep(e)) kept.push_back(e);
  return EventLog(std::move(kept));
}

EventLog merge(const EventLog& a, const EventLog& b) {
  std::vector<Event> all(a.events().begin(), a.events().end());
  all.insert(all.end(), b.events().begin(), b.events().end());
  return EventLog(std::move(all));
}

namespace {
constexpr std::string_view kEventHeader = "user_id\titem_id\ttimestamp\tkind";
}

EventLog load_events(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open event file " + path.string());
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ValidationError(path.string() + ": missing header");
  ++line_no;
  if (line != kEventHeader)
    throw ValidationError(path.string() + ":1: expected header '" + std::string(kEventHeader) + "'");

  std::vector<Event> events;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto where = path.string() + ":" + std::to_string(line_no) + ": ";
    const auto fields = tsv::split(line);
    if (fields.size() != 4)
      throw ValidationError(where + "expected 4 fields, found " + std::to_string(fields.size()));
    Event e;
    e.user_id = std::string(fields[0]);
    e.item_id = std::string(fields[1]);
    if (e.user_id.empty() || e.item_id.empty()) throw ValidationError(where + "empty id");
    auto ts = tsv::parse_int(fields[2]);
    if (!ts || *ts < 0) throw ValidationError(where + "invalid timestamp '" + std::string(fields[2]) + "'");
    e.timestamp = *ts;
    auto kind = parse_event_kind(fields[3]);
    if (!kind) throw ValidationError(where + "unknown event kind '" + std::string(fields[3]) + "'");
    e.kind = *kind;
    events.push_back(std::move(e));
  }
  return EventLog(std::move(events));
}

void save_events(const EventLog& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write event file " + path.string());
  out << kEventHeader << '\n';
  for (const auto& e : log.events())
    out << e.user_id << '\t' << e.item_id << '\t' << e.timestamp << '\t' << to_string(e.kind) << '\n';
  if (!out) throw RuntimeError("write failed for " + path.string());
}

TemporalSplit temporal_split(const EventLog& log, std::int64_t threshold) {
  std::vector<Event> train, test;
  for (const auto& e : log.events()) (e.timestamp < threshold ? train : test).push_back(e);
  return {EventLog(std::move(train)), EventLog(std::move(test)), threshold};
}

EventLog lookback_filter(const EventLog& log, std::int64_t now, int days) {
  require(days > 0, "lookback days must be positive");
  const std::int64_t start = now - kSecondsPerDay * static_cast<std::int64_t>(days);
  return log.filter([&](const Event& e) { return e.timestamp >= start && e.timestamp <= now; });
}

InteractionMatrix::InteractionMatrix(
    IdIndex rows, IdIndex cols,
    const std::vector<std::tuple<std::size_t, std::size_t, double>>& cells)
    : rows_(std::move(rows)), cols_(std::move(cols)) {
  by_row_.resize(rows_.size());
  by_col_.resize(cols_.size());
  std::map<std::pair<std::size_t, std::size_t>, double> acc;
  for (const auto& [r, c, w] : cells) acc[{r, c}] += w;
  for (const auto& [rc, w] : acc) {
    if (w <= 0) continue;
    by_row_[rc.first].push_back({rc.second, w});
    by_col_[rc.second].push_back({rc.first, w});
    ++nonzeros_;
  }
}

double InteractionMatrix::weight(const std::string& row_id, const std::string& col_id) const {
  auto r = rows_.find(row_id);
  auto c = cols_.find(col_id);
  if (!r || !c) return 0.0;
  for (const auto& e : by_row_[*r])
    if (e.index == *c) return e.weight;
  return 0.0;
}

InteractionMatrix build_interaction_matrix(const EventLog& log, double w_click, double w_conv) {
  return build_interaction_matrix(log, w_click, w_conv, [](const Event& e) { return e.item_id; });
}

InteractionMatrix build_interaction_matrix(
    const EventLog& log, double w_click, double w_conv,
    const std::function<std::string(const Event&)>& column_of) {
  require(w_click > 0 && w_conv > w_click, "interaction weights must satisfy w_conv > w_click > 0");
  IdIndex rows, cols;
  std::vector<std::tuple<std::size_t, std::size_t, double>> cells;
  cells.reserve(log.size());
  for (const auto& e : log.events()) {
    const auto r = rows.intern(e.user_id);
    const auto c = cols.intern(column_of(e));
    cells.emplace_back(r, c, e.kind == EventKind::Click ? w_click : w_conv);
  }
  InteractionMatrix m(std::move(rows), std::move(cols), cells);
  m.w_click = w_click;
  m.w_conv = w_conv;
  return m;
}

}  // namespace mrsys
