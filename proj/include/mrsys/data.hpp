#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace mrsys {

constexpr std::int64_t kSecondsPerDay = 86400;

enum class EventKind { Click, Conversion };

struct Event {
  std::string user_id;
  std::string item_id;
  std::int64_t timestamp = 0;  // seconds since epoch
  EventKind kind = EventKind::Click;

  friend bool operator==(const Event&, const Event&) = default;
};

const char* to_string(EventKind kind);
std::optional<EventKind> parse_event_kind(std::string_view text);

/// Bidirectional map between opaque external ids and dense indices.
class IdIndex {
 public:
  std::size_t intern(const std::string& id);
  std::optional<std::size_t> find(const std::string& id) const;
  const std::string& id(std::size_t index) const { return ids_[index]; }
  std::span<const std::string> ids() const { return ids_; }
  std::size_t size() const { return ids_.size(); }

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

/// Timestamp-ordered interaction log. Immutable after construction.
class EventLog {
 public:
  EventLog() = default;
  explicit EventLog(std::vector<Event> events);

  std::span<const Event> events() const { return events_; }
  const Event& operator[](std::size_t i) const { return events_[i]; }
  std::size_t size() const { return events_.size(); }
  bool empty() const { return events_.empty(); }

  const IdIndex& users() const { return users_; }
  const IdIndex& items() const { return items_; }
  std::size_t user_of(std::size_t event) const { return user_index_[event]; }
  std::size_t item_of(std::size_t event) const { return item_index_[event]; }

  std::optional<std::int64_t> min_timestamp() const;
  std::optional<std::int64_t> max_timestamp() const;

  EventLog filter(const std::function<bool(const Event&)>& keep) const;

 private:
  std::vector<Event> events_;
  IdIndex users_;
  IdIndex items_;
  std::vector<std::size_t> user_index_;
  std::vector<std::size_t> item_index_;
};

EventLog merge(const EventLog& a, const EventLog& b);

EventLog load_events(const std::filesystem::path& path);
void save_events(const EventLog& log, const std::filesystem::path& path);

struct TemporalSplit {
  EventLog train;  // timestamp < threshold
  EventLog test;   // timestamp >= threshold
  std::int64_t threshold = 0;
};

TemporalSplit temporal_split(const EventLog& log, std::int64_t threshold);

/// Keeps events with now - 86400*days <= t <= now.
EventLog lookback_filter(const EventLog& log, std::int64_t now, int days);

/// Sparse row x column matrix of positive confidence weights.
class InteractionMatrix {
 public:
  struct Entry {
    std::size_t index;
    double weight;
  };

  InteractionMatrix() = default;
  InteractionMatrix(IdIndex rows, IdIndex cols,
                    const std::vector<std::tuple<std::size_t, std::size_t, double>>& cells);

  const IdIndex& rows() const { return rows_; }
  const IdIndex& cols() const { return cols_; }
  std::size_t row_count() const { return rows_.size(); }
  std::size_t col_count() const { return cols_.size(); }
  std::size_t nonzeros() const { return nonzeros_; }
  bool empty() const { return nonzeros_ == 0; }

  std::span<const Entry> row(std::size_t r) const { return by_row_[r]; }
  std::span<const Entry> col(std::size_t c) const { return by_col_[c]; }

  /// Weight of a cell by external ids; 0 when absent.
  double weight(const std::string& row_id, const std::string& col_id) const;

  double w_click = 1.0;
  double w_conv = 5.0;

 private:
  IdIndex rows_;
  IdIndex cols_;
  std::vector<std::vector<Entry>> by_row_;
  std::vector<std::vector<Entry>> by_col_;
  std::size_t nonzeros_ = 0;
};

/// cell(u,i) = w_click * clicks + w_conv * conversions.
InteractionMatrix build_interaction_matrix(const EventLog& log, double w_click, double w_conv);

/// Same weighting with the column id produced by `column_of` (e.g. an item's postcode).
InteractionMatrix build_interaction_matrix(
    const EventLog& log, double w_click, double w_conv,
    const std::function<std::string(const Event&)>& column_of);

}  // namespace mrsys
