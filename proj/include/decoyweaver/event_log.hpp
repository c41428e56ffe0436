#pragma once

// Append-only JSONL event log: one record per line, one file per scenario per
// UTC day, named <scenario>-<YYYYMMDD>.events.jsonl.

#include <cstdio>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "decoyweaver/action.hpp"
#include "json.hpp"

namespace decoyweaver {

struct EventRecord {
  std::string kind = "event";  // "event" or "operator"
  std::string scenario;
  std::string session_id;
  std::string source_ip;
  std::uint64_t seq = 0;  // per-session record counter
  TimestampMs ts = 0;
  Protocol protocol = Protocol::HTTP;
  ActionKind action = ActionKind::Other;
  bool success = false;
  std::string stage_before;
  std::string stage_after;
  std::string raw_excerpt;
  std::int64_t inter_event_ms = 0;
  bool scanner = false;
  std::string operator_id;          // operator records only
  nlohmann::json operator_action;   // operator records only

  bool is_operator() const { return kind == "operator"; }
  ActionEvent to_event() const;

  bool operator==(const EventRecord&) const = default;
};

nlohmann::json record_to_json(const EventRecord& r);
// Throws CorruptLog describing the first offending field.
EventRecord record_from_json(const nlohmann::json& j);
// Compact JSON with sorted keys, no trailing newline.
std::string record_to_line(const EventRecord& r);

// "20240131" for the UTC day containing ts.
std::string utc_day(TimestampMs ts);
std::string log_file_name(std::string_view scenario, TimestampMs ts);

struct LogReadResult {
  std::vector<EventRecord> records;
  std::vector<std::size_t> malformed_lines;  // 1-based
  bool truncated_tail = false;               // last line lacked its newline and did not parse
};

// Reads every parseable record; unreadable lines are reported, not fatal.
LogReadResult read_event_log(const std::filesystem::path& path);
LogReadResult read_event_log_text(std::string_view text);

// Thread-safe appender. Each record is written and flushed as one line.
class EventLogWriter {
 public:
  explicit EventLogWriter(std::filesystem::path dir);
  ~EventLogWriter();
  EventLogWriter(const EventLogWriter&) = delete;
  EventLogWriter& operator=(const EventLogWriter&) = delete;

  void append(const EventRecord& r);
  std::filesystem::path path_for(std::string_view scenario, TimestampMs ts) const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::FILE* open_for(const std::filesystem::path& p);

  std::filesystem::path dir_;
  std::map<std::filesystem::path, std::FILE*> files_;
  std::mutex mu_;
};

}  // namespace decoyweaver
