#include "decoyweaver/event_log.hpp"

#include <ctime>
#include <fstream>
#include <sstream>

#include "decoyweaver/errors.hpp"

namespace decoyweaver {

using nlohmann::json;

ActionEvent EventRecord::to_event() const {
  ActionEvent e;
  e.ts = ts;
  e.protocol = protocol;
  e.raw = raw_excerpt;
  e.action = action;
  e.success = success;
  e.inter_event_ms = inter_event_ms;
  e.scanner_hint = scanner;
  return e;
}

json record_to_json(const EventRecord& r) {
  json j{{"kind", r.kind},
         {"scenario", r.scenario},
         {"session_id", r.session_id},
         {"source_ip", r.source_ip},
         {"seq", r.seq},
         {"ts", r.ts},
         {"protocol", std::string(to_string(r.protocol))},
         {"action", std::string(to_string(r.action))},
         {"success", r.success},
         {"stage_before", r.stage_before},
         {"stage_after", r.stage_after},
         {"raw_excerpt", r.raw_excerpt},
         {"inter_event_ms", r.inter_event_ms},
         {"scanner", r.scanner}};
  if (r.is_operator()) {
    j["operator_id"] = r.operator_id;
    j["operator_action"] = r.operator_action;
  }
  return j;
}

namespace {

template <typename T>
T get_field(const json& j, const char* key) {
  if (!j.contains(key)) throw CorruptLog(std::string("record lacks '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw CorruptLog(std::string("record field '") + key + "' has the wrong type");
  }
}

template <typename T>
T get_optional(const json& j, const char* key, T fallback) {
  return j.contains(key) ? get_field<T>(j, key) : fallback;
}

}  // namespace

EventRecord record_from_json(const json& j) {
  if (!j.is_object()) throw CorruptLog("record is not a JSON object");
  EventRecord r;
  r.kind = get_optional<std::string>(j, "kind", "event");
  if (r.kind != "event" && r.kind != "operator") throw CorruptLog("unknown record kind '" + r.kind + "'");
  r.scenario = get_optional<std::string>(j, "scenario", "");
  r.session_id = get_field<std::string>(j, "session_id");
  r.source_ip = get_optional<std::string>(j, "source_ip", "");
  r.seq = get_optional<std::uint64_t>(j, "seq", 0);
  r.ts = get_field<TimestampMs>(j, "ts");
  auto proto = get_field<std::string>(j, "protocol");
  auto p = protocol_from_string(proto);
  if (!p) throw CorruptLog("unknown protocol '" + proto + "'");
  r.protocol = *p;
  auto act = get_field<std::string>(j, "action");
  auto a = action_kind_from_string(act);
  if (!a) throw CorruptLog("unknown action '" + act + "'");
  r.action = *a;
  r.success = get_field<bool>(j, "success");
  r.stage_before = get_field<std::string>(j, "stage_before");
  r.stage_after = get_field<std::string>(j, "stage_after");
  r.raw_excerpt = get_optional<std::string>(j, "raw_excerpt", "");
  r.inter_event_ms = get_optional<std::int64_t>(j, "inter_event_ms", 0);
  r.scanner = get_optional<bool>(j, "scanner", false);
  if (r.is_operator()) {
    r.operator_id = get_optional<std::string>(j, "operator_id", "");
    if (!j.contains("operator_action")) throw CorruptLog("operator record lacks 'operator_action'");
    r.operator_action = j.at("operator_action");
  }
  return r;
}

std::string record_to_line(const EventRecord& r) { return record_to_json(r).dump(); }

std::string utc_day(TimestampMs ts) {
  std::time_t secs = static_cast<std::time_t>(ts >= 0 ? ts / 1000 : (ts - 999) / 1000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[16];
  std::strftime(buf, sizeof buf, "%Y%m%d", &tm);
  return buf;
}

std::string log_file_name(std::string_view scenario, TimestampMs ts) {
  return std::string(scenario) + "-" + utc_day(ts) + ".events.jsonl";
}

LogReadResult read_event_log_text(std::string_view text) {
  LogReadResult out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    bool terminated = nl != std::string_view::npos;
    auto line = text.substr(pos, terminated ? nl - pos : std::string_view::npos);
    pos = terminated ? nl + 1 : text.size();
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      out.records.push_back(record_from_json(json::parse(line)));
    } catch (const std::exception&) {
      out.malformed_lines.push_back(line_no);
      if (!terminated) out.truncated_tail = true;
    }
  }
  return out;
}

LogReadResult read_event_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptLog("cannot read event log '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return read_event_log_text(buf.str());
}

EventLogWriter::EventLogWriter(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

EventLogWriter::~EventLogWriter() {
  for (auto& [path, f] : files_) std::fclose(f);
}

std::filesystem::path EventLogWriter::path_for(std::string_view scenario, TimestampMs ts) const {
  return dir_ / log_file_name(scenario, ts);
}

std::FILE* EventLogWriter::open_for(const std::filesystem::path& p) {
  auto it = files_.find(p);
  if (it != files_.end()) return it->second;
  // A crash may have left a partial last line; start new records on a fresh line.
  bool needs_newline = false;
  if (std::FILE* existing = std::fopen(p.c_str(), "rb")) {
    if (std::fseek(existing, -1, SEEK_END) == 0) needs_newline = std::fgetc(existing) != '\n';
    std::fclose(existing);
  }
  std::FILE* f = std::fopen(p.c_str(), "ab");
  if (!f) throw Error("cannot open event log '" + p.string() + "' for append");
  if (needs_newline) std::fputc('\n', f);
  files_.emplace(p, f);
  return f;
}

void EventLogWriter::append(const EventRecord& r) {
  auto line = record_to_line(r);
  line.push_back('\n');
  std::lock_guard lock(mu_);
  std::FILE* f = open_for(path_for(r.scenario, r.ts));
  std::fwrite(line.data(), 1, line.size(), f);
  std::fflush(f);
}

}  // namespace decoyweaver
