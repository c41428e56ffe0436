#pragma once

// Live session table shared by every decoy endpoint. Sessions are keyed by
// (scenario, source ip) within one reset window; ingestion for a session is
// serialized, different sessions proceed in parallel.

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "decoyweaver/engagement.hpp"
#include "decoyweaver/event_log.hpp"
#include "decoyweaver/session.hpp"

namespace decoyweaver {

struct IngestReport {
  std::string session_id;
  IngestResult result;
  std::vector<std::string> messages;  // coercive text to inject verbatim
  std::vector<Clue> clues;            // automatic and operator-served
  std::string stage;
  bool scanner_suspected = false;
};

struct RestoreReport {
  std::size_t sessions = 0;
  std::size_t records_replayed = 0;
  std::size_t dropped = 0;  // unparseable lines, e.g. a torn trailing record
};

class SessionManager {
 public:
  using Sink = std::function<void(const EventRecord&)>;
  using ResetHook = std::function<void()>;

  explicit SessionManager(TimestampMs window_start = 0);

  void deploy(std::shared_ptr<const RuntimeStateMachine> machine);
  std::shared_ptr<const RuntimeStateMachine> machine(const std::string& scenario_id) const;
  std::vector<std::string> scenarios() const;

  // Sinks receive every record in per-session order.
  void add_sink(Sink sink);
  void on_reset(ResetHook hook);

  TimestampMs window_start() const;
  std::string session_id_for(const std::string& scenario_id, const std::string& ip) const;

  // Returns the existing session for (ip, scenario) in this window or opens one.
  Session open_session(const SourceIdentity& source, const std::string& scenario_id, TimestampMs now);

  // Requests per minute from `ip` over the trailing minute, counting this one.
  double note_request(const std::string& ip, TimestampMs now);

  // Current level for `kind`, or the bundle default when no session exists yet.
  int difficulty(const std::string& scenario_id, const std::string& ip, VulnKind kind) const;

  IngestReport ingest(const std::string& scenario_id, const std::string& ip, const ActionEvent& event);

  TransitionOutcome apply_operator(const std::string& session_id, OperatorAction action);

  // Closes every session, restores decoy state and starts a new window.
  std::size_t reset_environment(TimestampMs now);

  std::vector<Session> sessions() const;
  std::optional<Session> session(const std::string& session_id) const;

  // Rebuilds the table by replaying records through ingestion. Records from
  // before the current window are skipped. Throws CorruptLog if a replayed
  // record disagrees with the recorded stage.
  RestoreReport replay(const std::vector<EventRecord>& records);

 private:
  struct Entry {
    std::mutex mu;
    Session session;
    std::uint64_t seq = 0;
    std::shared_ptr<const RuntimeStateMachine> machine;
  };

  std::shared_ptr<Entry> entry_for(const std::string& scenario_id, const std::string& ip, TimestampMs now);
  std::shared_ptr<Entry> find_entry(const std::string& session_id) const;
  void emit(const EventRecord& r);

  mutable std::shared_mutex mu_;
  std::map<std::string, std::shared_ptr<const RuntimeStateMachine>> machines_;
  std::map<std::string, std::shared_ptr<Entry>> entries_;
  TimestampMs window_start_ = 0;
  std::vector<Sink> sinks_;
  std::vector<ResetHook> reset_hooks_;
  bool replaying_ = false;

  std::mutex rate_mu_;
  std::map<std::string, std::deque<TimestampMs>> recent_;
};

}  // namespace decoyweaver
