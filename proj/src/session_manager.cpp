#include "decoyweaver/session_manager.hpp"

#include <algorithm>

#include "decoyweaver/errors.hpp"

namespace decoyweaver {

SessionManager::SessionManager(TimestampMs window_start) : window_start_(window_start) {}

void SessionManager::deploy(std::shared_ptr<const RuntimeStateMachine> machine) {
  std::unique_lock lock(mu_);
  machines_[machine->id()] = std::move(machine);
}

std::shared_ptr<const RuntimeStateMachine> SessionManager::machine(const std::string& scenario_id) const {
  std::shared_lock lock(mu_);
  auto it = machines_.find(scenario_id);
  if (it == machines_.end()) throw UnknownScenario("scenario '" + scenario_id + "' is not deployed");
  return it->second;
}

std::vector<std::string> SessionManager::scenarios() const {
  std::shared_lock lock(mu_);
  std::vector<std::string> out;
  for (const auto& [id, m] : machines_) out.push_back(id);
  return out;
}

void SessionManager::add_sink(Sink sink) {
  std::unique_lock lock(mu_);
  sinks_.push_back(std::move(sink));
}

void SessionManager::on_reset(ResetHook hook) {
  std::unique_lock lock(mu_);
  reset_hooks_.push_back(std::move(hook));
}

TimestampMs SessionManager::window_start() const {
  std::shared_lock lock(mu_);
  return window_start_;
}

std::string SessionManager::session_id_for(const std::string& scenario_id, const std::string& ip) const {
  return make_session_id(scenario_id, ip, window_start());
}

std::shared_ptr<SessionManager::Entry> SessionManager::entry_for(const std::string& scenario_id,
                                                                 const std::string& ip, TimestampMs now) {
  {
    std::shared_lock lock(mu_);
    auto id = make_session_id(scenario_id, ip, window_start_);
    auto it = entries_.find(id);
    if (it != entries_.end()) return it->second;
  }
  std::unique_lock lock(mu_);
  auto m = machines_.find(scenario_id);
  if (m == machines_.end()) throw UnknownScenario("scenario '" + scenario_id + "' is not deployed");
  auto id = make_session_id(scenario_id, ip, window_start_);
  auto& slot = entries_[id];
  if (!slot) {
    slot = std::make_shared<Entry>();
    slot->machine = m->second;
    slot->session = new_session(*m->second, SourceIdentity{ip, now}, now, window_start_);
  }
  return slot;
}

std::shared_ptr<SessionManager::Entry> SessionManager::find_entry(const std::string& session_id) const {
  std::shared_lock lock(mu_);
  auto it = entries_.find(session_id);
  if (it == entries_.end()) throw UnknownSession("no session '" + session_id + "'");
  return it->second;
}

Session SessionManager::open_session(const SourceIdentity& source, const std::string& scenario_id,
                                     TimestampMs now) {
  auto e = entry_for(scenario_id, source.ip, now);
  std::lock_guard lock(e->mu);
  return e->session;
}

double SessionManager::note_request(const std::string& ip, TimestampMs now) {
  std::lock_guard lock(rate_mu_);
  auto& q = recent_[ip];
  q.push_back(now);
  while (!q.empty() && q.front() <= now - 60'000) q.pop_front();
  return static_cast<double>(q.size());
}

int SessionManager::difficulty(const std::string& scenario_id, const std::string& ip, VulnKind kind) const {
  std::shared_ptr<Entry> e;
  std::shared_ptr<const RuntimeStateMachine> m;
  {
    std::shared_lock lock(mu_);
    auto it = entries_.find(make_session_id(scenario_id, ip, window_start_));
    if (it != entries_.end()) e = it->second;
    auto mit = machines_.find(scenario_id);
    if (mit != machines_.end()) m = mit->second;
  }
  if (e) {
    std::lock_guard lock(e->mu);
    return e->session.difficulty(kind);
  }
  if (m) {
    if (const VulnSpec* v = m->default_vuln(kind)) return v->difficulty;
  }
  return 1;
}

void SessionManager::emit(const EventRecord& r) {
  if (replaying_) return;
  std::vector<Sink> sinks;
  {
    std::shared_lock lock(mu_);
    sinks = sinks_;
  }
  for (const auto& s : sinks) s(r);
}

IngestReport SessionManager::ingest(const std::string& scenario_id, const std::string& ip,
                                    const ActionEvent& event) {
  // A reset can close the entry between lookup and lock; the retry lands in the new window.
  for (int attempt = 0;; ++attempt) {
    auto e = entry_for(scenario_id, ip, event.ts);
    std::lock_guard lock(e->mu);
    if (e->session.closed && attempt == 0) continue;
    auto& s = e->session;
    IngestReport report;
    report.result = ingest_event(s, event, *e->machine);
    report.session_id = s.id;
    report.messages = std::move(s.pending_messages);
    s.pending_messages.clear();
    report.clues = report.result.clues();
    report.clues.insert(report.clues.end(), s.pending_clues.begin(), s.pending_clues.end());
    s.pending_clues.clear();
    report.stage = s.current_stage;
    report.scanner_suspected = s.flags.scanner_suspected;

    const auto& stored = s.events.back();
    EventRecord r;
    r.scenario = scenario_id;
    r.session_id = s.id;
    r.source_ip = ip;
    r.seq = e->seq++;
    r.ts = stored.ts;
    r.protocol = stored.protocol;
    r.action = stored.action;
    r.success = stored.success;
    r.stage_before = report.result.stage_before;
    r.stage_after = report.result.stage_after;
    r.raw_excerpt = stored.raw;
    r.inter_event_ms = stored.inter_event_ms;
    r.scanner = stored.scanner_hint;
    emit(r);
    return report;
  }
}

TransitionOutcome SessionManager::apply_operator(const std::string& session_id, OperatorAction action) {
  auto e = find_entry(session_id);
  std::lock_guard lock(e->mu);
  auto& s = e->session;
  action.session_id = session_id;
  if (action.issued_at < s.last_event_at) action.issued_at = s.last_event_at;
  auto before = s.current_stage;
  auto outcome = apply_operator_action(s, action, *e->machine);

  EventRecord r;
  r.kind = "operator";
  r.scenario = s.scenario_id;
  r.session_id = s.id;
  r.source_ip = s.source.ip;
  r.seq = e->seq++;
  r.ts = action.issued_at;
  r.protocol = s.events.empty() ? Protocol::HTTP : s.events.back().protocol;
  r.action = ActionKind::Other;
  r.success = true;
  r.stage_before = before;
  r.stage_after = s.current_stage;
  r.raw_excerpt = std::string(to_string(action.kind));
  r.operator_id = action.operator_id;
  r.operator_action = operator_action_to_json(action);
  emit(r);
  return outcome;
}

std::size_t SessionManager::reset_environment(TimestampMs now) {
  std::vector<ResetHook> hooks;
  std::size_t closed = 0;
  {
    std::unique_lock lock(mu_);
    for (auto& [id, e] : entries_) {
      std::lock_guard elock(e->mu);
      if (!e->session.closed) ++closed;
      e->session.closed = true;
    }
    entries_.clear();
    window_start_ = now;
    hooks = reset_hooks_;
  }
  {
    std::lock_guard lock(rate_mu_);
    recent_.clear();
  }
  for (const auto& h : hooks) h();
  return closed;
}

std::vector<Session> SessionManager::sessions() const {
  std::vector<std::shared_ptr<Entry>> entries;
  {
    std::shared_lock lock(mu_);
    for (const auto& [id, e] : entries_) entries.push_back(e);
  }
  std::vector<Session> out;
  for (const auto& e : entries) {
    std::lock_guard lock(e->mu);
    out.push_back(e->session);
  }
  return out;
}

std::optional<Session> SessionManager::session(const std::string& session_id) const {
  std::shared_ptr<Entry> e;
  {
    std::shared_lock lock(mu_);
    auto it = entries_.find(session_id);
    if (it == entries_.end()) return std::nullopt;
    e = it->second;
  }
  std::lock_guard lock(e->mu);
  return e->session;
}

RestoreReport SessionManager::replay(const std::vector<EventRecord>& records) {
  RestoreReport report;
  replaying_ = true;
  struct Guard {
    bool& flag;
    ~Guard() { flag = false; }
  } guard{replaying_};

  std::set<std::string> touched;
  for (const auto& r : records) {
    if (r.ts < window_start()) continue;
    if (r.is_operator()) {
      auto action = operator_action_from_json(r.operator_action);
      apply_operator(r.session_id, action);
      auto s = session(r.session_id);
      if (!s || s->current_stage != r.stage_after)
        throw CorruptLog("operator record " + std::to_string(r.seq) + " of " + r.session_id +
                         " does not reproduce stage '" + r.stage_after + "'");
    } else {
      IngestReport out;
      try {
        out = ingest(r.scenario, r.source_ip, r.to_event());
      } catch (const StaleEvent& e) {
        throw CorruptLog(std::string("out-of-order record in log: ") + e.what());
      }
      if (out.session_id != r.session_id)
        throw CorruptLog("record for " + r.session_id + " maps to session " + out.session_id);
      if (out.result.stage_before != r.stage_before || out.result.stage_after != r.stage_after)
        throw CorruptLog("record " + std::to_string(r.seq) + " of " + r.session_id + " replays to '" +
                         out.result.stage_after + "', log says '" + r.stage_after + "'");
    }
    touched.insert(r.session_id);
    ++report.records_replayed;
  }
  report.sessions = touched.size();
  return report;
}

}  // namespace decoyweaver
