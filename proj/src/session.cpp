#include "decoyweaver/session.hpp"

#include <algorithm>
#include <array>
#include <bitset>
#include <cstdio>

#include "decoyweaver/engagement.hpp"
#include "decoyweaver/errors.hpp"

namespace decoyweaver {

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

std::size_t Session::clue_cursor() const {
  auto it = clue_cursors.find(current_stage);
  return it == clue_cursors.end() ? 0 : it->second;
}

std::size_t Session::distinct_action_kinds() const {
  std::bitset<kActionKindCount> seen;
  for (const auto& e : events) seen.set(static_cast<std::size_t>(e.action));
  return seen.count();
}

int Session::difficulty(VulnKind kind) const {
  auto it = difficulty_state.find(kind);
  return it == difficulty_state.end() ? 1 : it->second;
}

std::string make_session_id(std::string_view scenario_id, std::string_view ip, TimestampMs window_start) {
  std::string key;
  key.append(scenario_id).append("|").append(ip).append("|").append(std::to_string(window_start));
  char buf[24];
  std::snprintf(buf, sizeof buf, "s-%016llx", static_cast<unsigned long long>(fnv1a(key)));
  return buf;
}

Session new_session(const RuntimeStateMachine& machine, SourceIdentity source, TimestampMs now,
                    TimestampMs window_start) {
  Session s;
  s.id = make_session_id(machine.id(), source.ip, window_start);
  s.source = std::move(source);
  s.scenario_id = machine.id();
  s.current_stage = machine.entry();
  s.started_at = now;
  s.last_event_at = now;
  s.engagement = 0.5;
  s.trajectory.push_back(machine.entry());
  for (const auto& stage : machine.graph().stages) {
    for (const auto& v : stage.vulnerabilities) s.difficulty_state.emplace(v.kind, v.difficulty);
  }
  return s;
}

std::string_view to_string(TransitionOutcome::Kind k) {
  static constexpr std::array<std::string_view, 6> kNames = {"Stayed",      "Advanced",      "Redirected",
                                                             "ClueEmitted", "RewardGranted", "SessionEnded"};
  return kNames[static_cast<std::size_t>(k)];
}

std::vector<Clue> IngestResult::clues() const {
  std::vector<Clue> out;
  for (const auto& e : effects) {
    if (e.kind == TransitionOutcome::Kind::ClueEmitted && e.clue) out.push_back(*e.clue);
  }
  return out;
}

IngestResult ingest_event(Session& session, ActionEvent event, const RuntimeStateMachine& machine) {
  if (session.closed) throw SessionClosed("session " + session.id + " is closed");
  if (event.ts < session.last_event_at)
    throw StaleEvent("event at " + std::to_string(event.ts) + " precedes last event at " +
                     std::to_string(session.last_event_at));

  const auto& params = machine.graph().engine;
  IngestResult result;
  result.stage_before = session.current_stage;
  event.inter_event_ms = session.events.empty() ? 0 : event.ts - session.last_event_at;

  if (!session.flags.operator_locked) {
    if (auto clue = maybe_emit_clue(session, machine, event.ts, params))
      result.effects.push_back(TransitionOutcome::clue_emitted(*clue));
  }

  if (event.scanner_hint || event.action == ActionKind::ScanBurst) session.flags.scanner_suspected = true;
  session.events.push_back(event);
  session.last_event_at = event.ts;

  if (const Transition* t = machine.match(session.current_stage, event)) {
    result.outcome = TransitionOutcome::advanced(t->to);
    if (t->to != session.current_stage) {
      session.current_stage = t->to;
      session.trajectory.push_back(t->to);
      for (const auto& reward : machine.find_stage(t->to)->rewards) {
        auto before = session.rewards.size();
        if (reciprocity_gate(session, reward) == GateDecision::Grant && session.rewards.size() > before)
          result.effects.push_back(TransitionOutcome::reward_granted(reward));
      }
      if (machine.is_terminal(t->to)) result.effects.push_back(TransitionOutcome::session_ended(t->to));
    }
  }

  if (auto kind = vuln_kind_for(event.action); kind && session.difficulty_state.count(*kind)) {
    auto& outcomes = session.vuln_outcomes[*kind];
    outcomes.push_back(event.success);
    if (outcomes.size() > 3) outcomes.erase(outcomes.begin());
    int before = session.difficulty(*kind);
    if (adjust_difficulty(session, *machine.default_vuln(*kind), outcomes) != before) outcomes.clear();
  }

  session.engagement = compute_engagement(session, machine, event.ts, params);
  result.stage_after = session.current_stage;
  return result;
}

}  // namespace decoyweaver
