#pragma once

// Per-attacker session state and the narrative step function.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "decoyweaver/action.hpp"
#include "decoyweaver/scenario.hpp"

namespace decoyweaver {

struct SourceIdentity {
  std::string ip;
  TimestampMs first_seen = 0;

  bool operator==(const SourceIdentity&) const = default;
};

struct SessionFlags {
  bool scanner_suspected = false;
  bool operator_locked = false;  // operator steering suppresses automatic clues

  bool operator==(const SessionFlags&) const = default;
};

struct Session {
  std::string id;
  SourceIdentity source;
  std::string scenario_id;
  std::string current_stage;
  TimestampMs started_at = 0;
  TimestampMs last_event_at = 0;
  std::vector<ActionEvent> events;
  double engagement = 0.5;
  std::vector<std::string> badges;
  std::vector<Reward> rewards;  // granted rewards, each at most once
  SessionFlags flags;
  // Clue cursor per stage; a stage's clues are served in order and never twice.
  std::map<std::string, std::size_t> clue_cursors;
  std::optional<TimestampMs> last_clue_at;
  std::map<VulnKind, int> difficulty_state;
  std::map<VulnKind, std::vector<bool>> vuln_outcomes;  // since the last level change
  std::vector<std::string> pending_messages;           // coercive text for the next response
  std::vector<Clue> pending_clues;                     // operator-served, delivered with the next response
  std::vector<std::string> trajectory;                 // stages entered, entry first
  bool closed = false;

  std::size_t clue_cursor() const;
  std::size_t distinct_action_kinds() const;
  int difficulty(VulnKind kind) const;

  bool operator==(const Session&) const = default;
};

// Deterministic id for (scenario, ip, reset-window start).
std::string make_session_id(std::string_view scenario_id, std::string_view ip, TimestampMs window_start);

// Fresh session positioned at the machine's entry stage.
Session new_session(const RuntimeStateMachine& machine, SourceIdentity source, TimestampMs now,
                    TimestampMs window_start);

struct TransitionOutcome {
  enum class Kind { Stayed, Advanced, Redirected, ClueEmitted, RewardGranted, SessionEnded };

  Kind kind = Kind::Stayed;
  std::string stage;  // Advanced / Redirected / SessionEnded target
  std::optional<Clue> clue;
  std::optional<Reward> reward;
  std::string operator_id;  // Redirected only

  static TransitionOutcome stayed() { return {}; }
  static TransitionOutcome advanced(std::string to) { return {Kind::Advanced, std::move(to), {}, {}, {}}; }
  static TransitionOutcome redirected(std::string to, std::string op) {
    return {Kind::Redirected, std::move(to), {}, {}, std::move(op)};
  }
  static TransitionOutcome clue_emitted(Clue c) { return {Kind::ClueEmitted, {}, std::move(c), {}, {}}; }
  static TransitionOutcome reward_granted(Reward r) { return {Kind::RewardGranted, {}, {}, std::move(r), {}}; }
  static TransitionOutcome session_ended(std::string at) { return {Kind::SessionEnded, std::move(at), {}, {}, {}}; }

  bool operator==(const TransitionOutcome&) const = default;
};

std::string_view to_string(TransitionOutcome::Kind k);

struct IngestResult {
  TransitionOutcome outcome;               // Stayed or Advanced
  std::vector<TransitionOutcome> effects;  // clues, rewards, end-of-story
  std::string stage_before;
  std::string stage_after;

  std::vector<Clue> clues() const;
};

// Appends `event` and advances the session along the first matching
// transition. Clue injection looks at the session as it stood when the
// event arrived; engagement is recomputed afterwards.
IngestResult ingest_event(Session& session, ActionEvent event, const RuntimeStateMachine& machine);

}  // namespace decoyweaver
