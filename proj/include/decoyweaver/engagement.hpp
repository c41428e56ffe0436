#pragma once

// Gamification and manipulation mechanics: engagement scoring, threshold
// clue injection, polymorphic difficulty, round-robin variants, reciprocity
// gating and operator steering.

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "decoyweaver/engagement_params.hpp"
#include "decoyweaver/session.hpp"
#include "json.hpp"

namespace decoyweaver {

// Closed form of the engagement score for explicit inputs.
double engagement_score(double idle_s, std::size_t depth, std::size_t backbone_length, std::size_t distinct_kinds,
                        const EngagementParams& params);

// Idle time is measured from the last event, or from the session start.
double compute_engagement(const Session& session, const RuntimeStateMachine& machine, TimestampMs now,
                          const EngagementParams& params);

// Next clue of the current stage when engagement has fallen below theta and
// the cooldown has elapsed. Advances the stage's clue cursor.
std::optional<Clue> maybe_emit_clue(Session& session, const RuntimeStateMachine& machine, TimestampMs now,
                                    const EngagementParams& params);

// Three trailing failures step down, two trailing successes step up.
int next_difficulty(int level, const std::vector<bool>& recent_outcomes);

// Applies next_difficulty to the session's level for `vuln.kind`.
int adjust_difficulty(Session& session, const VulnSpec& vuln, const std::vector<bool>& recent_outcomes);

// Cyclic selection over a round-robin group; `cursor` counts prior draws.
const VulnSpec& next_round_robin(std::span<const VulnSpec* const> group, std::size_t& cursor);

// Durable cursors keyed by group name, stored as one JSON file.
class RoundRobinState {
 public:
  RoundRobinState() = default;
  explicit RoundRobinState(std::filesystem::path file);

  const VulnSpec& next(const std::string& group, std::span<const VulnSpec* const> members);
  std::size_t cursor(const std::string& group) const;

 private:
  void save() const;

  std::filesystem::path file_;
  std::map<std::string, std::size_t> cursors_;
  mutable std::mutex mu_;
};

// Every VulnSpec of the graph sharing `group`, in declaration order.
std::vector<const VulnSpec*> round_robin_members(const ScenarioGraph& graph, const std::string& group);

enum class GateDecision { Grant, Withhold };

// Withholds from suspected scanners. A granted reward is recorded once.
GateDecision reciprocity_gate(Session& session, const Reward& reward);

struct OperatorAction {
  enum class Kind { CoerciveMessage, ForceRedirect, ServeClue, SetDifficulty, GrantReward };

  Kind kind = Kind::CoerciveMessage;
  std::string text;   // CoerciveMessage
  std::string stage;  // ForceRedirect
  std::size_t clue_index = 0;
  VulnKind vuln = VulnKind::SqlInjectionLogin;  // SetDifficulty
  int level = 1;
  Reward reward;  // GrantReward
  std::string session_id;
  TimestampMs issued_at = 0;
  std::string operator_id;

  bool operator==(const OperatorAction&) const = default;
};

std::string_view to_string(OperatorAction::Kind k);

// Strict JSON codec; InvalidAction on malformed payloads.
OperatorAction operator_action_from_json(const nlohmann::json& j);
nlohmann::json operator_action_to_json(const OperatorAction& a);

// Throws SessionClosed, UnknownStage, or InvalidAction for unusable arguments.
// ServeClue(i) serves clue i of the current stage and moves the cursor past it;
// indices already passed are a no-op.
TransitionOutcome apply_operator_action(Session& session, const OperatorAction& action,
                                        const RuntimeStateMachine& machine);

}  // namespace decoyweaver
