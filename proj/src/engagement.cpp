#include "decoyweaver/engagement.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include "decoyweaver/errors.hpp"

namespace decoyweaver {

using nlohmann::json;

double engagement_score(double idle_s, std::size_t depth, std::size_t backbone_length, std::size_t distinct_kinds,
                        const EngagementParams& p) {
  idle_s = std::max(0.0, idle_s);
  double recency = std::exp(-std::log(2.0) * idle_s / p.half_life_s);
  double depth_term = backbone_length == 0 ? 0.0 : static_cast<double>(depth) / static_cast<double>(backbone_length);
  double diversity = static_cast<double>(distinct_kinds) / static_cast<double>(kActionKindCount);
  double score = p.w_recency * recency + p.w_depth * depth_term + p.w_diversity * diversity;
  return std::clamp(score, 0.0, 1.0);
}

double compute_engagement(const Session& session, const RuntimeStateMachine& machine, TimestampMs now,
                          const EngagementParams& params) {
  TimestampMs since = session.events.empty() ? session.started_at : session.last_event_at;
  double idle_s = static_cast<double>(now - since) / 1000.0;
  return engagement_score(idle_s, machine.depth(session.current_stage), machine.backbone_length(),
                          session.distinct_action_kinds(), params);
}

std::optional<Clue> maybe_emit_clue(Session& session, const RuntimeStateMachine& machine, TimestampMs now,
                                    const EngagementParams& params) {
  const Stage* stage = machine.find_stage(session.current_stage);
  if (!stage) return std::nullopt;
  auto& cursor = session.clue_cursors[session.current_stage];
  if (cursor >= stage->clues.size()) return std::nullopt;
  if (compute_engagement(session, machine, now, params) >= params.theta) return std::nullopt;
  if (session.last_clue_at &&
      static_cast<double>(now - *session.last_clue_at) / 1000.0 < params.clue_cooldown_s)
    return std::nullopt;
  Clue clue = stage->clues[cursor];
  ++cursor;
  session.last_clue_at = now;
  return clue;
}

int next_difficulty(int level, const std::vector<bool>& outcomes) {
  auto n = outcomes.size();
  if (n >= 3 && !outcomes[n - 1] && !outcomes[n - 2] && !outcomes[n - 3]) return std::max(1, level - 1);
  if (n >= 2 && outcomes[n - 1] && outcomes[n - 2]) return std::min(5, level + 1);
  return std::clamp(level, 1, 5);
}

int adjust_difficulty(Session& session, const VulnSpec& vuln, const std::vector<bool>& recent_outcomes) {
  auto it = session.difficulty_state.find(vuln.kind);
  int level = it == session.difficulty_state.end() ? vuln.difficulty : it->second;
  int next = next_difficulty(level, recent_outcomes);
  session.difficulty_state[vuln.kind] = next;
  return next;
}

const VulnSpec& next_round_robin(std::span<const VulnSpec* const> group, std::size_t& cursor) {
  if (group.empty()) throw EmptyGroup("round-robin group has no members");
  const VulnSpec& v = *group[cursor % group.size()];
  ++cursor;
  return v;
}

RoundRobinState::RoundRobinState(std::filesystem::path file) : file_(std::move(file)) {
  std::ifstream in(file_);
  if (!in) return;
  try {
    auto j = json::parse(in);
    for (auto it = j.begin(); it != j.end(); ++it) cursors_[it.key()] = it.value().get<std::size_t>();
  } catch (const json::exception& e) {
    throw ConfigError("unreadable round-robin state " + file_.string() + ": " + e.what());
  }
}

const VulnSpec& RoundRobinState::next(const std::string& group, std::span<const VulnSpec* const> members) {
  std::lock_guard lock(mu_);
  const VulnSpec& v = next_round_robin(members, cursors_[group]);
  save();
  return v;
}

std::size_t RoundRobinState::cursor(const std::string& group) const {
  std::lock_guard lock(mu_);
  auto it = cursors_.find(group);
  return it == cursors_.end() ? 0 : it->second;
}

void RoundRobinState::save() const {
  if (file_.empty()) return;
  auto tmp = file_;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << json(cursors_).dump() << "\n";
  }
  std::filesystem::rename(tmp, file_);
}

std::vector<const VulnSpec*> round_robin_members(const ScenarioGraph& graph, const std::string& group) {
  std::vector<const VulnSpec*> out;
  for (const auto& s : graph.stages) {
    for (const auto& v : s.vulnerabilities) {
      if (v.round_robin_group == group) out.push_back(&v);
    }
  }
  return out;
}

GateDecision reciprocity_gate(Session& session, const Reward& reward) {
  if (session.flags.scanner_suspected) return GateDecision::Withhold;
  if (std::find(session.rewards.begin(), session.rewards.end(), reward) == session.rewards.end()) {
    session.rewards.push_back(reward);
    if (reward.kind == RewardKind::Badge || reward.kind == RewardKind::Trophy) session.badges.push_back(reward.value);
  }
  return GateDecision::Grant;
}

namespace {

constexpr std::array<std::string_view, 5> kOperatorKinds = {"CoerciveMessage", "ForceRedirect", "ServeClue",
                                                            "SetDifficulty", "GrantReward"};

const json& field(const json& j, const char* key) {
  if (!j.contains(key)) throw InvalidAction(std::string("missing field '") + key + "'");
  return j.at(key);
}

std::string string_field(const json& j, const char* key) {
  const auto& v = field(j, key);
  if (!v.is_string()) throw InvalidAction(std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

std::int64_t int_field(const json& j, const char* key) {
  const auto& v = field(j, key);
  if (!v.is_number_integer()) throw InvalidAction(std::string("field '") + key + "' must be an integer");
  return v.get<std::int64_t>();
}

}  // namespace

std::string_view to_string(OperatorAction::Kind k) { return kOperatorKinds[static_cast<std::size_t>(k)]; }

OperatorAction operator_action_from_json(const json& j) {
  if (!j.is_object()) throw InvalidAction("operator action must be a JSON object");
  OperatorAction a;
  auto kind = string_field(j, "kind");
  auto it = std::find(kOperatorKinds.begin(), kOperatorKinds.end(), kind);
  if (it == kOperatorKinds.end()) throw InvalidAction("unknown action kind '" + kind + "'");
  a.kind = static_cast<OperatorAction::Kind>(it - kOperatorKinds.begin());
  switch (a.kind) {
    case OperatorAction::Kind::CoerciveMessage:
      a.text = string_field(j, "text");
      if (a.text.empty()) throw InvalidAction("coercive message text is empty");
      break;
    case OperatorAction::Kind::ForceRedirect:
      a.stage = string_field(j, "stage");
      break;
    case OperatorAction::Kind::ServeClue: {
      auto index = int_field(j, "index");
      if (index < 0) throw InvalidAction("clue index must be >= 0");
      a.clue_index = static_cast<std::size_t>(index);
      break;
    }
    case OperatorAction::Kind::SetDifficulty: {
      auto vuln = string_field(j, "vuln");
      auto vk = vuln_kind_from_string(vuln);
      if (!vk) throw InvalidAction("unknown vulnerability kind '" + vuln + "'");
      a.vuln = *vk;
      auto level = int_field(j, "level");
      if (level < 1 || level > 5) throw InvalidAction("difficulty level must be within 1..5");
      a.level = static_cast<int>(level);
      break;
    }
    case OperatorAction::Kind::GrantReward: {
      const auto& r = field(j, "reward");
      if (!r.is_object()) throw InvalidAction("field 'reward' must be an object");
      auto rk = string_field(r, "kind");
      auto kind_value = reward_kind_from_string(rk);
      if (!kind_value) throw InvalidAction("unknown reward kind '" + rk + "'");
      a.reward = Reward{*kind_value, string_field(r, "value")};
      break;
    }
  }
  if (j.contains("operator_id")) a.operator_id = string_field(j, "operator_id");
  if (j.contains("session_id")) a.session_id = string_field(j, "session_id");
  if (j.contains("issued_at")) a.issued_at = int_field(j, "issued_at");
  return a;
}

json operator_action_to_json(const OperatorAction& a) {
  json j{{"kind", std::string(to_string(a.kind))},
         {"operator_id", a.operator_id},
         {"session_id", a.session_id},
         {"issued_at", a.issued_at}};
  switch (a.kind) {
    case OperatorAction::Kind::CoerciveMessage: j["text"] = a.text; break;
    case OperatorAction::Kind::ForceRedirect: j["stage"] = a.stage; break;
    case OperatorAction::Kind::ServeClue: j["index"] = a.clue_index; break;
    case OperatorAction::Kind::SetDifficulty:
      j["vuln"] = std::string(to_string(a.vuln));
      j["level"] = a.level;
      break;
    case OperatorAction::Kind::GrantReward:
      j["reward"] = {{"kind", std::string(to_string(a.reward.kind))}, {"value", a.reward.value}};
      break;
  }
  return j;
}

TransitionOutcome apply_operator_action(Session& session, const OperatorAction& action,
                                        const RuntimeStateMachine& machine) {
  if (session.closed) throw SessionClosed("session " + session.id + " is closed");
  switch (action.kind) {
    case OperatorAction::Kind::CoerciveMessage:
      if (action.text.empty()) throw InvalidAction("coercive message text is empty");
      session.flags.operator_locked = true;
      session.pending_messages.push_back(action.text);
      return TransitionOutcome::stayed();
    case OperatorAction::Kind::ForceRedirect:
      if (!machine.find_stage(action.stage))
        throw UnknownStage("stage '" + action.stage + "' does not exist in scenario " + machine.id());
      session.flags.operator_locked = true;
      if (session.current_stage != action.stage) {
        session.current_stage = action.stage;
        session.trajectory.push_back(action.stage);
      }
      return TransitionOutcome::redirected(action.stage, action.operator_id);
    case OperatorAction::Kind::ServeClue: {
      const Stage* stage = machine.find_stage(session.current_stage);
      if (action.clue_index >= stage->clues.size())
        throw InvalidAction("stage '" + stage->id + "' has " + std::to_string(stage->clues.size()) + " clues");
      session.flags.operator_locked = true;
      auto& cursor = session.clue_cursors[stage->id];
      if (action.clue_index < cursor) return TransitionOutcome::stayed();
      cursor = action.clue_index + 1;
      session.last_clue_at = action.issued_at;
      session.pending_clues.push_back(stage->clues[action.clue_index]);
      return TransitionOutcome::clue_emitted(stage->clues[action.clue_index]);
    }
    case OperatorAction::Kind::SetDifficulty:
      if (action.level < 1 || action.level > 5) throw InvalidAction("difficulty level must be within 1..5");
      session.flags.operator_locked = true;
      session.difficulty_state[action.vuln] = action.level;
      session.vuln_outcomes[action.vuln].clear();
      return TransitionOutcome::stayed();
    case OperatorAction::Kind::GrantReward:
      session.flags.operator_locked = true;
      if (std::find(session.rewards.begin(), session.rewards.end(), action.reward) == session.rewards.end()) {
        session.rewards.push_back(action.reward);
        if (action.reward.kind == RewardKind::Badge || action.reward.kind == RewardKind::Trophy)
          session.badges.push_back(action.reward.value);
      }
      return TransitionOutcome::reward_granted(action.reward);
  }
  return TransitionOutcome::stayed();
}

}  // namespace decoyweaver
