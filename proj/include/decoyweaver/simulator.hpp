#pragma once

// Seeded attacker agents that walk a deployed scenario through the real
// protocol endpoints on loopback.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "decoyweaver/clock.hpp"
#include "decoyweaver/event_log.hpp"
#include "decoyweaver/scenario.hpp"
#include "decoyweaver/session_manager.hpp"
#include "json.hpp"

namespace decoyweaver {

struct AgentProfile {
  std::string name = "agent";
  double skill = 0.5;
  double persistence = 0.8;  // per-step continue probability
  bool tool_user = false;    // opens with a scanner burst
  double curiosity = 0.5;    // probability of following a served clue
  std::uint64_t seed = 0;

  bool operator==(const AgentProfile&) const = default;
};

// Throws ConfigError unless every probability is in [0,1].
void check_profile(const AgentProfile& p);

struct WeightedProfile {
  AgentProfile profile;
  double weight = 1.0;
};

struct SimulationParams {
  double difficulty_slope = 0.15;
  double focus = 0.6;          // chance of taking the main path when no clue steers
  double noise = 0.1;          // chance of an off-script probe per step
  double think_mean_s = 90.0;  // mean pause between actions
  int max_steps = 40;
  TimestampMs start_ts = 1717200000000;  // 2024-06-01T00:00:00Z
  TimestampMs arrival_spacing_ms = 45000;
  std::uint64_t database_size = 64 * 1024;  // Database.DB size inside simulations
};

struct CohortSpec {
  std::size_t n_agents = 1;
  std::vector<WeightedProfile> profile_distribution;
  std::string scenario_id;
  std::uint64_t master_seed = 0;
  SimulationParams params;
};

CohortSpec cohort_from_json(const nlohmann::json& j);
nlohmann::json cohort_to_json(const CohortSpec& spec);

// clamp(skill - slope*(difficulty-1), 0, 1)
double success_probability(double skill, int difficulty, double slope = 0.15);

// Where the agent finds each protocol and how it learns its position in the
// story (the way a human reads the page it is shown).
class StageProbe {
 public:
  virtual ~StageProbe() = default;
  virtual std::optional<std::string> stage(const std::string& scenario_id, const std::string& ip) = 0;
  virtual std::vector<ActionEvent> events(const std::string& scenario_id, const std::string& ip) = 0;
};

class SessionManagerProbe final : public StageProbe {
 public:
  explicit SessionManagerProbe(const SessionManager& sessions) : sessions_(sessions) {}
  std::optional<std::string> stage(const std::string& scenario_id, const std::string& ip) override;
  std::vector<ActionEvent> events(const std::string& scenario_id, const std::string& ip) override;

 private:
  const SessionManager& sessions_;
};

// Reads positions from the operator API of a running gateway.
class ApiProbe final : public StageProbe {
 public:
  ApiProbe(std::string host, std::uint16_t port, std::string token)
      : host_(std::move(host)), port_(port), token_(std::move(token)) {}
  std::optional<std::string> stage(const std::string& scenario_id, const std::string& ip) override;
  // Only the most recent events the API exposes.
  std::vector<ActionEvent> events(const std::string& scenario_id, const std::string& ip) override;

 private:
  std::optional<nlohmann::json> find(const std::string& scenario_id, const std::string& ip);
  std::string host_;
  std::uint16_t port_;
  std::string token_;
};

struct ScenarioEndpoints {
  std::string host = "127.0.0.1";
  std::map<Protocol, std::uint16_t> ports;
};

struct AgentTarget {
  std::shared_ptr<const RuntimeStateMachine> machine;
  ScenarioEndpoints endpoints;
  StageProbe* probe = nullptr;
  ManualClock* clock = nullptr;  // null: the server keeps its own time
};

struct AgentRun {
  std::string source_ip;
  std::vector<ActionEvent> events;
  std::string final_stage;
  int steps = 0;
};

// Loopback source address for agent `index`: 127.1.x.y.
std::string agent_source_ip(std::size_t index);

// Walks the scenario from its entry. Throws EndpointUnreachable.
AgentRun run_agent(const AgentProfile& profile, const AgentTarget& target, const std::string& source_ip,
                   TimestampMs start_ts, const SimulationParams& params = {});

// Per-agent seed: derive_seed(master_seed, index).
std::uint64_t agent_seed(std::uint64_t master_seed, std::size_t index);

// Profile for agent `index` after the weighted template draw.
AgentProfile cohort_agent_profile(const CohortSpec& spec, std::size_t index);

// Deploys the bundle on ephemeral loopback ports, runs every agent and returns
// the merged log ordered by (ts, agent index, seq).
std::vector<EventRecord> run_cohort(const CohortSpec& spec, std::shared_ptr<const RuntimeStateMachine> machine);

// Runs agents [first, first+count) of the cohort against an already running
// deployment; the caller owns time and logging.
std::vector<AgentRun> run_cohort_against(const CohortSpec& spec, const AgentTarget& target, std::size_t first,
                                         std::size_t count);

}  // namespace decoyweaver
