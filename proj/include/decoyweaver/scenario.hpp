#pragma once

// Narrative scenario graphs: schema types, parsing, validation and the
// compiled runtime state machine shared by every session of a scenario.

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "decoyweaver/action.hpp"
#include "decoyweaver/engagement_params.hpp"
#include "json.hpp"

namespace decoyweaver {

enum class StageKind { Entry, Vulnerability, Reward, Terminal };

enum class ManipulationTechnique {
  Coercion,
  ReciprocityReward,
  Debasement,
  Charm,
  PleasureInduction,
  SocialComparison,
  MonetaryReward,
  None,
};

enum class VulnKind {
  RobotsDisclosure,
  JsPasswordChecker,
  SqlInjectionLogin,
  StoredXss,
  DefaultCredentials,
  WeakCredentials,
  PlantedFile,
  MisleadingScan,
  ScriptedExploit,
};

enum class ClueKind {
  PacketCapture,
  MisleadingNetworkScan,
  VulnerabilityScanOutput,
  PlantedComment,
  DefacementPage,
};

enum class RewardKind { FakeMonetary, Badge, Trophy, InfoFile };

std::string_view to_string(StageKind k);
std::string_view to_string(ManipulationTechnique m);
std::string_view to_string(VulnKind k);
std::string_view to_string(ClueKind k);
std::string_view to_string(RewardKind k);
std::optional<StageKind> stage_kind_from_string(std::string_view s);
std::optional<ManipulationTechnique> manipulation_from_string(std::string_view s);
std::optional<VulnKind> vuln_kind_from_string(std::string_view s);
std::optional<ClueKind> clue_kind_from_string(std::string_view s);
std::optional<RewardKind> reward_kind_from_string(std::string_view s);

// Vulnerability kind whose difficulty governs attempts of this action, if any.
std::optional<VulnKind> vuln_kind_for(ActionKind a);

struct VulnSpec {
  VulnKind kind = VulnKind::PlantedFile;
  int difficulty = 1;  // 1..5
  std::optional<std::string> round_robin_group;
  std::map<std::string, std::string> params;

  bool operator==(const VulnSpec&) const = default;
};

struct Clue {
  ClueKind kind = ClueKind::PlantedComment;
  std::string asset;  // path relative to the bundle's assets directory

  bool operator==(const Clue&) const = default;
};

struct Reward {
  RewardKind kind = RewardKind::Badge;
  std::string value;  // badge name, or an asset path for InfoFile/FakeMonetary

  bool operator==(const Reward&) const = default;
};

enum class SuccessRequirement { Success, Failure, Any };

struct PatternMatcher {
  std::optional<std::string> path;       // fnmatch glob over extract_target()
  std::vector<std::string> credentials;  // "user:password", password may be "*"
  std::optional<PayloadClass> payload_class;
  SuccessRequirement success = SuccessRequirement::Success;
  bool retry = false;  // permits a self-loop transition

  bool operator==(const PatternMatcher&) const = default;
};

struct ActionPattern {
  Protocol protocol = Protocol::HTTP;
  ActionKind action = ActionKind::Other;
  PatternMatcher matcher;

  // Total over events: never throws, mismatched protocol simply yields false.
  bool matches(const ActionEvent& event) const;

  bool operator==(const ActionPattern&) const = default;
};

struct Stage {
  std::string id;
  std::string name;
  StageKind kind = StageKind::Vulnerability;
  std::vector<std::string> assets;
  std::vector<VulnSpec> vulnerabilities;
  std::vector<Clue> clues;  // serving order
  std::vector<Reward> rewards;

  bool operator==(const Stage&) const = default;
};

struct Transition {
  std::string from;
  std::string to;
  ActionPattern trigger;
  ManipulationTechnique manipulation = ManipulationTechnique::None;
  bool main_path = false;
  int priority = 0;

  bool operator==(const Transition&) const = default;
};

// Fabricated hacker achievement shown for social comparison.
struct PlantedPeer {
  std::string name;
  int score = 0;

  bool operator==(const PlantedPeer&) const = default;
};

struct ScenarioGraph {
  std::string id;
  std::string title;
  std::vector<Stage> stages;
  std::vector<Transition> transitions;
  std::string entry_stage;
  std::set<std::string> terminal_stages;  // derived from Terminal-kind stages
  std::string assets_dir = "assets";
  EngagementParams engine;
  std::vector<PlantedPeer> planted_peers;
  nlohmann::json services = nlohmann::json::object();  // decoy surface configuration
  std::filesystem::path bundle_root;  // directory the config was loaded from

  const Stage* find_stage(std::string_view id) const;
  std::filesystem::path asset_path(std::string_view asset) const;

  bool operator==(const ScenarioGraph&) const = default;
};

ScenarioGraph parse_scenario(std::string_view config_text, std::filesystem::path bundle_root = {});
ScenarioGraph load_scenario_file(const std::filesystem::path& path);
nlohmann::json scenario_to_json(const ScenarioGraph& g);
std::string serialize_scenario(const ScenarioGraph& g);

enum class ViolationKind { UnreachableStage, MissingTerminal, AmbiguousTrigger, BrokenBackbone, DanglingAsset };

std::string_view to_string(ViolationKind k);

struct Violation {
  ViolationKind kind;
  std::string stage;
  std::string detail;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  std::size_t count(ViolationKind k) const;
  std::string to_string() const;
};

ValidationReport validate_graph(const ScenarioGraph& g);

// Immutable compiled form of a valid graph. Shared by every session of the
// scenario; all lookups are O(1) by stage id.
class RuntimeStateMachine {
 public:
  explicit RuntimeStateMachine(ScenarioGraph g);
  RuntimeStateMachine(const RuntimeStateMachine&) = delete;
  RuntimeStateMachine& operator=(const RuntimeStateMachine&) = delete;

  const ScenarioGraph& graph() const { return graph_; }
  const std::string& id() const { return graph_.id; }
  const std::string& entry() const { return graph_.entry_stage; }

  const Stage* find_stage(std::string_view id) const;
  bool is_terminal(std::string_view stage) const;

  // Outgoing transitions sorted by descending priority, declaration order on ties.
  std::span<const Transition* const> transitions_from(std::string_view stage) const;
  const Transition* match(std::string_view stage, const ActionEvent& event) const;
  std::size_t transition_table_size() const { return graph_.transitions.size(); }

  // Main-path walk from the entry, entry first and terminal last.
  const std::vector<std::string>& backbone() const { return backbone_; }
  std::size_t backbone_length() const { return backbone_.empty() ? 0 : backbone_.size() - 1; }
  std::optional<std::size_t> backbone_index(std::string_view stage) const;
  // Narrative depth used by engagement scoring: backbone index, or breadth-first
  // distance from the entry for side stages, capped at backbone_length().
  std::size_t depth(std::string_view stage) const;

  // First VulnSpec of `kind` anywhere in the graph; seeds per-session difficulty.
  const VulnSpec* default_vuln(VulnKind kind) const;

  // Canonical text form; identical for identical graphs.
  std::string serialize() const;

 private:
  ScenarioGraph graph_;
  std::unordered_map<std::string, std::size_t> stage_index_;
  std::vector<std::vector<const Transition*>> outgoing_;
  std::vector<std::string> backbone_;
  std::vector<std::size_t> depth_;
  std::map<VulnKind, const VulnSpec*> default_vulns_;
};

// Throws CompileError when validate_graph(g) reports any violation.
std::shared_ptr<const RuntimeStateMachine> compile_runtime(const ScenarioGraph& g);

}  // namespace decoyweaver
