#include "decoyweaver/scenario.hpp"

#include <fnmatch.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <fstream>
#include <sstream>

#include "decoyweaver/errors.hpp"

namespace decoyweaver {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 4> kStageKinds = {"Entry", "Vulnerability", "Reward", "Terminal"};
constexpr std::array<std::string_view, 8> kManipulations = {
    "Coercion", "ReciprocityReward", "Debasement",       "Charm",
    "PleasureInduction", "SocialComparison", "MonetaryReward", "None"};
constexpr std::array<std::string_view, 9> kVulnKinds = {
    "RobotsDisclosure",   "JsPasswordChecker", "SqlInjectionLogin", "StoredXss",      "DefaultCredentials",
    "WeakCredentials",    "PlantedFile",       "MisleadingScan",    "ScriptedExploit"};
constexpr std::array<std::string_view, 5> kClueKinds = {
    "PacketCapture", "MisleadingNetworkScan", "VulnerabilityScanOutput", "PlantedComment", "DefacementPage"};
constexpr std::array<std::string_view, 4> kRewardKinds = {"FakeMonetary", "Badge", "Trophy", "InfoFile"};
constexpr std::array<std::string_view, 5> kViolationKinds = {
    "unreachable_stage", "missing_terminal", "ambiguous_trigger", "broken_backbone", "dangling_asset"};
constexpr std::array<std::string_view, 3> kSuccessRequirements = {"success", "failure", "any"};

template <typename E, std::size_t N>
std::optional<E> lookup(const std::array<std::string_view, N>& names, std::string_view s) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == s) return static_cast<E>(i);
  }
  return std::nullopt;
}

// Strict accessor over one JSON object that remembers its path for errors.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw SchemaError(path_, "expected an object");
  }

  void allow_only(std::initializer_list<std::string_view> keys) const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (std::find(keys.begin(), keys.end(), it.key()) == keys.end())
        throw SchemaError(child(it.key()), "unknown key");
    }
  }

  bool has(std::string_view key) const { return j_.contains(key); }

  std::string child(std::string_view key) const {
    return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
  }

  const json& required(std::string_view key) const {
    if (!j_.contains(key)) throw SchemaError(child(key), "missing required field");
    return j_.at(std::string(key));
  }

  std::string string(std::string_view key) const {
    const auto& v = required(key);
    if (!v.is_string()) throw SchemaError(child(key), "expected a string");
    return v.get<std::string>();
  }

  std::string string_or(std::string_view key, std::string fallback) const {
    return has(key) ? string(key) : fallback;
  }

  bool boolean_or(std::string_view key, bool fallback) const {
    if (!has(key)) return fallback;
    const auto& v = j_.at(std::string(key));
    if (!v.is_boolean()) throw SchemaError(child(key), "expected a boolean");
    return v.get<bool>();
  }

  int integer_or(std::string_view key, int fallback) const {
    if (!has(key)) return fallback;
    const auto& v = j_.at(std::string(key));
    if (!v.is_number_integer()) throw SchemaError(child(key), "expected an integer");
    return v.get<int>();
  }

  double number_or(std::string_view key, double fallback) const {
    if (!has(key)) return fallback;
    const auto& v = j_.at(std::string(key));
    if (!v.is_number()) throw SchemaError(child(key), "expected a number");
    return v.get<double>();
  }

  const json& array(std::string_view key) const {
    const auto& v = required(key);
    if (!v.is_array()) throw SchemaError(child(key), "expected an array");
    return v;
  }

  const json* array_opt(std::string_view key) const {
    if (!has(key)) return nullptr;
    return &array(key);
  }

  template <typename E, std::size_t N>
  E enumeration(std::string_view key, const std::array<std::string_view, N>& names) const {
    auto s = string(key);
    auto e = lookup<E>(names, s);
    if (!e) throw SchemaError(child(key), "unknown value '" + s + "'");
    return *e;
  }

  const std::string& path() const { return path_; }

 private:
  const json& j_;
  std::string path_;
};

std::string indexed(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

std::vector<std::string> string_list(const json& arr, const std::string& path) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_string()) throw SchemaError(indexed(path, i), "expected a string");
    out.push_back(arr[i].get<std::string>());
  }
  return out;
}

VulnSpec parse_vuln(const json& j, const std::string& path) {
  Reader r(j, path);
  r.allow_only({"kind", "difficulty", "round_robin_group", "params"});
  VulnSpec v;
  v.kind = r.enumeration<VulnKind>("kind", kVulnKinds);
  v.difficulty = r.integer_or("difficulty", 1);
  if (v.difficulty < 1 || v.difficulty > 5) throw SchemaError(r.child("difficulty"), "must be within 1..5");
  if (r.has("round_robin_group")) v.round_robin_group = r.string("round_robin_group");
  if (r.has("params")) {
    const auto& p = r.required("params");
    if (!p.is_object()) throw SchemaError(r.child("params"), "expected an object");
    for (auto it = p.begin(); it != p.end(); ++it) {
      if (!it.value().is_string()) throw SchemaError(r.child("params") + "." + it.key(), "expected a string");
      v.params[it.key()] = it.value().get<std::string>();
    }
  }
  return v;
}

Clue parse_clue(const json& j, const std::string& path) {
  Reader r(j, path);
  r.allow_only({"kind", "asset"});
  return Clue{r.enumeration<ClueKind>("kind", kClueKinds), r.string("asset")};
}

Reward parse_reward(const json& j, const std::string& path) {
  Reader r(j, path);
  r.allow_only({"kind", "value"});
  return Reward{r.enumeration<RewardKind>("kind", kRewardKinds), r.string("value")};
}

Stage parse_stage(const json& j, const std::string& path) {
  Reader r(j, path);
  r.allow_only({"id", "name", "kind", "assets", "vulnerabilities", "clues", "rewards"});
  Stage s;
  s.id = r.string("id");
  if (s.id.empty()) throw SchemaError(r.child("id"), "must not be empty");
  s.name = r.string_or("name", s.id);
  s.kind = r.enumeration<StageKind>("kind", kStageKinds);
  if (auto* a = r.array_opt("assets")) s.assets = string_list(*a, r.child("assets"));
  if (auto* a = r.array_opt("vulnerabilities")) {
    for (std::size_t i = 0; i < a->size(); ++i)
      s.vulnerabilities.push_back(parse_vuln((*a)[i], indexed(r.child("vulnerabilities"), i)));
  }
  if (auto* a = r.array_opt("clues")) {
    for (std::size_t i = 0; i < a->size(); ++i) s.clues.push_back(parse_clue((*a)[i], indexed(r.child("clues"), i)));
  }
  if (auto* a = r.array_opt("rewards")) {
    for (std::size_t i = 0; i < a->size(); ++i)
      s.rewards.push_back(parse_reward((*a)[i], indexed(r.child("rewards"), i)));
  }
  if (s.kind == StageKind::Vulnerability && s.vulnerabilities.empty())
    throw SchemaError(r.child("vulnerabilities"), "Vulnerability stages need at least one entry");
  if (s.kind == StageKind::Reward && s.rewards.empty())
    throw SchemaError(r.child("rewards"), "Reward stages need at least one entry");
  return s;
}

PatternMatcher parse_matcher(const json& j, const std::string& path) {
  Reader r(j, path);
  r.allow_only({"path", "credentials", "payload_class", "success", "retry"});
  PatternMatcher m;
  if (r.has("path")) m.path = r.string("path");
  if (auto* a = r.array_opt("credentials")) m.credentials = string_list(*a, r.child("credentials"));
  if (r.has("payload_class")) {
    auto s = r.string("payload_class");
    m.payload_class = payload_class_from_string(s);
    if (!m.payload_class) throw SchemaError(r.child("payload_class"), "unknown value '" + s + "'");
  }
  if (r.has("success")) m.success = r.enumeration<SuccessRequirement>("success", kSuccessRequirements);
  m.retry = r.boolean_or("retry", false);
  return m;
}

ActionPattern parse_pattern(const json& j, const std::string& path) {
  Reader r(j, path);
  r.allow_only({"protocol", "action", "matcher"});
  ActionPattern p;
  auto proto = r.string("protocol");
  auto pp = protocol_from_string(proto);
  if (!pp) throw SchemaError(r.child("protocol"), "unknown value '" + proto + "'");
  p.protocol = *pp;
  auto act = r.string("action");
  auto ap = action_kind_from_string(act);
  if (!ap) throw SchemaError(r.child("action"), "unknown value '" + act + "'");
  p.action = *ap;
  if (!action_allowed_for(p.protocol, p.action))
    throw SchemaError(r.child("action"), act + " is not valid under " + proto);
  if (r.has("matcher")) p.matcher = parse_matcher(r.required("matcher"), r.child("matcher"));
  return p;
}

Transition parse_transition(const json& j, const std::string& path) {
  Reader r(j, path);
  r.allow_only({"from", "to", "trigger", "manipulation", "main_path", "priority"});
  Transition t;
  t.from = r.string("from");
  t.to = r.string("to");
  t.trigger = parse_pattern(r.required("trigger"), r.child("trigger"));
  t.manipulation = r.has("manipulation") ? r.enumeration<ManipulationTechnique>("manipulation", kManipulations)
                                         : ManipulationTechnique::None;
  t.main_path = r.boolean_or("main_path", false);
  t.priority = r.integer_or("priority", 0);
  if (t.priority < 0) throw SchemaError(r.child("priority"), "must be >= 0");
  if (t.from == t.to && !t.trigger.matcher.retry)
    throw SchemaError(r.child("to"), "self-loop requires a retry matcher");
  return t;
}

EngagementParams parse_engine(const json& j, const std::string& path) {
  Reader r(j, path);
  r.allow_only({"theta", "half_life_s", "w_depth", "w_diversity", "w_recency", "clue_cooldown_s"});
  EngagementParams p;
  p.theta = r.number_or("theta", p.theta);
  p.half_life_s = r.number_or("half_life_s", p.half_life_s);
  p.w_depth = r.number_or("w_depth", p.w_depth);
  p.w_diversity = r.number_or("w_diversity", p.w_diversity);
  p.w_recency = r.number_or("w_recency", p.w_recency);
  p.clue_cooldown_s = r.number_or("clue_cooldown_s", p.clue_cooldown_s);
  if (const char* problem = engagement_params_problem(p)) throw SchemaError(path, problem);
  return p;
}

json matcher_to_json(const PatternMatcher& m) {
  json j = json::object();
  if (m.path) j["path"] = *m.path;
  if (!m.credentials.empty()) j["credentials"] = m.credentials;
  if (m.payload_class) j["payload_class"] = std::string(to_string(*m.payload_class));
  if (m.success != SuccessRequirement::Success)
    j["success"] = std::string(kSuccessRequirements[static_cast<std::size_t>(m.success)]);
  if (m.retry) j["retry"] = true;
  return j;
}

bool glob_match(const std::string& pattern, const std::string& text) {
  return ::fnmatch(pattern.c_str(), text.c_str(), 0) == 0;
}

bool is_literal(const std::string& pattern) { return pattern.find_first_of("*?[") == std::string::npos; }

// Conservative disjointness: true only when no event can satisfy both.
bool provably_disjoint(const ActionPattern& a, const ActionPattern& b) {
  if (a.protocol != b.protocol || a.action != b.action) return true;
  const auto& ma = a.matcher;
  const auto& mb = b.matcher;
  if (ma.path && mb.path && is_literal(*ma.path) && is_literal(*mb.path) && *ma.path != *mb.path) return true;
  if ((ma.success == SuccessRequirement::Success && mb.success == SuccessRequirement::Failure) ||
      (ma.success == SuccessRequirement::Failure && mb.success == SuccessRequirement::Success))
    return true;
  return false;
}

void collect_service_assets(const json& j, std::vector<std::string>& out) {
  if (j.is_string()) {
    auto s = j.get<std::string>();
    if (s.rfind("asset:", 0) == 0) out.push_back(s.substr(6));
  } else if (j.is_array() || j.is_object()) {
    for (const auto& v : j) collect_service_assets(v, out);
  }
}

}  // namespace

const char* engagement_params_problem(const EngagementParams& p) {
  if (!(p.theta > 0.0 && p.theta < 1.0)) return "theta must lie strictly between 0 and 1";
  if (p.w_depth < 0 || p.w_diversity < 0 || p.w_recency < 0) return "weights must be non-negative";
  if (std::abs(p.w_depth + p.w_diversity + p.w_recency - 1.0) > 1e-9) return "weights must sum to 1";
  if (!(p.half_life_s > 0)) return "half_life_s must be positive";
  if (p.clue_cooldown_s < 0) return "clue_cooldown_s must be non-negative";
  return nullptr;
}

std::string_view to_string(StageKind k) { return kStageKinds[static_cast<std::size_t>(k)]; }
std::string_view to_string(ManipulationTechnique m) { return kManipulations[static_cast<std::size_t>(m)]; }
std::string_view to_string(VulnKind k) { return kVulnKinds[static_cast<std::size_t>(k)]; }
std::string_view to_string(ClueKind k) { return kClueKinds[static_cast<std::size_t>(k)]; }
std::string_view to_string(RewardKind k) { return kRewardKinds[static_cast<std::size_t>(k)]; }
std::string_view to_string(ViolationKind k) { return kViolationKinds[static_cast<std::size_t>(k)]; }

std::optional<StageKind> stage_kind_from_string(std::string_view s) { return lookup<StageKind>(kStageKinds, s); }
std::optional<ManipulationTechnique> manipulation_from_string(std::string_view s) {
  return lookup<ManipulationTechnique>(kManipulations, s);
}
std::optional<VulnKind> vuln_kind_from_string(std::string_view s) { return lookup<VulnKind>(kVulnKinds, s); }
std::optional<ClueKind> clue_kind_from_string(std::string_view s) { return lookup<ClueKind>(kClueKinds, s); }
std::optional<RewardKind> reward_kind_from_string(std::string_view s) { return lookup<RewardKind>(kRewardKinds, s); }

std::optional<VulnKind> vuln_kind_for(ActionKind a) {
  switch (a) {
    case ActionKind::RobotsFetch: return VulnKind::RobotsDisclosure;
    case ActionKind::LoginAttempt: return VulnKind::JsPasswordChecker;
    case ActionKind::SqlInjectionAttempt: return VulnKind::SqlInjectionLogin;
    case ActionKind::XssAttempt: return VulnKind::StoredXss;
    case ActionKind::FtpLogin: return VulnKind::DefaultCredentials;
    case ActionKind::SshLogin:
    case ActionKind::MqttConnect: return VulnKind::WeakCredentials;
    case ActionKind::ExploitAttempt: return VulnKind::ScriptedExploit;
    default: return std::nullopt;
  }
}

bool ActionPattern::matches(const ActionEvent& event) const {
  if (event.protocol != protocol || event.action != action) return false;
  switch (matcher.success) {
    case SuccessRequirement::Success:
      if (!event.success) return false;
      break;
    case SuccessRequirement::Failure:
      if (event.success) return false;
      break;
    case SuccessRequirement::Any:
      break;
  }
  if (matcher.path && !glob_match(*matcher.path, extract_target(protocol, event.raw))) return false;
  if (!matcher.credentials.empty()) {
    auto creds = extract_credentials(protocol, event.raw);
    auto colon = creds.find(':');
    auto user = creds.substr(0, colon);
    bool any = std::any_of(matcher.credentials.begin(), matcher.credentials.end(), [&](const std::string& c) {
      auto c_colon = c.find(':');
      if (c_colon == std::string::npos) return c == user;
      if (c.substr(0, c_colon) != user) return false;
      auto pass = c.substr(c_colon + 1);
      return pass == "*" || c == creds;
    });
    if (!any) return false;
  }
  if (matcher.payload_class) {
    auto cls = *matcher.payload_class;
    if (cls == PayloadClass::OversizedPayload) return event.raw.size() > 256;
    auto text = url_decode(event.raw);
    auto sql = sql_payload_classes(text);
    auto xss = xss_payload_classes(text);
    if (std::find(sql.begin(), sql.end(), cls) == sql.end() && std::find(xss.begin(), xss.end(), cls) == xss.end())
      return false;
  }
  return true;
}

const Stage* ScenarioGraph::find_stage(std::string_view id) const {
  for (const auto& s : stages) {
    if (s.id == id) return &s;
  }
  return nullptr;
}

std::filesystem::path ScenarioGraph::asset_path(std::string_view asset) const {
  return bundle_root / assets_dir / std::filesystem::path(asset);
}

ScenarioGraph parse_scenario(std::string_view config_text, std::filesystem::path bundle_root) {
  json doc;
  try {
    doc = json::parse(config_text);
  } catch (const json::parse_error& e) {
    throw SchemaError("", std::string("malformed JSON: ") + e.what());
  }
  Reader r(doc, "");
  r.allow_only({"id", "title", "entry", "stages", "transitions", "assets_dir", "engine", "planted_peers", "services"});

  ScenarioGraph g;
  g.bundle_root = std::move(bundle_root);
  g.id = r.string("id");
  if (g.id.empty()) throw SchemaError("id", "must not be empty");
  g.title = r.string("title");
  g.entry_stage = r.string("entry");
  g.assets_dir = r.string_or("assets_dir", "assets");

  const auto& stages = r.array("stages");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    auto s = parse_stage(stages[i], indexed("stages", i));
    if (g.find_stage(s.id)) throw DuplicateIdError("stages[" + std::to_string(i) + "].id: duplicate stage id '" + s.id + "'");
    g.stages.push_back(std::move(s));
  }
  std::map<std::string, std::string> group_owner;
  for (std::size_t i = 0; i < g.stages.size(); ++i) {
    const auto& s = g.stages[i];
    if (s.kind == StageKind::Terminal) g.terminal_stages.insert(s.id);
    if ((s.kind == StageKind::Entry) != (s.id == g.entry_stage))
      throw SchemaError(indexed("stages", i) + ".kind", "exactly the entry stage must have kind Entry");
    for (const auto& v : s.vulnerabilities) {
      if (!v.round_robin_group) continue;
      auto [it, inserted] = group_owner.emplace(*v.round_robin_group, s.id);
      if (!inserted && it->second != s.id)
        throw SchemaError(indexed("stages", i) + ".vulnerabilities",
                          "round_robin_group '" + *v.round_robin_group + "' spans stages");
    }
  }
  if (!g.find_stage(g.entry_stage)) throw SchemaError("entry", "unknown stage '" + g.entry_stage + "'");

  const auto& transitions = r.array("transitions");
  for (std::size_t i = 0; i < transitions.size(); ++i) {
    auto path = indexed("transitions", i);
    auto t = parse_transition(transitions[i], path);
    if (!g.find_stage(t.from)) throw SchemaError(path + ".from", "unknown stage '" + t.from + "'");
    if (!g.find_stage(t.to)) throw SchemaError(path + ".to", "unknown stage '" + t.to + "'");
    g.transitions.push_back(std::move(t));
  }

  if (r.has("engine")) g.engine = parse_engine(r.required("engine"), "engine");
  if (auto* peers = r.array_opt("planted_peers")) {
    for (std::size_t i = 0; i < peers->size(); ++i) {
      Reader pr((*peers)[i], indexed("planted_peers", i));
      pr.allow_only({"name", "score"});
      g.planted_peers.push_back(PlantedPeer{pr.string("name"), pr.integer_or("score", 0)});
    }
  }
  if (r.has("services")) {
    const auto& services = r.required("services");
    if (!services.is_object()) throw SchemaError("services", "expected an object");
    g.services = services;
  }
  return g;
}

ScenarioGraph load_scenario_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("", "cannot read scenario file '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str(), path.parent_path());
}

json scenario_to_json(const ScenarioGraph& g) {
  json stages = json::array();
  for (const auto& s : g.stages) {
    json js{{"id", s.id}, {"name", s.name}, {"kind", std::string(to_string(s.kind))}};
    if (!s.assets.empty()) js["assets"] = s.assets;
    if (!s.vulnerabilities.empty()) {
      json vs = json::array();
      for (const auto& v : s.vulnerabilities) {
        json jv{{"kind", std::string(to_string(v.kind))}, {"difficulty", v.difficulty}};
        if (v.round_robin_group) jv["round_robin_group"] = *v.round_robin_group;
        if (!v.params.empty()) jv["params"] = v.params;
        vs.push_back(std::move(jv));
      }
      js["vulnerabilities"] = std::move(vs);
    }
    if (!s.clues.empty()) {
      json cs = json::array();
      for (const auto& c : s.clues) cs.push_back({{"kind", std::string(to_string(c.kind))}, {"asset", c.asset}});
      js["clues"] = std::move(cs);
    }
    if (!s.rewards.empty()) {
      json rs = json::array();
      for (const auto& rw : s.rewards) rs.push_back({{"kind", std::string(to_string(rw.kind))}, {"value", rw.value}});
      js["rewards"] = std::move(rs);
    }
    stages.push_back(std::move(js));
  }
  json transitions = json::array();
  for (const auto& t : g.transitions) {
    json trigger{{"protocol", std::string(to_string(t.trigger.protocol))},
                 {"action", std::string(to_string(t.trigger.action))}};
    auto m = matcher_to_json(t.trigger.matcher);
    if (!m.empty()) trigger["matcher"] = std::move(m);
    transitions.push_back({{"from", t.from},
                           {"to", t.to},
                           {"trigger", std::move(trigger)},
                           {"manipulation", std::string(to_string(t.manipulation))},
                           {"main_path", t.main_path},
                           {"priority", t.priority}});
  }
  json peers = json::array();
  for (const auto& p : g.planted_peers) peers.push_back({{"name", p.name}, {"score", p.score}});
  json engine{{"theta", g.engine.theta},
              {"half_life_s", g.engine.half_life_s},
              {"w_depth", g.engine.w_depth},
              {"w_diversity", g.engine.w_diversity},
              {"w_recency", g.engine.w_recency},
              {"clue_cooldown_s", g.engine.clue_cooldown_s}};
  return json{{"id", g.id},
              {"title", g.title},
              {"entry", g.entry_stage},
              {"assets_dir", g.assets_dir},
              {"stages", std::move(stages)},
              {"transitions", std::move(transitions)},
              {"engine", std::move(engine)},
              {"planted_peers", std::move(peers)},
              {"services", g.services}};
}

std::string serialize_scenario(const ScenarioGraph& g) { return scenario_to_json(g).dump(2); }

std::size_t ValidationReport::count(ViolationKind k) const {
  return static_cast<std::size_t>(
      std::count_if(violations.begin(), violations.end(), [k](const Violation& v) { return v.kind == k; }));
}

std::string ValidationReport::to_string() const {
  if (violations.empty()) return "ok\n";
  std::ostringstream out;
  for (const auto& v : violations) {
    out << decoyweaver::to_string(v.kind);
    if (!v.stage.empty()) out << " [" << v.stage << "]";
    out << ": " << v.detail << "\n";
  }
  return out.str();
}

ValidationReport validate_graph(const ScenarioGraph& g) {
  ValidationReport report;
  auto add = [&](ViolationKind k, std::string stage, std::string detail) {
    report.violations.push_back(Violation{k, std::move(stage), std::move(detail)});
  };

  // Reachability from the entry.
  std::set<std::string> reached;
  if (g.find_stage(g.entry_stage)) {
    std::deque<std::string> queue{g.entry_stage};
    reached.insert(g.entry_stage);
    while (!queue.empty()) {
      auto cur = queue.front();
      queue.pop_front();
      for (const auto& t : g.transitions) {
        if (t.from == cur && reached.insert(t.to).second) queue.push_back(t.to);
      }
    }
  }
  for (const auto& s : g.stages) {
    if (!reached.count(s.id)) add(ViolationKind::UnreachableStage, s.id, "not reachable from entry '" + g.entry_stage + "'");
  }

  if (g.terminal_stages.empty()) add(ViolationKind::MissingTerminal, "", "no stage of kind Terminal");

  // Ambiguous triggers: same source stage and priority, overlapping patterns.
  for (std::size_t i = 0; i < g.transitions.size(); ++i) {
    for (std::size_t j = i + 1; j < g.transitions.size(); ++j) {
      const auto& a = g.transitions[i];
      const auto& b = g.transitions[j];
      if (a.from != b.from || a.priority != b.priority) continue;
      if (provably_disjoint(a.trigger, b.trigger)) continue;
      add(ViolationKind::AmbiguousTrigger, a.from,
          "transitions #" + std::to_string(i) + " and #" + std::to_string(j) + " share trigger " +
              std::string(to_string(a.trigger.protocol)) + "/" + std::string(to_string(a.trigger.action)) +
              " at priority " + std::to_string(a.priority));
    }
  }

  // Linear backbone: one main_path edge per non-terminal stage, walk ends at a terminal.
  std::map<std::string, std::vector<const Transition*>> mains;
  for (const auto& t : g.transitions) {
    if (t.main_path) mains[t.from].push_back(&t);
  }
  bool backbone_shape_ok = true;
  for (const auto& s : g.stages) {
    auto n = mains[s.id].size();
    bool terminal = g.terminal_stages.count(s.id) > 0;
    if (terminal && n > 0) {
      add(ViolationKind::BrokenBackbone, s.id, "terminal stage has a main_path transition");
      backbone_shape_ok = false;
    } else if (!terminal && n != 1) {
      add(ViolationKind::BrokenBackbone, s.id,
          "non-terminal stage has " + std::to_string(n) + " main_path transitions (expected 1)");
      backbone_shape_ok = false;
    }
  }
  if (backbone_shape_ok && g.find_stage(g.entry_stage)) {
    std::string cur = g.entry_stage;
    std::set<std::string> seen{cur};
    for (std::size_t steps = 0;; ++steps) {
      if (g.terminal_stages.count(cur)) break;
      if (steps >= g.stages.size()) {
        add(ViolationKind::BrokenBackbone, cur, "main path does not terminate");
        break;
      }
      cur = mains[cur].front()->to;
      if (!seen.insert(cur).second) {
        add(ViolationKind::BrokenBackbone, cur, "main path revisits a stage");
        break;
      }
    }
  }

  // Every referenced asset must exist in the bundle.
  auto check_asset = [&](const std::string& stage, const std::string& asset) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(g.asset_path(asset), ec))
      add(ViolationKind::DanglingAsset, stage, "asset '" + asset + "' not found under " + g.assets_dir);
  };
  for (const auto& s : g.stages) {
    for (const auto& a : s.assets) check_asset(s.id, a);
    for (const auto& c : s.clues) check_asset(s.id, c.asset);
    for (const auto& rw : s.rewards) {
      if (rw.kind == RewardKind::InfoFile) check_asset(s.id, rw.value);
    }
  }
  std::vector<std::string> service_assets;
  collect_service_assets(g.services, service_assets);
  for (const auto& a : service_assets) check_asset("", a);

  return report;
}

RuntimeStateMachine::RuntimeStateMachine(ScenarioGraph g) : graph_(std::move(g)) {
  for (std::size_t i = 0; i < graph_.stages.size(); ++i) stage_index_.emplace(graph_.stages[i].id, i);
  outgoing_.resize(graph_.stages.size());
  for (const auto& t : graph_.transitions) outgoing_[stage_index_.at(t.from)].push_back(&t);
  for (auto& list : outgoing_) {
    std::stable_sort(list.begin(), list.end(),
                     [](const Transition* a, const Transition* b) { return a->priority > b->priority; });
  }

  std::string cur = graph_.entry_stage;
  backbone_.push_back(cur);
  while (!graph_.terminal_stages.count(cur) && backbone_.size() <= graph_.stages.size()) {
    const Transition* main = nullptr;
    for (const auto* t : outgoing_[stage_index_.at(cur)]) {
      if (t->main_path) main = t;
    }
    if (!main) break;
    cur = main->to;
    backbone_.push_back(cur);
  }

  auto cap = backbone_length();
  depth_.assign(graph_.stages.size(), cap);
  std::vector<bool> seen(graph_.stages.size(), false);
  std::deque<std::size_t> queue;
  auto entry = stage_index_.at(graph_.entry_stage);
  depth_[entry] = 0;
  seen[entry] = true;
  queue.push_back(entry);
  while (!queue.empty()) {
    auto cur_idx = queue.front();
    queue.pop_front();
    for (const auto* t : outgoing_[cur_idx]) {
      auto next = stage_index_.at(t->to);
      if (seen[next]) continue;
      seen[next] = true;
      depth_[next] = std::min(depth_[cur_idx] + 1, cap);
      queue.push_back(next);
    }
  }
  for (std::size_t i = 0; i < backbone_.size(); ++i) depth_[stage_index_.at(backbone_[i])] = i;

  for (const auto& s : graph_.stages) {
    for (const auto& v : s.vulnerabilities) default_vulns_.emplace(v.kind, &v);
  }
}

const Stage* RuntimeStateMachine::find_stage(std::string_view id) const {
  auto it = stage_index_.find(std::string(id));
  return it == stage_index_.end() ? nullptr : &graph_.stages[it->second];
}

bool RuntimeStateMachine::is_terminal(std::string_view stage) const {
  return graph_.terminal_stages.count(std::string(stage)) > 0;
}

std::span<const Transition* const> RuntimeStateMachine::transitions_from(std::string_view stage) const {
  auto it = stage_index_.find(std::string(stage));
  if (it == stage_index_.end()) return {};
  return outgoing_[it->second];
}

const Transition* RuntimeStateMachine::match(std::string_view stage, const ActionEvent& event) const {
  for (const auto* t : transitions_from(stage)) {
    if (t->trigger.matches(event)) return t;
  }
  return nullptr;
}

std::optional<std::size_t> RuntimeStateMachine::backbone_index(std::string_view stage) const {
  for (std::size_t i = 0; i < backbone_.size(); ++i) {
    if (backbone_[i] == stage) return i;
  }
  return std::nullopt;
}

std::size_t RuntimeStateMachine::depth(std::string_view stage) const {
  auto it = stage_index_.find(std::string(stage));
  return it == stage_index_.end() ? 0 : depth_[it->second];
}

const VulnSpec* RuntimeStateMachine::default_vuln(VulnKind kind) const {
  auto it = default_vulns_.find(kind);
  return it == default_vulns_.end() ? nullptr : it->second;
}

std::string RuntimeStateMachine::serialize() const {
  json outgoing = json::object();
  for (std::size_t i = 0; i < outgoing_.size(); ++i) {
    json list = json::array();
    for (const auto* t : outgoing_[i]) list.push_back(static_cast<std::size_t>(t - graph_.transitions.data()));
    outgoing[graph_.stages[i].id] = std::move(list);
  }
  json depth = json::object();
  for (std::size_t i = 0; i < depth_.size(); ++i) depth[graph_.stages[i].id] = depth_[i];
  json doc{{"graph", scenario_to_json(graph_)}, {"outgoing", outgoing}, {"backbone", backbone_}, {"depth", depth}};
  return doc.dump();
}

std::shared_ptr<const RuntimeStateMachine> compile_runtime(const ScenarioGraph& g) {
  auto report = validate_graph(g);
  if (!report.ok()) throw CompileError("scenario '" + g.id + "' is invalid:\n" + report.to_string());
  return std::make_shared<const RuntimeStateMachine>(g);
}

}  // namespace decoyweaver
