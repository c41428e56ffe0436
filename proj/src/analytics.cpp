#include "decoyweaver/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "decoyweaver/errors.hpp"

namespace decoyweaver {

using nlohmann::json;

double round1(double value) {
  // The epsilon keeps values such as 0.05 (stored as 0.04999...) rounding up.
  return std::floor(value * 10.0 + 0.5 + 1e-9) / 10.0;
}

const StageStat* FunnelReport::stage(std::string_view id) const {
  for (const auto& s : stages) {
    if (s.stage == id) return &s;
  }
  return nullptr;
}

const ActionStat* FunnelReport::action(ActionKind kind) const {
  for (const auto& a : actions) {
    if (a.action == kind) return &a;
  }
  return nullptr;
}

namespace {

double pct(std::size_t part, std::size_t whole) {
  return whole == 0 ? 0.0 : round1(100.0 * static_cast<double>(part) / static_cast<double>(whole));
}

struct SessionTrace {
  std::vector<const EventRecord*> records;
};

}  // namespace

FunnelReport build_funnel(const std::vector<EventRecord>& records, const ScenarioGraph& graph) {
  FunnelReport report;
  report.scenario_id = graph.id;

  std::map<std::string, SessionTrace> sessions;
  for (const auto& r : records) {
    if (!r.scenario.empty() && r.scenario != graph.id)
      throw ScenarioMismatch("record for scenario '" + r.scenario + "' in a '" + graph.id + "' funnel");
    sessions[r.session_id].records.push_back(&r);
  }
  report.total_sessions = sessions.size();

  // Stage order: backbone first, then the remaining stages as declared.
  std::vector<std::string> backbone;
  std::set<std::string> on_backbone;
  {
    std::string cur = graph.entry_stage;
    while (graph.find_stage(cur) && on_backbone.insert(cur).second) {
      backbone.push_back(cur);
      if (graph.terminal_stages.count(cur)) break;
      auto it = std::find_if(graph.transitions.begin(), graph.transitions.end(),
                             [&](const Transition& t) { return t.from == cur && t.main_path; });
      if (it == graph.transitions.end()) break;
      cur = it->to;
    }
  }
  std::vector<std::string> order = backbone;
  for (const auto& s : graph.stages) {
    if (!on_backbone.count(s.id)) order.push_back(s.id);
  }

  std::map<std::string, std::size_t> entrants, dropouts;
  std::map<ActionKind, std::size_t> attempted, succeeded;
  double dwell_total_ms = 0;
  std::size_t attackers = 0, successful_attackers = 0;

  for (auto& [id, trace] : sessions) {
    auto& recs = trace.records;
    std::stable_sort(recs.begin(), recs.end(), [](const EventRecord* a, const EventRecord* b) {
      return a->ts != b->ts ? a->ts < b->ts : a->seq < b->seq;
    });
    std::set<std::string> visited{graph.entry_stage};
    std::set<ActionKind> tried, won;
    bool attacked = false, attack_won = false;
    for (const auto* r : recs) {
      visited.insert(r->stage_before);
      visited.insert(r->stage_after);
      if (r->is_operator()) continue;
      tried.insert(r->action);
      if (r->success) won.insert(r->action);
      if (is_attack(r->action)) {
        attacked = true;
        if (r->success) attack_won = true;
      }
    }
    for (const auto& s : visited) ++entrants[s];
    ++dropouts[recs.empty() ? graph.entry_stage : recs.back()->stage_after];
    for (auto k : tried) ++attempted[k];
    for (auto k : won) ++succeeded[k];
    if (attacked) ++attackers;
    if (attack_won) ++successful_attackers;
    if (!recs.empty()) dwell_total_ms += static_cast<double>(recs.back()->ts - recs.front()->ts);
  }

  for (const auto& id : order) {
    StageStat st;
    st.stage = id;
    st.main_path = on_backbone.count(id) > 0;
    if (st.main_path) {
      auto pos = std::find(backbone.begin(), backbone.end(), id) - backbone.begin();
      st.previous = pos == 0 ? id : backbone[static_cast<std::size_t>(pos - 1)];
    } else {
      for (const auto& t : graph.transitions) {
        if (t.to == id && t.from != id) {
          st.previous = t.from;
          break;
        }
      }
      if (st.previous.empty()) st.previous = id;
    }
    st.entrants = entrants[id];
    st.dropouts = dropouts[id];
    st.advancers = st.entrants - st.dropouts;
    st.pct_of_total = pct(st.entrants, report.total_sessions);
    st.pct_of_previous = st.previous == id ? pct(st.entrants, report.total_sessions) : pct(st.entrants, entrants[st.previous]);
    st.pct_dropout = pct(st.dropouts, report.total_sessions);
    report.stages.push_back(std::move(st));
  }

  for (auto kind : kAllActionKinds) {
    if (!attempted.count(kind)) continue;
    ActionStat a;
    a.action = kind;
    a.sessions_attempted = attempted[kind];
    a.sessions_succeeded = succeeded[kind];
    a.pct_attempted = pct(a.sessions_attempted, report.total_sessions);
    a.pct_succeeded = pct(a.sessions_succeeded, report.total_sessions);
    report.actions.push_back(a);
  }

  if (report.total_sessions > 0) {
    report.mean_dwell_min = dwell_total_ms / 60000.0 / static_cast<double>(report.total_sessions);
    report.attack_attempt_rate = pct(attackers, report.total_sessions);
    report.attack_success_rate = pct(successful_attackers, report.total_sessions);
  }
  return report;
}

FunnelReport build_funnel(const LogReadResult& log, const ScenarioGraph& graph) {
  auto report = build_funnel(log.records, graph);
  report.malformed_records = log.malformed_lines.size();
  report.malformed_lines = log.malformed_lines;
  return report;
}

FunnelReport build_funnel_from_file(const std::filesystem::path& log, const ScenarioGraph& graph) {
  return build_funnel(read_event_log(log), graph);
}

FunnelDivergence compare_funnels(const FunnelReport& a, const FunnelReport& b) {
  if (a.scenario_id != b.scenario_id)
    throw ScenarioMismatch("cannot compare funnels of '" + a.scenario_id + "' and '" + b.scenario_id + "'");
  FunnelDivergence d;
  std::set<std::string> ids;
  for (const auto& s : a.stages) ids.insert(s.stage);
  for (const auto& s : b.stages) ids.insert(s.stage);
  for (const auto& id : ids) {
    const auto* sa = a.stage(id);
    const auto* sb = b.stage(id);
    StageDivergence sd;
    sd.stage = id;
    sd.d_total = std::abs((sa ? sa->pct_of_total : 0.0) - (sb ? sb->pct_of_total : 0.0));
    sd.d_previous = std::abs((sa ? sa->pct_of_previous : 0.0) - (sb ? sb->pct_of_previous : 0.0));
    d.max_divergence = std::max({d.max_divergence, sd.d_total, sd.d_previous});
    d.stages.push_back(sd);
  }
  d.dwell_delta_min = std::abs(a.mean_dwell_min - b.mean_dwell_min);
  return d;
}

json report_to_json(const FunnelReport& r) {
  json stages = json::array();
  for (const auto& s : r.stages) {
    stages.push_back({{"stage", s.stage},
                      {"main_path", s.main_path},
                      {"previous", s.previous},
                      {"entrants", s.entrants},
                      {"advancers", s.advancers},
                      {"dropouts", s.dropouts},
                      {"pct_of_total", s.pct_of_total},
                      {"pct_of_previous", s.pct_of_previous},
                      {"pct_dropout", s.pct_dropout}});
  }
  json actions = json::array();
  for (const auto& a : r.actions) {
    actions.push_back({{"action", std::string(to_string(a.action))},
                       {"sessions_attempted", a.sessions_attempted},
                       {"sessions_succeeded", a.sessions_succeeded},
                       {"pct_attempted", a.pct_attempted},
                       {"pct_succeeded", a.pct_succeeded}});
  }
  return json{{"scenario_id", r.scenario_id},
              {"total_sessions", r.total_sessions},
              {"stages", stages},
              {"actions", actions},
              {"mean_dwell_min", r.mean_dwell_min},
              {"attack_attempt_rate", r.attack_attempt_rate},
              {"attack_success_rate", r.attack_success_rate},
              {"malformed_records", r.malformed_records},
              {"malformed_lines", r.malformed_lines}};
}

FunnelReport report_from_json(const json& j) {
  FunnelReport r;
  r.scenario_id = j.at("scenario_id").get<std::string>();
  r.total_sessions = j.at("total_sessions").get<std::size_t>();
  for (const auto& s : j.at("stages")) {
    StageStat st;
    st.stage = s.at("stage").get<std::string>();
    st.main_path = s.at("main_path").get<bool>();
    st.previous = s.at("previous").get<std::string>();
    st.entrants = s.at("entrants").get<std::size_t>();
    st.advancers = s.at("advancers").get<std::size_t>();
    st.dropouts = s.at("dropouts").get<std::size_t>();
    st.pct_of_total = s.at("pct_of_total").get<double>();
    st.pct_of_previous = s.at("pct_of_previous").get<double>();
    st.pct_dropout = s.at("pct_dropout").get<double>();
    r.stages.push_back(std::move(st));
  }
  for (const auto& a : j.at("actions")) {
    ActionStat st;
    auto kind = action_kind_from_string(a.at("action").get<std::string>());
    if (!kind) throw Error("unknown action in report JSON");
    st.action = *kind;
    st.sessions_attempted = a.at("sessions_attempted").get<std::size_t>();
    st.sessions_succeeded = a.at("sessions_succeeded").get<std::size_t>();
    st.pct_attempted = a.at("pct_attempted").get<double>();
    st.pct_succeeded = a.at("pct_succeeded").get<double>();
    r.actions.push_back(st);
  }
  r.mean_dwell_min = j.at("mean_dwell_min").get<double>();
  r.attack_attempt_rate = j.at("attack_attempt_rate").get<double>();
  r.attack_success_rate = j.at("attack_success_rate").get<double>();
  r.malformed_records = j.at("malformed_records").get<std::size_t>();
  r.malformed_lines = j.at("malformed_lines").get<std::vector<std::size_t>>();
  return r;
}

std::string render_report(const FunnelReport& r, ReportFormat format) {
  if (format == ReportFormat::Json) return report_to_json(r).dump(2) + "\n";
  std::ostringstream out;
  char line[256];
  out << "scenario " << r.scenario_id << ": " << r.total_sessions << " sessions\n\n";
  std::snprintf(line, sizeof line, "%-22s %-4s %9s %9s %9s %8s %8s\n", "stage", "path", "entrants", "advanced",
                "dropped", "%total", "%prev");
  out << line;
  for (const auto& s : r.stages) {
    std::snprintf(line, sizeof line, "%-22s %-4s %9zu %9zu %9zu %8.1f %8.1f\n", s.stage.c_str(),
                  s.main_path ? "main" : "side", s.entrants, s.advancers, s.dropouts, s.pct_of_total,
                  s.pct_of_previous);
    out << line;
  }
  if (!r.actions.empty()) {
    out << "\n";
    std::snprintf(line, sizeof line, "%-22s %9s %9s %9s %9s\n", "action", "tried", "%tried", "won", "%won");
    out << line;
    for (const auto& a : r.actions) {
      std::snprintf(line, sizeof line, "%-22s %9zu %9.1f %9zu %9.1f\n", std::string(to_string(a.action)).c_str(),
                    a.sessions_attempted, a.pct_attempted, a.sessions_succeeded, a.pct_succeeded);
      out << line;
    }
  }
  std::snprintf(line, sizeof line, "\nmean dwell %.2f min, attack attempted %.1f%%, attack succeeded %.1f%%\n",
                r.mean_dwell_min, r.attack_attempt_rate, r.attack_success_rate);
  out << line;
  if (r.malformed_records > 0) out << r.malformed_records << " malformed record(s) skipped\n";
  return out.str();
}

}  // namespace decoyweaver
