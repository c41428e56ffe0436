#pragma once

// Flow-narrative funnels, drop-out rates and dwell times from event logs.

#include <filesystem>
#include <string>
#include <vector>

#include "decoyweaver/event_log.hpp"
#include "decoyweaver/scenario.hpp"
#include "json.hpp"

namespace decoyweaver {

// Half-up rounding to one decimal place.
double round1(double value);

struct StageStat {
  std::string stage;
  bool main_path = false;
  std::string previous;  // stage used as the pct_of_previous base
  std::size_t entrants = 0;
  std::size_t advancers = 0;
  std::size_t dropouts = 0;
  double pct_of_total = 0;     // entrants / total sessions
  double pct_of_previous = 0;  // entrants / entrants of `previous`
  double pct_dropout = 0;      // dropouts / total sessions

  bool operator==(const StageStat&) const = default;
};

struct ActionStat {
  ActionKind action = ActionKind::Other;
  std::size_t sessions_attempted = 0;
  std::size_t sessions_succeeded = 0;
  double pct_attempted = 0;  // of total sessions
  double pct_succeeded = 0;

  bool operator==(const ActionStat&) const = default;
};

struct FunnelReport {
  std::string scenario_id;
  std::size_t total_sessions = 0;
  std::vector<StageStat> stages;  // backbone order, then side stages
  std::vector<ActionStat> actions;
  double mean_dwell_min = 0;       // unrounded
  double attack_attempt_rate = 0;  // % of sessions with at least one attack
  double attack_success_rate = 0;  // % of sessions with at least one successful attack
  std::size_t malformed_records = 0;
  std::vector<std::size_t> malformed_lines;

  const StageStat* stage(std::string_view id) const;
  const ActionStat* action(ActionKind kind) const;

  bool operator==(const FunnelReport&) const = default;
};

// Throws ScenarioMismatch when a record names another scenario.
FunnelReport build_funnel(const std::vector<EventRecord>& records, const ScenarioGraph& graph);
FunnelReport build_funnel(const LogReadResult& log, const ScenarioGraph& graph);
FunnelReport build_funnel_from_file(const std::filesystem::path& log, const ScenarioGraph& graph);

struct StageDivergence {
  std::string stage;
  double d_total = 0;     // |a.pct_of_total - b.pct_of_total|, percentage points
  double d_previous = 0;  // |a.pct_of_previous - b.pct_of_previous|

  bool operator==(const StageDivergence&) const = default;
};

struct FunnelDivergence {
  std::vector<StageDivergence> stages;
  double max_divergence = 0;
  double dwell_delta_min = 0;

  bool operator==(const FunnelDivergence&) const = default;
};

FunnelDivergence compare_funnels(const FunnelReport& a, const FunnelReport& b);

enum class ReportFormat { Text, Json };

std::string render_report(const FunnelReport& report, ReportFormat format);
nlohmann::json report_to_json(const FunnelReport& report);
FunnelReport report_from_json(const nlohmann::json& j);

}  // namespace decoyweaver
