#pragma once

namespace decoyweaver {

// Tuning knobs for engagement scoring and threshold clue injection.
// Weights must sum to 1 and theta must lie strictly inside (0, 1).
struct EngagementParams {
  double theta = 0.35;
  double half_life_s = 300.0;
  double w_depth = 0.3;
  double w_diversity = 0.2;
  double w_recency = 0.5;
  double clue_cooldown_s = 120.0;

  bool operator==(const EngagementParams&) const = default;
};

// nullptr when valid, otherwise a description of the first violation.
const char* engagement_params_problem(const EngagementParams& p);

}  // namespace decoyweaver
