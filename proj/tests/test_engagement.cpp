#include "decoyweaver/engagement.hpp"

#include <cmath>
#include <set>

#include "doctest.h"
#include "decoyweaver/errors.hpp"
#include "decoyweaver/rng.hpp"
#include "support.hpp"

using namespace decoyweaver;
using nlohmann::json;

namespace {

constexpr TimestampMs T0 = 1717200000000;

EngagementParams defaults() { return EngagementParams{}; }

Session fresh(const RuntimeStateMachine& m) { return new_session(m, {"10.1.1.1", T0}, T0, T0); }

}  // namespace

TEST_SUITE("engagement") {
  TEST_CASE("closed form at the origin, after one half-life, and mid-story") {
    auto p = defaults();
    CHECK(engagement_score(0, 0, 6, 0, p) == doctest::Approx(0.5));
    CHECK(engagement_score(p.half_life_s, 0, 6, 0, p) == doctest::Approx(0.25));
    CHECK(engagement_score(0, 3, 6, 7, p) == doctest::Approx(0.75));
  }

  TEST_CASE("score stays in [0,1]") {
    Rng rng(3);
    auto p = defaults();
    for (int i = 0; i < 1000; ++i) {
      double idle = rng.uniform() * 1e5;
      std::size_t len = rng.below(10) + 1;
      double s = engagement_score(idle, rng.below(len + 1), len, rng.below(kActionKindCount + 1), p);
      CHECK(s >= 0.0);
      CHECK(s <= 1.0);
    }
    CHECK(engagement_score(0, 0, 0, 0, p) >= 0.0);
  }

  TEST_CASE("params validation") {
    CHECK(engagement_params_problem(defaults()) == nullptr);
    auto p = defaults();
    p.theta = 1.0;
    CHECK(engagement_params_problem(p) != nullptr);
    p = defaults();
    p.w_depth = 0.5;
    CHECK(engagement_params_problem(p) != nullptr);
  }

  TEST_CASE("compute_engagement is a pure function of its inputs") {
    auto m = dwtest::bundle("shop");
    auto s = fresh(*m);
    auto a = compute_engagement(s, *m, T0 + 77000, defaults());
    auto b = compute_engagement(s, *m, T0 + 77000, defaults());
    CHECK(a == b);
    CHECK(compute_engagement(s, *m, T0, defaults()) == doctest::Approx(0.5));
  }

  TEST_CASE("idle past half-life with theta 0.35 emits the first clue") {
    auto m = dwtest::bundle("shop");
    auto s = fresh(*m);
    REQUIRE(m->find_stage("shop_front")->clues.size() == 2);
    auto now = T0 + static_cast<TimestampMs>(defaults().half_life_s * 1000) + 1;
    CHECK(compute_engagement(s, *m, now, defaults()) < 0.35);
    auto clue = maybe_emit_clue(s, *m, now, defaults());
    REQUIRE(clue);
    CHECK(*clue == m->find_stage("shop_front")->clues[0]);
    CHECK(s.clue_cursors["shop_front"] == 1);
  }

  TEST_CASE("engaged attacker gets no clue") {
    auto m = dwtest::bundle("shop");
    auto s = fresh(*m);
    CHECK_FALSE(maybe_emit_clue(s, *m, T0, defaults()));
    CHECK(s.clue_cursors["shop_front"] == 0);
  }

  TEST_CASE("exhausted clue list stays silent") {
    auto m = dwtest::bundle("shop");
    auto s = fresh(*m);
    s.clue_cursors["shop_front"] = 2;
    CHECK_FALSE(maybe_emit_clue(s, *m, T0 + 3600000, defaults()));
  }

  TEST_CASE("cooldown separates clues") {
    auto m = dwtest::bundle("shop");
    auto s = fresh(*m);
    auto now = T0 + 600000;
    REQUIRE(maybe_emit_clue(s, *m, now, defaults()));
    CHECK_FALSE(maybe_emit_clue(s, *m, now + 1000, defaults()));
    CHECK(maybe_emit_clue(s, *m, now + 121000, defaults()));
  }

  TEST_CASE("no clue is ever served twice") {
    auto m = dwtest::bundle("shop");
    Rng rng(17);
    for (int trial = 0; trial < 40; ++trial) {
      auto s = fresh(*m);
      std::set<std::pair<std::string, std::size_t>> served;
      TimestampMs now = T0;
      for (int i = 0; i < 60; ++i) {
        now += static_cast<TimestampMs>(rng.below(900000));
        if (rng.below(4) == 0) {
          static const std::vector<std::string> stages = {"shop_front", "admin_disclosed", "login", "reviews",
                                                          "admin"};
          s.current_stage = stages[rng.below(stages.size())];
        }
        auto before = s.clue_cursors[s.current_stage];
        auto clue = maybe_emit_clue(s, *m, now, defaults());
        if (clue) {
          CHECK(served.insert({s.current_stage, before}).second);
          CHECK(s.clue_cursors[s.current_stage] == before + 1);
        } else {
          CHECK(s.clue_cursors[s.current_stage] == before);
        }
      }
    }
  }

  TEST_CASE("difficulty rule table") {
    CHECK(next_difficulty(3, {false, false, false}) == 2);
    CHECK(next_difficulty(1, {false, false, false}) == 1);
    CHECK(next_difficulty(5, {true, true}) == 5);
    CHECK(next_difficulty(2, {true, true}) == 3);
    CHECK(next_difficulty(3, {true, false}) == 3);
    CHECK(next_difficulty(3, {false, false}) == 3);
  }

  TEST_CASE("adjust_difficulty updates the session") {
    auto m = dwtest::bundle("shop");
    auto s = fresh(*m);
    VulnSpec v{VulnKind::StoredXss, 3, {}, {}};
    s.difficulty_state[VulnKind::StoredXss] = 3;
    CHECK(adjust_difficulty(s, v, {false, false, false}) == 2);
    CHECK(s.difficulty(VulnKind::StoredXss) == 2);
  }

  TEST_CASE("difficulty stays within 1..5 under random outcomes") {
    Rng rng(23);
    for (int trial = 0; trial < 200; ++trial) {
      int level = static_cast<int>(rng.between(1, 5));
      std::vector<bool> window;
      for (int i = 0; i < 100; ++i) {
        window.push_back(rng.below(2) == 1);
        int next = next_difficulty(level, window);
        CHECK(next >= 1);
        CHECK(next <= 5);
        if (next != level) window.clear();
        level = next;
      }
    }
  }

  TEST_CASE("round robin cycles") {
    VulnSpec a{VulnKind::ScriptedExploit, 1, "g", {{"variant", "A"}}};
    VulnSpec b{VulnKind::ScriptedExploit, 1, "g", {{"variant", "B"}}};
    VulnSpec c{VulnKind::ScriptedExploit, 1, "g", {{"variant", "C"}}};
    std::vector<const VulnSpec*> group = {&a, &b, &c};
    std::size_t cursor = 0;
    std::vector<std::string> seen;
    for (int i = 0; i < 4; ++i) seen.push_back(next_round_robin(group, cursor).params.at("variant"));
    CHECK(seen == std::vector<std::string>{"A", "B", "C", "A"});
    std::vector<const VulnSpec*> single = {&a};
    std::size_t c1 = 0;
    for (int i = 0; i < 5; ++i) CHECK(&next_round_robin(single, c1) == &a);
    std::vector<const VulnSpec*> none;
    CHECK_THROWS_AS(next_round_robin(none, c1), EmptyGroup);
  }

  TEST_CASE("round robin fairness over k rounds") {
    std::vector<VulnSpec> specs(5);
    std::vector<const VulnSpec*> group;
    for (auto& s : specs) group.push_back(&s);
    for (std::size_t start : {0u, 3u, 11u}) {
      for (std::size_t k : {1u, 4u, 9u}) {
        std::size_t cursor = start;
        std::map<const VulnSpec*, std::size_t> counts;
        for (std::size_t i = 0; i < k * group.size(); ++i) ++counts[&next_round_robin(group, cursor)];
        for (auto* m : group) CHECK(counts[m] == k);
      }
    }
  }

  TEST_CASE("round robin cursor survives a restart") {
    dwtest::TempDir dir;
    VulnSpec a{VulnKind::ScriptedExploit, 1, "g", {{"variant", "A"}}};
    VulnSpec b{VulnKind::ScriptedExploit, 1, "g", {{"variant", "B"}}};
    std::vector<const VulnSpec*> group = {&a, &b};
    {
      RoundRobinState st(dir / "rr.json");
      CHECK(&st.next("g", group) == &a);
    }
    RoundRobinState again(dir / "rr.json");
    CHECK(again.cursor("g") == 1);
    CHECK(&again.next("g", group) == &b);
  }

  TEST_CASE("bundle round-robin members share a group") {
    auto m = dwtest::bundle("ftp");
    auto members = round_robin_members(m->graph(), "legacyd");
    CHECK(members.size() == 3);
  }

  TEST_CASE("reciprocity gate") {
    auto m = dwtest::bundle("shop");
    auto s = fresh(*m);
    Reward badge{RewardKind::Badge, "defacer"};
    CHECK(reciprocity_gate(s, badge) == GateDecision::Grant);
    CHECK(reciprocity_gate(s, badge) == GateDecision::Grant);
    CHECK(std::count(s.badges.begin(), s.badges.end(), "defacer") == 1);
    auto bot = fresh(*m);
    bot.flags.scanner_suspected = true;
    CHECK(reciprocity_gate(bot, badge) == GateDecision::Withhold);
    CHECK(bot.badges.empty());
    CHECK(bot.rewards.empty());
  }

  TEST_CASE("gate withholds exactly when scanner_suspected") {
    auto m = dwtest::bundle("shop");
    Rng rng(41);
    for (int i = 0; i < 200; ++i) {
      auto s = fresh(*m);
      s.flags.scanner_suspected = rng.below(2) == 1;
      Reward r{static_cast<RewardKind>(rng.below(4)), "r" + std::to_string(rng.below(3))};
      auto d = reciprocity_gate(s, r);
      CHECK((d == GateDecision::Withhold) == s.flags.scanner_suspected);
      CHECK(s.rewards.size() == (s.flags.scanner_suspected ? 0u : 1u));
    }
  }

  TEST_CASE("operator redirect and coercion") {
    auto m = dwtest::bundle("shop");
    auto s = fresh(*m);
    OperatorAction a;
    a.kind = OperatorAction::Kind::ForceRedirect;
    a.stage = "reviews";
    a.operator_id = "op1";
    auto out = apply_operator_action(s, a, *m);
    CHECK(out == TransitionOutcome::redirected("reviews", "op1"));
    CHECK(s.current_stage == "reviews");
    CHECK(s.flags.operator_locked);

    OperatorAction msg;
    msg.kind = OperatorAction::Kind::CoerciveMessage;
    msg.text = "ACCESS LOGGED";
    apply_operator_action(s, msg, *m);
    CHECK(s.pending_messages == std::vector<std::string>{"ACCESS LOGGED"});

    a.stage = "nowhere";
    CHECK_THROWS_AS(apply_operator_action(s, a, *m), UnknownStage);
    s.closed = true;
    CHECK_THROWS_AS(apply_operator_action(s, msg, *m), SessionClosed);
  }

  TEST_CASE("operator serve clue and set difficulty") {
    auto m = dwtest::bundle("shop");
    auto s = fresh(*m);
    OperatorAction a;
    a.kind = OperatorAction::Kind::ServeClue;
    a.clue_index = 1;
    apply_operator_action(s, a, *m);
    CHECK(s.clue_cursors["shop_front"] == 2);
    CHECK(s.pending_clues.size() == 1);
    a.clue_index = 0;
    apply_operator_action(s, a, *m);
    CHECK(s.pending_clues.size() == 1);
    a.clue_index = 9;
    CHECK_THROWS_AS(apply_operator_action(s, a, *m), InvalidAction);

    OperatorAction d;
    d.kind = OperatorAction::Kind::SetDifficulty;
    d.vuln = VulnKind::SqlInjectionLogin;
    d.level = 4;
    apply_operator_action(s, d, *m);
    CHECK(s.difficulty(VulnKind::SqlInjectionLogin) == 4);
  }

  TEST_CASE("operator action codec") {
    auto a = operator_action_from_json(json::parse(R"({"kind":"ForceRedirect","stage":"login","operator_id":"x"})"));
    CHECK(a.kind == OperatorAction::Kind::ForceRedirect);
    CHECK(a.stage == "login");
    CHECK(operator_action_from_json(operator_action_to_json(a)) == a);
    OperatorAction g;
    g.kind = OperatorAction::Kind::GrantReward;
    g.reward = Reward{RewardKind::Trophy, "t"};
    CHECK(operator_action_from_json(operator_action_to_json(g)) == g);
    CHECK_THROWS_AS(operator_action_from_json(json::parse(R"({"kind":"Teleport"})")), InvalidAction);
    CHECK_THROWS_AS(operator_action_from_json(json::parse(R"({"kind":"SetDifficulty","vuln":"StoredXss","level":9})")),
                    InvalidAction);
    CHECK_THROWS_AS(operator_action_from_json(json::parse(R"({"kind":"CoerciveMessage","text":""})")), InvalidAction);
    CHECK_THROWS_AS(operator_action_from_json(json::parse("[1]")), InvalidAction);
  }
}
