#include "decoyweaver/session_manager.hpp"

#include <thread>

#include "doctest.h"
#include "decoyweaver/errors.hpp"
#include "decoyweaver/rng.hpp"
#include "support.hpp"

using namespace decoyweaver;

namespace {

constexpr TimestampMs W = 1717200000000;

ActionEvent ev(TimestampMs ts, ActionKind kind, bool success, const std::string& line) {
  ActionEvent e;
  e.ts = ts;
  e.protocol = Protocol::HTTP;
  e.action = kind;
  e.success = success;
  e.raw = line + " HTTP/1.1\r\nHost: decoy\r\n\r\n";
  return e;
}

struct Recorder {
  std::vector<EventRecord> records;
  std::mutex mu;
  SessionManager::Sink sink() {
    return [this](const EventRecord& r) {
      std::lock_guard lock(mu);
      records.push_back(r);
    };
  }
};

}  // namespace

TEST_SUITE("session_manager") {
  TEST_CASE("one session per ip per window") {
    SessionManager sm(W);
    sm.deploy(dwtest::bundle("shop"));
    auto a = sm.open_session({"10.0.0.1", W}, "shop", W + 10);
    auto b = sm.open_session({"10.0.0.1", W}, "shop", W + 20);
    CHECK(a.id == b.id);
    CHECK(a.current_stage == "shop_front");
    CHECK(sm.open_session({"10.0.0.2", W}, "shop", W + 30).id != a.id);
    CHECK(a.id == sm.session_id_for("shop", "10.0.0.1"));
    CHECK_THROWS_AS(sm.open_session({"10.0.0.1", W}, "nope", W), UnknownScenario);
  }

  TEST_CASE("reset closes everything and restarts the window") {
    SessionManager sm(W);
    sm.deploy(dwtest::bundle("shop"));
    int hooks = 0;
    sm.on_reset([&] { ++hooks; });
    CHECK(sm.reset_environment(W + 1) == 0);
    for (int i = 0; i < 3; ++i) sm.open_session({"10.0.0." + std::to_string(i), W}, "shop", W + 5);
    CHECK(sm.reset_environment(W + 86400000) == 3);
    CHECK(sm.sessions().empty());
    CHECK(sm.window_start() == W + 86400000);
    CHECK(hooks == 2);
    auto again = sm.open_session({"10.0.0.1", W}, "shop", W + 86400001);
    CHECK(again.id == make_session_id("shop", "10.0.0.1", W + 86400000));
  }

  TEST_CASE("ingest emits one record per event with stage transitions") {
    SessionManager sm(W);
    sm.deploy(dwtest::bundle("shop"));
    Recorder rec;
    sm.add_sink(rec.sink());
    sm.ingest("shop", "10.0.0.1", ev(W + 1000, ActionKind::RobotsFetch, true, "GET /robots.txt"));
    sm.ingest("shop", "10.0.0.1", ev(W + 2000, ActionKind::PageFetch, true, "GET /login"));
    REQUIRE(rec.records.size() == 2);
    CHECK(rec.records[0].seq == 0);
    CHECK(rec.records[1].seq == 1);
    CHECK(rec.records[0].stage_before == "shop_front");
    CHECK(rec.records[0].stage_after == "admin_disclosed");
    CHECK(rec.records[1].stage_after == "login");
    CHECK(rec.records[1].inter_event_ms == 1000);
  }

  TEST_CASE("scanner flag follows the request rate") {
    SessionManager sm(W);
    sm.deploy(dwtest::bundle("shop"));
    double rate = 0;
    for (int i = 0; i < 100; ++i) rate = sm.note_request("10.9.9.9", W + i * 100);
    CHECK(rate > kScanRateThreshold);
    CHECK(sm.note_request("10.9.9.8", W) == doctest::Approx(1.0));
  }

  TEST_CASE("operator redirect is logged and visible") {
    SessionManager sm(W);
    sm.deploy(dwtest::bundle("shop"));
    Recorder rec;
    sm.add_sink(rec.sink());
    auto rep = sm.ingest("shop", "10.0.0.1", ev(W + 1000, ActionKind::PageFetch, true, "GET /"));
    OperatorAction a;
    a.kind = OperatorAction::Kind::ForceRedirect;
    a.stage = "reviews";
    a.operator_id = "ops";
    a.issued_at = W + 2000;
    auto out = sm.apply_operator(rep.session_id, a);
    CHECK(out.kind == TransitionOutcome::Kind::Redirected);
    CHECK(sm.session(rep.session_id)->current_stage == "reviews");
    REQUIRE(rec.records.size() == 2);
    CHECK(rec.records[1].is_operator());
    CHECK(rec.records[1].operator_id == "ops");
    CHECK_THROWS_AS(sm.apply_operator("s-0000000000000000", a), UnknownSession);
  }

  TEST_CASE("coercive message is delivered once with the next response") {
    SessionManager sm(W);
    sm.deploy(dwtest::bundle("shop"));
    auto rep = sm.ingest("shop", "10.0.0.1", ev(W + 1000, ActionKind::PageFetch, true, "GET /"));
    OperatorAction a;
    a.kind = OperatorAction::Kind::CoerciveMessage;
    a.text = "ACCESS LOGGED";
    sm.apply_operator(rep.session_id, a);
    auto next = sm.ingest("shop", "10.0.0.1", ev(W + 2000, ActionKind::PageFetch, true, "GET /"));
    CHECK(next.messages == std::vector<std::string>{"ACCESS LOGGED"});
    auto after = sm.ingest("shop", "10.0.0.1", ev(W + 3000, ActionKind::PageFetch, true, "GET /"));
    CHECK(after.messages.empty());
  }

  TEST_CASE("replay rebuilds identical sessions") {
    auto m = dwtest::bundle("shop");
    SessionManager live(W);
    live.deploy(m);
    Recorder rec;
    live.add_sink(rec.sink());
    Rng rng(8);
    static const std::vector<std::pair<ActionKind, std::string>> menu = {
        {ActionKind::RobotsFetch, "GET /robots.txt"},     {ActionKind::PageFetch, "GET /login"},
        {ActionKind::SqlInjectionAttempt, "POST /login"}, {ActionKind::AdminAccess, "GET /admin"},
        {ActionKind::FileDownload, "GET /admin/database.db"}, {ActionKind::PageFetch, "GET /reviews"},
        {ActionKind::XssAttempt, "POST /comments"},       {ActionKind::PageFetch, "GET /"},
    };
    for (int i = 0; i < 200; ++i) {
      auto ip = "10.2.0." + std::to_string(rng.below(12));
      const auto& [kind, line] = menu[rng.below(menu.size())];
      live.ingest("shop", ip, ev(W + i * 30000, kind, rng.below(3) != 0, line));
      if (i % 37 == 5) {
        OperatorAction a;
        a.kind = OperatorAction::Kind::ForceRedirect;
        a.stage = "login";
        a.issued_at = W + i * 30000;
        live.apply_operator(live.session_id_for("shop", ip), a);
      }
    }
    SessionManager restored(W);
    restored.deploy(m);
    Recorder none;
    restored.add_sink(none.sink());
    auto report = restored.replay(rec.records);
    CHECK(report.records_replayed == rec.records.size());
    CHECK(none.records.empty());
    auto a = live.sessions();
    auto b = restored.sessions();
    REQUIRE(a.size() == b.size());
    CHECK(report.sessions == a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].id == b[i].id);
      CHECK(a[i].current_stage == b[i].current_stage);
      CHECK(a[i].trajectory == b[i].trajectory);
      CHECK(a[i].events == b[i].events);
    }
  }

  TEST_CASE("replay rejects a record that disagrees with the graph") {
    SessionManager live(W);
    live.deploy(dwtest::bundle("shop"));
    Recorder rec;
    live.add_sink(rec.sink());
    live.ingest("shop", "10.0.0.1", ev(W + 1000, ActionKind::RobotsFetch, true, "GET /robots.txt"));
    auto bad = rec.records;
    bad[0].stage_after = "database";
    SessionManager other(W);
    other.deploy(dwtest::bundle("shop"));
    CHECK_THROWS_AS(other.replay(bad), CorruptLog);
  }

  TEST_CASE("records before the window are skipped") {
    SessionManager live(W);
    live.deploy(dwtest::bundle("shop"));
    Recorder rec;
    live.add_sink(rec.sink());
    live.ingest("shop", "10.0.0.1", ev(W + 1000, ActionKind::RobotsFetch, true, "GET /robots.txt"));
    SessionManager later(W + 86400000);
    later.deploy(dwtest::bundle("shop"));
    auto report = later.replay(rec.records);
    CHECK(report.records_replayed == 0);
    CHECK(later.sessions().empty());
  }

  TEST_CASE("parallel sessions keep per-session order") {
    SessionManager sm(W);
    sm.deploy(dwtest::bundle("shop"));
    Recorder rec;
    sm.add_sink(rec.sink());
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t) {
      threads.emplace_back([&sm, t] {
        for (int i = 0; i < 50; ++i)
          sm.ingest("shop", "10.3.0." + std::to_string(t), ev(W + i * 1000, ActionKind::PageFetch, true, "GET /"));
      });
    }
    for (auto& th : threads) th.join();
    CHECK(rec.records.size() == 200);
    std::map<std::string, std::uint64_t> next;
    for (const auto& r : rec.records) CHECK(r.seq == next[r.session_id]++);
    for (const auto& s : sm.sessions()) CHECK(s.events.size() == 50);
  }
}
