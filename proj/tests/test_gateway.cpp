#include "decoyweaver/gateway.hpp"

#include <atomic>
#include <cstdlib>
#include <ctime>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "decoyweaver/errors.hpp"
#include "support.hpp"

using namespace decoyweaver;
using nlohmann::json;

namespace {

json config_json(std::uint16_t http_port = 0, std::uint16_t api_port = 0) {
  return json{{"scenarios", {{{"path", dwtest::repo("scenarios/shop").string()},
                              {"endpoints", {{{"protocol", "HTTP"}, {"port", http_port}}}}}}},
              {"operator_token", dwtest::kToken},
              {"api_port", api_port},
              {"data_dir", "data"}};
}

httplib::Headers bearer(const std::string& token = dwtest::kToken) {
  return {{"Authorization", "Bearer " + token}};
}

std::string local_hhmm(TimestampMs ms) {
  std::time_t t = ms / 1000;
  std::tm lt{};
  ::localtime_r(&t, &lt);
  char buf[8];
  std::strftime(buf, sizeof buf, "%H:%M", &lt);
  return buf;
}

}  // namespace

TEST_SUITE("gateway") {
  TEST_CASE("deployment config parsing and validation") {
    auto cfg = parse_deployment_config(config_json(8080, 9090), "/srv/dw");
    CHECK(cfg.data_dir == std::filesystem::path("/srv/dw/data"));
    CHECK(cfg.scenarios.at(0).endpoints.at(0).port == 8080);
    CHECK(cfg.api_port == 9090);
    CHECK(cfg.reset_time_local == "00:00");

    CHECK_THROWS_AS(parse_deployment_config(config_json(8080, 8080)), PortInUse);
    auto j = config_json();
    j["scenarios"][0]["endpoints"].push_back({{"protocol", "FTP"}, {"port", 2121}});
    j["scenarios"].push_back({{"path", "x"}, {"endpoints", {{{"protocol", "SSH"}, {"port", 2121}}}}});
    CHECK_THROWS_AS(parse_deployment_config(j), PortInUse);

    j = config_json();
    j["operator_token"] = "short";
    CHECK_THROWS_AS(parse_deployment_config(j), ConfigError);
    j["api_enabled"] = false;
    CHECK_NOTHROW(parse_deployment_config(j));

    for (const char* bad : {"24:00", "7:30", "12:60", "noon"}) {
      j = config_json();
      j["reset_time_local"] = bad;
      CHECK_THROWS_AS(parse_deployment_config(j), ConfigError);
    }
    j = config_json();
    j["colour"] = "blue";
    CHECK_THROWS_AS(parse_deployment_config(j), ConfigError);
    j = config_json();
    j["scenarios"][0]["endpoints"][0]["protocol"] = "Telnet";
    CHECK_THROWS_AS(parse_deployment_config(j), ConfigError);
  }

  TEST_CASE("operator token from the environment wins") {
    dwtest::TempDir dir;
    auto j = config_json();
    j["operator_token"] = "short";
    dwtest::spit(dir / "deploy.json", j.dump());
    ::setenv(kOperatorTokenEnv, "environment-supplied-token", 1);
    auto cfg = load_deployment_config(dir / "deploy.json");
    ::unsetenv(kOperatorTokenEnv);
    CHECK(cfg.operator_token == "environment-supplied-token");
    CHECK(cfg.data_dir == dir / "data");
    CHECK_THROWS_AS(load_deployment_config(dir / "deploy.json"), ConfigError);
  }

  TEST_CASE("reset boundaries bracket now at the configured local time") {
    CHECK(parse_reset_time("03:15") == std::make_pair(3, 15));
    CHECK_FALSE(parse_reset_time("3:15"));
    const TimestampMs now = 1709510400000 + 5 * 3600 * 1000 + 12345;
    for (auto [h, m] : {std::pair{0, 0}, {3, 15}, {23, 59}}) {
      auto last = last_reset_boundary(now, h, m);
      auto next = next_reset_boundary(now, h, m);
      CHECK(last <= now);
      CHECK(next > now);
      CHECK(next - last <= 25LL * 3600 * 1000);
      char want[8];
      std::snprintf(want, sizeof want, "%02d:%02d", h, m);
      CHECK(local_hhmm(last) == want);
      CHECK(local_hhmm(next) == want);
    }
    CHECK(last_reset_boundary(next_reset_boundary(now, 4, 0), 4, 0) == next_reset_boundary(now, 4, 0));
  }

  TEST_CASE("invalid bundles are refused with their report") {
    dwtest::TempDir dir;
    std::filesystem::create_directories(dir / "bad");
    dwtest::spit(dir / "bad/scenario.json", R"({"id":"bad","title":"Bad","entry":"a",
      "stages":[{"id":"a","kind":"Entry"},{"id":"b","kind":"Terminal"},{"id":"c","kind":"Terminal"}],
      "transitions":[{"from":"a","to":"b","main_path":true,"trigger":{"protocol":"HTTP","action":"RobotsFetch"}}]})");
    try {
      load_bundle(dir / "bad");
      FAIL("expected InvalidBundle");
    } catch (const InvalidBundle& e) {
      CHECK(std::string(e.what()).find("c") != std::string::npos);
    }
    dwtest::spit(dir / "bad/scenario.json", "{");
    CHECK_THROWS_AS(load_bundle(dir / "bad"), InvalidBundle);

    DeploymentConfig cfg = dwtest::deployment(dir / "data", {});
    cfg.scenarios.push_back({dir / "bad", {{Protocol::HTTP, 0}}});
    CHECK_THROWS_AS(Gateway(cfg, dwtest::quiet_options()), InvalidBundle);
  }

  TEST_CASE("a claimed port surfaces as PortInUse") {
    dwtest::TempDir dir;
    auto blocker = listen_tcp("127.0.0.1", 0);
    auto cfg = dwtest::deployment(dir.path(), {{"shop", {Protocol::HTTP}}});
    cfg.scenarios[0].endpoints[0].port = blocker.local_port();
    Gateway gw(cfg, dwtest::quiet_options());
    CHECK_THROWS_AS(gw.start(), PortInUse);
  }

  TEST_CASE("operator api") {
    dwtest::TempDir dir;
    Gateway gw(dwtest::deployment(dir.path(), {{"shop", {Protocol::HTTP}}}), dwtest::quiet_options());
    gw.start();
    httplib::Client decoy("127.0.0.1", gw.endpoint_port("shop", Protocol::HTTP));
    httplib::Client api("127.0.0.1", gw.api_port());

    CHECK(api.Get("/api/sessions")->status == 401);
    CHECK(api.Get("/api/sessions", bearer("not-the-operator-token"))->status == 401);
    CHECK(api.Get((std::string("/api/sessions?token=") + dwtest::kToken).c_str())->status == 200);

    decoy.Get("/robots.txt");
    auto list = api.Get("/api/sessions", bearer());
    REQUIRE(list->status == 200);
    auto sessions = json::parse(list->body);
    REQUIRE(sessions.size() == 1);
    std::string id = sessions[0]["id"];
    CHECK(sessions[0]["current_stage"] == "admin_disclosed");
    CHECK(sessions[0]["scenario"] == "shop");

    auto detail = json::parse(api.Get(("/api/sessions/" + id).c_str(), bearer())->body);
    CHECK(detail["trajectory"] == json::array({"shop_front", "admin_disclosed"}));
    CHECK(detail["recent_events"].size() == 1);
    CHECK(api.Get("/api/sessions/s-0000000000000000", bearer())->status == 404);

    auto post = [&](const json& body) {
      return api.Post(("/api/sessions/" + id + "/action").c_str(), bearer(), body.dump(), "application/json");
    };
    auto moved = post({{"kind", "ForceRedirect"}, {"stage", "admin"}, {"operator_id", "alice"}});
    REQUIRE(moved->status == 200);
    CHECK(json::parse(moved->body)["stage"] == "admin");
    auto after = json::parse(api.Get(("/api/sessions/" + id).c_str(), bearer())->body);
    CHECK(after["current_stage"] == "admin");
    CHECK(after["flags"]["operator_locked"] == true);

    CHECK(post({{"kind", "ForceRedirect"}, {"stage", "nowhere"}})->status == 422);
    CHECK(post({{"kind", "Teleport"}})->status == 422);
    CHECK(api.Post(("/api/sessions/" + id + "/action").c_str(), bearer(), "{oops", "application/json")->status ==
          422);
    CHECK(api.Post("/api/sessions/s-0000000000000000/action", bearer(), json{{"kind", "CoerciveMessage"},
                                                                             {"text", "x"}}.dump(),
                   "application/json")
              ->status == 404);

    auto scenarios = json::parse(api.Get("/api/scenarios", bearer())->body);
    REQUIRE(scenarios.size() == 1);
    CHECK(scenarios[0]["id"] == "shop");
    auto graph = json::parse(api.Get("/api/scenarios/shop", bearer())->body);
    CHECK(graph["backbone"].size() == 5);
    CHECK(api.Get("/api/scenarios/zzz", bearer())->status == 404);

    auto funnel = json::parse(api.Get("/api/funnel/shop", bearer())->body);
    CHECK(funnel["total_sessions"] == 1);
    CHECK(api.Get("/api/funnel/zzz", bearer())->status == 404);

    auto records = gw.window_records("shop");
    REQUIRE(records.size() == 2);
    CHECK(records[1].kind == "operator");
    CHECK(records[1].operator_id == "alice");
    gw.stop();
  }

  TEST_CASE("event stream delivers a frame per record") {
    dwtest::TempDir dir;
    Gateway gw(dwtest::deployment(dir.path(), {{"shop", {Protocol::HTTP}}}), dwtest::quiet_options());
    gw.start();
    std::atomic<bool> subscribed{false};
    std::string received;
    std::thread reader([&] {
      httplib::Client api("127.0.0.1", gw.api_port());
      api.set_read_timeout(10, 0);
      api.Get("/api/events/stream", bearer(), [&](const char* data, std::size_t n) {
        subscribed = true;
        received.append(data, n);
        return received.find("RobotsFetch") == std::string::npos;
      });
    });
    for (int i = 0; i < 200 && !subscribed; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(10));
    REQUIRE(subscribed);
    httplib::Client("127.0.0.1", gw.endpoint_port("shop", Protocol::HTTP)).Get("/robots.txt");
    reader.join();
    CHECK(received.find("retry: ") != std::string::npos);
    CHECK(received.find("event: event") != std::string::npos);
    auto data = received.find("data: ");
    REQUIRE(data != std::string::npos);
    auto line = received.substr(data + 6, received.find('\n', data) - data - 6);
    auto rec = record_from_json(json::parse(line));
    CHECK(rec.action == ActionKind::RobotsFetch);
    CHECK(rec.stage_after == "admin_disclosed");
    gw.stop();
  }

  TEST_CASE("restart restores session stages from the log") {
    dwtest::TempDir dir;
    auto cfg = dwtest::deployment(dir.path(), {{"shop", {Protocol::HTTP}}});
    std::vector<std::pair<std::string, std::string>> before;
    {
      Gateway gw(cfg, dwtest::quiet_options());
      gw.start();
      httplib::Client c("127.0.0.1", gw.endpoint_port("shop", Protocol::HTTP));
      c.Get("/robots.txt");
      c.Get("/login");
      c.Post("/login", "user=a&pass=' OR '1'='1", "application/x-www-form-urlencoded");
      for (const auto& s : gw.sessions().sessions()) before.emplace_back(s.id, s.current_stage);
      gw.stop();
    }
    REQUIRE(before.size() == 1);
    CHECK(before[0].second == "admin");
    {
      Gateway gw(cfg, dwtest::quiet_options());
      gw.start();
      CHECK(gw.restore_report().sessions == 1);
      CHECK(gw.restore_report().records_replayed == 3);
      CHECK(gw.restore_report().dropped == 0);
      auto s = gw.sessions().session(before[0].first);
      REQUIRE(s);
      CHECK(s->current_stage == "admin");
      CHECK(s->trajectory == std::vector<std::string>{"shop_front", "admin_disclosed", "login", "admin"});
      CHECK(gw.window_records("shop").size() == 3);
      gw.stop();
    }

    for (const auto& entry : std::filesystem::directory_iterator(dir / "logs")) {
      std::ofstream out(entry.path(), std::ios::app);
      out << R"({"session_id":"s-00)";
    }
    Gateway gw(cfg, dwtest::quiet_options());
    gw.start();
    CHECK(gw.restore_report().dropped == 1);
    CHECK(gw.sessions().session(before[0].first)->current_stage == "admin");
    gw.stop();
  }

  TEST_CASE("empty data dir starts with no sessions") {
    dwtest::TempDir dir;
    Gateway gw(dwtest::deployment(dir / "fresh", {{"shop", {Protocol::HTTP}}}), dwtest::quiet_options());
    gw.start();
    CHECK(gw.restore_report().sessions == 0);
    CHECK(gw.sessions().sessions().empty());
    gw.stop();
  }

  TEST_CASE("manual reset closes sessions and persists the window") {
    dwtest::TempDir dir;
    auto cfg = dwtest::deployment(dir.path(), {{"shop", {Protocol::HTTP}}});
    {
      Gateway gw(cfg, dwtest::quiet_options());
      gw.start();
      httplib::Client("127.0.0.1", gw.endpoint_port("shop", Protocol::HTTP)).Get("/robots.txt");
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
      CHECK(gw.reset_now() == 1);
      CHECK(gw.window_records("shop").empty());
      gw.stop();
    }
    CHECK(std::filesystem::exists(dir / "window.json"));
    Gateway gw(cfg, dwtest::quiet_options());
    gw.start();
    CHECK(gw.sessions().sessions().empty());
    gw.stop();
  }
}
