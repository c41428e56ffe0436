#include "decoyweaver/decoy.hpp"

#include "doctest.h"
#include "httplib.h"
#include "decoyweaver/errors.hpp"
#include "decoyweaver/gateway.hpp"
#include "support.hpp"

using namespace decoyweaver;

namespace {

std::string cookie_from(const httplib::Result& res) {
  auto v = res->get_header_value("Set-Cookie");
  return v.substr(0, v.find(';'));
}

std::size_t count_of(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

struct Shell {
  Socket sock;
  std::string prompt_tail = "# ";

  std::string until(const std::string& delim) { return sock.read_until(delim).value_or(""); }
  std::string run(const std::string& line) {
    sock.write_all(line + "\n");
    return until(":~" + prompt_tail);
  }
};

Shell ssh_login(std::uint16_t port, const std::string& user, const std::string& pass) {
  Shell sh{connect_tcp("127.0.0.1", port)};
  sh.sock.set_timeout(std::chrono::seconds(5));
  sh.until("login as: ");
  sh.sock.write_all(user + "\n");
  sh.until("password: ");
  sh.sock.write_all(pass + "\n");
  return sh;
}

}  // namespace

TEST_SUITE("decoys") {
  TEST_CASE("http shop routes") {
    dwtest::TempDir dir;
    Gateway gw(dwtest::deployment(dir.path(), {{"shop", {Protocol::HTTP}}}), dwtest::quiet_options());
    gw.start();
    httplib::Client c("127.0.0.1", gw.endpoint_port("shop", Protocol::HTTP));

    auto robots = c.Get("/robots.txt");
    REQUIRE(robots);
    CHECK(robots->status == 200);
    CHECK(robots->body.find("Disallow: /admin") != std::string::npos);
    CHECK(c.Get("/robot.txt")->body.find("Disallow: /admin") != std::string::npos);

    CHECK(c.Get("/admin")->status == 403);
    CHECK(c.Get("/no/such/page")->status == 404);

    auto bad = c.Post("/login", "user=admin&pass=hunter2", "application/x-www-form-urlencoded");
    CHECK(bad->status == 401);

    auto login = c.Post("/login", "user=a&pass=' OR '1'='1", "application/x-www-form-urlencoded");
    REQUIRE(login);
    CHECK(login->status == 302);
    CHECK(login->get_header_value("Location") == "/admin");
    auto cookie = cookie_from(login);
    CHECK_FALSE(cookie.empty());

    httplib::Headers h{{"Cookie", cookie}};
    CHECK(c.Get("/admin", h)->status == 200);
    auto db = c.Get("/admin/database.db", h);
    CHECK(db->status == 200);
    CHECK(db->body.find("/outlet/") != std::string::npos);
    CHECK(db->body.find("name,card_number,cvv") != std::string::npos);
    gw.stop();
  }

  TEST_CASE("every http request yields exactly one event") {
    dwtest::TempDir dir;
    Gateway gw(dwtest::deployment(dir.path(), {{"shop", {Protocol::HTTP}}}), dwtest::quiet_options());
    gw.start();
    httplib::Client c("127.0.0.1", gw.endpoint_port("shop", Protocol::HTTP));
    const std::vector<std::string> paths = {"/", "/robots.txt", "/admin", "/login", "/reviews", "/nope",
                                            "/js/passcheck.js", "/assets/site.css"};
    for (const auto& p : paths) c.Get(p.c_str());
    c.Post("/comments", "comment=nice", "application/x-www-form-urlencoded");
    CHECK(gw.window_records("shop").size() == paths.size() + 1);
    gw.stop();
  }

  TEST_CASE("stored xss persists until reset") {
    dwtest::TempDir dir;
    Gateway gw(dwtest::deployment(dir.path(), {{"shop", {Protocol::HTTP}}}), dwtest::quiet_options());
    gw.start();
    httplib::Client c("127.0.0.1", gw.endpoint_port("shop", Protocol::HTTP));
    const std::string payload = "<a href=\"javascript:alert(7)\">coupon</a>";
    auto post = c.Post("/comments", httplib::Params{{"comment", payload}});
    CHECK(post->status == 303);
    CHECK(c.Get("/reviews")->body.find(payload) != std::string::npos);
    auto recs = gw.window_records("shop");
    REQUIRE_FALSE(recs.empty());
    CHECK(recs.front().action == ActionKind::XssAttempt);
    CHECK(recs.front().success);
    CHECK(recs.front().stage_after == "xss_planted");

    gw.reset_now();
    CHECK(gw.sessions().sessions().empty());
    CHECK(c.Get("/reviews")->body.find(payload) == std::string::npos);
    gw.stop();
  }

  TEST_CASE("coercive message appears verbatim in the next response") {
    dwtest::TempDir dir;
    Gateway gw(dwtest::deployment(dir.path(), {{"shop", {Protocol::HTTP}}}), dwtest::quiet_options());
    gw.start();
    httplib::Client c("127.0.0.1", gw.endpoint_port("shop", Protocol::HTTP));
    c.Get("/");
    auto sid = gw.sessions().session_id_for("shop", "127.0.0.1");
    OperatorAction a;
    a.kind = OperatorAction::Kind::CoerciveMessage;
    a.text = "ACCESS LOGGED";
    gw.sessions().apply_operator(sid, a);
    CHECK(c.Get("/")->body.find("ACCESS LOGGED") != std::string::npos);
    CHECK(c.Get("/")->body.find("ACCESS LOGGED") == std::string::npos);
    gw.stop();
  }

  TEST_CASE("ftp default credentials, listing, retrieval and errors") {
    dwtest::TempDir dir;
    Gateway gw(dwtest::deployment(dir.path(), {{"ftp", {Protocol::FTP}}}), dwtest::quiet_options());
    gw.start();
    auto port = gw.endpoint_port("ftp", Protocol::FTP);

    {
      auto bad = connect_tcp("127.0.0.1", port);
      CHECK(dwtest::ftp_code(dwtest::ftp_reply(bad)) == 220);
      dwtest::ftp_cmd(bad, "USER root");
      CHECK(dwtest::ftp_code(dwtest::ftp_cmd(bad, "PASS toor")) == 530);
    }

    auto ctl = connect_tcp("127.0.0.1", port);
    ctl.set_timeout(std::chrono::seconds(5));
    dwtest::ftp_reply(ctl);
    CHECK(dwtest::ftp_code(dwtest::ftp_cmd(ctl, "USER anonymous")) == 331);
    CHECK(dwtest::ftp_code(dwtest::ftp_cmd(ctl, "PASS x")) == 230);
    CHECK(dwtest::ftp_code(dwtest::ftp_cmd(ctl, "SYST")) == 215);
    CHECK(dwtest::ftp_code(dwtest::ftp_cmd(ctl, "TYPE I")) == 200);

    auto transfer = [&](const std::string& cmd) {
      auto pasv = dwtest::ftp_cmd(ctl, "PASV");
      REQUIRE(dwtest::ftp_code(pasv) == 227);
      auto data = connect_tcp("127.0.0.1", dwtest::pasv_port(pasv));
      ctl.write_all(cmd + "\r\n");
      auto first = dwtest::ftp_reply(ctl);
      std::string body;
      if (dwtest::ftp_code(first) == 150) {
        body = data.read_all();
        data.close();
        dwtest::ftp_reply(ctl);
      }
      return std::pair(dwtest::ftp_code(first), body);
    };

    auto [list_code, listing] = transfer("LIST");
    CHECK(list_code == 150);
    for (const char* f : {"Database.DB", "confidential.csv", "nmap_scan.txt"})
      CHECK(listing.find(f) != std::string::npos);

    auto [db_code, db] = transfer("RETR Database.DB");
    CHECK(db_code == 150);
    CHECK(db.size() == 256 * 1024);
    CHECK(db.find("http://wp.shadowbrook.local/wp-login.php") != std::string::npos);

    auto [scan_code, scan] = transfer("RETR nmap_scan.txt");
    CHECK(scan_code == 150);
    CHECK(scan.find("VULNERABLE") != std::string::npos);

    auto [missing_code, nothing] = transfer("RETR nosuch.txt");
    CHECK(missing_code == 550);

    auto [stor_code, _] = [&] {
      auto pasv = dwtest::ftp_cmd(ctl, "PASV");
      auto data = connect_tcp("127.0.0.1", dwtest::pasv_port(pasv));
      ctl.write_all("STOR payload.sh\r\n");
      auto first = dwtest::ftp_reply(ctl);
      data.write_all("#!/bin/sh\necho pwned\n");
      data.close();
      auto done = dwtest::ftp_reply(ctl);
      return std::pair(dwtest::ftp_code(first), dwtest::ftp_code(done));
    }();
    CHECK(stor_code == 150);
    dwtest::ftp_cmd(ctl, "QUIT");

    auto sid = gw.sessions().session_id_for("ftp", "127.0.0.1");
    auto s = gw.sessions().session(sid);
    REQUIRE(s);
    CHECK(s->current_stage == "database_read");
    gw.stop();
  }

  TEST_CASE("iot ssh shell, pivot and mqtt broker") {
    dwtest::TempDir dir;
    Gateway gw(dwtest::deployment(dir.path(), {{"iot", {Protocol::SSH, Protocol::MQTT}}}), dwtest::quiet_options());
    gw.start();
    auto ssh_port = gw.endpoint_port("iot", Protocol::SSH);

    {
      auto denied = ssh_login(ssh_port, "admin", "admin");
      CHECK(denied.until("login as: ").find("Permission denied") != std::string::npos);
    }

    auto sh = ssh_login(ssh_port, "root", "root");
    CHECK(sh.until(":~# ").find("sensor-01") != std::string::npos);
    auto creds = sh.run("cat broker_credentials.txt");
    CHECK(creds.find("mqtt_user=telemetry") != std::string::npos);
    CHECK(creds.find("mqtt_pass=Upl1nk!2019") != std::string::npos);
    sh.sock.write_all("ssh root@node-03\n");
    sh.until("password: ");
    auto node = sh.run("root");
    CHECK(node.find("root@node-03") != std::string::npos);
    CHECK(sh.run("hostname").find("node-03") != std::string::npos);

    auto broker = [&](const std::string& user, const std::string& pass) {
      auto s = connect_tcp("127.0.0.1", gw.endpoint_port("iot", Protocol::MQTT));
      s.set_timeout(std::chrono::seconds(5));
      mqtt::ConnectInfo ci;
      ci.protocol_name = "MQTT";
      ci.level = 4;
      ci.client_id = "t";
      ci.username = user;
      ci.password = pass;
      s.write_all(mqtt::encode(mqtt::connect_packet(ci)));
      auto ack = dwtest::mqtt_until(s, mqtt::PacketType::Connack);
      std::uint8_t rc = ack && ack->body.size() == 2 ? static_cast<std::uint8_t>(ack->body[1]) : 0xff;
      return std::pair(std::move(s), rc);
    };
    CHECK(broker("telemetry", "wrong").second == mqtt::kConnackNotAuthorized);
    auto [s, rc] = broker("telemetry", "Upl1nk!2019");
    CHECK(rc == mqtt::kConnackAccepted);
    s.write_all(mqtt::encode(mqtt::subscribe_packet(1, {"fs/nmap_scan.txt"})));
    std::optional<mqtt::PublishInfo> scan;
    while (auto p = mqtt::read_packet(s)) {
      if (p->type != static_cast<std::uint8_t>(mqtt::PacketType::Publish)) continue;
      auto info = mqtt::parse_publish(p->flags, p->body);
      if (info.topic == "fs/nmap_scan.txt") {
        scan = info;
        break;
      }
    }
    REQUIRE(scan);
    CHECK(count_of(scan->payload, "Nmap scan report for") == 7);
    CHECK(count_of(scan->payload, "no port open, secured") == 5);

    auto sid = gw.sessions().session_id_for("iot", "127.0.0.1");
    CHECK(gw.sessions().session(sid)->current_stage == "scan_read");
    gw.stop();
  }

  TEST_CASE("ftp service mode exploit succeeds only with a long sled") {
    dwtest::TempDir dir;
    Gateway gw(dwtest::deployment(dir.path(), {{"ftp", {Protocol::SSH}}}), dwtest::quiet_options());
    gw.start();
    auto port = gw.endpoint_port("ftp", Protocol::SSH);
    {
      auto s = connect_tcp("127.0.0.1", port);
      s.set_timeout(std::chrono::seconds(5));
      s.read_line();
      s.write_all(std::string(300, 'A') + "\n");
      CHECK(s.read_all().find("Segmentation fault") != std::string::npos);
    }
    auto s = connect_tcp("127.0.0.1", port);
    s.set_timeout(std::chrono::seconds(5));
    s.read_line();
    s.write_all(std::string(32, '\x90') + std::string(600, 'A') + "\n");
    CHECK(s.read_until("groups=0(root)").value_or("").find("uid=0(root)") != std::string::npos);
    gw.stop();
  }

  TEST_CASE("database size override and asset text") {
    auto m = dwtest::bundle("iot");
    DecoyContext ctx;
    ctx.machine = m;
    CHECK(ctx.asset_text("asset:files/broker_credentials.txt").find("mqtt_user") != std::string::npos);
    CHECK_THROWS_AS(ctx.asset_text("files/missing.txt"), ConfigError);
    CHECK(ctx.service_config("mqtt").contains("credentials_asset"));
  }
}
