#include "decoyweaver/action.hpp"

#include "doctest.h"
#include "decoyweaver/rng.hpp"

using namespace decoyweaver;

namespace {

std::string post(const std::string& path, const std::string& body) {
  return "POST " + path + " HTTP/1.1\r\nHost: decoy\r\nContent-Type: application/x-www-form-urlencoded\r\n\r\n" + body;
}

std::string get(const std::string& path, const std::string& agent = "Mozilla/5.0") {
  return "GET " + path + " HTTP/1.1\r\nHost: decoy\r\nUser-Agent: " + agent + "\r\n\r\n";
}

}  // namespace

TEST_SUITE("action") {
  TEST_CASE("names round-trip for every action and protocol") {
    for (auto k : kAllActionKinds) CHECK(action_kind_from_string(to_string(k)) == k);
    for (auto p : {Protocol::HTTP, Protocol::FTP, Protocol::SSH, Protocol::MQTT})
      CHECK(protocol_from_string(to_string(p)) == p);
    CHECK_FALSE(action_kind_from_string("sqli").has_value());
    CHECK(to_string(ActionKind::SqlInjectionAttempt) == "SqlInjectionAttempt");
  }

  TEST_CASE("protocol-specific actions only under their protocol") {
    CHECK(action_allowed_for(Protocol::FTP, ActionKind::FtpLogin));
    CHECK_FALSE(action_allowed_for(Protocol::HTTP, ActionKind::FtpLogin));
    CHECK(action_allowed_for(Protocol::SSH, ActionKind::SshLogin));
    CHECK_FALSE(action_allowed_for(Protocol::MQTT, ActionKind::SshLogin));
    CHECK(action_allowed_for(Protocol::MQTT, ActionKind::MqttConnect));
    CHECK_FALSE(action_allowed_for(Protocol::FTP, ActionKind::MqttConnect));
  }

  TEST_CASE("tautology in the password field is a successful-looking SQLi") {
    auto c = classify_action(Protocol::HTTP, post("/login", "user=a&pass=' OR '1'='1"), 0);
    CHECK(c.kind == ActionKind::SqlInjectionAttempt);
    CHECK(c.success_hint);
  }

  TEST_CASE("robots path") {
    auto c = classify_action(Protocol::HTTP, get("/robots.txt"), 0);
    CHECK(c.kind == ActionKind::RobotsFetch);
    CHECK(c.success_hint);
    CHECK(classify_action(Protocol::HTTP, get("/robot.txt"), 0).kind == ActionKind::RobotsFetch);
  }

  TEST_CASE("scanner burst with a tool signature") {
    auto c = classify_action(Protocol::HTTP, get("/", "Mozilla/5.00 (Nikto/2.1.6)"), 120);
    CHECK(c.kind == ActionKind::ScanBurst);
    CHECK(c.scanner_suspected);
  }

  TEST_CASE("rate above threshold alone marks a scanner") {
    auto c = classify_action(Protocol::HTTP, get("/index.html"), kScanRateThreshold + 1);
    CHECK(c.scanner_suspected);
    CHECK_FALSE(classify_action(Protocol::HTTP, get("/index.html"), 5).scanner_suspected);
  }

  TEST_CASE("sql payload shapes") {
    auto has = [](std::string_view text, PayloadClass c) {
      auto v = sql_payload_classes(text);
      return std::find(v.begin(), v.end(), c) != v.end();
    };
    CHECK(has("admin'", PayloadClass::UnbalancedQuote));
    CHECK(has("' OR '1'='1", PayloadClass::Tautology));
    CHECK(has("1 UNION SELECT card FROM users", PayloadClass::UnionSelect));
    CHECK(has("admin' -- ", PayloadClass::CommentSuffix));
    CHECK(sql_payload_classes("hello world").empty());
  }

  TEST_CASE("executable xss") {
    CHECK(is_executable_xss("<script>alert(1)</script>"));
    CHECK(is_executable_xss("<img src=x onerror=alert(1)>"));
    CHECK(is_executable_xss("<a href=\"javascript:alert(1)\">x</a>"));
    CHECK_FALSE(is_executable_xss("<b>great tent</b>"));
    CHECK_FALSE(is_executable_xss("<script>alert(1)"));
    auto c = classify_action(Protocol::HTTP, post("/comments", "comment=%3Cscript%3Ealert(1)%3C%2Fscript%3E"), 0);
    CHECK(c.kind == ActionKind::XssAttempt);
  }

  TEST_CASE("targets per protocol") {
    CHECK(extract_target(Protocol::HTTP, get("/admin/database.db?x=1")) == "/admin/database.db");
    CHECK(extract_target(Protocol::FTP, "USER anonymous\r\nPASS x") == "anonymous");
    CHECK(extract_target(Protocol::FTP, "RETR pub/Database.DB") == "Database.DB");
    CHECK(extract_target(Protocol::SSH, "login root@sensor-01 root") == "root@sensor-01");
    CHECK(extract_target(Protocol::SSH, "cat /root/broker_credentials.txt") == "broker_credentials.txt");
    CHECK(extract_target(Protocol::MQTT, "CONNECT client_id=c username=telemetry password=p") == "telemetry");
    CHECK(extract_target(Protocol::MQTT, "SUBSCRIBE topic=fs/nmap_scan.txt") == "nmap_scan.txt");
  }

  TEST_CASE("credentials of login-shaped requests") {
    CHECK(extract_credentials(Protocol::FTP, "USER admin\r\nPASS admin") == "admin:admin");
    CHECK(extract_credentials(Protocol::SSH, "login root@sensor-01 root") == "root:root");
    CHECK(extract_credentials(Protocol::HTTP, get("/")).empty());
  }

  TEST_CASE("protocol logins") {
    CHECK(classify_action(Protocol::FTP, "USER anonymous\r\nPASS x", 0).kind == ActionKind::FtpLogin);
    CHECK(classify_action(Protocol::FTP, "RETR Database.DB", 0).kind == ActionKind::FileDownload);
    CHECK(classify_action(Protocol::FTP, "STOR shell.php", 0).kind == ActionKind::FileUpload);
    CHECK(classify_action(Protocol::SSH, "login root@sensor-01 root", 0).kind == ActionKind::SshLogin);
    CHECK(classify_action(Protocol::MQTT, "CONNECT client_id=a username=u password=p", 0).kind ==
          ActionKind::MqttConnect);
  }

  TEST_CASE("form decoding") {
    CHECK(url_decode("a%20b+c") == "a b c");
    CHECK(form_value("user=admin&pass=%27x", "pass") == "'x");
    CHECK_FALSE(form_value("user=admin", "pass").has_value());
  }

  TEST_CASE("excerpts are bounded and printable") {
    std::string big(10000, 'A');
    big[5] = '\x01';
    auto e = make_excerpt(big);
    CHECK(e.size() <= kMaxRawExcerpt);
    CHECK(e.find('\x01') == std::string::npos);
    CHECK(e.find("\\x01") != std::string::npos);
    CHECK(make_excerpt("GET /\r\n\tok") == "GET /\r\n\tok");
  }

  TEST_CASE("classification is total and pure over random bytes") {
    Rng rng(99);
    for (int i = 0; i < 500; ++i) {
      std::string raw(rng.below(200) + 1, ' ');
      for (auto& ch : raw) ch = static_cast<char>(rng.below(256));
      for (auto p : {Protocol::HTTP, Protocol::FTP, Protocol::SSH, Protocol::MQTT}) {
        auto a = classify_action(p, raw, 0);
        auto b = classify_action(p, raw, 0);
        CHECK(a.kind == b.kind);
        CHECK(a.success_hint == b.success_hint);
        CHECK(action_allowed_for(p, a.kind));
      }
    }
  }
}
