// HTTP shop decoy. One route table serves every site of a scenario; sites
// differ only by URL prefix and skin.

#include <algorithm>
#include <atomic>
#include <iomanip>
#include <mutex>
#include <regex>
#include <sstream>
#include <thread>

#include "decoyweaver/decoy.hpp"
#include "decoyweaver/errors.hpp"
#include "decoyweaver/rng.hpp"
#include "httplib.h"

namespace decoyweaver {

using nlohmann::json;

namespace {

struct Site {
  std::string prefix;  // "" or "/outlet"
  std::string skin = "shop";
  std::string title = "Shop";
  std::string tagline;
  std::string staff_token = "letmein";
  std::vector<std::string> charm;
  std::vector<std::string> products;
  std::string login_alias;  // e.g. "/wp-login.php"
  std::size_t record_count = 40;
  std::uint64_t record_seed = 1;
  std::string next_site;  // advertised inside database.db
  std::string planted_comments_asset;
  std::string defacement_asset;
};

std::string html_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string strip_script_elements(std::string s) {
  static const std::regex re(R"(<\s*/?\s*script[^>]*>)", std::regex::icase);
  return std::regex_replace(s, re, "");
}

std::string strip_event_handlers(std::string s) {
  static const std::regex re(R"(\son[a-z]+\s*=\s*("[^"]*"|'[^']*'|[^\s>]+))", std::regex::icase);
  return std::regex_replace(s, re, "");
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

struct Reply {
  int status = 200;
  std::string content_type = "text/html; charset=utf-8";
  std::string body;
  std::vector<std::pair<std::string, std::string>> headers;
};

class HttpDecoy final : public Decoy {
 public:
  explicit HttpDecoy(DecoyContext ctx) : ctx_(std::move(ctx)) {
    const auto& cfg = ctx_.service_config("http");
    banner_ = cfg.value("banner", std::string("Apache/2.4.29 (Ubuntu)"));
    if (cfg.contains("sites")) {
      for (const auto& j : cfg.at("sites")) sites_.push_back(parse_site(j));
    }
    if (sites_.empty()) sites_.push_back(Site{});
    // Longest prefix first so "/outlet/..." never falls through to "".
    std::stable_sort(sites_.begin(), sites_.end(),
                     [](const Site& a, const Site& b) { return a.prefix.size() > b.prefix.size(); });
  }

  ~HttpDecoy() override { stop(); }

  Protocol protocol() const override { return Protocol::HTTP; }
  std::uint16_t port() const override { return port_; }

  void start(std::uint16_t port) override {
    server_ = std::make_unique<httplib::Server>();
    server_->set_keep_alive_max_count(20);
    server_->set_read_timeout(10, 0);
    auto handler = [this](const httplib::Request& req, httplib::Response& res) { handle(req, res); };
    server_->Get(".*", handler);
    server_->Post(".*", handler);
    server_->Put(".*", handler);
    server_->Delete(".*", handler);
    server_->Options(".*", handler);
    server_->Patch(".*", handler);
    int bound = 0;
    if (port == 0) {
      bound = server_->bind_to_any_port(ctx_.bind_host);
    } else {
      bound = server_->bind_to_port(ctx_.bind_host, port) ? port : -1;
    }
    if (bound <= 0) throw PortInUse("http port " + std::to_string(port) + " on " + ctx_.bind_host + " is in use");
    port_ = static_cast<std::uint16_t>(bound);
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
  }

  void stop() override {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
    server_.reset();
  }

  void reset_state() override {
    std::lock_guard lock(store_mu_);
    comments_.clear();
  }

 private:
  static Site parse_site(const json& j) {
    Site s;
    s.prefix = j.value("prefix", s.prefix);
    if (!s.prefix.empty() && s.prefix.back() == '/') s.prefix.pop_back();
    s.skin = j.value("skin", s.skin);
    s.title = j.value("title", s.title);
    s.tagline = j.value("tagline", s.tagline);
    s.staff_token = j.value("staff_token", s.staff_token);
    if (j.contains("charm")) s.charm = j.at("charm").get<std::vector<std::string>>();
    if (j.contains("products")) s.products = j.at("products").get<std::vector<std::string>>();
    s.login_alias = j.value("login_alias", s.login_alias);
    if (j.contains("records")) {
      s.record_count = j.at("records").value("count", s.record_count);
      s.record_seed = j.at("records").value("seed", s.record_seed);
    }
    s.next_site = j.value("next_site", s.next_site);
    s.planted_comments_asset = j.value("planted_comments_asset", s.planted_comments_asset);
    s.defacement_asset = j.value("defacement_asset", s.defacement_asset);
    return s;
  }

  static std::string rebuild_raw(const httplib::Request& req) {
    std::string raw = req.method + " " + (req.target.empty() ? req.path : req.target) + " HTTP/1.1\r\n";
    for (const auto& [k, v] : req.headers) {
      if (k == "REMOTE_ADDR" || k == "REMOTE_PORT" || k == "LOCAL_ADDR" || k == "LOCAL_PORT") continue;
      raw += k + ": " + v + "\r\n";
    }
    raw += "\r\n";
    raw += req.body;
    return raw;
  }

  const Site& site_for(const std::string& path) const {
    for (const auto& s : sites_) {
      if (s.prefix.empty()) return s;
      if (path == s.prefix || path.rfind(s.prefix + "/", 0) == 0) return s;
    }
    return sites_.back();
  }

  std::string cookie_name(const Site& site) const { return site.prefix.empty() ? "dw_admin" : "dw_admin_" + site.skin; }

  std::string cookie_value(const Site& site, const std::string& ip) const {
    auto sid = ctx_.sessions->session_id_for(ctx_.scenario_id(), ip);
    return hex64(hash_label(sid + "|" + site.prefix + "|" + site.skin));
  }

  bool has_admin_cookie(const httplib::Request& req, const Site& site, const std::string& ip) const {
    auto header = req.get_header_value("Cookie");
    auto want = cookie_name(site) + "=" + cookie_value(site, ip);
    std::size_t pos = 0;
    while (pos < header.size()) {
      auto end = header.find(';', pos);
      auto item = header.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
      auto first = item.find_first_not_of(' ');
      if (first != std::string::npos && item.substr(first) == want) return true;
      if (end == std::string::npos) break;
      pos = end + 1;
    }
    return false;
  }

  std::string page(const Site& site, const std::string& heading, const std::string& inner) const {
    std::ostringstream os;
    os << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>" << html_escape(site.title) << " - "
       << html_escape(heading) << "</title>\n";
    if (site.skin == "wordpress") os << "<meta name=\"generator\" content=\"WordPress 4.7.1\">\n";
    os << "<link rel=\"stylesheet\" href=\"" << site.prefix << "/assets/" << site.skin << ".css\">\n";
    os << "<script src=\"" << site.prefix << "/js/passcheck.js\"></script>\n</head>\n<body class=\"" << site.skin
       << "\">\n<header><h1>" << html_escape(site.title) << "</h1>";
    if (!site.tagline.empty()) os << "<p>" << html_escape(site.tagline) << "</p>";
    os << "</header>\n<nav><a href=\"" << site.prefix << "/\">Home</a> | <a href=\"" << site.prefix
       << "/reviews\">Reviews</a> | <a href=\"" << site.prefix << "/login\">Staff login</a></nav>\n<main>\n<h2>"
       << html_escape(heading) << "</h2>\n"
       << inner << "</main>\n</body></html>\n";
    return os.str();
  }

  std::string index_body(const Site& site) const {
    std::ostringstream os;
    os << "<ul class=\"products\">\n";
    for (const auto& p : site.products) os << "  <li>" << html_escape(p) << "</li>\n";
    os << "</ul>\n<form id=\"staff\" method=\"post\" action=\"" << site.prefix
       << "/login\" onsubmit=\"return passcheck(this)\">\n"
          "  <input name=\"token\" type=\"password\" placeholder=\"staff token\">\n"
          "  <button>Enter</button>\n</form>\n";
    return page(site, "Welcome", os.str());
  }

  std::string passcheck_js(const Site& site, int level) const {
    std::ostringstream os;
    os << "/* passcheck.js - staff gate for " << site.title << "\n";
    for (const auto& c : site.charm) os << " * " << c << "\n";
    os << " */\n";
    std::string literal;
    if (level >= 3 && site.staff_token.size() > 1) {
      auto half = site.staff_token.size() / 2;
      literal = "\"" + site.staff_token.substr(0, half) + "\" + \"" + site.staff_token.substr(half) + "\"";
    } else {
      literal = "\"" + site.staff_token + "\"";
    }
    os << "var STAFF_TOKEN = " << literal << ";\n"
       << "function passcheck(form) {\n"
          "  if (form.token.value === STAFF_TOKEN) { return true; }\n"
          "  alert(\"Wrong token\");\n"
          "  return false;\n"
          "}\n";
    return os.str();
  }

  std::string login_form(const Site& site, const std::string& error) const {
    std::ostringstream os;
    if (!error.empty()) os << "<p class=\"error\">" << html_escape(error) << "</p>\n";
    os << "<form method=\"post\" action=\"" << site.prefix
       << "/login\">\n"
          "  <input name=\"user\" placeholder=\"username\">\n"
          "  <input name=\"pass\" type=\"password\" placeholder=\"password\">\n"
          "  <button>Log in</button>\n</form>\n";
    return page(site, site.skin == "wordpress" ? "Log In" : "Staff login", os.str());
  }

  bool sqli_bypasses(const std::string& user, const std::string& pass, int level) const {
    auto judge = [level](const std::string& field) {
      auto classes = sql_payload_classes(field);
      bool strong = false, comment = false;
      for (auto c : classes) {
        if (c == PayloadClass::Tautology || c == PayloadClass::UnionSelect) strong = true;
        if (c == PayloadClass::CommentSuffix) comment = true;
      }
      if (level <= 1) return strong || comment;
      if (level == 2) return strong;
      return strong && comment;
    };
    return judge(pass) || judge(user);
  }

  std::string reviews_body(const Site& site) const {
    std::ostringstream os;
    if (!ctx_.graph().planted_peers.empty()) {
      os << "<section class=\"hall-of-fame\"><h3>Hall of fame</h3><ol>\n";
      for (const auto& p : ctx_.graph().planted_peers)
        os << "  <li>" << html_escape(p.name) << " - " << p.score << " pts</li>\n";
      os << "</ol></section>\n";
    }
    os << "<section class=\"reviews\">\n";
    if (!site.planted_comments_asset.empty()) {
      std::string text;
      try {
        text = ctx_.asset_text(site.planted_comments_asset);
      } catch (const ConfigError&) {
      }
      for (const auto& line : lines_of(text)) os << "<div class=\"comment\">" << line << "</div>\n";
    }
    {
      std::lock_guard lock(store_mu_);
      auto it = comments_.find(site.prefix);
      if (it != comments_.end()) {
        for (const auto& c : it->second) os << "<div class=\"comment\">" << c << "</div>\n";
      }
    }
    os << "</section>\n<form method=\"post\" action=\"" << site.prefix
       << "/comments\">\n  <textarea name=\"comment\"></textarea>\n  <button>Post review</button>\n</form>\n";
    return page(site, "Customer reviews", os.str());
  }

  std::string database_body(const Site& site) const {
    auto records = generate_fabricated_records(site.record_count, site.record_seed);
    std::string out = "-- customers export\n";
    if (!site.next_site.empty()) out += "-- mirror: " + site.next_site + "\n";
    out += render_records_csv(records);
    return out;
  }

  void handle(const httplib::Request& req, httplib::Response& res) {
    const std::string ip = req.remote_addr;
    auto obs = observe(ctx_, Protocol::HTTP, ip, rebuild_raw(req));
    const Site& site = site_for(req.path);
    std::string path = req.path.substr(site.prefix.size());
    if (path.empty()) path = "/";
    const bool is_get = req.method == "GET" || req.method == "HEAD";
    const bool is_post = req.method == "POST";

    Reply reply;
    ActionKind kind = obs.cls.kind;
    bool success = false;

    if (is_get && (path == "/robots.txt" || path == "/robot.txt")) {
      reply.content_type = "text/plain";
      reply.body = "User-agent: *\nDisallow: " + site.prefix + "/admin\n";
      success = true;
    } else if (is_get && (path == "/" || path == "/index.html" || path == "/index.php")) {
      reply.body = index_body(site);
      success = true;
    } else if (is_get && path == "/js/passcheck.js") {
      reply.content_type = "application/javascript";
      reply.body = passcheck_js(site, ctx_.sessions->difficulty(ctx_.scenario_id(), ip, VulnKind::JsPasswordChecker));
      success = true;
    } else if (is_get && (path == "/login" || (!site.login_alias.empty() && path == site.login_alias))) {
      reply.body = login_form(site, "");
      success = true;
    } else if (is_post && (path == "/login" || (!site.login_alias.empty() && path == site.login_alias))) {
      auto user = form_value(req.body, "user").value_or(form_value(req.body, "log").value_or(""));
      auto pass = form_value(req.body, "pass").value_or(form_value(req.body, "pwd").value_or(""));
      auto token = form_value(req.body, "token");
      if (kind == ActionKind::SqlInjectionAttempt) {
        int level = ctx_.sessions->difficulty(ctx_.scenario_id(), ip, VulnKind::SqlInjectionLogin);
        success = sqli_bypasses(user, pass, level);
      } else if (token) {
        kind = ActionKind::LoginAttempt;
        success = *token == site.staff_token;
      } else {
        kind = ActionKind::LoginAttempt;
        success = false;  // no real credentials exist
      }
      if (success) {
        reply.status = 302;
        reply.headers.emplace_back("Location", site.prefix + "/admin");
        reply.headers.emplace_back("Set-Cookie",
                                   cookie_name(site) + "=" + cookie_value(site, ip) + "; Path=/; HttpOnly");
        reply.body = page(site, "Redirecting", "<p><a href=\"" + site.prefix + "/admin\">Continue</a></p>\n");
      } else {
        reply.status = 401;
        reply.body = login_form(site, "Invalid username or password.");
      }
    } else if (is_post && path == "/comments") {
      auto comment = form_value(req.body, "comment").value_or("");
      int level = ctx_.sessions->difficulty(ctx_.scenario_id(), ip, VulnKind::StoredXss);
      std::string stored = comment;
      if (level >= 3) stored = strip_script_elements(stored);
      if (level >= 5) stored = strip_event_handlers(stored);
      {
        std::lock_guard lock(store_mu_);
        comments_[site.prefix].push_back(stored);
      }
      if (kind == ActionKind::XssAttempt) {
        success = is_executable_xss(stored);
      } else if (kind != ActionKind::SqlInjectionAttempt) {
        kind = ActionKind::Other;
        success = true;
      }
      reply.status = 303;
      reply.headers.emplace_back("Location", site.prefix + "/reviews");
      reply.body = page(site, "Thanks", "<p>Your review was posted.</p>\n");
    } else if (is_get && path == "/reviews") {
      reply.body = reviews_body(site);
      success = kind != ActionKind::SqlInjectionAttempt && kind != ActionKind::XssAttempt;
    } else if (is_get && (path == "/admin" || path == "/admin/")) {
      kind = ActionKind::AdminAccess;
      success = has_admin_cookie(req, site, ip);
      if (success) {
        reply.body = page(site, "Administration",
                          "<p>Orders pending: 17</p>\n<p><a href=\"" + site.prefix +
                              "/admin/database.db\">Download customer database</a></p>\n");
      } else {
        reply.status = 403;
        reply.body = page(site, "Forbidden", "<p>Administrator session required.</p>\n");
      }
    } else if (is_get && path == "/admin/database.db") {
      kind = ActionKind::FileDownload;
      success = has_admin_cookie(req, site, ip);
      if (success) {
        reply.content_type = "application/octet-stream";
        reply.body = database_body(site);
      } else {
        reply.status = 403;
        reply.body = page(site, "Forbidden", "<p>Administrator session required.</p>\n");
      }
    } else if (is_get && path == "/defaced.html" && !site.defacement_asset.empty()) {
      reply.body = ctx_.asset_text(site.defacement_asset);
      success = true;
    } else if (is_get && path.rfind("/assets/", 0) == 0 && path.size() > 8 &&
               path.find("..") == std::string::npos && path.size() > 4 &&
               path.compare(path.size() - 4, 4, ".css") == 0) {
      reply.content_type = "text/css";
      reply.body = "body." + site.skin + " { font-family: sans-serif; }\n";
      success = true;
    } else {
      reply.status = 404;
      reply.body = page(site, "Not found", "<p>The requested page does not exist.</p>\n");
      if (kind == ActionKind::PageFetch || kind == ActionKind::FileDownload || kind == ActionKind::RobotsFetch ||
          kind == ActionKind::AdminAccess)
        success = false;
    }
    if (kind == ActionKind::ScanBurst) success = reply.status < 400;

    auto report = commit_as(ctx_, Protocol::HTTP, ip, obs, kind, success);
    decorate(reply, report);

    res.status = reply.status;
    res.set_header("Server", banner_);
    for (const auto& [k, v] : reply.headers) res.set_header(k, v);
    res.set_content(reply.body, reply.content_type);
  }

  void decorate(Reply& reply, const IngestReport& report) const {
    auto clues = clue_texts(ctx_, report);
    auto rewards = reward_texts(ctx_, report);
    if (clues.empty() && rewards.empty() && report.messages.empty()) return;
    const bool html = reply.content_type.rfind("text/html", 0) == 0;
    std::string extra;
    for (const auto& m : report.messages) extra += html ? "<div class=\"notice\">" + m + "</div>\n" : m + "\n";
    for (const auto& r : rewards) extra += html ? "<div class=\"achievement\">" + html_escape(r) + "</div>\n" : r + "\n";
    for (const auto& c : clues) {
      if (html) {
        std::string safe = c;
        for (auto pos = safe.find("--"); pos != std::string::npos; pos = safe.find("--", pos + 2)) safe[pos + 1] = '=';
        extra += "<!--\n" + safe + "\n-->\n";
      } else {
        extra += c + "\n";
      }
    }
    auto pos = html ? reply.body.rfind("</body>") : std::string::npos;
    if (pos == std::string::npos) {
      reply.body += extra;
    } else {
      reply.body.insert(pos, extra);
    }
  }

  DecoyContext ctx_;
  std::string banner_;
  std::vector<Site> sites_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  std::uint16_t port_ = 0;
  mutable std::mutex store_mu_;
  std::map<std::string, std::vector<std::string>> comments_;  // per site prefix
};

}  // namespace

std::unique_ptr<Decoy> make_http_decoy(DecoyContext ctx) { return std::make_unique<HttpDecoy>(std::move(ctx)); }

}  // namespace decoyweaver
