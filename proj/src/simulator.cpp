#include "decoyweaver/simulator.hpp"

#include <fnmatch.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <span>
#include <sstream>

#include "decoyweaver/decoy.hpp"
#include "decoyweaver/errors.hpp"
#include "decoyweaver/mqtt.hpp"
#include "decoyweaver/net.hpp"
#include "decoyweaver/rng.hpp"

namespace decoyweaver {

using nlohmann::json;

namespace {

constexpr auto kIoTimeout = std::chrono::seconds(10);

bool glob_match(const std::string& glob, const std::string& s) { return ::fnmatch(glob.c_str(), s.c_str(), 0) == 0; }

// Drops glob metacharacters so an unmatched pattern still names something.
std::string literalize(const std::string& glob) {
  std::string out;
  for (char c : glob) {
    if (c == '*' || c == '?' || c == '[' || c == ']') continue;
    out += c;
  }
  return out;
}

std::string pick(const std::optional<std::string>& glob, const std::vector<std::string>& candidates) {
  if (!glob) return candidates.empty() ? std::string("/") : candidates.front();
  for (const auto& c : candidates) {
    if (glob_match(*glob, c)) return c;
  }
  return literalize(*glob);
}

std::string basename_of(const std::string& s) {
  auto slash = s.find_last_of('/');
  return slash == std::string::npos ? s : s.substr(slash + 1);
}

std::string url_encode(std::string_view s) {
  static const char* hex = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out += static_cast<char>(c);
    } else {
      out += '%';
      out += hex[c >> 4];
      out += hex[c & 15];
    }
  }
  return out;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

// Alphanumerics only, lowercased; clue detection survives HTML escaping and CRLF rewriting.
std::string fingerprint(std::string_view s) {
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c)) out += static_cast<char>(std::tolower(c));
  }
  return out;
}

struct HttpResponse {
  int status = 0;
  std::vector<std::pair<std::string, std::string>> headers;  // lowercased names
  std::string body;
};

std::string dechunk(const std::string& body) {
  std::string out;
  std::size_t pos = 0;
  while (pos < body.size()) {
    auto eol = body.find("\r\n", pos);
    if (eol == std::string::npos) break;
    auto size = std::stoul(body.substr(pos, eol - pos), nullptr, 16);
    if (size == 0) break;
    out += body.substr(eol + 2, size);
    pos = eol + 2 + size + 2;
  }
  return out;
}

HttpResponse http_request(const std::string& host, std::uint16_t port, const std::string& bind_ip,
                          const std::string& method, const std::string& target,
                          const std::vector<std::pair<std::string, std::string>>& headers, const std::string& body) {
  auto sock = connect_tcp(host, port, bind_ip);
  sock.set_timeout(kIoTimeout);
  std::string req = method + " " + target + " HTTP/1.1\r\nHost: decoy\r\nConnection: close\r\n";
  for (const auto& [k, v] : headers) req += k + ": " + v + "\r\n";
  if (!body.empty() || method == "POST" || method == "PUT") req += "Content-Length: " + std::to_string(body.size()) + "\r\n";
  req += "\r\n" + body;
  if (!sock.write_all(req)) throw EndpointUnreachable("http: write to " + host + ":" + std::to_string(port) + " failed");
  auto raw = sock.read_all();
  HttpResponse r;
  auto head_end = raw.find("\r\n\r\n");
  if (head_end == std::string::npos) throw EndpointUnreachable("http: truncated response from port " + std::to_string(port));
  std::istringstream head(raw.substr(0, head_end));
  std::string line;
  std::getline(head, line);
  if (line.size() >= 12) r.status = std::atoi(line.c_str() + 9);
  bool chunked = false;
  while (std::getline(head, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    auto name = lower(line.substr(0, colon));
    auto value = line.substr(colon + 1);
    while (!value.empty() && value.front() == ' ') value.erase(value.begin());
    if (name == "transfer-encoding" && lower(value).find("chunked") != std::string::npos) chunked = true;
    r.headers.emplace_back(name, value);
  }
  r.body = raw.substr(head_end + 4);
  if (chunked) r.body = dechunk(r.body);
  return r;
}

// Text of `reply` lines up to and including the final "ddd " line.
std::optional<std::pair<int, std::string>> ftp_reply(Socket& s) {
  std::string text;
  for (;;) {
    auto line = s.read_line();
    if (!line) return std::nullopt;
    text += *line + "\n";
    if (line->size() >= 4 && std::isdigit(static_cast<unsigned char>((*line)[0])) && (*line)[3] == ' ')
      return std::make_pair(std::atoi(line->c_str()), text);
  }
}

// Reads until the peer goes quiet at one of `markers` or closes.
std::string read_until_marker(Socket& s, const std::vector<std::string>& markers) {
  std::string out;
  for (;;) {
    auto chunk = s.read_some();
    if (chunk.empty()) return out;
    out += chunk;
    for (const auto& m : markers) {
      if (out.size() >= m.size() && out.compare(out.size() - m.size(), m.size(), m) == 0) return out;
    }
  }
}

std::optional<VulnKind> vuln_for(ActionKind a) {
  switch (a) {
    case ActionKind::RobotsFetch: return VulnKind::RobotsDisclosure;
    case ActionKind::LoginAttempt: return VulnKind::JsPasswordChecker;
    case ActionKind::SqlInjectionAttempt: return VulnKind::SqlInjectionLogin;
    case ActionKind::XssAttempt: return VulnKind::StoredXss;
    case ActionKind::FtpLogin: return VulnKind::DefaultCredentials;
    case ActionKind::SshLogin:
    case ActionKind::MqttConnect: return VulnKind::WeakCredentials;
    case ActionKind::FileDownload: return VulnKind::PlantedFile;
    case ActionKind::ExploitAttempt: return VulnKind::ScriptedExploit;
    default: return std::nullopt;
  }
}

std::vector<std::string> split_credential(const std::string& c) {
  auto colon = c.find(':');
  if (colon == std::string::npos) return {c, "*"};
  return {c.substr(0, colon), c.substr(colon + 1)};
}

std::vector<std::string> string_list(const json& cfg, const char* key) {
  if (!cfg.is_object() || !cfg.contains(key)) return {};
  return cfg.at(key).get<std::vector<std::string>>();
}

class Agent {
 public:
  Agent(const AgentProfile& profile, const AgentTarget& target, std::string ip, TimestampMs start,
        const SimulationParams& params)
      : p_(profile), target_(target), m_(*target.machine), g_(m_.graph()), ip_(std::move(ip)), t_(start),
        params_(params) {
    for (const auto& stage : g_.stages) {
      for (const auto& c : stage.clues) {
        std::string text;
        try {
          std::ifstream in(g_.asset_path(c.asset));
          std::string line;
          while (std::getline(in, line) && fingerprint(line).size() < 12) {
          }
          text = fingerprint(line);
        } catch (const std::exception&) {
        }
        if (!text.empty()) clue_prints_.push_back(text);
      }
    }
    const auto& http = g_.services.value("http", json::object());
    if (http.contains("sites")) {
      for (const auto& s : http.at("sites")) {
        sites_.push_back({s.value("prefix", std::string()), s.value("login_alias", std::string())});
      }
    } else {
      sites_.push_back({"", http.value("login_alias", std::string())});
    }
  }

  AgentRun run() {
    AgentRun out;
    out.source_ip = ip_;
    std::map<std::string, int> attempts;
    std::string stage = m_.entry();
    if (p_.tool_user) scan_burst();
    for (int step = 0; step < params_.max_steps; ++step) {
      if (step > 0 && m_.is_terminal(stage)) break;
      auto outs = m_.transitions_from(stage);
      if (outs.empty()) break;
      int k = attempts[stage]++;
      if ((step > 0 || p_.tool_user) && draw("abandon", stage, k) >= p_.persistence) break;
      tick(think_ms(stage, k));
      if (has_protocol(Protocol::HTTP) && draw("noise", stage, k) < params_.noise) {
        off_script(stage, k);
      } else {
        attempt(*choose(outs, stage, k), stage, k);
      }
      ++out.steps;
      if (target_.probe) stage = target_.probe->stage(g_.id, ip_).value_or(stage);
    }
    close_all();
    out.final_stage = stage;
    if (target_.probe) out.events = target_.probe->events(g_.id, ip_);
    return out;
  }

 private:
  struct Site {
    std::string prefix;
    std::string login_alias;
  };

  double draw(std::string_view purpose, const std::string& stage, int k) const {
    std::string label(purpose);
    label += "|" + stage;
    Rng r(derive_seed(p_.seed ^ hash_label(label), static_cast<std::uint64_t>(k)));
    return r.uniform();
  }

  TimestampMs think_ms(const std::string& stage, int k) const {
    double u = draw("think", stage, k);
    double s = -params_.think_mean_s * std::log(1.0 - u);
    return std::max<TimestampMs>(1000, static_cast<TimestampMs>(s * 1000.0));
  }

  void tick(TimestampMs ms) {
    t_ += ms;
    if (target_.clock) target_.clock->set(ip_, t_);
  }

  bool has_protocol(Protocol p) const { return target_.endpoints.ports.count(p) > 0; }

  std::uint16_t port(Protocol p) const {
    auto it = target_.endpoints.ports.find(p);
    if (it == target_.endpoints.ports.end())
      throw EndpointUnreachable("no " + std::string(to_string(p)) + " endpoint for scenario " + g_.id);
    return it->second;
  }

  void note(std::string_view response) {
    auto fp = fingerprint(response);
    for (const auto& c : clue_prints_) {
      if (fp.find(c) != std::string::npos) clue_pending_ = true;
    }
  }

  const Transition* choose(std::span<const Transition* const> outs, const std::string& stage, int k) {
    const Transition* main = outs.front();
    std::vector<const Transition*> side;
    for (const auto* t : outs) {
      if (t->main_path) main = t;
    }
    for (const auto* t : outs) {
      if (t != main) side.push_back(t);
    }
    bool follow_clue = clue_pending_ && draw("curiosity", stage, k) < p_.curiosity;
    clue_pending_ = false;
    if (follow_clue || side.empty() || draw("focus", stage, k) < std::max(params_.focus, p_.skill)) return main;
    auto i = static_cast<std::size_t>(draw("side", stage, k) * static_cast<double>(side.size()));
    return side[std::min(i, side.size() - 1)];
  }

  int difficulty(const std::string& stage, ActionKind a) const {
    auto kind = vuln_for(a);
    if (!kind) return 1;
    if (const auto* s = m_.find_stage(stage)) {
      for (const auto& v : s->vulnerabilities) {
        if (v.kind == *kind) return v.difficulty;
      }
    }
    if (const auto* v = m_.default_vuln(*kind)) return v->difficulty;
    return 1;
  }

  void attempt(const Transition& t, const std::string& stage, int k) {
    const auto& trig = t.trigger;
    bool good = draw("success", stage, k) <
                success_probability(p_.skill, difficulty(stage, trig.action), params_.difficulty_slope);
    switch (trig.protocol) {
      case Protocol::HTTP: http_action(trig, good, k); break;
      case Protocol::FTP: ftp_action(trig, good, k); break;
      case Protocol::SSH: ssh_action(trig, good, k); break;
      case Protocol::MQTT: mqtt_action(trig, good, k); break;
    }
  }

  // ---- HTTP

  const Site& site_for(const std::string& path) const {
    const Site* best = &sites_.front();
    std::size_t best_len = 0;
    for (const auto& s : sites_) {
      if (path.rfind(s.prefix, 0) == 0 && s.prefix.size() >= best_len) {
        best = &s;
        best_len = s.prefix.size();
      }
    }
    return *best;
  }

  std::vector<std::string> http_candidates(ActionKind a) const {
    std::vector<std::string> out;
    for (const auto& s : sites_) {
      const auto& P = s.prefix;
      switch (a) {
        case ActionKind::RobotsFetch: out.insert(out.end(), {P + "/robots.txt", P + "/robot.txt"}); break;
        case ActionKind::SqlInjectionAttempt:
        case ActionKind::LoginAttempt:
          out.push_back(P + "/login");
          if (!s.login_alias.empty()) out.push_back(P + s.login_alias);
          break;
        case ActionKind::XssAttempt: out.push_back(P + "/comments"); break;
        case ActionKind::FileDownload: out.push_back(P + "/admin/database.db"); break;
        case ActionKind::AdminAccess: out.push_back(P + "/admin"); break;
        default: out.insert(out.end(), {P + "/", P + "/login", P + "/reviews"}); break;
      }
    }
    return out;
  }

  HttpResponse http(const std::string& method, const std::string& path, const std::string& body = {},
                    bool scanner = false) {
    std::vector<std::pair<std::string, std::string>> headers;
    headers.emplace_back("User-Agent", scanner ? "Mozilla/5.00 (Nikto/2.1.6)"
                                               : "Mozilla/5.0 (X11; Linux x86_64; rv:109.0) Gecko/20100101 Firefox/115.0");
    if (!cookies_.empty()) {
      std::string c;
      for (const auto& [k, v] : cookies_) c += (c.empty() ? "" : "; ") + k + "=" + v;
      headers.emplace_back("Cookie", c);
    }
    if (method == "POST") headers.emplace_back("Content-Type", "application/x-www-form-urlencoded");
    auto r = http_request(target_.endpoints.host, port(Protocol::HTTP), ip_, method, path, headers, body);
    for (const auto& [k, v] : r.headers) {
      if (k != "set-cookie") continue;
      auto eq = v.find('=');
      auto semi = v.find(';');
      if (eq != std::string::npos) cookies_[v.substr(0, eq)] = v.substr(eq + 1, semi == std::string::npos ? semi : semi - eq - 1);
    }
    note(r.body);
    return r;
  }

  static std::string token_from_js(const std::string& js) {
    auto pos = js.find("STAFF_TOKEN");
    if (pos == std::string::npos) return {};
    auto end = js.find(';', pos);
    std::string token;
    bool in = false;
    for (auto i = js.find('=', pos) + 1; i < end && i < js.size(); ++i) {
      if (js[i] == '"') {
        in = !in;
      } else if (in) {
        token += js[i];
      }
    }
    return token;
  }

  void http_action(const ActionPattern& trig, bool good, int k) {
    const auto& glob = trig.matcher.path;
    auto path = pick(glob, http_candidates(trig.action));
    const auto& site = site_for(path);
    switch (trig.action) {
      case ActionKind::SqlInjectionAttempt: {
        std::string payload = good ? (trig.matcher.payload_class == PayloadClass::UnionSelect
                                          ? "' UNION SELECT username, password FROM users -- "
                                          : "' OR '1'='1' -- ")
                                   : "admin'";
        http("POST", path, "user=admin&pass=" + url_encode(payload));
        return;
      }
      case ActionKind::LoginAttempt: {
        std::string token = "letmein" + std::to_string(k);
        if (good) {
          auto js = http("GET", site.prefix + "/js/passcheck.js");
          token = token_from_js(js.body);
          tick(2000);
        }
        http("POST", path, "token=" + url_encode(token));
        return;
      }
      case ActionKind::XssAttempt: {
        std::string payload;
        if (!good) {
          payload = "<script>alert(1)";
        } else if (trig.matcher.payload_class == PayloadClass::ScriptTag) {
          payload = "<script>alert(document.cookie)</script>";
        } else if (trig.matcher.payload_class == PayloadClass::EventHandler) {
          payload = "<img src=x onerror=alert(1)>";
        } else {
          payload = "<a href=\"javascript:alert(document.cookie)\">great deals</a>";
        }
        http("POST", path, "comment=" + url_encode(payload));
        return;
      }
      default:
        http("GET", good ? path : path + ".bak");
        return;
    }
  }

  void scan_burst() {
    if (!has_protocol(Protocol::HTTP)) return;
    static const char* paths[] = {"/cgi-bin/test.cgi", "/phpinfo.php", "/.git/HEAD", "/server-status", "/wp-config.php.bak"};
    for (const char* p : paths) {
      tick(200);
      http("GET", p, {}, true);
    }
  }

  void off_script(const std::string& stage, int k) {
    static const char* paths[] = {"/wp-admin/", "/phpmyadmin/", "/.env", "/backup.zip", "/config.php"};
    auto i = static_cast<std::size_t>(draw("noise-path", stage, k) * 5) % 5;
    http("GET", paths[i]);
  }

  // ---- FTP

  std::pair<std::string, std::string> ftp_credential(const PatternMatcher& m, bool good, int k) const {
    auto creds = m.credentials.empty() ? string_list(g_.services.value("ftp", json::object()), "credentials")
                                       : m.credentials;
    if (creds.empty()) creds = {"anonymous:*"};
    auto c = split_credential(creds.front());
    if (!good) return {"operator" + std::to_string(k), "changeme" + std::to_string(k)};
    return {c[0], c[1] == "*" ? "guest@example.org" : c[1]};
  }

  bool ftp_login(const std::string& user, const std::string& pass) {
    ftp_.close();
    ftp_logged_in_ = false;
    ftp_ = connect_tcp(target_.endpoints.host, port(Protocol::FTP), ip_);
    ftp_.set_timeout(kIoTimeout);
    if (!ftp_reply(ftp_)) throw EndpointUnreachable("ftp: no greeting");
    ftp_.write_all("USER " + user + "\r\n");
    if (!ftp_reply(ftp_)) throw EndpointUnreachable("ftp: connection lost");
    tick(1000);
    ftp_.write_all("PASS " + pass + "\r\n");
    auto r = ftp_reply(ftp_);
    if (!r) throw EndpointUnreachable("ftp: connection lost");
    note(r->second);
    ftp_logged_in_ = r->first == 230;
    return ftp_logged_in_;
  }

  void ftp_action(const ActionPattern& trig, bool good, int k) {
    if (trig.action == ActionKind::FtpLogin) {
      auto [u, p] = ftp_credential(trig.matcher, good, k);
      ftp_login(u, p);
      return;
    }
    if (!ftp_logged_in_) {
      auto [u, p] = ftp_credential(PatternMatcher{}, true, k);
      if (!ftp_login(u, p)) return;
      tick(2000);
    }
    std::string name = trig.matcher.path ? literalize(*trig.matcher.path) : std::string("README.txt");
    if (!good) name += ".bak";
    ftp_.write_all("PASV\r\n");
    auto pasv = ftp_reply(ftp_);
    if (!pasv || pasv->first != 227) return;
    auto open = pasv->second.find('(');
    auto close = pasv->second.find(')', open);
    std::vector<int> nums;
    std::istringstream in(pasv->second.substr(open + 1, close - open - 1));
    for (std::string part; std::getline(in, part, ',');) nums.push_back(std::atoi(part.c_str()));
    if (nums.size() != 6) return;
    auto data_port = static_cast<std::uint16_t>(nums[4] * 256 + nums[5]);
    auto data = connect_tcp(target_.endpoints.host, data_port, ip_);
    data.set_timeout(kIoTimeout);
    tick(1000);
    ftp_.write_all("RETR " + name + "\r\n");
    auto r = ftp_reply(ftp_);
    if (!r) throw EndpointUnreachable("ftp: connection lost");
    if (r->first == 150) {
      auto content = data.read_all();
      note(content.substr(0, 1 << 16));
      r = ftp_reply(ftp_);
      if (!r) throw EndpointUnreachable("ftp: connection lost");
    }
    note(r->second);
  }

  // ---- SSH

  const json& ssh_cfg() const {
    static const json empty = json::object();
    auto it = g_.services.find("ssh");
    return it == g_.services.end() ? empty : *it;
  }

  std::vector<std::string> ssh_hosts() const {
    std::vector<std::string> out;
    const auto& cfg = ssh_cfg();
    if (cfg.contains("entry_host")) out.push_back(cfg.at("entry_host").get<std::string>());
    if (cfg.contains("hosts")) {
      for (const auto& [name, h] : cfg.at("hosts").items()) {
        if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
      }
    }
    return out;
  }

  std::pair<std::string, std::string> ssh_credential(const std::string& host, const std::string& user_glob) const {
    const auto& cfg = ssh_cfg();
    std::vector<std::string> creds;
    if (cfg.contains("hosts") && cfg.at("hosts").contains(host))
      creds = string_list(cfg.at("hosts").at(host), "credentials");
    for (const auto& c : creds) {
      auto parts = split_credential(c);
      if (glob_match(user_glob, parts[0])) return {parts[0], parts[1] == "*" ? "password" : parts[1]};
    }
    return {literalize(user_glob).empty() ? "root" : literalize(user_glob), "root"};
  }

  static constexpr const char* kPromptUser = "$ ";
  static constexpr const char* kPromptRoot = "# ";

  bool ssh_entry_login(const std::string& user, const std::string& pass) {
    ssh_.close();
    ssh_hosts_.clear();
    ssh_ = connect_tcp(target_.endpoints.host, port(Protocol::SSH), ip_);
    ssh_.set_timeout(kIoTimeout);
    read_until_marker(ssh_, {"login as: "});
    ssh_.write_all(user + "\r\n");
    read_until_marker(ssh_, {"password: "});
    tick(1500);
    ssh_.write_all(pass + "\r\n");
    auto out = read_until_marker(ssh_, {kPromptUser, kPromptRoot, "login as: "});
    note(out);
    bool ok = out.size() >= 2 && (out.compare(out.size() - 2, 2, kPromptUser) == 0 ||
                                  out.compare(out.size() - 2, 2, kPromptRoot) == 0);
    if (!ok) {
      ssh_.close();
      return false;
    }
    ssh_hosts_.push_back(ssh_cfg().value("entry_host", std::string()));
    return true;
  }

  bool ensure_shell(int k) {
    if (ssh_.valid() && !ssh_hosts_.empty()) return true;
    const auto& entry = ssh_cfg().value("entry_host", std::string());
    auto [u, p] = ssh_credential(entry, "*");
    bool ok = ssh_entry_login(u, p);
    tick(2000 + k);
    return ok;
  }

  std::string shell(const std::string& cmd) {
    ssh_.write_all(cmd + "\r\n");
    auto out = read_until_marker(ssh_, {kPromptUser, kPromptRoot});
    note(out);
    return out;
  }

  void ssh_action(const ActionPattern& trig, bool good, int k) {
    if (trig.action == ActionKind::ExploitAttempt) {
      exploit(good);
      return;
    }
    if (ssh_cfg().value("mode", std::string("shell")) == "service") {
      exploit(good);
      return;
    }
    if (trig.action == ActionKind::SshLogin) {
      std::string glob = trig.matcher.path.value_or("*@*");
      auto at = glob.find('@');
      std::string user_glob = at == std::string::npos ? "*" : glob.substr(0, at);
      std::string host_glob = at == std::string::npos ? glob : glob.substr(at + 1);
      auto hosts = ssh_hosts();
      std::string host = literalize(host_glob);
      for (const auto& h : hosts) {
        if (glob_match(host_glob, h)) {
          host = h;
          break;
        }
      }
      auto [user, pass] = ssh_credential(host, user_glob);
      if (!good) pass = "wrong" + std::to_string(k);
      const auto& entry = ssh_cfg().value("entry_host", std::string());
      if (host == entry && ssh_hosts_.empty()) {
        ssh_entry_login(user, pass);
        return;
      }
      if (!ensure_shell(k)) return;
      ssh_.write_all("ssh " + user + "@" + host + "\r\n");
      read_until_marker(ssh_, {"password: "});
      tick(1500);
      ssh_.write_all(pass + "\r\n");
      auto out = read_until_marker(ssh_, {kPromptUser, kPromptRoot});
      note(out);
      if (out.find("Permission denied") == std::string::npos) ssh_hosts_.push_back(host);
      return;
    }
    if (!ensure_shell(k)) return;
    if (trig.action == ActionKind::FileDownload) {
      std::string name = trig.matcher.path ? basename_of(literalize(*trig.matcher.path)) : std::string("README");
      shell("cat " + name + (good ? "" : ".bak"));
      return;
    }
    shell(good ? "uname -a" : "sudo -l");
  }

  void exploit(bool good) {
    std::size_t min_len = 256;
    for (const auto& s : g_.stages) {
      for (const auto& v : s.vulnerabilities) {
        if (v.kind != VulnKind::ScriptedExploit) continue;
        auto it = v.params.find("min_len");
        if (it != v.params.end()) min_len = std::max<std::size_t>(min_len, std::stoul(it->second));
      }
    }
    auto sock = connect_tcp(target_.endpoints.host, port(Protocol::SSH), ip_);
    sock.set_timeout(kIoTimeout);
    sock.read_line();
    std::string payload = good ? std::string(32, static_cast<char>(0x90)) + std::string(min_len + 64 * 4 + 32, 'A')
                               : std::string(300, 'A');
    tick(1000);
    sock.write_all(payload + "\n");
    auto reply = sock.read_line();
    if (reply) note(*reply);
    if (reply && reply->rfind("# ", 0) == 0) {
      auto more = read_until_marker(sock, {kPromptRoot, kPromptUser});
      note(more);
    }
  }

  // ---- MQTT

  std::pair<std::string, std::string> mqtt_credential(const PatternMatcher& m) const {
    const auto it = g_.services.find("mqtt");
    std::vector<std::string> creds = m.credentials;
    if (creds.empty() && it != g_.services.end()) {
      creds = string_list(*it, "credentials");
      if (it->contains("credentials_asset")) {
        auto asset = it->at("credentials_asset").get<std::string>();
        if (asset.rfind("asset:", 0) == 0) asset = asset.substr(6);
        std::ifstream in(g_.asset_path(asset));
        std::string line, user;
        while (std::getline(in, line)) {
          while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
          if (line.rfind("mqtt_user=", 0) == 0) user = line.substr(10);
          if (line.rfind("mqtt_pass=", 0) == 0 && !user.empty()) creds.push_back(user + ":" + line.substr(10));
        }
      }
    }
    if (creds.empty()) return {"guest", "guest"};
    auto c = split_credential(creds.front());
    return {c[0], c[1] == "*" ? "guest" : c[1]};
  }

  // Reads packets, noting every PUBLISH, until one of `type` arrives.
  std::optional<mqtt::Packet> mqtt_wait(mqtt::PacketType type) {
    while (auto p = mqtt::read_packet(mqtt_)) {
      if (p->type == static_cast<std::uint8_t>(mqtt::PacketType::Publish)) {
        try {
          note(mqtt::parse_publish(p->flags, p->body).payload);
        } catch (const Error&) {
        }
      }
      if (p->type == static_cast<std::uint8_t>(type)) return p;
    }
    return std::nullopt;
  }

  bool mqtt_connect(const std::string& user, const std::string& pass) {
    mqtt_.close();
    mqtt_connected_ = false;
    mqtt_ = connect_tcp(target_.endpoints.host, port(Protocol::MQTT), ip_);
    mqtt_.set_timeout(kIoTimeout);
    mqtt::ConnectInfo info;
    info.client_id = "dw-" + ip_;
    info.username = user;
    info.password = pass;
    info.keep_alive = 60;
    mqtt_.write_all(mqtt::encode(mqtt::connect_packet(info)));
    auto ack = mqtt_wait(mqtt::PacketType::Connack);
    mqtt_connected_ = ack && ack->body.size() == 2 && ack->body[1] == 0;
    if (!mqtt_connected_) mqtt_.close();
    return mqtt_connected_;
  }

  void mqtt_action(const ActionPattern& trig, bool good, int k) {
    if (trig.action == ActionKind::MqttConnect) {
      auto [u, p] = mqtt_credential(trig.matcher);
      mqtt_connect(u, good ? p : p + "-" + std::to_string(k));
      return;
    }
    if (!mqtt_connected_) {
      auto [u, p] = mqtt_credential(PatternMatcher{});
      if (!mqtt_connect(u, p)) return;
      tick(2000);
    }
    std::string name = trig.matcher.path ? basename_of(literalize(*trig.matcher.path)) : std::string("README");
    std::string topic = "fs/" + name + (good ? "" : ".bak");
    mqtt_.write_all(mqtt::encode(mqtt::subscribe_packet(static_cast<std::uint16_t>(++mqtt_packet_id_), {topic})));
    auto ack = mqtt_wait(mqtt::PacketType::Suback);
    if (!ack) {
      mqtt_connected_ = false;
      return;
    }
    if (ack->body.size() >= 3 && static_cast<std::uint8_t>(ack->body[2]) != mqtt::kSubackFailure) {
      mqtt_wait(mqtt::PacketType::Publish);
    }
  }

  void close_all() {
    ftp_.close();
    ssh_.close();
    mqtt_.close();
  }

  AgentProfile p_;
  const AgentTarget& target_;
  const RuntimeStateMachine& m_;
  const ScenarioGraph& g_;
  std::string ip_;
  TimestampMs t_;
  SimulationParams params_;
  std::vector<Site> sites_;
  std::vector<std::string> clue_prints_;
  bool clue_pending_ = false;
  std::map<std::string, std::string> cookies_;
  Socket ftp_;
  bool ftp_logged_in_ = false;
  Socket ssh_;
  std::vector<std::string> ssh_hosts_;
  Socket mqtt_;
  bool mqtt_connected_ = false;
  int mqtt_packet_id_ = 0;
};

double unit(const json& j, const char* key, double fallback) {
  double v = j.value(key, fallback);
  if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(key) + " must be in [0,1]");
  return v;
}

}  // namespace

void check_profile(const AgentProfile& p) {
  for (auto [name, v] : {std::pair{"skill", p.skill}, {"persistence", p.persistence}, {"curiosity", p.curiosity}}) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(name) + " must be in [0,1]");
  }
}

double success_probability(double skill, int difficulty, double slope) {
  return std::clamp(skill - slope * (difficulty - 1), 0.0, 1.0);
}

CohortSpec cohort_from_json(const json& j) {
  CohortSpec spec;
  try {
    spec.n_agents = j.value("n_agents", std::size_t{1});
    if (spec.n_agents < 1) throw ConfigError("n_agents must be at least 1");
    spec.scenario_id = j.value("scenario_id", std::string());
    spec.master_seed = j.value("master_seed", std::uint64_t{0});
    for (const auto& entry : j.value("profile_distribution", json::array())) {
      WeightedProfile wp;
      wp.weight = entry.value("weight", 1.0);
      if (!(wp.weight > 0.0)) throw ConfigError("profile weights must be positive");
      const auto& pj = entry.contains("profile") ? entry.at("profile") : entry;
      wp.profile.name = pj.value("name", wp.profile.name);
      wp.profile.skill = unit(pj, "skill", wp.profile.skill);
      wp.profile.persistence = unit(pj, "persistence", wp.profile.persistence);
      wp.profile.curiosity = unit(pj, "curiosity", wp.profile.curiosity);
      wp.profile.tool_user = pj.value("tool_user", false);
      wp.profile.seed = pj.value("seed", std::uint64_t{0});
      spec.profile_distribution.push_back(wp);
    }
    if (j.contains("params")) {
      const auto& pj = j.at("params");
      auto& p = spec.params;
      p.difficulty_slope = pj.value("difficulty_slope", p.difficulty_slope);
      p.focus = unit(pj, "focus", p.focus);
      p.noise = unit(pj, "noise", p.noise);
      p.think_mean_s = pj.value("think_mean_s", p.think_mean_s);
      p.max_steps = pj.value("max_steps", p.max_steps);
      p.start_ts = pj.value("start_ts", p.start_ts);
      p.arrival_spacing_ms = pj.value("arrival_spacing_ms", p.arrival_spacing_ms);
      p.database_size = pj.value("database_size", p.database_size);
      if (p.think_mean_s <= 0 || p.max_steps < 1) throw ConfigError("think_mean_s and max_steps must be positive");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("cohort spec: ") + e.what());
  }
  return spec;
}

json cohort_to_json(const CohortSpec& spec) {
  json dist = json::array();
  for (const auto& wp : spec.profile_distribution) {
    const auto& p = wp.profile;
    dist.push_back({{"weight", wp.weight},
                    {"profile",
                     {{"name", p.name},
                      {"skill", p.skill},
                      {"persistence", p.persistence},
                      {"curiosity", p.curiosity},
                      {"tool_user", p.tool_user},
                      {"seed", p.seed}}}});
  }
  const auto& p = spec.params;
  return json{{"n_agents", spec.n_agents},
              {"scenario_id", spec.scenario_id},
              {"master_seed", spec.master_seed},
              {"profile_distribution", dist},
              {"params",
               {{"difficulty_slope", p.difficulty_slope},
                {"focus", p.focus},
                {"noise", p.noise},
                {"think_mean_s", p.think_mean_s},
                {"max_steps", p.max_steps},
                {"start_ts", p.start_ts},
                {"arrival_spacing_ms", p.arrival_spacing_ms},
                {"database_size", p.database_size}}}};
}

std::optional<std::string> SessionManagerProbe::stage(const std::string& scenario_id, const std::string& ip) {
  auto s = sessions_.session(sessions_.session_id_for(scenario_id, ip));
  if (!s) return std::nullopt;
  return s->current_stage;
}

std::vector<ActionEvent> SessionManagerProbe::events(const std::string& scenario_id, const std::string& ip) {
  auto s = sessions_.session(sessions_.session_id_for(scenario_id, ip));
  return s ? s->events : std::vector<ActionEvent>{};
}

std::optional<json> ApiProbe::find(const std::string& scenario_id, const std::string& ip) {
  auto r = http_request(host_, port_, {}, "GET", "/api/sessions", {{"Authorization", "Bearer " + token_}}, {});
  if (r.status != 200) throw EndpointUnreachable("operator api answered " + std::to_string(r.status));
  auto list = json::parse(r.body);
  std::optional<json> best;
  for (const auto& s : list) {
    if (s.value("scenario", "") != scenario_id || s.value("source_ip", "") != ip) continue;
    if (!best || s.value("started_at", 0LL) >= best->value("started_at", 0LL)) best = s;
  }
  return best;
}

std::optional<std::string> ApiProbe::stage(const std::string& scenario_id, const std::string& ip) {
  auto s = find(scenario_id, ip);
  if (!s) return std::nullopt;
  return s->value("current_stage", std::string());
}

std::vector<ActionEvent> ApiProbe::events(const std::string& scenario_id, const std::string& ip) {
  auto s = find(scenario_id, ip);
  if (!s) return {};
  auto r = http_request(host_, port_, {}, "GET", "/api/sessions/" + s->value("id", std::string()),
                        {{"Authorization", "Bearer " + token_}}, {});
  if (r.status != 200) return {};
  std::vector<ActionEvent> out;
  for (const auto& e : json::parse(r.body).value("recent_events", json::array())) {
    ActionEvent ev;
    ev.ts = e.value("ts", TimestampMs{0});
    ev.protocol = protocol_from_string(e.value("protocol", "")).value_or(Protocol::HTTP);
    ev.action = action_kind_from_string(e.value("action", "")).value_or(ActionKind::Other);
    ev.success = e.value("success", false);
    ev.inter_event_ms = e.value("inter_event_ms", std::int64_t{0});
    ev.raw = e.value("raw", std::string());
    out.push_back(std::move(ev));
  }
  return out;
}

std::string agent_source_ip(std::size_t index) {
  return "127.1." + std::to_string(index / 250 + 1) + "." + std::to_string(index % 250 + 1);
}

AgentRun run_agent(const AgentProfile& profile, const AgentTarget& target, const std::string& source_ip,
                   TimestampMs start_ts, const SimulationParams& params) {
  check_profile(profile);
  if (!target.machine) throw ConfigError("run_agent: no scenario");
  Agent agent(profile, target, source_ip, start_ts, params);
  return agent.run();
}

std::uint64_t agent_seed(std::uint64_t master_seed, std::size_t index) { return derive_seed(master_seed, index); }

AgentProfile cohort_agent_profile(const CohortSpec& spec, std::size_t index) {
  AgentProfile p;
  if (!spec.profile_distribution.empty()) {
    double total = 0;
    for (const auto& wp : spec.profile_distribution) total += wp.weight;
    Rng r(derive_seed(spec.master_seed ^ hash_label("profile"), index));
    double u = r.uniform() * total;
    p = spec.profile_distribution.back().profile;
    for (const auto& wp : spec.profile_distribution) {
      if (u < wp.weight) {
        p = wp.profile;
        break;
      }
      u -= wp.weight;
    }
  }
  p.seed = agent_seed(spec.master_seed ^ p.seed, index);
  return p;
}

std::vector<AgentRun> run_cohort_against(const CohortSpec& spec, const AgentTarget& target, std::size_t first,
                                         std::size_t count) {
  std::vector<AgentRun> runs;
  for (std::size_t i = first; i < first + count && i < spec.n_agents; ++i) {
    auto start = spec.params.start_ts + static_cast<TimestampMs>(i) * spec.params.arrival_spacing_ms;
    runs.push_back(run_agent(cohort_agent_profile(spec, i), target, agent_source_ip(i), start, spec.params));
  }
  return runs;
}

std::vector<EventRecord> run_cohort(const CohortSpec& spec, std::shared_ptr<const RuntimeStateMachine> machine) {
  if (spec.n_agents < 1) throw ConfigError("n_agents must be at least 1");
  if (!spec.scenario_id.empty() && spec.scenario_id != machine->id())
    throw ScenarioMismatch("cohort targets '" + spec.scenario_id + "' but the bundle is '" + machine->id() + "'");

  static std::atomic<unsigned> counter{0};
  auto dir = std::filesystem::temp_directory_path() /
             ("decoyweaver-sim-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::create_directories(dir);

  ManualClock clock(spec.params.start_ts);
  SessionManager sessions(spec.params.start_ts);
  sessions.deploy(machine);
  RoundRobinState round_robin;
  std::vector<EventRecord> records;
  std::mutex records_mu;
  sessions.add_sink([&](const EventRecord& r) {
    std::lock_guard lock(records_mu);
    records.push_back(r);
  });

  std::vector<std::unique_ptr<Decoy>> decoys;
  AgentTarget target;
  target.machine = machine;
  target.clock = &clock;
  SessionManagerProbe probe(sessions);
  target.probe = &probe;
  auto cleanup = [&] {
    for (auto& d : decoys) d->stop();
    decoys.clear();
    std::error_code ec;
    std::filesystem::remove_all(dir, ec);
  };
  try {
    for (auto p : {Protocol::HTTP, Protocol::FTP, Protocol::SSH, Protocol::MQTT}) {
      if (!machine->graph().services.contains(lower(std::string(to_string(p))))) continue;
      DecoyContext ctx;
      ctx.sessions = &sessions;
      ctx.machine = machine;
      ctx.clock = &clock;
      ctx.round_robin = &round_robin;
      ctx.data_dir = dir;
      ctx.database_size_override = spec.params.database_size;
      auto decoy = make_decoy(p, std::move(ctx));
      decoy->start(0);
      target.endpoints.ports[p] = decoy->port();
      decoys.push_back(std::move(decoy));
    }
    run_cohort_against(spec, target, 0, spec.n_agents);
  } catch (...) {
    cleanup();
    throw;
  }
  cleanup();

  std::map<std::string, std::size_t> agent_of;
  for (std::size_t i = 0; i < spec.n_agents; ++i) agent_of[agent_source_ip(i)] = i;
  std::stable_sort(records.begin(), records.end(), [&](const EventRecord& a, const EventRecord& b) {
    auto ka = std::make_tuple(a.ts, agent_of[a.source_ip], a.seq);
    auto kb = std::make_tuple(b.ts, agent_of[b.source_ip], b.seq);
    return ka < kb;
  });
  return records;
}

}  // namespace decoyweaver
