#include "decoyweaver/action.hpp"

#include <algorithm>
#include <cctype>
#include <regex>
#include <utility>

namespace decoyweaver {

namespace {

constexpr std::array<std::string_view, 4> kProtocolNames = {"HTTP", "FTP", "SSH", "MQTT"};

constexpr std::array<std::string_view, kActionKindCount> kActionNames = {
    "PageFetch",   "RobotsFetch", "LoginAttempt", "SqlInjectionAttempt", "XssAttempt",
    "AdminAccess", "FileDownload", "FileUpload",  "FtpLogin",            "SshLogin",
    "MqttConnect", "ScanBurst",   "ExploitAttempt", "Other"};

constexpr std::array<std::string_view, 8> kPayloadNames = {
    "unbalanced_quote", "tautology",    "union_select",   "comment_suffix",
    "script_tag",       "event_handler", "javascript_uri", "oversized"};

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

bool starts_with_icase(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(s[i])) !=
        std::tolower(static_cast<unsigned char>(prefix[i])))
      return false;
  }
  return true;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string_view first_line(std::string_view s) {
  auto end = s.find_first_of("\r\n");
  return end == std::string_view::npos ? s : s.substr(0, end);
}

std::string basename_of(std::string_view path) {
  path = trim(path);
  while (!path.empty() && path.back() == '/') path.remove_suffix(1);
  auto slash = path.rfind('/');
  return std::string(slash == std::string_view::npos ? path : path.substr(slash + 1));
}

// Command word and argument of a single text protocol line.
std::pair<std::string, std::string> split_command(std::string_view line) {
  line = trim(first_line(line));
  auto sp = line.find(' ');
  if (sp == std::string_view::npos) return {lower(line), {}};
  return {lower(line.substr(0, sp)), std::string(trim(line.substr(sp + 1)))};
}

struct HttpParts {
  std::string method;
  std::string target;  // path plus query
  std::string path;
  std::string query;
  std::string headers;  // lowercased header block
  std::string body;
};

HttpParts parse_http(std::string_view raw) {
  HttpParts parts;
  auto line = first_line(raw);
  auto sp1 = line.find(' ');
  if (sp1 == std::string_view::npos) {
    parts.method = std::string(line);
    return parts;
  }
  parts.method = std::string(line.substr(0, sp1));
  auto rest = line.substr(sp1 + 1);
  auto sp2 = rest.find(' ');
  parts.target = std::string(sp2 == std::string_view::npos ? rest : rest.substr(0, sp2));
  auto q = parts.target.find('?');
  parts.path = parts.target.substr(0, q);
  if (q != std::string::npos) parts.query = parts.target.substr(q + 1);
  auto header_start = raw.find('\n');
  auto blank = raw.find("\r\n\r\n");
  std::size_t body_start = std::string_view::npos;
  if (blank != std::string_view::npos) {
    body_start = blank + 4;
  } else if ((blank = raw.find("\n\n")) != std::string_view::npos) {
    body_start = blank + 2;
  }
  if (header_start != std::string_view::npos) {
    auto header_end = body_start == std::string_view::npos ? raw.size() : blank;
    if (header_end > header_start) parts.headers = lower(raw.substr(header_start + 1, header_end - header_start - 1));
  }
  if (body_start != std::string_view::npos && body_start <= raw.size()) {
    parts.body = std::string(raw.substr(body_start));
  }
  return parts;
}

// Decoded values of every key=value pair in a query string or form body.
std::vector<std::pair<std::string, std::string>> form_pairs(std::string_view body) {
  std::vector<std::pair<std::string, std::string>> out;
  while (!body.empty()) {
    auto amp = body.find('&');
    auto item = body.substr(0, amp);
    auto eq = item.find('=');
    if (eq == std::string_view::npos) {
      out.emplace_back(url_decode(item), std::string());
    } else {
      out.emplace_back(url_decode(item.substr(0, eq)), url_decode(item.substr(eq + 1)));
    }
    if (amp == std::string_view::npos) break;
    body.remove_prefix(amp + 1);
  }
  return out;
}

bool has_file_extension(std::string_view path) {
  static const std::regex re(R"(\.(db|sql|csv|bak|zip|tar|gz|tgz|pcap|log|conf|cfg|txt|xml|json|sqlite|dump)$)",
                             std::regex::icase | std::regex::optimize);
  return std::regex_search(std::string(path), re);
}

bool is_admin_path(std::string_view path) {
  static const std::regex re(R"((^|/)admin/?$)", std::regex::icase | std::regex::optimize);
  return std::regex_search(std::string(path), re);
}

bool is_robots_path(std::string_view path) {
  auto p = lower(path);
  auto ends = [&](std::string_view suffix) {
    return p.size() >= suffix.size() && p.compare(p.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return ends("/robots.txt") || ends("/robot.txt");
}

bool has_nop_sled(std::string_view raw) {
  static const std::string bytes(8, static_cast<char>(0x90));
  return raw.find(bytes) != std::string_view::npos ||
         raw.find(R"(\x90\x90\x90\x90\x90\x90\x90\x90)") != std::string_view::npos;
}

}  // namespace

bool is_executable_xss(std::string_view text) {
  static const std::regex complete_script(R"(<\s*script[^>]*>[\s\S]*<\s*/\s*script\s*>)",
                                          std::regex::icase | std::regex::optimize);
  static const std::regex handler(R"(<[a-z][^>]*\son[a-z]+\s*=\s*[^>]+>)",
                                  std::regex::icase | std::regex::optimize);
  static const std::regex js_uri(R"((href|src)\s*=\s*["']?\s*javascript:)",
                                 std::regex::icase | std::regex::optimize);
  std::string s(text);
  return std::regex_search(s, complete_script) || std::regex_search(s, handler) ||
         std::regex_search(s, js_uri);
}

std::string_view to_string(Protocol p) { return kProtocolNames[static_cast<std::size_t>(p)]; }

std::string_view to_string(ActionKind k) { return kActionNames[static_cast<std::size_t>(k)]; }

std::optional<Protocol> protocol_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kProtocolNames.size(); ++i) {
    if (kProtocolNames[i] == s) return static_cast<Protocol>(i);
  }
  return std::nullopt;
}

std::optional<ActionKind> action_kind_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kActionNames.size(); ++i) {
    if (kActionNames[i] == s) return static_cast<ActionKind>(i);
  }
  return std::nullopt;
}

std::string_view to_string(PayloadClass c) { return kPayloadNames[static_cast<std::size_t>(c)]; }

std::optional<PayloadClass> payload_class_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kPayloadNames.size(); ++i) {
    if (kPayloadNames[i] == s) return static_cast<PayloadClass>(i);
  }
  return std::nullopt;
}

bool action_allowed_for(Protocol p, ActionKind k) {
  switch (k) {
    case ActionKind::PageFetch:
    case ActionKind::RobotsFetch:
    case ActionKind::LoginAttempt:
    case ActionKind::SqlInjectionAttempt:
    case ActionKind::XssAttempt:
    case ActionKind::AdminAccess:
      return p == Protocol::HTTP;
    case ActionKind::FileUpload:
      return p != Protocol::MQTT;
    case ActionKind::FtpLogin:
      return p == Protocol::FTP;
    case ActionKind::SshLogin:
    case ActionKind::ExploitAttempt:
      return p == Protocol::SSH;
    case ActionKind::MqttConnect:
      return p == Protocol::MQTT;
    case ActionKind::FileDownload:
    case ActionKind::ScanBurst:
    case ActionKind::Other:
      return true;
  }
  return false;
}

bool is_attack(ActionKind k) {
  switch (k) {
    case ActionKind::LoginAttempt:
    case ActionKind::SqlInjectionAttempt:
    case ActionKind::XssAttempt:
    case ActionKind::AdminAccess:
    case ActionKind::FileUpload:
    case ActionKind::FtpLogin:
    case ActionKind::SshLogin:
    case ActionKind::MqttConnect:
    case ActionKind::ExploitAttempt:
      return true;
    default:
      return false;
  }
}

std::string make_excerpt(std::string_view bytes) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(std::min(bytes.size(), kMaxRawExcerpt));
  for (unsigned char c : bytes) {
    if ((c >= 0x20 && c < 0x7f) || c == '\r' || c == '\n' || c == '\t') {
      if (out.size() + 1 > kMaxRawExcerpt) break;
      out.push_back(static_cast<char>(c));
    } else {
      if (out.size() + 4 > kMaxRawExcerpt) break;
      out += "\\x";
      out.push_back(kHex[c >> 4]);
      out.push_back(kHex[c & 0xf]);
    }
  }
  return out;
}

std::string url_decode(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    if (c == '+') {
      out.push_back(' ');
    } else if (c == '%' && i + 2 < s.size() &&
               std::isxdigit(static_cast<unsigned char>(s[i + 1])) &&
               std::isxdigit(static_cast<unsigned char>(s[i + 2]))) {
      out.push_back(static_cast<char>(std::stoi(std::string(s.substr(i + 1, 2)), nullptr, 16)));
      i += 2;
    } else {
      out.push_back(c);
    }
  }
  return out;
}

std::optional<std::string> form_value(std::string_view body, std::string_view key) {
  for (auto& [k, v] : form_pairs(body)) {
    if (k == key) return v;
  }
  return std::nullopt;
}

std::vector<PayloadClass> sql_payload_classes(std::string_view text) {
  static const std::regex tautology(
      R"(('|")?\s*\bor\b\s*('|")?\s*(\w+)\s*('|")?\s*=\s*('|")?\s*\w+)",
      std::regex::icase | std::regex::optimize);
  static const std::regex union_select(R"(\bunion\b\s+(all\s+)?\bselect\b)",
                                       std::regex::icase | std::regex::optimize);
  static const std::regex comment(R"(('|\))\s*.*(--|#|/\*)\s*[^'"]*$)", std::regex::icase | std::regex::optimize);
  static const std::regex numeric_tautology(R"(\bor\b\s+(\d+)\s*=\s*\1\b)", std::regex::icase | std::regex::optimize);
  static const std::regex sqlish(R"((\bor\b|\band\b|\bselect\b|\bunion\b|--|#|;|'\s*$))",
                                 std::regex::icase | std::regex::optimize);
  std::vector<PayloadClass> out;
  std::string s(text);
  auto quotes = std::count(s.begin(), s.end(), '\'');
  bool has_quote = quotes > 0;
  if ((quotes % 2 == 1) && std::regex_search(s, sqlish)) out.push_back(PayloadClass::UnbalancedQuote);
  if (has_quote && std::regex_search(s, tautology)) out.push_back(PayloadClass::Tautology);
  if (!has_quote && std::regex_search(s, numeric_tautology))
    out.push_back(PayloadClass::Tautology);
  if (std::regex_search(s, union_select)) out.push_back(PayloadClass::UnionSelect);
  if (has_quote && std::regex_search(s, comment)) out.push_back(PayloadClass::CommentSuffix);
  return out;
}

std::vector<PayloadClass> xss_payload_classes(std::string_view text) {
  static const std::regex script(R"(<\s*/?\s*script)", std::regex::icase | std::regex::optimize);
  static const std::regex handler(R"(<[a-z][^>]*\son[a-z]+\s*=)", std::regex::icase | std::regex::optimize);
  static const std::regex js_uri(R"(javascript\s*:)", std::regex::icase | std::regex::optimize);
  std::vector<PayloadClass> out;
  std::string s(text);
  if (std::regex_search(s, script)) out.push_back(PayloadClass::ScriptTag);
  if (std::regex_search(s, handler)) out.push_back(PayloadClass::EventHandler);
  if (std::regex_search(s, js_uri)) out.push_back(PayloadClass::JavascriptUri);
  return out;
}

bool has_scanner_signature(std::string_view raw_request) {
  static constexpr std::array<std::string_view, 14> kSignatures = {
      "sqlmap", "nikto", "nmap", "masscan", "zgrab", "nuclei", "dirbuster", "gobuster",
      "wpscan", "acunetix", "nessus", "openvas", "hydra", "libssh"};
  auto text = lower(raw_request);
  for (auto sig : kSignatures) {
    if (text.find(sig) != std::string::npos) return true;
  }
  return false;
}

std::string extract_target(Protocol p, std::string_view raw) {
  switch (p) {
    case Protocol::HTTP:
      return parse_http(raw).path;
    case Protocol::FTP: {
      auto [cmd, arg] = split_command(raw);
      if (cmd == "user") return arg;
      if (cmd == "retr" || cmd == "stor" || cmd == "appe" || cmd == "size" || cmd == "dele")
        return basename_of(arg);
      return arg;
    }
    case Protocol::SSH: {
      auto [cmd, arg] = split_command(raw);
      if (cmd == "login") {
        auto sp = arg.find(' ');
        return sp == std::string::npos ? arg : arg.substr(0, sp);
      }
      if (cmd == "cat" || cmd == "get" || cmd == "less" || cmd == "more" || cmd == "head" ||
          cmd == "tail" || cmd == "scp") {
        auto sp = arg.rfind(' ');
        return basename_of(sp == std::string::npos ? arg : arg.substr(sp + 1));
      }
      return arg;
    }
    case Protocol::MQTT: {
      auto line = first_line(raw);
      auto field = [&](std::string_view key) -> std::string {
        auto pos = line.find(std::string(key) + "=");
        if (pos == std::string_view::npos) return {};
        auto start = pos + key.size() + 1;
        auto end = line.find(' ', start);
        return std::string(line.substr(start, end == std::string_view::npos ? line.npos : end - start));
      };
      if (starts_with_icase(line, "CONNECT")) return field("username");
      if (starts_with_icase(line, "SUBSCRIBE")) {
        auto topic = field("topic");
        if (topic.rfind("fs/", 0) == 0) return basename_of(topic.substr(3));
        return topic;
      }
      if (starts_with_icase(line, "PUBLISH")) return field("topic");
      return {};
    }
  }
  return {};
}

std::string extract_credentials(Protocol p, std::string_view raw) {
  switch (p) {
    case Protocol::HTTP: {
      auto parts = parse_http(raw);
      auto user = form_value(parts.body, "user");
      if (!user) user = form_value(parts.body, "username");
      auto pass = form_value(parts.body, "pass");
      if (!pass) pass = form_value(parts.body, "password");
      if (!user && !pass) return {};
      return user.value_or("") + ":" + pass.value_or("");
    }
    case Protocol::FTP: {
      std::string user, pass;
      std::string_view rest = raw;
      while (!rest.empty()) {
        auto [cmd, arg] = split_command(rest);
        if (cmd == "user") user = arg;
        if (cmd == "pass") pass = arg;
        auto nl = rest.find('\n');
        if (nl == std::string_view::npos) break;
        rest.remove_prefix(nl + 1);
      }
      if (user.empty() && pass.empty()) return {};
      return user + ":" + pass;
    }
    case Protocol::SSH: {
      auto [cmd, arg] = split_command(raw);
      if (cmd != "login") return {};
      auto sp = arg.find(' ');
      std::string who = sp == std::string::npos ? arg : arg.substr(0, sp);
      std::string pass = sp == std::string::npos ? std::string() : arg.substr(sp + 1);
      auto at = who.find('@');
      return who.substr(0, at) + ":" + pass;
    }
    case Protocol::MQTT: {
      auto line = std::string(first_line(raw));
      if (!starts_with_icase(line, "CONNECT")) return {};
      auto field = [&](const std::string& key) -> std::string {
        auto pos = line.find(key + "=");
        if (pos == std::string::npos) return {};
        auto start = pos + key.size() + 1;
        auto end = line.find(' ', start);
        return line.substr(start, end == std::string::npos ? std::string::npos : end - start);
      };
      return field("username") + ":" + field("password");
    }
  }
  return {};
}

Classification classify_action(Protocol p, std::string_view raw_request, double recent_rate) {
  Classification c;
  c.scanner_suspected = recent_rate > kScanRateThreshold || has_scanner_signature(raw_request);

  auto finish = [&](ActionKind kind, bool hint) {
    c.kind = kind;
    c.success_hint = hint;
    return c;
  };

  switch (p) {
    case Protocol::HTTP: {
      auto parts = parse_http(raw_request);
      auto method = lower(parts.method);
      std::vector<std::pair<std::string, std::string>> values = form_pairs(parts.query);
      if (method == "post" || method == "put") {
        auto body_values = form_pairs(parts.body);
        values.insert(values.end(), body_values.begin(), body_values.end());
      }
      bool sqli = false, sqli_strong = false;
      for (auto& [k, v] : values) {
        auto classes = sql_payload_classes(v);
        if (classes.empty()) continue;
        sqli = true;
        for (auto cls : classes) {
          if (cls == PayloadClass::Tautology || cls == PayloadClass::UnionSelect) sqli_strong = true;
        }
      }
      if (sqli) return finish(ActionKind::SqlInjectionAttempt, sqli_strong);

      bool xss = false, xss_exec = false;
      for (auto& [k, v] : values) {
        if (xss_payload_classes(v).empty()) continue;
        xss = true;
        if (is_executable_xss(v)) xss_exec = true;
      }
      if (xss) return finish(ActionKind::XssAttempt, xss_exec);

      if (is_robots_path(parts.path)) return finish(ActionKind::RobotsFetch, true);
      if (is_admin_path(parts.path)) return finish(ActionKind::AdminAccess, false);

      if (method == "post") {
        for (auto& [k, v] : values) {
          auto key = lower(k);
          if (key == "user" || key == "username" || key == "login" || key == "pass" ||
              key == "password" || key == "pwd" || key == "token")
            return finish(ActionKind::LoginAttempt, false);
        }
      }
      if (method == "put" || (method == "post" && parts.headers.find("multipart/form-data") != std::string::npos))
        return finish(ActionKind::FileUpload, true);
      if ((method == "get" || method == "head") && has_file_extension(parts.path))
        return finish(ActionKind::FileDownload, true);
      if (c.scanner_suspected) return finish(ActionKind::ScanBurst, false);
      if (method == "get" || method == "head") return finish(ActionKind::PageFetch, true);
      return finish(ActionKind::Other, false);
    }
    case Protocol::FTP: {
      auto [cmd, arg] = split_command(raw_request);
      if (cmd == "user" || cmd == "pass") return finish(ActionKind::FtpLogin, false);
      if (cmd == "retr") return finish(ActionKind::FileDownload, true);
      if (cmd == "stor" || cmd == "appe" || cmd == "stou") return finish(ActionKind::FileUpload, true);
      if (c.scanner_suspected) return finish(ActionKind::ScanBurst, false);
      return finish(ActionKind::Other, true);
    }
    case Protocol::SSH: {
      auto [cmd, arg] = split_command(raw_request);
      if (cmd == "login") return finish(ActionKind::SshLogin, false);
      if (raw_request.size() > 256 || has_nop_sled(raw_request))
        return finish(ActionKind::ExploitAttempt, false);
      if (cmd == "cat" || cmd == "get" || cmd == "less" || cmd == "more" || cmd == "head" ||
          cmd == "tail" || cmd == "scp")
        return finish(ActionKind::FileDownload, true);
      if (cmd == "wget" || cmd == "curl" || cmd == "tftp" || cmd == "put")
        return finish(ActionKind::FileUpload, true);
      if (c.scanner_suspected) return finish(ActionKind::ScanBurst, false);
      return finish(ActionKind::Other, true);
    }
    case Protocol::MQTT: {
      auto line = first_line(raw_request);
      if (starts_with_icase(line, "CONNECT")) return finish(ActionKind::MqttConnect, false);
      if (starts_with_icase(line, "SUBSCRIBE") && line.find("topic=fs/") != std::string_view::npos)
        return finish(ActionKind::FileDownload, true);
      if (c.scanner_suspected) return finish(ActionKind::ScanBurst, false);
      return finish(ActionKind::Other, true);
    }
  }
  return c;
}

}  // namespace decoyweaver
