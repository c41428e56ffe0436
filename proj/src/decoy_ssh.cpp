// SSH-style decoy. Not the SSH transport: a banner, a password prompt and a
// small line shell over plain TCP. In "service" mode the endpoint instead
// plays a vulnerable daemon that yields a root shell to an oversized payload.

#include <algorithm>
#include <sstream>

#include "decoyweaver/decoy.hpp"
#include "decoyweaver/errors.hpp"
#include "decoyweaver/net.hpp"

namespace decoyweaver {

using nlohmann::json;

namespace {

struct Host {
  std::string name;
  std::vector<std::string> credentials;  // "user:password"
  std::vector<DecoyFile> files;
  std::string motd;
};

bool credential_ok(const Host& h, const std::string& user, const std::string& pass) {
  for (const auto& c : h.credentials) {
    auto colon = c.find(':');
    if (c.substr(0, colon) != user) continue;
    auto p = colon == std::string::npos ? std::string("*") : c.substr(colon + 1);
    if (p == "*" || p == pass) return true;
  }
  return false;
}

bool has_sled(std::string_view s) {
  return s.find(std::string(8, static_cast<char>(0x90))) != std::string_view::npos ||
         s.find(R"(\x90\x90\x90\x90\x90\x90\x90\x90)") != std::string_view::npos;
}

class SshDecoy final : public Decoy {
 public:
  explicit SshDecoy(DecoyContext ctx) : ctx_(std::move(ctx)) {
    const auto& cfg = ctx_.service_config("ssh");
    banner_ = cfg.value("banner", std::string("SSH-2.0-OpenSSH_7.4p1 Raspbian-10+deb9u7"));
    mode_ = cfg.value("mode", std::string("shell"));
    entry_host_ = cfg.value("entry_host", std::string("localhost"));
    if (cfg.contains("hosts")) {
      for (const auto& [name, h] : cfg.at("hosts").items()) {
        Host host;
        host.name = name;
        if (h.contains("credentials")) host.credentials = h.at("credentials").get<std::vector<std::string>>();
        host.files = load_decoy_files(ctx_, h.value("files", json::array()));
        host.motd = h.value("motd", std::string());
        hosts_.emplace(name, std::move(host));
      }
    }
    if (!hosts_.count(entry_host_)) hosts_.emplace(entry_host_, Host{entry_host_, {}, {}, {}});
    if (cfg.contains("service")) {
      const auto& s = cfg.at("service");
      service_banner_ = s.value("banner", std::string("legacyd 1.4.2 ready"));
      service_group_ = s.value("group", std::string());
      service_host_ = s.value("host", entry_host_);
      if (!hosts_.count(service_host_)) hosts_.emplace(service_host_, Host{service_host_, {}, {}, {}});
    }
  }

  ~SshDecoy() override { stop(); }

  Protocol protocol() const override { return Protocol::SSH; }
  std::uint16_t port() const override { return server_ ? server_->port() : 0; }

  void start(std::uint16_t port) override {
    server_ = std::make_unique<TcpServer>(ctx_.bind_host, port, [this](Socket& s) { serve(s); });
    server_->start();
  }

  void stop() override {
    if (server_) server_->stop();
    server_.reset();
  }

  void reset_state() override {}

 private:
  struct Shell {
    Socket& sock;
    std::string ip;
    std::vector<std::pair<std::string, std::string>> stack;  // (user, host)
  };

  const Host* host(const std::string& name) const {
    auto it = hosts_.find(name);
    return it == hosts_.end() ? nullptr : &it->second;
  }

  std::string extras(const IngestReport& report) const {
    std::string out;
    for (const auto& m : report.messages) out += m + "\r\n";
    for (const auto& r : reward_texts(ctx_, report)) out += r + "\r\n";
    for (const auto& c : clue_texts(ctx_, report)) {
      std::istringstream in(c);
      std::string line;
      while (std::getline(in, line)) out += line + "\r\n";
    }
    return out;
  }

  static std::string crlf(std::string_view text) {
    std::string out;
    for (char c : text) {
      if (c == '\n') out += '\r';
      out += c;
    }
    return out;
  }

  std::string prompt(const Shell& sh) const {
    const auto& [user, h] = sh.stack.back();
    return user + "@" + h + (user == "root" ? ":~# " : ":~$ ");
  }

  // Password exchange for user@host; one event per attempt.
  bool login(Shell& sh, const std::string& user, const std::string& host_name) {
    if (!sh.sock.write_all(user + "@" + host_name + "'s password: ")) return false;
    auto pass = sh.sock.read_line(4096);
    if (!pass) return false;
    auto obs = observe(ctx_, Protocol::SSH, sh.ip, "login " + user + "@" + host_name + " " + *pass);
    const Host* h = host(host_name);
    bool ok = h && credential_ok(*h, user, *pass);
    auto report = commit_as(ctx_, Protocol::SSH, sh.ip, obs, ActionKind::SshLogin, ok);
    std::string out;
    if (ok) {
      sh.stack.emplace_back(user, host_name);
      out = "\r\n" + (h->motd.empty() ? std::string() : crlf(h->motd) + "\r\n");
    } else {
      out = "\r\nPermission denied, please try again.\r\n";
    }
    out += extras(report);
    sh.sock.write_all(out);
    return ok;
  }

  void serve(Socket& sock) {
    Shell sh{sock, sock.peer_ip(), {}};
    if (mode_ == "service") {
      serve_service(sh);
      return;
    }
    if (!sock.write_all(banner_ + "\r\n")) return;
    for (int attempt = 0; attempt < 3 && sh.stack.empty(); ++attempt) {
      if (!sock.write_all("login as: ")) return;
      auto user = sock.read_line(1024);
      if (!user) return;
      if (!login(sh, *user, entry_host_) && !sock.valid()) return;
    }
    if (sh.stack.empty()) {
      sock.write_all("Too many authentication failures\r\n");
      return;
    }
    shell_loop(sh);
  }

  void serve_service(Shell& sh) {
    const VulnSpec* variant = nullptr;
    if (!service_group_.empty()) {
      auto members = round_robin_members(ctx_.graph(), service_group_);
      if (!members.empty()) {
        if (ctx_.round_robin) {
          variant = &ctx_.round_robin->next(service_group_, members);
        } else {
          variant = members.front();
        }
      }
    }
    if (!variant) variant = ctx_.machine->default_vuln(VulnKind::ScriptedExploit);
    std::size_t min_len = 256;
    std::string variant_name = "default";
    if (variant) {
      auto it = variant->params.find("min_len");
      if (it != variant->params.end()) min_len = std::stoul(it->second);
      auto nt = variant->params.find("variant");
      if (nt != variant->params.end()) variant_name = nt->second;
    }
    if (!sh.sock.write_all(service_banner_ + " (" + variant_name + ")\r\n")) return;
    while (auto line = sh.sock.read_line(1 << 16)) {
      auto obs = observe(ctx_, Protocol::SSH, sh.ip, *line);
      if (obs.cls.kind == ActionKind::ExploitAttempt) {
        int level = ctx_.sessions->difficulty(ctx_.scenario_id(), sh.ip, VulnKind::ScriptedExploit);
        std::size_t need = min_len + 64 * static_cast<std::size_t>(std::max(0, level - 1));
        bool ok = line->size() >= need && has_sled(*line);
        auto report = commit_as(ctx_, Protocol::SSH, sh.ip, obs, ActionKind::ExploitAttempt, ok);
        if (!ok) {
          sh.sock.write_all("Segmentation fault (core dumped)\r\n" + extras(report));
          return;
        }
        sh.sock.write_all("# uid=0(root) gid=0(root) groups=0(root)\r\n" + extras(report));
        sh.stack.emplace_back("root", service_host_);
        shell_loop(sh);
        return;
      }
      auto report = commit(ctx_, Protocol::SSH, sh.ip, obs, false);
      if (!sh.sock.write_all("ERR unknown request\r\n" + extras(report))) return;
    }
  }

  void shell_loop(Shell& sh) {
    if (!sh.sock.write_all(prompt(sh))) return;
    while (auto line = sh.sock.read_line(1 << 16)) {
      std::istringstream in(*line);
      std::string cmd;
      in >> cmd;
      std::vector<std::string> args;
      for (std::string a; in >> a;) args.push_back(a);
      const auto& [user, host_name] = sh.stack.back();
      const Host* h = host(host_name);

      if (cmd.empty()) {
        if (!sh.sock.write_all(prompt(sh))) return;
        continue;
      }
      if (cmd == "ssh" && !args.empty()) {
        auto target = args.back();
        auto at = target.find('@');
        std::string u = at == std::string::npos ? user : target.substr(0, at);
        std::string hn = at == std::string::npos ? target : target.substr(at + 1);
        if (!login(sh, u, hn) && !sh.sock.valid()) return;
        if (!sh.sock.write_all(prompt(sh))) return;
        continue;
      }
      if (cmd == "exit" || cmd == "logout") {
        auto obs = observe(ctx_, Protocol::SSH, sh.ip, *line);
        auto report = commit_as(ctx_, Protocol::SSH, sh.ip, obs, ActionKind::Other, true);
        sh.stack.pop_back();
        if (sh.stack.empty()) {
          sh.sock.write_all("logout\r\n" + extras(report));
          return;
        }
        if (!sh.sock.write_all("Connection to " + host_name + " closed.\r\n" + extras(report) + prompt(sh))) return;
        continue;
      }

      auto obs = observe(ctx_, Protocol::SSH, sh.ip, *line);
      std::string out;
      bool ok = true;
      if (cmd == "ls") {
        for (const auto& f : h->files) out += f.name + "\r\n";
      } else if (cmd == "cat" || cmd == "head" || cmd == "less" || cmd == "more" || cmd == "tail") {
        ok = false;
        if (!args.empty()) {
          auto name = args.back();
          auto slash = name.find_last_of('/');
          if (slash != std::string::npos) name = name.substr(slash + 1);
          for (const auto& f : h->files) {
            if (f.name != name) continue;
            ok = true;
            stream_decoy_file(f, [&](std::string_view chunk) { out += crlf(chunk); });
            if (!out.empty() && out.back() != '\n') out += "\r\n";
          }
          if (!ok) out = cmd + ": " + args.back() + ": No such file or directory\r\n";
        }
      } else if (cmd == "whoami") {
        out = user + "\r\n";
      } else if (cmd == "id") {
        out = user == "root" ? "uid=0(root) gid=0(root) groups=0(root)\r\n"
                             : "uid=1000(" + user + ") gid=1000(" + user + ") groups=1000(" + user + ")\r\n";
      } else if (cmd == "hostname") {
        out = host_name + "\r\n";
      } else if (cmd == "uname") {
        out = "Linux " + host_name + " 4.19.66-v7+ #1253 SMP armv7l GNU/Linux\r\n";
      } else if (cmd == "pwd") {
        out = user == "root" ? "/root\r\n" : "/home/" + user + "\r\n";
      } else {
        ok = false;
        out = "-bash: " + cmd + ": command not found\r\n";
      }
      auto report = commit(ctx_, Protocol::SSH, sh.ip, obs, ok);
      if (!sh.sock.write_all(out + extras(report) + prompt(sh))) return;
    }
  }

  DecoyContext ctx_;
  std::string banner_;
  std::string mode_;
  std::string entry_host_;
  std::map<std::string, Host> hosts_;
  std::string service_banner_ = "legacyd 1.4.2 ready";
  std::string service_group_;
  std::string service_host_;
  std::unique_ptr<TcpServer> server_;
};

}  // namespace

std::unique_ptr<Decoy> make_ssh_decoy(DecoyContext ctx) { return std::make_unique<SshDecoy>(std::move(ctx)); }

}  // namespace decoyweaver
