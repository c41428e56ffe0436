// FTP decoy: a command subset with passive-mode data channels.

#include <poll.h>
#include <sys/socket.h>

#include <algorithm>
#include <fstream>
#include <mutex>
#include <sstream>

#include "decoyweaver/decoy.hpp"
#include "decoyweaver/errors.hpp"
#include "decoyweaver/net.hpp"

namespace decoyweaver {

namespace {

constexpr std::size_t kMaxUpload = 16u << 20;

std::string upper(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return s;
}

bool credential_matches(const std::vector<std::string>& allowed, const std::string& user, const std::string& pass) {
  for (const auto& entry : allowed) {
    auto colon = entry.find(':');
    auto u = entry.substr(0, colon);
    auto p = colon == std::string::npos ? std::string("*") : entry.substr(colon + 1);
    if (u == user && (p == "*" || p == pass)) return true;
  }
  return false;
}

std::string safe_name(std::string name) {
  auto slash = name.find_last_of("/\\");
  if (slash != std::string::npos) name = name.substr(slash + 1);
  if (name.empty() || name == "." || name == "..") return "upload.bin";
  for (auto& c : name) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '-' && c != '_') c = '_';
  }
  return name;
}

std::string listing_line(const std::string& name, std::uint64_t size) {
  std::ostringstream os;
  os << "-rw-r--r--    1 ftp      ftp      " << size << " Jan 01 00:00 " << name << "\r\n";
  return os.str();
}

class FtpDecoy final : public Decoy {
 public:
  explicit FtpDecoy(DecoyContext ctx) : ctx_(std::move(ctx)) {
    const auto& cfg = ctx_.service_config("ftp");
    banner_ = cfg.value("banner", std::string("(vsFTPd 3.0.3)"));
    syst_ = cfg.value("syst", std::string("UNIX Type: L8"));
    if (cfg.contains("credentials")) {
      credentials_ = cfg.at("credentials").get<std::vector<std::string>>();
    } else {
      credentials_ = {"anonymous:*", "admin:admin"};
    }
    files_ = load_decoy_files(ctx_, cfg.value("files", nlohmann::json::array()));
  }

  ~FtpDecoy() override { stop(); }

  Protocol protocol() const override { return Protocol::FTP; }
  std::uint16_t port() const override { return server_ ? server_->port() : 0; }

  void start(std::uint16_t port) override {
    server_ = std::make_unique<TcpServer>(ctx_.bind_host, port, [this](Socket& s) { serve(s); });
    server_->start();
  }

  void stop() override {
    if (server_) server_->stop();
    server_.reset();
  }

  void reset_state() override {
    std::lock_guard lock(upload_mu_);
    std::error_code ec;
    std::filesystem::remove_all(upload_root(), ec);
  }

 private:
  std::filesystem::path upload_root() const { return ctx_.data_dir / "uploads" / ctx_.scenario_id(); }

  std::filesystem::path upload_dir(const std::string& ip) const {
    return upload_root() / ctx_.sessions->session_id_for(ctx_.scenario_id(), ip);
  }

  const DecoyFile* find_file(const std::string& name) const {
    for (const auto& f : files_) {
      if (f.name == name) return &f;
    }
    return nullptr;
  }

  struct Conn {
    Socket& ctl;
    std::string ip;
    std::string user;
    bool user_given = false;
    bool logged_in = false;
    std::string cwd = "/";
    Socket pasv;
  };

  // Sends a reply, folding clues, rewards and operator messages into a
  // multi-line response.
  bool reply(Conn& c, int code, const std::string& text, const IngestReport* report = nullptr) {
    std::vector<std::string> extra;
    if (report) {
      for (const auto& m : report->messages) extra.push_back(m);
      for (const auto& r : reward_texts(ctx_, *report)) extra.push_back(r);
      for (const auto& t : clue_texts(ctx_, *report)) extra.push_back(t);
    }
    std::string out;
    if (!extra.empty()) {
      out += std::to_string(code) + "-Notice\r\n";
      for (const auto& block : extra) {
        std::istringstream in(block);
        std::string line;
        while (std::getline(in, line)) {
          if (!line.empty() && line.back() == '\r') line.pop_back();
          out += " " + line + "\r\n";
        }
      }
    }
    out += std::to_string(code) + " " + text + "\r\n";
    return c.ctl.write_all(out);
  }

  std::optional<Socket> accept_data(Conn& c) {
    if (!c.pasv.valid()) return std::nullopt;
    pollfd pfd{c.pasv.fd(), POLLIN, 0};
    if (::poll(&pfd, 1, 10000) <= 0) return std::nullopt;
    int fd = ::accept4(c.pasv.fd(), nullptr, nullptr, SOCK_CLOEXEC);
    c.pasv.close();
    if (fd < 0) return std::nullopt;
    Socket s(fd);
    s.set_timeout(std::chrono::seconds(30));
    return s;
  }

  void serve(Socket& ctl) {
    Conn c{ctl, ctl.peer_ip(), {}, false, false, "/", {}};
    if (!ctl.write_all("220 " + banner_ + "\r\n")) return;
    while (auto line = ctl.read_line(8192)) {
      auto sp = line->find(' ');
      auto cmd = upper(line->substr(0, sp));
      auto arg = sp == std::string::npos ? std::string() : line->substr(sp + 1);
      if (!handle(c, *line, cmd, arg)) break;
    }
  }

  bool handle(Conn& c, const std::string& line, const std::string& cmd, const std::string& arg) {
    if (cmd == "USER") {
      c.user = arg;
      c.user_given = true;
      c.logged_in = false;
      return reply(c, 331, "Please specify the password.");
    }
    if (cmd == "PASS") {
      if (!c.user_given) {
        auto obs = observe(ctx_, Protocol::FTP, c.ip, line);
        auto report = commit_as(ctx_, Protocol::FTP, c.ip, obs, ActionKind::FtpLogin, false);
        return reply(c, 503, "Login with USER first.", &report);
      }
      auto obs = observe(ctx_, Protocol::FTP, c.ip, "USER " + c.user + "\r\n" + line);
      bool ok = credential_matches(credentials_, c.user, arg);
      c.logged_in = ok;
      c.user_given = false;
      auto report = commit_as(ctx_, Protocol::FTP, c.ip, obs, ActionKind::FtpLogin, ok);
      return ok ? reply(c, 230, "Login successful.", &report) : reply(c, 530, "Login incorrect.", &report);
    }

    auto obs = observe(ctx_, Protocol::FTP, c.ip, line);
    auto simple = [&](bool success, int code, const std::string& text) {
      auto report = commit(ctx_, Protocol::FTP, c.ip, obs, success);
      return reply(c, code, text, &report);
    };

    if (cmd == "QUIT") {
      auto report = commit_as(ctx_, Protocol::FTP, c.ip, obs, ActionKind::Other, true);
      reply(c, 221, "Goodbye.", &report);
      return false;
    }
    if (cmd == "SYST") return simple(true, 215, syst_);
    if (cmd == "NOOP") return simple(true, 200, "NOOP ok.");
    if (!c.logged_in) {
      auto report = commit(ctx_, Protocol::FTP, c.ip, obs, false);
      return reply(c, 530, "Please login with USER and PASS.", &report);
    }
    if (cmd == "PWD" || cmd == "XPWD") return simple(true, 257, "\"" + c.cwd + "\" is the current directory");
    if (cmd == "CWD") {
      if (arg == "/" || arg.empty() || arg == ".") {
        c.cwd = "/";
        return simple(true, 250, "Directory successfully changed.");
      }
      return simple(false, 550, "Failed to change directory.");
    }
    if (cmd == "TYPE") return simple(true, 200, "Switching to " + std::string(upper(arg) == "A" ? "ASCII" : "Binary") + " mode.");
    if (cmd == "PASV") {
      try {
        c.pasv = listen_tcp(c.ctl.local_ip(), 0, 1);
      } catch (const Error&) {
        return simple(false, 425, "Can't open data connection.");
      }
      auto ip = c.ctl.local_ip();
      std::replace(ip.begin(), ip.end(), '.', ',');
      auto p = c.pasv.local_port();
      return simple(true, 227,
                    "Entering Passive Mode (" + ip + "," + std::to_string(p >> 8) + "," + std::to_string(p & 0xff) + ").");
    }
    if (cmd == "LIST" || cmd == "NLST") {
      if (!c.pasv.valid()) return simple(false, 425, "Use PASV first.");
      if (!c.ctl.write_all("150 Here comes the directory listing.\r\n")) return false;
      auto data = accept_data(c);
      if (!data) return simple(false, 425, "Failed to establish connection.");
      std::string out;
      for (const auto& f : files_) out += cmd == "NLST" ? f.name + "\r\n" : listing_line(f.name, decoy_file_size(f));
      {
        std::lock_guard lock(upload_mu_);
        std::error_code ec;
        for (const auto& entry : std::filesystem::directory_iterator(upload_dir(c.ip), ec)) {
          auto name = entry.path().filename().string();
          out += cmd == "NLST" ? name + "\r\n" : listing_line(name, entry.file_size(ec));
        }
      }
      data->write_all(out);
      data->close();
      return simple(true, 226, "Directory send OK.");
    }
    if (cmd == "RETR") {
      auto name = arg;
      auto slash = name.find_last_of('/');
      if (slash != std::string::npos) name = name.substr(slash + 1);
      const DecoyFile* f = find_file(name);
      std::optional<std::string> uploaded;
      if (!f) {
        std::lock_guard lock(upload_mu_);
        auto path = upload_dir(c.ip) / safe_name(name);
        std::ifstream in(path, std::ios::binary);
        if (in) uploaded = std::string(std::istreambuf_iterator<char>(in), {});
      }
      if (!f && !uploaded) {
        c.pasv.close();
        return simple(false, 550, "Failed to open file.");
      }
      if (!c.pasv.valid()) return simple(false, 425, "Use PASV first.");
      auto size = f ? decoy_file_size(*f) : uploaded->size();
      if (!c.ctl.write_all("150 Opening BINARY mode data connection for " + name + " (" + std::to_string(size) +
                           " bytes).\r\n"))
        return false;
      auto data = accept_data(c);
      if (!data) return simple(false, 425, "Failed to establish connection.");
      bool ok = true;
      if (f) {
        stream_decoy_file(*f, [&](std::string_view chunk) {
          if (ok) ok = data->write_all(chunk);
        });
      } else {
        ok = data->write_all(*uploaded);
      }
      data->close();
      return ok ? simple(true, 226, "Transfer complete.") : simple(false, 426, "Connection closed; transfer aborted.");
    }
    if (cmd == "STOR") {
      if (!c.pasv.valid()) return simple(false, 425, "Use PASV first.");
      if (!c.ctl.write_all("150 Ok to send data.\r\n")) return false;
      auto data = accept_data(c);
      if (!data) return simple(false, 425, "Failed to establish connection.");
      std::string content;
      for (;;) {
        auto chunk = data->read_some();
        if (chunk.empty()) break;
        content += chunk;
        if (content.size() > kMaxUpload) break;
      }
      data->close();
      if (content.size() > kMaxUpload) return simple(false, 552, "Exceeded storage allocation.");
      {
        std::lock_guard lock(upload_mu_);
        auto dir = upload_dir(c.ip);
        std::filesystem::create_directories(dir);
        std::ofstream out(dir / safe_name(arg), std::ios::binary | std::ios::trunc);
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
      }
      return simple(true, 226, "Transfer complete.");
    }
    return simple(false, 502, "Command not implemented.");
  }

  DecoyContext ctx_;
  std::string banner_;
  std::string syst_;
  std::vector<std::string> credentials_;
  std::vector<DecoyFile> files_;
  std::unique_ptr<TcpServer> server_;
  std::mutex upload_mu_;
};

}  // namespace

std::unique_ptr<Decoy> make_ftp_decoy(DecoyContext ctx) { return std::make_unique<FtpDecoy>(std::move(ctx)); }

}  // namespace decoyweaver
