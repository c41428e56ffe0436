#pragma once

// Shared helpers for the unit suites and the acceptance runner.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <system_error>

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include "decoyweaver/gateway.hpp"
#include "decoyweaver/mqtt.hpp"
#include "decoyweaver/net.hpp"
#include "decoyweaver/scenario.hpp"

#ifndef DW_SOURCE_DIR
#define DW_SOURCE_DIR "."
#endif

namespace dwtest {

inline std::filesystem::path repo(const std::string& rel = {}) {
  std::filesystem::path root(DW_SOURCE_DIR);
  return rel.empty() ? root : root / rel;
}

inline std::shared_ptr<const decoyweaver::RuntimeStateMachine> bundle(const std::string& id) {
  return decoyweaver::load_bundle(repo("scenarios/" + id));
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "dw") {
    std::random_device rd;
    auto base = std::filesystem::temp_directory_path();
    for (;;) {
      path_ = base / (tag + "-" + std::to_string(rd()) + std::to_string(rd()));
      if (std::filesystem::create_directory(path_)) break;
    }
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

inline constexpr const char* kToken = "operator-token-for-tests";

// Deployment on loopback with ephemeral ports for every listed protocol.
inline decoyweaver::DeploymentConfig deployment(
    const std::filesystem::path& data_dir,
    const std::vector<std::pair<std::string, std::vector<decoyweaver::Protocol>>>& scenarios,
    std::uint64_t database_size = 256 * 1024) {
  decoyweaver::DeploymentConfig cfg;
  cfg.data_dir = data_dir;
  cfg.operator_token = kToken;
  cfg.database_size = database_size;
  for (const auto& [id, protocols] : scenarios) {
    decoyweaver::ScenarioDeployment d;
    d.path = repo("scenarios/" + id);
    for (auto p : protocols) d.endpoints.push_back({p, 0});
    cfg.scenarios.push_back(d);
  }
  return cfg;
}

inline decoyweaver::GatewayOptions quiet_options() {
  decoyweaver::GatewayOptions o;
  o.schedule_resets = false;
  return o;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

// Reads one FTP reply, following "NNN-" continuation lines.
inline std::string ftp_reply(decoyweaver::Socket& s) {
  std::string all;
  for (;;) {
    auto line = s.read_line();
    if (!line) return all;
    all += *line + "\n";
    if (line->size() >= 4 && std::isdigit(static_cast<unsigned char>((*line)[0])) && (*line)[3] == ' ') return all;
  }
}

inline int ftp_code(const std::string& reply) {
  auto pos = reply.rfind('\n', reply.size() >= 2 ? reply.size() - 2 : 0);
  auto last = pos == std::string::npos ? reply : reply.substr(pos + 1);
  return last.size() >= 3 ? std::stoi(last.substr(0, 3)) : -1;
}

inline std::string ftp_cmd(decoyweaver::Socket& s, const std::string& line) {
  s.write_all(line + "\r\n");
  return ftp_reply(s);
}

// Parses "227 Entering Passive Mode (h1,h2,h3,h4,p1,p2)" into a port.
inline std::uint16_t pasv_port(const std::string& reply) {
  auto open = reply.find('(');
  auto close = reply.find(')', open);
  std::string inner = reply.substr(open + 1, close - open - 1);
  int parts[6] = {};
  std::istringstream in(inner);
  for (int i = 0; i < 6; ++i) {
    std::string tok;
    std::getline(in, tok, ',');
    parts[i] = std::stoi(tok);
  }
  return static_cast<std::uint16_t>(parts[4] * 256 + parts[5]);
}

// Reads MQTT packets until one of `type` arrives.
inline std::optional<decoyweaver::mqtt::Packet> mqtt_until(decoyweaver::Socket& s, decoyweaver::mqtt::PacketType type) {
  while (auto p = decoyweaver::mqtt::read_packet(s)) {
    if (p->type == static_cast<std::uint8_t>(type)) return p;
  }
  return std::nullopt;
}

// Runs a command and captures stdout; returns the exit status.
inline int run_capture(const std::string& cmd, std::string* out = nullptr) {
  FILE* f = ::popen((cmd + " 2>&1").c_str(), "r");
  if (!f) return -1;
  std::string text;
  char buf[4096];
  for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, f)) > 0;) text.append(buf, n);
  int status = ::pclose(f);
  if (out) *out = text;
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Child process with its stdout on a pipe.
class Child {
 public:
  explicit Child(const std::vector<std::string>& argv) {
    int fds[2];
    if (::pipe(fds) != 0) throw std::runtime_error("pipe failed");
    pid_ = ::fork();
    if (pid_ == 0) {
      ::dup2(fds[1], STDOUT_FILENO);
      ::close(fds[0]);
      ::close(fds[1]);
      std::vector<char*> args;
      for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
      args.push_back(nullptr);
      ::execv(args[0], args.data());
      ::_exit(127);
    }
    ::close(fds[1]);
    out_ = ::fdopen(fds[0], "r");
  }
  ~Child() {
    if (pid_ > 0) {
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, nullptr, 0);
    }
    if (out_) std::fclose(out_);
  }
  Child(const Child&) = delete;
  Child& operator=(const Child&) = delete;

  std::optional<std::string> read_line() {
    std::string line;
    for (int c; (c = std::fgetc(out_)) != EOF;) {
      if (c == '\n') return line;
      line.push_back(static_cast<char>(c));
    }
    if (line.empty()) return std::nullopt;
    return line;
  }

  // Sends `sig` and returns the exit code, or -signal when killed.
  int signal_and_wait(int sig) {
    ::kill(pid_, sig);
    int status = 0;
    ::waitpid(pid_, &status, 0);
    pid_ = -1;
    return WIFEXITED(status) ? WEXITSTATUS(status) : -WTERMSIG(status);
  }

 private:
  pid_t pid_ = -1;
  FILE* out_ = nullptr;
};

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace dwtest
