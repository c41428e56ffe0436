#pragma once

// Minimal blocking TCP plumbing for the line- and packet-oriented decoys.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace decoyweaver {

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd);
  ~Socket();
  Socket(Socket&& other) noexcept;
  Socket& operator=(Socket&& other) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void close();
  void shutdown();

  void set_timeout(std::chrono::milliseconds timeout);

  // Returns false when the peer has gone away.
  bool write_all(std::string_view data);
  // Line without its terminator ("\n" or "\r\n"); nullopt on EOF or overflow.
  std::optional<std::string> read_line(std::size_t max_len = 64 * 1024);
  // Reads until `delim` is seen; returns everything up to and including it.
  std::optional<std::string> read_until(std::string_view delim, std::size_t max_len = 1 << 20);
  std::optional<std::string> read_exact(std::size_t n);
  // Whatever is buffered or arrives next; empty on EOF.
  std::string read_some();
  std::string read_all();

  std::string peer_ip() const;
  std::string local_ip() const;
  std::uint16_t local_port() const;

 private:
  bool fill();

  int fd_ = -1;
  std::string buf_;
};

// Throws EndpointUnreachable on failure. `bind_ip` selects the source address.
Socket connect_tcp(const std::string& host, std::uint16_t port, const std::string& bind_ip = {},
                   std::chrono::milliseconds timeout = std::chrono::seconds(5));

// Listening socket; port 0 picks an ephemeral port. Throws PortInUse.
Socket listen_tcp(const std::string& host, std::uint16_t port, int backlog = 64);

// Accept loop that runs one thread per connection.
class TcpServer {
 public:
  using Handler = std::function<void(Socket&)>;

  TcpServer(std::string host, std::uint16_t port, Handler handler);
  ~TcpServer();
  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  void start();
  void stop();
  std::uint16_t port() const { return port_; }
  const std::string& host() const { return host_; }

 private:
  void accept_loop();

  std::string host_;
  std::uint16_t port_;
  Handler handler_;
  Socket listener_;
  std::thread acceptor_;
  std::atomic<bool> running_{false};
  std::mutex mu_;
  std::set<int> live_fds_;
  std::size_t active_ = 0;
  std::condition_variable idle_;
};

}  // namespace decoyweaver
