#pragma once

// Process entry point: deploys scenario bundles onto decoy endpoints,
// persists the event log, schedules the daily reset and serves the operator
// API.

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "decoyweaver/clock.hpp"
#include "decoyweaver/decoy.hpp"
#include "decoyweaver/event_log.hpp"
#include "decoyweaver/session_manager.hpp"

namespace decoyweaver {

struct EndpointConfig {
  Protocol protocol = Protocol::HTTP;
  std::uint16_t port = 0;  // 0 picks an ephemeral port
};

struct ScenarioDeployment {
  std::filesystem::path path;  // bundle directory or scenario.json
  std::vector<EndpointConfig> endpoints;
};

struct DeploymentConfig {
  std::vector<ScenarioDeployment> scenarios;
  std::string bind = "127.0.0.1";
  std::string reset_time_local = "00:00";
  std::filesystem::path data_dir = "data";
  std::string operator_token;
  std::uint16_t api_port = 0;
  bool api_enabled = true;
  std::uint64_t database_size = 0;  // overrides generated Database.DB sizes when non-zero
};

inline constexpr const char* kOperatorTokenEnv = "DECOYWEAVER_OPERATOR_TOKEN";
inline constexpr std::size_t kMinOperatorToken = 16;

// Relative paths resolve against `base_dir`. Throws ConfigError or PortInUse.
DeploymentConfig parse_deployment_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
// Reads the file and applies the operator-token environment override.
DeploymentConfig load_deployment_config(const std::filesystem::path& path);
void check_deployment_config(const DeploymentConfig& cfg);

// Parses "HH:MM"; nullopt when not a valid 24h time.
std::optional<std::pair<int, int>> parse_reset_time(std::string_view hhmm);
// Latest local-time reset boundary at or before `now`.
TimestampMs last_reset_boundary(TimestampMs now, int hour, int minute);
TimestampMs next_reset_boundary(TimestampMs now, int hour, int minute);

// Loads and validates a bundle; throws InvalidBundle with the report.
std::shared_ptr<const RuntimeStateMachine> load_bundle(const std::filesystem::path& path);

struct GatewayOptions {
  const Clock* clock = nullptr;               // defaults to the system clock
  std::optional<TimestampMs> window_start;    // defaults to the last reset boundary
  bool schedule_resets = true;
  bool restore = true;
  bool write_log = true;
};

class Gateway {
 public:
  explicit Gateway(DeploymentConfig cfg, GatewayOptions options = {});
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  // Restores today's sessions, then starts endpoints, API and scheduler.
  void start();
  void stop();

  SessionManager& sessions() { return sessions_; }
  const DeploymentConfig& config() const { return cfg_; }
  std::uint16_t endpoint_port(const std::string& scenario_id, Protocol protocol) const;
  std::uint16_t api_port() const { return api_port_; }
  const RestoreReport& restore_report() const { return restore_; }
  std::vector<std::string> scenario_ids() const;

  // Closes every session and restores decoy state.
  std::size_t reset_now();

  // Records of the current window, in arrival order.
  std::vector<EventRecord> window_records(const std::string& scenario_id) const;
  std::filesystem::path log_dir() const { return cfg_.data_dir / "logs"; }

 private:
  struct Subscriber {
    std::mutex mu;
    std::condition_variable cv;
    std::deque<std::string> queue;
    bool closed = false;
  };

  struct Deployed {
    std::shared_ptr<const RuntimeStateMachine> machine;
    std::vector<std::unique_ptr<Decoy>> decoys;
  };

  TimestampMs now() const;
  void restore_from_logs();
  void on_record(const EventRecord& r);
  void start_api();
  void scheduler_loop();

  DeploymentConfig cfg_;
  GatewayOptions options_;
  SystemClock system_clock_;
  const Clock* clock_;
  SessionManager sessions_;
  std::unique_ptr<RoundRobinState> round_robin_;
  std::unique_ptr<EventLogWriter> writer_;
  std::map<std::string, Deployed> deployed_;
  RestoreReport restore_;

  mutable std::mutex records_mu_;
  std::map<std::string, std::vector<EventRecord>> records_;

  std::mutex subs_mu_;
  std::vector<std::shared_ptr<Subscriber>> subscribers_;

  struct Api;
  std::unique_ptr<Api> api_;
  std::uint16_t api_port_ = 0;

  std::thread scheduler_;
  std::mutex sched_mu_;
  std::condition_variable sched_cv_;
  bool stopping_ = false;
  bool started_ = false;
};

// JSON views served by the operator API.
nlohmann::json session_summary_json(const Session& s);
nlohmann::json session_detail_json(const Session& s, std::size_t recent_events = 50);

}  // namespace decoyweaver
