#pragma once

// Medium-interaction protocol emulators. Each decoy turns every inbound
// interaction into exactly one ActionEvent for the session engine.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "decoyweaver/clock.hpp"
#include "decoyweaver/engagement.hpp"
#include "decoyweaver/fabricate.hpp"
#include "decoyweaver/session_manager.hpp"
#include "json.hpp"

namespace decoyweaver {

struct DecoyContext {
  SessionManager* sessions = nullptr;
  std::shared_ptr<const RuntimeStateMachine> machine;
  const Clock* clock = nullptr;
  RoundRobinState* round_robin = nullptr;
  std::filesystem::path data_dir;  // quarantine for uploads
  std::string bind_host = "127.0.0.1";
  // Overrides the configured Database.DB size when non-zero.
  std::uint64_t database_size_override = 0;

  const ScenarioGraph& graph() const { return machine->graph(); }
  const std::string& scenario_id() const { return machine->id(); }
  const nlohmann::json& service_config(std::string_view protocol_key) const;
  // Contents of a bundle asset; "asset:" prefixes are accepted.
  std::string asset_text(std::string_view asset) const;
};

// Result of classifying one interaction before the decoy decides success.
struct Observation {
  TimestampMs now = 0;
  Classification cls;
  std::string raw;
};

Observation observe(const DecoyContext& ctx, Protocol protocol, const std::string& ip, std::string raw);
IngestReport commit(const DecoyContext& ctx, Protocol protocol, const std::string& ip, const Observation& obs,
                    bool success);
IngestReport commit_as(const DecoyContext& ctx, Protocol protocol, const std::string& ip, const Observation& obs,
                       ActionKind kind, bool success);

// Clue bodies as plain text, one block per clue.
std::vector<std::string> clue_texts(const DecoyContext& ctx, const IngestReport& report);
// Rewards granted by this interaction, rendered for the attacker.
std::vector<std::string> reward_texts(const DecoyContext& ctx, const IngestReport& report);

class Decoy {
 public:
  virtual ~Decoy() = default;
  virtual Protocol protocol() const = 0;
  virtual void start(std::uint16_t port) = 0;
  virtual void stop() = 0;
  virtual std::uint16_t port() const = 0;
  // Restores mutable decoy state to the bundle defaults.
  virtual void reset_state() = 0;
};

std::unique_ptr<Decoy> make_http_decoy(DecoyContext ctx);
std::unique_ptr<Decoy> make_ftp_decoy(DecoyContext ctx);
std::unique_ptr<Decoy> make_ssh_decoy(DecoyContext ctx);
std::unique_ptr<Decoy> make_mqtt_decoy(DecoyContext ctx);
std::unique_ptr<Decoy> make_decoy(Protocol protocol, DecoyContext ctx);

// Contents served for the "files" section of a service config.
struct DecoyFile {
  std::string name;
  std::string text;                             // static content
  std::optional<DatabaseFileSpec> database;     // streamed generator instead
};

std::vector<DecoyFile> load_decoy_files(const DecoyContext& ctx, const nlohmann::json& files);
// Streams a file to `sink`; generated files never sit in memory whole.
void stream_decoy_file(const DecoyFile& f, const std::function<void(std::string_view)>& sink);
std::uint64_t decoy_file_size(const DecoyFile& f);

}  // namespace decoyweaver
