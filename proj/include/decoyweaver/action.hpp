#pragma once

// Attacker interaction vocabulary and the pure request classifier.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace decoyweaver {

// Milliseconds since the Unix epoch, UTC.
using TimestampMs = std::int64_t;

enum class Protocol { HTTP, FTP, SSH, MQTT };

enum class ActionKind {
  PageFetch,
  RobotsFetch,
  LoginAttempt,
  SqlInjectionAttempt,
  XssAttempt,
  AdminAccess,
  FileDownload,
  FileUpload,
  FtpLogin,
  SshLogin,
  MqttConnect,
  ScanBurst,
  ExploitAttempt,
  Other,
};

inline constexpr std::size_t kActionKindCount = 14;

inline constexpr std::array<ActionKind, kActionKindCount> kAllActionKinds = {
    ActionKind::PageFetch,      ActionKind::RobotsFetch,  ActionKind::LoginAttempt,
    ActionKind::SqlInjectionAttempt, ActionKind::XssAttempt, ActionKind::AdminAccess,
    ActionKind::FileDownload,   ActionKind::FileUpload,   ActionKind::FtpLogin,
    ActionKind::SshLogin,       ActionKind::MqttConnect,  ActionKind::ScanBurst,
    ActionKind::ExploitAttempt, ActionKind::Other,
};

std::string_view to_string(Protocol p);
std::string_view to_string(ActionKind k);
std::optional<Protocol> protocol_from_string(std::string_view s);
std::optional<ActionKind> action_kind_from_string(std::string_view s);

// FtpLogin only under FTP, SshLogin only under SSH, and so on.
bool action_allowed_for(Protocol p, ActionKind k);

// Actions counted as an attack by analytics.
bool is_attack(ActionKind k);

// Raw request excerpts are capped at this many bytes.
inline constexpr std::size_t kMaxRawExcerpt = 4096;

struct ActionEvent {
  TimestampMs ts = 0;
  Protocol protocol = Protocol::HTTP;
  std::string raw;  // printable excerpt, at most kMaxRawExcerpt bytes
  ActionKind action = ActionKind::Other;
  bool success = false;
  std::int64_t inter_event_ms = 0;
  bool scanner_hint = false;

  bool operator==(const ActionEvent&) const = default;
};

// Bounds and escapes a raw byte buffer so it can live in a JSON string.
// Printable ASCII, CR, LF and TAB are kept; other bytes become \xHH.
std::string make_excerpt(std::string_view bytes);

// Payload shapes recognised inside a request.
enum class PayloadClass {
  UnbalancedQuote,
  Tautology,
  UnionSelect,
  CommentSuffix,
  ScriptTag,
  EventHandler,
  JavascriptUri,
  OversizedPayload,
};

std::string_view to_string(PayloadClass c);
std::optional<PayloadClass> payload_class_from_string(std::string_view s);

std::vector<PayloadClass> sql_payload_classes(std::string_view text);
std::vector<PayloadClass> xss_payload_classes(std::string_view text);

// True when the markup would run script in a browser: a complete script
// element, an event-handler attribute, or a javascript: URI.
bool is_executable_xss(std::string_view text);

// Decoded view of the request used for routing and pattern matching.
// HTTP: path without query. FTP: command argument (for logins, the user).
// SSH: "user@host" for logins, argument basename for file commands.
// MQTT: username for CONNECT, file name for fs/<name> subscriptions.
std::string extract_target(Protocol p, std::string_view raw);

// "user:password" for login-shaped requests, empty otherwise.
std::string extract_credentials(Protocol p, std::string_view raw);

// URL-decoded value of `key` in an application/x-www-form-urlencoded body.
std::optional<std::string> form_value(std::string_view body, std::string_view key);
std::string url_decode(std::string_view s);

struct Classification {
  ActionKind kind = ActionKind::Other;
  bool success_hint = false;
  bool scanner_suspected = false;
};

// Requests per minute above which a source is treated as a scanner.
inline constexpr double kScanRateThreshold = 60.0;

// Ordered rule list: SQLi, XSS, robots path, admin path, credential
// submissions, file transfer, scan heuristic. Pure and reentrant.
Classification classify_action(Protocol p, std::string_view raw_request, double recent_rate);

bool has_scanner_signature(std::string_view raw_request);

}  // namespace decoyweaver
