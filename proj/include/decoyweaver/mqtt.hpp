#pragma once

// MQTT 3.1.1 framing subset: CONNECT/CONNACK, SUBSCRIBE/SUBACK, PUBLISH at
// QoS 0, PINGREQ/PINGRESP and DISCONNECT.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "decoyweaver/net.hpp"

namespace decoyweaver::mqtt {

enum class PacketType : std::uint8_t {
  Connect = 1,
  Connack = 2,
  Publish = 3,
  Subscribe = 8,
  Suback = 9,
  Pingreq = 12,
  Pingresp = 13,
  Disconnect = 14,
};

inline constexpr std::uint8_t kConnackAccepted = 0x00;
inline constexpr std::uint8_t kConnackBadProtocol = 0x01;
inline constexpr std::uint8_t kConnackNotAuthorized = 0x05;
inline constexpr std::uint8_t kSubackFailure = 0x80;

struct Packet {
  std::uint8_t type = 0;
  std::uint8_t flags = 0;
  std::string body;
};

std::string encode_remaining_length(std::size_t n);
std::string encode(const Packet& p);
// Reads one packet; nullopt on EOF or a malformed length.
std::optional<Packet> read_packet(Socket& s, std::size_t max_body = 1 << 20);

struct ConnectInfo {
  std::string protocol_name;
  std::uint8_t level = 0;
  std::string client_id;
  std::optional<std::string> username;
  std::optional<std::string> password;
  std::uint16_t keep_alive = 0;
};

struct SubscribeInfo {
  std::uint16_t packet_id = 0;
  std::vector<std::string> topics;
};

struct PublishInfo {
  std::string topic;
  std::string payload;
  bool retain = false;
};

// Throw Error on truncated or malformed bodies.
ConnectInfo parse_connect(const std::string& body);
SubscribeInfo parse_subscribe(const std::string& body);
PublishInfo parse_publish(std::uint8_t flags, const std::string& body);

Packet connect_packet(const ConnectInfo& info);
Packet connack_packet(std::uint8_t return_code);
Packet subscribe_packet(std::uint16_t packet_id, const std::vector<std::string>& topics);
Packet suback_packet(std::uint16_t packet_id, const std::vector<std::uint8_t>& codes);
Packet publish_packet(const std::string& topic, const std::string& payload, bool retain);
Packet simple_packet(PacketType t);

}  // namespace decoyweaver::mqtt
