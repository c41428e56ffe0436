#include "decoyweaver/mqtt.hpp"

#include "decoyweaver/errors.hpp"

namespace decoyweaver::mqtt {

namespace {

void put_u16(std::string& out, std::uint16_t v) {
  out += static_cast<char>(v >> 8);
  out += static_cast<char>(v & 0xff);
}

void put_str(std::string& out, const std::string& s) {
  put_u16(out, static_cast<std::uint16_t>(s.size()));
  out += s;
}

struct Reader {
  const std::string& b;
  std::size_t pos = 0;

  std::uint8_t u8() {
    if (pos + 1 > b.size()) throw Error("mqtt: truncated packet");
    return static_cast<std::uint8_t>(b[pos++]);
  }
  std::uint16_t u16() {
    auto hi = u8();
    auto lo = u8();
    return static_cast<std::uint16_t>((hi << 8) | lo);
  }
  std::string str() {
    auto n = u16();
    if (pos + n > b.size()) throw Error("mqtt: truncated string");
    auto s = b.substr(pos, n);
    pos += n;
    return s;
  }
  std::string rest() {
    auto s = b.substr(pos);
    pos = b.size();
    return s;
  }
  bool done() const { return pos >= b.size(); }
};

}  // namespace

std::string encode_remaining_length(std::size_t n) {
  std::string out;
  do {
    auto byte = static_cast<std::uint8_t>(n % 128);
    n /= 128;
    if (n > 0) byte |= 0x80;
    out += static_cast<char>(byte);
  } while (n > 0);
  return out;
}

std::string encode(const Packet& p) {
  std::string out;
  out += static_cast<char>((p.type << 4) | (p.flags & 0x0f));
  out += encode_remaining_length(p.body.size());
  out += p.body;
  return out;
}

std::optional<Packet> read_packet(Socket& s, std::size_t max_body) {
  auto head = s.read_exact(1);
  if (!head) return std::nullopt;
  Packet p;
  auto h = static_cast<std::uint8_t>((*head)[0]);
  p.type = h >> 4;
  p.flags = h & 0x0f;
  std::size_t len = 0, mult = 1;
  for (int i = 0; i < 4; ++i) {
    auto b = s.read_exact(1);
    if (!b) return std::nullopt;
    auto v = static_cast<std::uint8_t>((*b)[0]);
    len += (v & 0x7f) * mult;
    mult *= 128;
    if (!(v & 0x80)) break;
    if (i == 3) return std::nullopt;
  }
  if (len > max_body) return std::nullopt;
  if (len > 0) {
    auto body = s.read_exact(len);
    if (!body) return std::nullopt;
    p.body = std::move(*body);
  }
  return p;
}

ConnectInfo parse_connect(const std::string& body) {
  Reader r{body};
  ConnectInfo c;
  c.protocol_name = r.str();
  c.level = r.u8();
  auto flags = r.u8();
  c.keep_alive = r.u16();
  c.client_id = r.str();
  if (flags & 0x04) {
    r.str();  // will topic
    r.str();  // will message
  }
  if (flags & 0x80) c.username = r.str();
  if (flags & 0x40) c.password = r.str();
  return c;
}

SubscribeInfo parse_subscribe(const std::string& body) {
  Reader r{body};
  SubscribeInfo s;
  s.packet_id = r.u16();
  while (!r.done()) {
    s.topics.push_back(r.str());
    r.u8();  // requested QoS
  }
  if (s.topics.empty()) throw Error("mqtt: SUBSCRIBE without topics");
  return s;
}

PublishInfo parse_publish(std::uint8_t flags, const std::string& body) {
  Reader r{body};
  PublishInfo p;
  p.topic = r.str();
  if ((flags >> 1) & 0x03) r.u16();  // packet id for QoS > 0
  p.payload = r.rest();
  p.retain = flags & 0x01;
  return p;
}

Packet connect_packet(const ConnectInfo& info) {
  Packet p{static_cast<std::uint8_t>(PacketType::Connect), 0, {}};
  put_str(p.body, info.protocol_name.empty() ? "MQTT" : info.protocol_name);
  p.body += static_cast<char>(info.level ? info.level : 4);
  std::uint8_t flags = 0x02;  // clean session
  if (info.username) flags |= 0x80;
  if (info.password) flags |= 0x40;
  p.body += static_cast<char>(flags);
  put_u16(p.body, info.keep_alive);
  put_str(p.body, info.client_id);
  if (info.username) put_str(p.body, *info.username);
  if (info.password) put_str(p.body, *info.password);
  return p;
}

Packet connack_packet(std::uint8_t return_code) {
  Packet p{static_cast<std::uint8_t>(PacketType::Connack), 0, {}};
  p.body += '\0';
  p.body += static_cast<char>(return_code);
  return p;
}

Packet subscribe_packet(std::uint16_t packet_id, const std::vector<std::string>& topics) {
  Packet p{static_cast<std::uint8_t>(PacketType::Subscribe), 0x02, {}};
  put_u16(p.body, packet_id);
  for (const auto& t : topics) {
    put_str(p.body, t);
    p.body += '\0';
  }
  return p;
}

Packet suback_packet(std::uint16_t packet_id, const std::vector<std::uint8_t>& codes) {
  Packet p{static_cast<std::uint8_t>(PacketType::Suback), 0, {}};
  put_u16(p.body, packet_id);
  for (auto c : codes) p.body += static_cast<char>(c);
  return p;
}

Packet publish_packet(const std::string& topic, const std::string& payload, bool retain) {
  Packet p{static_cast<std::uint8_t>(PacketType::Publish), static_cast<std::uint8_t>(retain ? 0x01 : 0x00), {}};
  put_str(p.body, topic);
  p.body += payload;
  return p;
}

Packet simple_packet(PacketType t) { return Packet{static_cast<std::uint8_t>(t), 0, {}}; }

}  // namespace decoyweaver::mqtt
