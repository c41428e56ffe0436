// MQTT broker decoy. Files are exposed as retained messages on fs/<name>.

#include <sstream>

#include "decoyweaver/decoy.hpp"
#include "decoyweaver/errors.hpp"
#include "decoyweaver/mqtt.hpp"
#include "decoyweaver/net.hpp"

namespace decoyweaver {

namespace {

using mqtt::PacketType;

// Pulls "user=" / "pass=" style pairs out of a planted credentials note.
std::vector<std::string> credentials_from_note(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line, user;
  auto value_after = [](const std::string& l, const std::string& key) -> std::optional<std::string> {
    auto pos = l.find(key);
    if (pos != 0) return std::nullopt;
    auto v = l.substr(key.size());
    while (!v.empty() && (v.back() == '\r' || v.back() == ' ')) v.pop_back();
    return v;
  };
  while (std::getline(in, line)) {
    if (auto u = value_after(line, "mqtt_user=")) user = *u;
    if (auto p = value_after(line, "mqtt_pass=")) {
      if (!user.empty()) out.push_back(user + ":" + *p);
    }
  }
  return out;
}

class MqttDecoy final : public Decoy {
 public:
  explicit MqttDecoy(DecoyContext ctx) : ctx_(std::move(ctx)) {
    const auto& cfg = ctx_.service_config("mqtt");
    if (cfg.contains("credentials")) credentials_ = cfg.at("credentials").get<std::vector<std::string>>();
    if (cfg.contains("credentials_asset")) {
      auto extra = credentials_from_note(ctx_.asset_text(cfg.at("credentials_asset").get<std::string>()));
      credentials_.insert(credentials_.end(), extra.begin(), extra.end());
    }
    files_ = load_decoy_files(ctx_, cfg.value("files", nlohmann::json::array()));
    notice_topic_ = cfg.value("notice_topic", std::string("$SYS/broker/notice"));
  }

  ~MqttDecoy() override { stop(); }

  Protocol protocol() const override { return Protocol::MQTT; }
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
  bool authorized(const std::optional<std::string>& user, const std::optional<std::string>& pass) const {
    if (!user) return false;
    for (const auto& c : credentials_) {
      auto colon = c.find(':');
      if (c.substr(0, colon) != *user) continue;
      auto p = colon == std::string::npos ? std::string("*") : c.substr(colon + 1);
      if (p == "*" || (pass && *pass == p)) return true;
    }
    return false;
  }

  const DecoyFile* find_file(const std::string& name) const {
    for (const auto& f : files_) {
      if (f.name == name) return &f;
    }
    return nullptr;
  }

  bool send(Socket& s, const mqtt::Packet& p) { return s.write_all(mqtt::encode(p)); }

  bool send_extras(Socket& s, const IngestReport& report) {
    std::vector<std::string> notes = report.messages;
    for (auto& r : reward_texts(ctx_, report)) notes.push_back(std::move(r));
    for (auto& c : clue_texts(ctx_, report)) notes.push_back(std::move(c));
    for (const auto& n : notes) {
      if (!send(s, mqtt::publish_packet(notice_topic_, n, false))) return false;
    }
    return true;
  }

  void serve(Socket& sock) {
    const std::string ip = sock.peer_ip();
    bool connected = false;
    while (auto packet = mqtt::read_packet(sock)) {
      auto type = static_cast<PacketType>(packet->type);
      if (type == PacketType::Connect) {
        mqtt::ConnectInfo info;
        bool parsed = true;
        try {
          info = mqtt::parse_connect(packet->body);
        } catch (const Error&) {
          parsed = false;
        }
        std::string raw = "CONNECT client_id=" + info.client_id + " username=" + info.username.value_or("") +
                          " password=" + info.password.value_or("");
        auto obs = observe(ctx_, Protocol::MQTT, ip, raw);
        std::uint8_t rc = mqtt::kConnackNotAuthorized;
        if (!parsed || (info.protocol_name != "MQTT" && info.protocol_name != "MQIsdp")) {
          rc = mqtt::kConnackBadProtocol;
        } else if (authorized(info.username, info.password)) {
          rc = mqtt::kConnackAccepted;
        }
        connected = rc == mqtt::kConnackAccepted;
        auto report = commit_as(ctx_, Protocol::MQTT, ip, obs, ActionKind::MqttConnect, connected);
        if (!send(sock, mqtt::connack_packet(rc))) return;
        if (!connected) return;
        if (!send_extras(sock, report)) return;
        continue;
      }
      if (!connected) {
        auto obs = observe(ctx_, Protocol::MQTT, ip, "PACKET type=" + std::to_string(packet->type));
        commit_as(ctx_, Protocol::MQTT, ip, obs, ActionKind::Other, false);
        return;
      }
      switch (type) {
        case PacketType::Subscribe: {
          mqtt::SubscribeInfo sub;
          try {
            sub = mqtt::parse_subscribe(packet->body);
          } catch (const Error&) {
            return;
          }
          std::string raw = "SUBSCRIBE";
          for (const auto& t : sub.topics) raw += " topic=" + t;
          auto obs = observe(ctx_, Protocol::MQTT, ip, raw);
          std::vector<std::uint8_t> codes;
          std::vector<mqtt::Packet> deliveries;
          bool any_file = false;
          for (const auto& t : sub.topics) {
            const DecoyFile* f = t.rfind("fs/", 0) == 0 ? find_file(t.substr(3)) : nullptr;
            if (f) {
              any_file = true;
              std::string content;
              stream_decoy_file(*f, [&](std::string_view chunk) { content.append(chunk); });
              deliveries.push_back(mqtt::publish_packet(t, content, true));
              codes.push_back(0x00);
            } else if (t.rfind("fs/", 0) == 0) {
              codes.push_back(mqtt::kSubackFailure);
            } else {
              codes.push_back(0x00);
            }
          }
          bool is_fs = obs.cls.kind == ActionKind::FileDownload;
          auto report = commit(ctx_, Protocol::MQTT, ip, obs, is_fs ? any_file : true);
          if (!send(sock, mqtt::suback_packet(sub.packet_id, codes))) return;
          for (const auto& d : deliveries) {
            if (!send(sock, d)) return;
          }
          if (!send_extras(sock, report)) return;
          break;
        }
        case PacketType::Publish: {
          mqtt::PublishInfo pub;
          try {
            pub = mqtt::parse_publish(packet->flags, packet->body);
          } catch (const Error&) {
            return;
          }
          auto obs = observe(ctx_, Protocol::MQTT, ip, "PUBLISH topic=" + pub.topic + "\n" + pub.payload);
          auto report = commit(ctx_, Protocol::MQTT, ip, obs, true);
          if (!send_extras(sock, report)) return;
          break;
        }
        case PacketType::Pingreq: {
          auto obs = observe(ctx_, Protocol::MQTT, ip, "PINGREQ");
          auto report = commit_as(ctx_, Protocol::MQTT, ip, obs, ActionKind::Other, true);
          if (!send(sock, mqtt::simple_packet(PacketType::Pingresp))) return;
          if (!send_extras(sock, report)) return;
          break;
        }
        case PacketType::Disconnect: {
          auto obs = observe(ctx_, Protocol::MQTT, ip, "DISCONNECT");
          commit_as(ctx_, Protocol::MQTT, ip, obs, ActionKind::Other, true);
          return;
        }
        default: {
          auto obs = observe(ctx_, Protocol::MQTT, ip, "PACKET type=" + std::to_string(packet->type));
          commit_as(ctx_, Protocol::MQTT, ip, obs, ActionKind::Other, false);
          return;
        }
      }
    }
  }

  DecoyContext ctx_;
  std::vector<std::string> credentials_;
  std::vector<DecoyFile> files_;
  std::string notice_topic_;
  std::unique_ptr<TcpServer> server_;
};

}  // namespace

std::unique_ptr<Decoy> make_mqtt_decoy(DecoyContext ctx) { return std::make_unique<MqttDecoy>(std::move(ctx)); }

}  // namespace decoyweaver
