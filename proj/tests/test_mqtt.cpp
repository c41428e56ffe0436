#include "decoyweaver/mqtt.hpp"

#include <sys/socket.h>

#include <thread>

#include "doctest.h"
#include "decoyweaver/errors.hpp"

using namespace decoyweaver;
using namespace decoyweaver::mqtt;

TEST_SUITE("mqtt") {
  TEST_CASE("remaining length encoding") {
    CHECK(encode_remaining_length(0) == std::string("\x00", 1));
    CHECK(encode_remaining_length(127) == "\x7f");
    CHECK(encode_remaining_length(128) == std::string("\x80\x01", 2));
    CHECK(encode_remaining_length(16383) == "\xff\x7f");
    CHECK(encode_remaining_length(2097151) == "\xff\xff\x7f");
  }

  TEST_CASE("connect round-trip") {
    ConnectInfo in;
    in.protocol_name = "MQTT";
    in.level = 4;
    in.client_id = "probe";
    in.username = "telemetry";
    in.password = "Upl1nk!2019";
    in.keep_alive = 60;
    auto p = connect_packet(in);
    CHECK(p.type == static_cast<std::uint8_t>(PacketType::Connect));
    auto out = parse_connect(p.body);
    CHECK(out.protocol_name == "MQTT");
    CHECK(out.level == 4);
    CHECK(out.client_id == "probe");
    CHECK(out.username == in.username);
    CHECK(out.password == in.password);
    CHECK(out.keep_alive == 60);
  }

  TEST_CASE("subscribe and publish round-trip") {
    auto s = subscribe_packet(7, {"fs/nmap_scan.txt", "sensors/#"});
    CHECK(s.flags == 0x02);
    auto si = parse_subscribe(s.body);
    CHECK(si.packet_id == 7);
    CHECK(si.topics == std::vector<std::string>{"fs/nmap_scan.txt", "sensors/#"});
    auto p = publish_packet("fs/x", "hello", true);
    auto pi = parse_publish(p.flags, p.body);
    CHECK(pi.topic == "fs/x");
    CHECK(pi.payload == "hello");
    CHECK(pi.retain);
  }

  TEST_CASE("connack codes") {
    CHECK(connack_packet(kConnackAccepted).body == std::string("\x00\x00", 2));
    CHECK(connack_packet(kConnackNotAuthorized).body == std::string("\x00\x05", 2));
  }

  TEST_CASE("truncated bodies are rejected") {
    ConnectInfo in;
    in.protocol_name = "MQTT";
    in.level = 4;
    in.client_id = "c";
    auto body = connect_packet(in).body;
    CHECK_THROWS_AS(parse_connect(body.substr(0, body.size() - 2)), Error);
    CHECK_THROWS_AS(parse_subscribe(std::string("\x00", 1)), Error);
  }

  TEST_CASE("framing over a socket") {
    auto listener = listen_tcp("127.0.0.1", 0);
    auto port = listener.local_port();
    std::thread server([&] {
      sockaddr_storage ss{};
      socklen_t len = sizeof ss;
      int fd = ::accept(listener.fd(), reinterpret_cast<sockaddr*>(&ss), &len);
      Socket s(fd);
      std::string big(300, 'x');
      s.write_all(encode(publish_packet("fs/big", big, false)));
      s.write_all(encode(simple_packet(PacketType::Pingresp)));
    });
    auto c = connect_tcp("127.0.0.1", port);
    auto p1 = read_packet(c);
    REQUIRE(p1);
    CHECK(p1->type == static_cast<std::uint8_t>(PacketType::Publish));
    CHECK(parse_publish(p1->flags, p1->body).payload.size() == 300);
    auto p2 = read_packet(c);
    REQUIRE(p2);
    CHECK(p2->type == static_cast<std::uint8_t>(PacketType::Pingresp));
    server.join();
    CHECK_FALSE(read_packet(c));
  }
}
