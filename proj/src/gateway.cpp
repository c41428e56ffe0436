#include "decoyweaver/gateway.hpp"

#include <ctime>
#include <fstream>
#include <set>

#include "decoyweaver/analytics.hpp"
#include "decoyweaver/errors.hpp"
#include "httplib.h"

namespace decoyweaver {

using nlohmann::json;

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
  return p.is_absolute() || base.empty() ? p : base / p;
}

bool constant_time_equal(std::string_view a, std::string_view b) {
  unsigned char diff = a.size() == b.size() ? 0 : 1;
  for (std::size_t i = 0; i < a.size(); ++i) diff |= static_cast<unsigned char>(a[i] ^ b[i % std::max<std::size_t>(b.size(), 1)]);
  return diff == 0 && !b.empty();
}

std::time_t to_time_t(TimestampMs ms) { return static_cast<std::time_t>(ms / 1000); }

TimestampMs boundary_on_day(std::time_t day, int day_offset, int hour, int minute) {
  std::tm lt{};
  ::localtime_r(&day, &lt);
  lt.tm_mday += day_offset;
  lt.tm_hour = hour;
  lt.tm_min = minute;
  lt.tm_sec = 0;
  lt.tm_isdst = -1;
  return static_cast<TimestampMs>(std::mktime(&lt)) * 1000;
}

}  // namespace

std::optional<std::pair<int, int>> parse_reset_time(std::string_view s) {
  if (s.size() != 5 || s[2] != ':') return std::nullopt;
  for (std::size_t i : {0u, 1u, 3u, 4u}) {
    if (s[i] < '0' || s[i] > '9') return std::nullopt;
  }
  int h = (s[0] - '0') * 10 + (s[1] - '0');
  int m = (s[3] - '0') * 10 + (s[4] - '0');
  if (h > 23 || m > 59) return std::nullopt;
  return std::make_pair(h, m);
}

TimestampMs last_reset_boundary(TimestampMs now, int hour, int minute) {
  auto b = boundary_on_day(to_time_t(now), 0, hour, minute);
  if (b > now) b = boundary_on_day(to_time_t(now), -1, hour, minute);
  return b;
}

TimestampMs next_reset_boundary(TimestampMs now, int hour, int minute) {
  auto b = boundary_on_day(to_time_t(now), 0, hour, minute);
  if (b <= now) b = boundary_on_day(to_time_t(now), 1, hour, minute);
  return b;
}

void check_deployment_config(const DeploymentConfig& cfg) {
  if (!parse_reset_time(cfg.reset_time_local))
    throw ConfigError("reset_time_local must be HH:MM, got '" + cfg.reset_time_local + "'");
  if (cfg.api_enabled && cfg.operator_token.size() < kMinOperatorToken)
    throw ConfigError("operator_token must be at least " + std::to_string(kMinOperatorToken) + " characters");
  std::set<std::uint16_t> ports;
  auto claim = [&](std::uint16_t port, const std::string& what) {
    if (port == 0) return;
    if (!ports.insert(port).second) throw PortInUse("port " + std::to_string(port) + " is claimed twice (" + what + ")");
  };
  if (cfg.api_enabled) claim(cfg.api_port, "operator api");
  for (const auto& s : cfg.scenarios) {
    std::set<Protocol> protocols;
    for (const auto& e : s.endpoints) {
      claim(e.port, s.path.string() + " " + std::string(to_string(e.protocol)));
      if (!protocols.insert(e.protocol).second)
        throw ConfigError(s.path.string() + ": more than one " + std::string(to_string(e.protocol)) + " endpoint");
    }
  }
}

DeploymentConfig parse_deployment_config(const json& j, const std::filesystem::path& base_dir) {
  DeploymentConfig cfg;
  try {
    if (!j.is_object()) throw ConfigError("deployment config must be a JSON object");
    static const std::set<std::string> known = {"scenarios", "bind",          "reset_time_local", "data_dir",
                                                "operator_token", "api_port", "api_enabled",      "database_size"};
    for (const auto& [k, v] : j.items()) {
      if (!known.count(k)) throw ConfigError("unknown deployment key '" + k + "'");
    }
    cfg.bind = j.value("bind", cfg.bind);
    cfg.reset_time_local = j.value("reset_time_local", cfg.reset_time_local);
    cfg.data_dir = resolve(base_dir, j.value("data_dir", cfg.data_dir.string()));
    cfg.operator_token = j.value("operator_token", std::string());
    cfg.api_port = j.value("api_port", std::uint16_t{0});
    cfg.api_enabled = j.value("api_enabled", true);
    cfg.database_size = j.value("database_size", std::uint64_t{0});
    for (const auto& s : j.at("scenarios")) {
      ScenarioDeployment d;
      d.path = resolve(base_dir, s.at("path").get<std::string>());
      for (const auto& e : s.at("endpoints")) {
        EndpointConfig ec;
        auto proto = e.at("protocol").get<std::string>();
        auto p = protocol_from_string(proto);
        if (!p) throw ConfigError("unknown protocol '" + proto + "'");
        ec.protocol = *p;
        ec.port = e.value("port", std::uint16_t{0});
        d.endpoints.push_back(ec);
      }
      cfg.scenarios.push_back(std::move(d));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("deployment config: ") + e.what());
  }
  check_deployment_config(cfg);
  return cfg;
}

DeploymentConfig load_deployment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read deployment config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (const char* token = std::getenv(kOperatorTokenEnv); token && *token) j["operator_token"] = token;
  return parse_deployment_config(j, path.parent_path());
}

std::shared_ptr<const RuntimeStateMachine> load_bundle(const std::filesystem::path& path) {
  auto file = std::filesystem::is_directory(path) ? path / "scenario.json" : path;
  ScenarioGraph g;
  try {
    g = load_scenario_file(file);
  } catch (const SchemaError& e) {
    throw InvalidBundle(file.string() + ": " + e.what());
  } catch (const DuplicateIdError& e) {
    throw InvalidBundle(file.string() + ": " + e.what());
  }
  auto report = validate_graph(g);
  if (!report.ok()) throw InvalidBundle(file.string() + ":\n" + report.to_string());
  return compile_runtime(g);
}

json session_summary_json(const Session& s) {
  return json{{"id", s.id},
              {"scenario", s.scenario_id},
              {"source_ip", s.source.ip},
              {"current_stage", s.current_stage},
              {"engagement", s.engagement},
              {"started_at", s.started_at},
              {"last_event_at", s.last_event_at},
              {"event_count", s.events.size()},
              {"closed", s.closed},
              {"badges", s.badges},
              {"flags", {{"scanner_suspected", s.flags.scanner_suspected}, {"operator_locked", s.flags.operator_locked}}}};
}

json session_detail_json(const Session& s, std::size_t recent_events) {
  auto j = session_summary_json(s);
  j["trajectory"] = s.trajectory;
  json rewards = json::array();
  for (const auto& r : s.rewards) rewards.push_back({{"kind", std::string(to_string(r.kind))}, {"value", r.value}});
  j["rewards"] = rewards;
  json difficulty = json::object();
  for (const auto& [k, v] : s.difficulty_state) difficulty[std::string(to_string(k))] = v;
  j["difficulty"] = difficulty;
  j["clue_cursors"] = s.clue_cursors;
  json events = json::array();
  auto start = s.events.size() > recent_events ? s.events.size() - recent_events : 0;
  for (auto i = start; i < s.events.size(); ++i) {
    const auto& e = s.events[i];
    events.push_back({{"ts", e.ts},
                      {"protocol", std::string(to_string(e.protocol))},
                      {"action", std::string(to_string(e.action))},
                      {"success", e.success},
                      {"inter_event_ms", e.inter_event_ms},
                      {"raw", e.raw}});
  }
  j["recent_events"] = events;
  return j;
}

struct Gateway::Api {
  httplib::Server server;
  std::thread thread;
};

Gateway::Gateway(DeploymentConfig cfg, GatewayOptions options)
    : cfg_(std::move(cfg)), options_(options), clock_(options.clock ? options.clock : &system_clock_) {
  check_deployment_config(cfg_);
  std::filesystem::create_directories(cfg_.data_dir);
  round_robin_ = std::make_unique<RoundRobinState>(cfg_.data_dir / "round_robin.json");

  auto [hour, minute] = *parse_reset_time(cfg_.reset_time_local);
  TimestampMs window = options_.window_start ? *options_.window_start : last_reset_boundary(now(), hour, minute);
  if (!options_.window_start) {
    // A manual reset later than the scheduled boundary still defines the window.
    std::ifstream in(cfg_.data_dir / "window.json");
    if (in) {
      try {
        auto j = json::parse(in);
        TimestampMs stored = j.value("window_start", TimestampMs{0});
        if (stored > window && stored <= now()) window = stored;
      } catch (const json::exception&) {
      }
    }
  }
  sessions_.reset_environment(window);

  for (const auto& s : cfg_.scenarios) {
    auto machine = load_bundle(s.path);
    if (deployed_.count(machine->id())) throw ConfigError("scenario '" + machine->id() + "' deployed twice");
    sessions_.deploy(machine);
    Deployed d;
    d.machine = machine;
    for (const auto& e : s.endpoints) {
      DecoyContext ctx;
      ctx.sessions = &sessions_;
      ctx.machine = machine;
      ctx.clock = clock_;
      ctx.round_robin = round_robin_.get();
      ctx.data_dir = cfg_.data_dir;
      ctx.bind_host = cfg_.bind;
      ctx.database_size_override = cfg_.database_size;
      try {
        d.decoys.push_back(make_decoy(e.protocol, std::move(ctx)));
      } catch (const ConfigError& err) {
        throw InvalidBundle(s.path.string() + ": " + err.what());
      } catch (const json::exception& err) {
        throw InvalidBundle(s.path.string() + ": service config: " + err.what());
      }
    }
    deployed_.emplace(machine->id(), std::move(d));
  }

  if (options_.write_log) writer_ = std::make_unique<EventLogWriter>(log_dir());
  sessions_.add_sink([this](const EventRecord& r) { on_record(r); });
  sessions_.on_reset([this] {
    for (auto& [id, d] : deployed_) {
      for (auto& decoy : d.decoys) decoy->reset_state();
    }
    std::lock_guard lock(records_mu_);
    records_.clear();
  });
}

Gateway::~Gateway() { stop(); }

TimestampMs Gateway::now() const { return clock_->now(""); }

std::vector<std::string> Gateway::scenario_ids() const {
  std::vector<std::string> out;
  for (const auto& [id, d] : deployed_) out.push_back(id);
  return out;
}

std::uint16_t Gateway::endpoint_port(const std::string& scenario_id, Protocol protocol) const {
  auto it = deployed_.find(scenario_id);
  if (it == deployed_.end()) throw UnknownScenario(scenario_id);
  for (const auto& d : it->second.decoys) {
    if (d->protocol() == protocol) return d->port();
  }
  throw ConfigError("scenario '" + scenario_id + "' has no " + std::string(to_string(protocol)) + " endpoint");
}

std::vector<EventRecord> Gateway::window_records(const std::string& scenario_id) const {
  std::lock_guard lock(records_mu_);
  auto it = records_.find(scenario_id);
  return it == records_.end() ? std::vector<EventRecord>{} : it->second;
}

void Gateway::on_record(const EventRecord& r) {
  if (writer_) writer_->append(r);
  {
    std::lock_guard lock(records_mu_);
    records_[r.scenario].push_back(r);
  }
  std::string frame = "id: " + r.session_id + ":" + std::to_string(r.seq) + "\nevent: " + r.kind +
                      "\ndata: " + record_to_line(r) + "\n\n";
  std::lock_guard lock(subs_mu_);
  for (auto& sub : subscribers_) {
    std::lock_guard slock(sub->mu);
    sub->queue.push_back(frame);
    sub->cv.notify_all();
  }
}

void Gateway::restore_from_logs() {
  std::vector<EventRecord> records;
  std::size_t dropped = 0;
  auto first_day = utc_day(sessions_.window_start());
  std::error_code ec;
  for (const auto& [id, d] : deployed_) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(log_dir(), ec)) {
      auto name = entry.path().filename().string();
      const std::string prefix = id + "-";
      const std::string suffix = ".events.jsonl";
      if (name.size() != prefix.size() + 8 + suffix.size() || name.rfind(prefix, 0) != 0) continue;
      if (name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) continue;
      if (name.substr(prefix.size(), 8) < first_day) continue;
      files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      auto log = read_event_log(f);
      dropped += log.malformed_lines.size();
      for (auto& r : log.records) {
        if (r.scenario == id) records.push_back(std::move(r));
      }
    }
  }
  restore_ = sessions_.replay(records);
  restore_.dropped = dropped;
  std::lock_guard lock(records_mu_);
  for (const auto& r : records) {
    if (r.ts >= sessions_.window_start()) records_[r.scenario].push_back(r);
  }
}

void Gateway::start() {
  if (started_) return;
  if (options_.restore) restore_from_logs();
  try {
    for (const auto& s : cfg_.scenarios) {
      auto machine = load_bundle(s.path);
      auto& d = deployed_.at(machine->id());
      for (std::size_t i = 0; i < s.endpoints.size(); ++i) d.decoys[i]->start(s.endpoints[i].port);
    }
    if (cfg_.api_enabled) start_api();
  } catch (...) {
    stop();
    throw;
  }
  if (options_.schedule_resets) scheduler_ = std::thread([this] { scheduler_loop(); });
  started_ = true;
}

void Gateway::stop() {
  {
    std::lock_guard lock(sched_mu_);
    stopping_ = true;
  }
  sched_cv_.notify_all();
  if (scheduler_.joinable()) scheduler_.join();
  {
    std::lock_guard lock(subs_mu_);
    for (auto& sub : subscribers_) {
      std::lock_guard slock(sub->mu);
      sub->closed = true;
      sub->cv.notify_all();
    }
  }
  if (api_) {
    api_->server.stop();
    if (api_->thread.joinable()) api_->thread.join();
    api_.reset();
  }
  for (auto& [id, d] : deployed_) {
    for (auto& decoy : d.decoys) decoy->stop();
  }
  started_ = false;
}

std::size_t Gateway::reset_now() {
  auto ts = std::max(now(), sessions_.window_start());
  auto closed = sessions_.reset_environment(ts);
  std::ofstream out(cfg_.data_dir / "window.json", std::ios::trunc);
  out << json{{"window_start", ts}}.dump() << "\n";
  return closed;
}

void Gateway::scheduler_loop() {
  auto [hour, minute] = *parse_reset_time(cfg_.reset_time_local);
  std::unique_lock lock(sched_mu_);
  while (!stopping_) {
    auto wall = system_clock_.now("");
    auto next = next_reset_boundary(wall, hour, minute);
    auto deadline = std::chrono::system_clock::time_point(std::chrono::milliseconds(next));
    if (sched_cv_.wait_until(lock, deadline, [this] { return stopping_; })) break;
    lock.unlock();
    sessions_.reset_environment(next);
    {
      std::ofstream out(cfg_.data_dir / "window.json", std::ios::trunc);
      out << json{{"window_start", next}}.dump() << "\n";
    }
    lock.lock();
  }
}

void Gateway::start_api() {
  api_ = std::make_unique<Api>();
  auto& srv = api_->server;

  auto error = [](httplib::Response& res, int status, const std::string& message) {
    res.status = status;
    res.set_content(json{{"error", message}}.dump(), "application/json");
  };
  auto authorized = [this](const httplib::Request& req) {
    std::string token;
    auto header = req.get_header_value("Authorization");
    if (header.rfind("Bearer ", 0) == 0) token = header.substr(7);
    if (token.empty() && req.has_param("token")) token = req.get_param_value("token");
    return constant_time_equal(token, cfg_.operator_token);
  };
  auto send = [](httplib::Response& res, const json& j) { res.set_content(j.dump(), "application/json"); };

  srv.set_pre_routing_handler([authorized, error](const httplib::Request& req, httplib::Response& res) {
    if (req.path.rfind("/api/", 0) == 0 && !authorized(req)) {
      error(res, 401, "missing or invalid operator token");
      return httplib::Server::HandlerResponse::Handled;
    }
    return httplib::Server::HandlerResponse::Unhandled;
  });

  srv.Get("/api/sessions", [this, send](const httplib::Request&, httplib::Response& res) {
    json out = json::array();
    for (const auto& s : sessions_.sessions()) out.push_back(session_summary_json(s));
    send(res, out);
  });

  srv.Get(R"(/api/sessions/([^/]+))", [this, send, error](const httplib::Request& req, httplib::Response& res) {
    auto s = sessions_.session(req.matches[1]);
    if (!s) return error(res, 404, "unknown session '" + std::string(req.matches[1]) + "'");
    send(res, session_detail_json(*s));
  });

  srv.Post(R"(/api/sessions/([^/]+)/action)", [this, send, error](const httplib::Request& req,
                                                                   httplib::Response& res) {
    std::string id = req.matches[1];
    if (!sessions_.session(id)) return error(res, 404, "unknown session '" + id + "'");
    OperatorAction action;
    try {
      action = operator_action_from_json(json::parse(req.body));
    } catch (const json::exception& e) {
      return error(res, 422, std::string("malformed action: ") + e.what());
    } catch (const InvalidAction& e) {
      return error(res, 422, e.what());
    }
    action.issued_at = now();
    try {
      auto outcome = sessions_.apply_operator(id, action);
      auto s = sessions_.session(id);
      send(res, json{{"outcome", std::string(to_string(outcome.kind))},
                     {"stage", s ? s->current_stage : std::string()},
                     {"session", s ? session_summary_json(*s) : json()}});
    } catch (const UnknownSession& e) {
      error(res, 404, e.what());
    } catch (const UnknownStage& e) {
      error(res, 422, e.what());
    } catch (const InvalidAction& e) {
      error(res, 422, e.what());
    } catch (const SessionClosed& e) {
      error(res, 422, e.what());
    }
  });

  srv.Get("/api/scenarios", [this, send](const httplib::Request&, httplib::Response& res) {
    json out = json::array();
    for (const auto& [id, d] : deployed_) out.push_back({{"id", id}, {"title", d.machine->graph().title}});
    send(res, out);
  });

  srv.Get(R"(/api/scenarios/([^/]+))", [this, send, error](const httplib::Request& req, httplib::Response& res) {
    auto it = deployed_.find(req.matches[1]);
    if (it == deployed_.end()) return error(res, 404, "unknown scenario '" + std::string(req.matches[1]) + "'");
    auto j = scenario_to_json(it->second.machine->graph());
    j["backbone"] = it->second.machine->backbone();
    send(res, j);
  });

  srv.Get(R"(/api/funnel/([^/]+))", [this, send, error](const httplib::Request& req, httplib::Response& res) {
    auto it = deployed_.find(req.matches[1]);
    if (it == deployed_.end()) return error(res, 404, "unknown scenario '" + std::string(req.matches[1]) + "'");
    send(res, report_to_json(build_funnel(window_records(it->first), it->second.machine->graph())));
  });

  srv.Get("/api/events/stream", [this](const httplib::Request&, httplib::Response& res) {
    auto sub = std::make_shared<Subscriber>();
    sub->queue.push_back("retry: 2000\n\n");
    {
      std::lock_guard lock(subs_mu_);
      subscribers_.push_back(sub);
    }
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider(
        "text/event-stream",
        [sub](std::size_t, httplib::DataSink& sink) {
          std::deque<std::string> batch;
          {
            std::unique_lock lock(sub->mu);
            sub->cv.wait_for(lock, std::chrono::seconds(15), [&] { return sub->closed || !sub->queue.empty(); });
            if (sub->closed) return false;
            batch.swap(sub->queue);
          }
          if (batch.empty()) batch.push_back(": keepalive\n\n");
          for (const auto& frame : batch) {
            if (!sink.write(frame.data(), frame.size())) return false;
          }
          return true;
        },
        [this, sub](bool) {
          std::lock_guard lock(subs_mu_);
          subscribers_.erase(std::remove(subscribers_.begin(), subscribers_.end(), sub), subscribers_.end());
        });
  });

  int bound = cfg_.api_port == 0 ? srv.bind_to_any_port(cfg_.bind) : (srv.bind_to_port(cfg_.bind, cfg_.api_port) ? cfg_.api_port : -1);
  if (bound <= 0) throw PortInUse("operator api port " + std::to_string(cfg_.api_port) + " is in use");
  api_port_ = static_cast<std::uint16_t>(bound);
  api_->thread = std::thread([this] { api_->server.listen_after_bind(); });
  srv.wait_until_ready();
}

}  // namespace decoyweaver
