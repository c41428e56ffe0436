#include <fstream>
#include <sstream>

#include "decoyweaver/decoy.hpp"
#include "decoyweaver/errors.hpp"

namespace decoyweaver {

using nlohmann::json;

const json& DecoyContext::service_config(std::string_view protocol_key) const {
  static const json kEmpty = json::object();
  const auto& services = graph().services;
  auto it = services.find(std::string(protocol_key));
  return it == services.end() ? kEmpty : *it;
}

std::string DecoyContext::asset_text(std::string_view asset) const {
  if (asset.rfind("asset:", 0) == 0) asset.remove_prefix(6);
  std::ifstream in(graph().asset_path(asset), std::ios::binary);
  if (!in) throw ConfigError("missing asset '" + std::string(asset) + "' in scenario " + scenario_id());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

Observation observe(const DecoyContext& ctx, Protocol protocol, const std::string& ip, std::string raw) {
  Observation obs;
  obs.now = ctx.clock->now(ip);
  double rate = ctx.sessions->note_request(ip, obs.now);
  obs.cls = classify_action(protocol, raw, rate);
  obs.raw = std::move(raw);
  return obs;
}

IngestReport commit_as(const DecoyContext& ctx, Protocol protocol, const std::string& ip, const Observation& obs,
                       ActionKind kind, bool success) {
  ActionEvent e;
  e.ts = obs.now;
  e.protocol = protocol;
  e.raw = make_excerpt(obs.raw);
  e.action = action_allowed_for(protocol, kind) ? kind : ActionKind::Other;
  e.success = success;
  e.scanner_hint = obs.cls.scanner_suspected;
  try {
    return ctx.sessions->ingest(ctx.scenario_id(), ip, e);
  } catch (const StaleEvent&) {
    // Two connections from one source raced; keep the later arrival in order.
    auto s = ctx.sessions->session(ctx.sessions->session_id_for(ctx.scenario_id(), ip));
    if (!s) throw;
    e.ts = s->last_event_at;
    return ctx.sessions->ingest(ctx.scenario_id(), ip, e);
  }
}

IngestReport commit(const DecoyContext& ctx, Protocol protocol, const std::string& ip, const Observation& obs,
                    bool success) {
  return commit_as(ctx, protocol, ip, obs, obs.cls.kind, success);
}

std::vector<std::string> clue_texts(const DecoyContext& ctx, const IngestReport& report) {
  std::vector<std::string> out;
  for (const auto& c : report.clues) {
    try {
      out.push_back(ctx.asset_text(c.asset));
    } catch (const ConfigError&) {
      out.push_back(c.asset);
    }
  }
  return out;
}

std::vector<std::string> reward_texts(const DecoyContext& ctx, const IngestReport& report) {
  std::vector<std::string> out;
  for (const auto& effect : report.result.effects) {
    if (effect.kind != TransitionOutcome::Kind::RewardGranted || !effect.reward) continue;
    const auto& r = *effect.reward;
    switch (r.kind) {
      case RewardKind::Badge: out.push_back("Badge unlocked: " + r.value); break;
      case RewardKind::Trophy: out.push_back("Trophy unlocked: " + r.value); break;
      case RewardKind::FakeMonetary:
      case RewardKind::InfoFile:
        try {
          out.push_back(ctx.asset_text(r.value));
        } catch (const ConfigError&) {
          out.push_back(r.value);
        }
        break;
    }
  }
  return out;
}

std::vector<DecoyFile> load_decoy_files(const DecoyContext& ctx, const json& files) {
  std::vector<DecoyFile> out;
  if (!files.is_array()) return out;
  for (const auto& f : files) {
    DecoyFile d;
    d.name = f.at("name").get<std::string>();
    auto generator = f.value("generator", std::string());
    if (generator == "database") {
      DatabaseFileSpec spec;
      spec.size_bytes = f.value("size_bytes", spec.size_bytes);
      if (ctx.database_size_override) spec.size_bytes = ctx.database_size_override;
      spec.seed = f.value("seed", spec.seed);
      spec.planted_url = f.value("planted_url", spec.planted_url);
      spec.defacement_url = f.value("defacement_url", spec.defacement_url);
      spec.url_count = f.value("url_count", spec.url_count);
      spec.defacement_count = f.value("defacement_count", spec.defacement_count);
      if (f.contains("extra_references")) spec.extra_references = f.at("extra_references").get<std::vector<std::string>>();
      d.database = spec;
    } else if (generator == "records") {
      d.text = render_records_csv(generate_fabricated_records(f.value("count", std::size_t{100}), f.value("seed", std::uint64_t{1})));
    } else if (f.contains("asset")) {
      d.text = ctx.asset_text(f.at("asset").get<std::string>());
    } else {
      d.text = f.value("text", std::string());
    }
    out.push_back(std::move(d));
  }
  return out;
}

void stream_decoy_file(const DecoyFile& f, const std::function<void(std::string_view)>& sink) {
  if (f.database) {
    generate_database_file(*f.database, sink);
  } else {
    sink(f.text);
  }
}

std::uint64_t decoy_file_size(const DecoyFile& f) {
  return f.database ? std::max(f.database->size_bytes, kMinDatabaseSize) : f.text.size();
}

std::unique_ptr<Decoy> make_decoy(Protocol protocol, DecoyContext ctx) {
  switch (protocol) {
    case Protocol::HTTP: return make_http_decoy(std::move(ctx));
    case Protocol::FTP: return make_ftp_decoy(std::move(ctx));
    case Protocol::SSH: return make_ssh_decoy(std::move(ctx));
    case Protocol::MQTT: return make_mqtt_decoy(std::move(ctx));
  }
  throw ConfigError("unsupported protocol");
}

}  // namespace decoyweaver
