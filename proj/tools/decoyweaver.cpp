// decoyweaver command line: serve, validate, simulate, funnel, generate-db.

#include <csignal>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "decoyweaver/analytics.hpp"
#include "decoyweaver/errors.hpp"
#include "decoyweaver/fabricate.hpp"
#include "decoyweaver/gateway.hpp"
#include "decoyweaver/simulator.hpp"

using namespace decoyweaver;
using nlohmann::json;

namespace {

volatile std::sig_atomic_t g_stop = 0;

void on_signal(int) { g_stop = 1; }

int serve(const std::string& config_path) {
  auto cfg = load_deployment_config(config_path);
  Gateway gw(std::move(cfg));
  gw.start();
  json ready{{"api_port", gw.api_port()},
             {"restored_sessions", gw.restore_report().sessions},
             {"records_replayed", gw.restore_report().records_replayed},
             {"dropped", gw.restore_report().dropped}};
  json endpoints = json::object();
  for (const auto& id : gw.scenario_ids()) {
    for (auto p : {Protocol::HTTP, Protocol::FTP, Protocol::SSH, Protocol::MQTT}) {
      try {
        endpoints[id][std::string(to_string(p))] = gw.endpoint_port(id, p);
      } catch (const ConfigError&) {
      }
    }
  }
  ready["endpoints"] = endpoints;
  std::cout << ready.dump() << std::endl;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(200));
  gw.stop();
  return 0;
}

int validate(const std::string& path) {
  auto file = std::filesystem::is_directory(path) ? std::filesystem::path(path) / "scenario.json"
                                                  : std::filesystem::path(path);
  auto graph = load_scenario_file(file);
  auto report = validate_graph(graph);
  if (!report.ok()) {
    std::cout << report.to_string();
    return 1;
  }
  auto machine = compile_runtime(graph);
  std::cout << graph.id << ": ok, " << graph.stages.size() << " stages, " << graph.transitions.size()
            << " transitions\nbackbone:";
  for (const auto& s : machine->backbone()) std::cout << " " << s;
  std::cout << "\n";
  return 0;
}

int simulate(const std::string& scenario, const std::string& cohort_path, std::optional<std::uint64_t> seed,
             const std::string& out_path) {
  auto machine = load_bundle(scenario);
  std::ifstream in(cohort_path);
  if (!in) throw ConfigError("cannot read cohort spec " + cohort_path);
  auto spec = cohort_from_json(json::parse(in));
  if (seed) spec.master_seed = *seed;
  auto records = run_cohort(spec, machine);
  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + out_path);
  for (const auto& r : records) out << record_to_line(r) << "\n";
  std::cerr << records.size() << " records from " << spec.n_agents << " agents written to " << out_path << "\n";
  return 0;
}

int funnel(const std::string& scenario, const std::string& log, const std::string& format) {
  auto file = std::filesystem::is_directory(scenario) ? std::filesystem::path(scenario) / "scenario.json"
                                                      : std::filesystem::path(scenario);
  auto graph = load_scenario_file(file);
  auto report = build_funnel_from_file(log, graph);
  std::cout << render_report(report, format == "json" ? ReportFormat::Json : ReportFormat::Text);
  if (format == "json") std::cout << "\n";
  return 0;
}

int generate_db(std::uint64_t size, std::uint64_t seed, const std::string& url, const std::string& out_path) {
  DatabaseFileSpec spec;
  spec.size_bytes = size;
  spec.seed = seed;
  if (!url.empty()) spec.planted_url = url;
  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + out_path);
  generate_database_file(spec, out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"decoyweaver: gamified deception engine"};
  app.require_subcommand(1);

  std::string config;
  auto* serve_cmd = app.add_subcommand("serve", "Run the decoy gateway");
  serve_cmd->add_option("--config", config, "Deployment config (JSON)")->required();

  std::string bundle;
  auto* validate_cmd = app.add_subcommand("validate", "Validate a scenario bundle");
  validate_cmd->add_option("scenario", bundle, "Bundle directory or scenario.json")->required();

  std::string sim_scenario, cohort, out;
  std::optional<std::uint64_t> seed;
  auto* sim_cmd = app.add_subcommand("simulate", "Run a seeded attacker cohort against local decoys");
  sim_cmd->add_option("--scenario", sim_scenario, "Bundle directory or scenario.json")->required();
  sim_cmd->add_option("--cohort", cohort, "Cohort spec (JSON)")->required();
  sim_cmd->add_option("--seed", seed, "Master seed; overrides the cohort file");
  sim_cmd->add_option("--out", out, "Output event log (JSONL)")->required();

  std::string funnel_scenario, log, format = "text";
  auto* funnel_cmd = app.add_subcommand("funnel", "Funnel report for an event log");
  funnel_cmd->add_option("--scenario", funnel_scenario, "Bundle directory or scenario.json")->required();
  funnel_cmd->add_option("--log", log, "Event log (JSONL)")->required();
  funnel_cmd->add_option("--format", format, "text or json")->check(CLI::IsMember({"text", "json"}));

  std::uint64_t db_size = 16ULL << 20, db_seed = 1;
  std::string db_url, db_out;
  auto* db_cmd = app.add_subcommand("generate-db", "Write a fabricated Database.DB");
  db_cmd->add_option("--size", db_size, "Size in bytes");
  db_cmd->add_option("--seed", db_seed, "Generator seed");
  db_cmd->add_option("--planted-url", db_url, "URL planted in the dump");
  db_cmd->add_option("--out", db_out, "Output file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve_cmd) return serve(config);
    if (*validate_cmd) return validate(bundle);
    if (*sim_cmd) return simulate(sim_scenario, cohort, seed, out);
    if (*funnel_cmd) return funnel(funnel_scenario, log, format);
    if (*db_cmd) return generate_db(db_size, db_seed, db_url, db_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
