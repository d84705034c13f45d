// Command-line front end for the MORLAIF lab.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "morlaif/errors.hpp"
#include "morlaif/experiment.hpp"
#include "morlaif/json_util.hpp"
#include "morlaif/labeling_service.hpp"

// After Eigen: <resolv.h>, pulled in by httplib, defines a `_res` macro.
#include <httplib.h>

namespace fs = std::filesystem;
using namespace morlaif;

namespace {

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "runs/default";
};

// An explicit --config wins; otherwise an existing run's manifest; otherwise
// the default preset.
ExperimentConfig resolve_config(const GlobalOptions& g) {
  ExperimentConfig c;
  const fs::path manifest = fs::path(g.out) / "manifest.json";
  if (!g.config.empty())
    c = load_config(g.config);
  else if (fs::exists(manifest))
    c = load_config(manifest.string());
  else
    c = ExperimentConfig::preset("default");
  if (g.seed) c.seed = *g.seed;
  for (const auto& w : c.validate()) std::cerr << "warning: " << w << "\n";
  return c;
}

httplib::Server* g_server = nullptr;
void stop_server(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MORLAIF desk-scale lab: synthetic world, preference models, PPO and evaluation"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config, "Preset name (minimal, default), config JSON or run manifest");
  app.add_option("--seed", g.seed, "Master seed (overrides the config)");
  app.add_option("--out", g.out, "Run directory")->capture_default_str();

  struct StageCommand {
    const char* name;
    const char* help;
    const char* first;
    const char* last;
  };
  const StageCommand stages[] = {
      {"simulate", "Build the world and simulate all labeled datasets", "world", "data"},
      {"fit-pms", "Fit principle, baseline and weak preference models", "pms", "pms"},
      {"train", "Train policies with PPO against scalarized rewards", "policies", "policies"},
      {"eval", "Compute accuracies, win rates, correlations and ablations", "eval", "eval"},
      {"report", "Write plot-data files from the evaluation tables", "report", "report"},
      {"run", "Run every stage", "world", "report"},
  };
  for (const auto& s : stages) {
    app.add_subcommand(s.name, s.help)->callback([&g, s] {
      run_stages(resolve_config(g), g.out, s.first, s.last);
      std::cout << s.name << ": done (" << g.out << ")\n";
    });
  }

  std::string prompt_dir = "prompts";
  auto* exp = app.add_subcommand("export-prompts", "Write the feedback and win-rate prompt templates");
  exp->add_option("--dir", prompt_dir, "Output directory")->capture_default_str();
  exp->callback([&prompt_dir] {
    for (TemplateId id : kAllTemplates) {
      const fs::path p = fs::path(prompt_dir) / template_file_name(id);
      write_text_file(p, std::string(template_text(id)));
      std::cout << p.string() << "\n";
    }
  });

  std::string host = "127.0.0.1";
  int port = 8080;
  std::string data_dir = "labeling_data";
  std::string policy_x = "sft-reference";
  std::string policy_y = "morlaif_weighted_linear";
  auto* serve = app.add_subcommand("serve", "Run the labeling HTTP service");
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port)->capture_default_str();
  serve->add_option("--data-dir", data_dir, "Record logs")->capture_default_str();
  serve->add_option("--policy-x", policy_x, "Policy name in the run directory")->capture_default_str();
  serve->add_option("--policy-y", policy_y, "Policy name in the run directory")->capture_default_str();
  serve->callback([&] {
    auto load = [&](const std::string& name) -> std::shared_ptr<ResponseGenerator> {
      const fs::path p = fs::path(g.out) / "policies" / (name + ".json");
      if (!fs::exists(p)) throw ValidationError("no policy '" + name + "' in " + g.out + " (run `train` first)");
      return std::make_shared<PolicyGenerator>(name, policy_from_json(read_json_file(p).at("policy")));
    };
    LabelingConfig lc;
    lc.data_dir = data_dir;
    lc.seed = g.seed.value_or(0);
    LabelingService service(lc, load(policy_x), load(policy_y));
    httplib::Server server;
    register_routes(server, service);
    g_server = &server;
    std::signal(SIGINT, stop_server);
    std::signal(SIGTERM, stop_server);
    std::cout << "listening on http://" << host << ":" << port << "\n" << std::flush;
    if (!server.listen(host, port)) throw RuntimeFailure("cannot listen on " + host + ":" + std::to_string(port));
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
