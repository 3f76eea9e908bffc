#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "tumor_ocp/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"tumor-ocp: forward, adjoint, optimization and vanishing-alpha experiments"};
  app.require_subcommand(1, 1);

  std::string config_path, output_dir, log_level;
  for (const auto& name : tumor_ocp::subcommands()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("-c,--config", config_path, "configuration file")->required()->check(CLI::ExistingFile);
    sub->add_option("-o,--output-dir", output_dir, "overrides output_dir");
    sub->add_option("--log-level", log_level, "error, warn, info or debug");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : tumor_ocp::exit_code::config;
  }

  tumor_ocp::RunConfig cfg;
  try {
    cfg = tumor_ocp::parse_config(config_path);
    if (!output_dir.empty()) cfg.output_dir = output_dir;
    if (!log_level.empty()) {
      tumor_ocp::parse_log_level(log_level);
      cfg.log_level = log_level;
    }
  } catch (const tumor_ocp::Error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return tumor_ocp::exit_code::config;
  }
  return tumor_ocp::run(app.get_subcommands().front()->get_name(), cfg);
}
