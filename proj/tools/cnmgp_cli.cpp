#include <CLI11.hpp>
#include <iostream>

#include "cnmgp/cli.hpp"

namespace cli = cnmgp::cli;

int main(int argc, char** argv) {
  CLI::App app{"Sparse variational multi-output GP with input-dependent correlations"};
  app.set_version_flag("--version", cli::kVersion);
  app.require_subcommand(1, 1);
  std::string config_path, out_dir;
  std::vector<std::string> overrides;
  std::optional<long long> seed;
  app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "Override a config value, KEY=VALUE with VALUE parsed as JSON");
  app.add_option("--out", out_dir, "Output directory (output.dir)");
  app.add_option("--seed", seed, "Top-level seed");
  for (const auto& name : cli::command_names()) app.add_subcommand(name)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    cli::json user = config_path.empty() ? cli::json::object() : cli::load_config_file(config_path);
    cli::json cfg = cli::resolve_config(user);
    for (const auto& o : overrides) cli::apply_override(cfg, o);
    if (seed) cfg["seed"] = *seed;
    if (!out_dir.empty()) cfg["output"]["dir"] = out_dir;
    const auto rc = cli::parse_run_config(cfg);
    const auto res = cli::run_command(command, rc, cli::env_threads());
    for (const auto& f : res.files) std::cout << (rc.out / f).string() << '\n';
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "cnmgp " << command << ": " << e.what() << '\n';
    return cli::exit_code_for(e);
  }
}
