#include <iostream>

#include <CLI11.hpp>

#include "fwm/cli.hpp"

int main(int argc, char** argv) {
  using namespace fwm::cli;
  CLI::App app{"Four-wave-mixing pair source simulator"};
  app.require_subcommand(1);

  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  app.add_option("--config", config, "YAML run configuration")->required()->check(CLI::ExistingFile);
  auto* out_opt = app.add_option("--out", out, "output directory (default: config `out`, then $FWMSIM_OUT)");
  auto* seed_opt = app.add_option("--seed", seed, "random seed (overrides the config)");
  auto* workers_opt =
      app.add_option("--workers", workers, "worker threads")->check(CLI::Range(1u, 1024u));
  app.fallthrough();

  for (const char* name : {"scan", "tags", "analyze", "tomo", "sweep"}) app.add_subcommand(name);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  const std::string scenario = app.get_subcommands().front()->get_name();

  Overrides ov;
  if (*out_opt) ov.out_dir = out;
  if (*seed_opt) ov.seed = seed;
  if (*workers_opt) ov.workers = workers;

  RunConfig cfg;
  try {
    cfg = load_config(config, ov);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(std::current_exception());
  }
  if (cfg.scenario != scenario) {
    std::cerr << "error: config scenario '" << cfg.scenario << "' does not match subcommand '"
              << scenario << "'\n";
    return kValidation;
  }
  return run(cfg, std::cout, std::cerr);
}
