// corner-ma <scenario> --config <file> [--out <dir>]
#include <CLI11.hpp>

#include <iostream>

#include "corner_ma/scenario.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Monge-Ampere corner asymptotics toolkit"};
  std::string scenario, config_path, out_dir;
  app.add_option("scenario", scenario, "ledger | solve | analyze | corner_pipeline | expansion_check | verify3d")
      ->required();
  app.add_option("--config", config_path, "JSON scenario config")->required()->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "output directory (overrides output_dir)");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  corner_ma::ScenarioConfig config;
  try {
    config = corner_ma::load_config(config_path);
    if (scenario != corner_ma::to_string(config.scenario))
      throw corner_ma::InvalidArgument("config describes scenario '" +
                                       std::string(corner_ma::to_string(config.scenario)) +
                                       "', not '" + scenario + "'");
    if (!out_dir.empty()) config.output_dir = out_dir;
  } catch (const std::exception& e) {
    std::cerr << "corner-ma: " << e.what() << "\n";
    return 1;
  }

  const corner_ma::RunResult r = corner_ma::run(config);
  std::cout << r.summary.dump(2) << "\n";
  if (r.status == corner_ma::RunStatus::Error)
    std::cerr << "corner-ma: stage '" << r.failed_stage.value_or("?") << "' failed: " << r.message << "\n";
  return r.exit_code();
}
