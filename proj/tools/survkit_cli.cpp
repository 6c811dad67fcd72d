// survkit: run a declarative analysis config.

#include <iostream>

#include <CLI11.hpp>

#include "survkit/pipeline.hpp"

int main(int argc, char** argv) {
  namespace sp = survkit::pipeline;
  CLI::App app{"Survival analysis pipeline for counting-process cohorts"};
  app.set_version_flag("--version", std::string(sp::version));

  std::string config_path;
  std::string output_dir;
  std::uint64_t seed = 0;
  bool check = false;
  bool quiet = false;
  int verbose = 0;
  app.add_option("config,-c,--config", config_path, "Analysis config (JSON)")->required();
  auto* out_opt = app.add_option("-o,--output-dir", output_dir, "Override the config's output directory");
  auto* seed_opt = app.add_option("-s,--seed", seed, "Override the config's seed");
  app.add_flag("-v,--verbose", verbose, "More log output (repeat for warnings)");
  app.add_flag("-q,--quiet", quiet, "Only report errors");
  app.add_flag("--check", check, "Validate config and inputs without writing output");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : sp::config_error;
  }

  sp::RunOptions options;
  if (*out_opt) options.output_dir = output_dir;
  if (*seed_opt) options.seed = seed;
  options.verbosity = quiet ? 0 : 1 + verbose;
  options.check_only = check;

  try {
    const auto config = sp::read_config_file(config_path);
    const auto result = sp::run_pipeline(config, options, std::cerr);
    return result.exit_code;
  } catch (const survkit::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return sp::config_error;
  } catch (const survkit::DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return sp::data_error;
  }
}
