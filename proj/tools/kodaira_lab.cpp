#include <chrono>
#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "kodaira/experiment.hpp"

namespace {

namespace ex = kodaira::experiment;

constexpr int exit_config = 2;
constexpr int exit_numerical = 3;

int threads_from_env() {
  const char* env = std::getenv("TOOL_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1 || v > 64) throw ex::ConfigError("TOOL_THREADS must be an integer in [1, 64]", "TOOL_THREADS");
  return static_cast<int>(v);
}

int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const ex::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return exit_config;
  } catch (const kodaira::ArgumentError& e) {
    std::cerr << "invalid parameter: " << e.what() << '\n';
    return exit_config;
  } catch (const kodaira::DomainError& e) {
    std::cerr << "invalid parameter: " << e.what() << '\n';
    return exit_config;
  } catch (const kodaira::ResourceError& e) {
    std::cerr << "problem too large: " << e.what() << '\n';
    return exit_config;
  } catch (const kodaira::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return exit_numerical;
  } catch (const kodaira::AccuracyError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return exit_numerical;
  } catch (const kodaira::InvariantError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return exit_numerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Heat kernel and Kodaira Laplacian experiments"};
  app.set_version_flag("--version", ex::tool_version);
  app.require_subcommand(1);

  std::string run_config, out_dir = ".";
  int threads = 0;
  auto* run = app.add_subcommand("run", "Run an experiment config and write CSV outputs plus manifest.json");
  run->add_option("config", run_config, "Experiment config (JSON)")->required();
  run->add_option("--out", out_dir, "Output directory");
  run->add_option("--threads", threads, "Worker threads (falls back to TOOL_THREADS)")->check(CLI::Range(1, 64));

  std::string validate_config;
  auto* validate = app.add_subcommand("validate", "Check a config without running it");
  validate->add_option("config", validate_config, "Experiment config (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_config;
  }

  if (*validate)
    return guarded([&] {
      const auto cfg = ex::load_config(validate_config);
      std::cout << "OK\n" << cfg.normalized.dump(2) << '\n';
      return 0;
    });

  return guarded([&] {
    const auto cfg = ex::load_config(run_config);
    const int workers = threads > 0 ? threads : threads_from_env();
    const auto start = std::chrono::steady_clock::now();
    const auto files = ex::run(cfg, workers);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    ex::write_outputs(out_dir, files, ex::manifest(cfg, files, wall, workers));
    for (const auto& f : files) std::cout << (std::filesystem::path(out_dir) / f.name).string() << '\n';
    return 0;
  });
}
