#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "rvrs/cli/experiments.hpp"

namespace {

// Exit codes: 0 ok, 1 runtime failure, 2 usage or configuration error.
int run(int argc, char** argv) {
  CLI::App app{"Rejection-variational training experiments"};
  std::string experiment;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> workers;
  std::string names;
  for (const auto& n : rvrs::cli::experiment_names()) names += (names.empty() ? "" : ", ") + n;
  app.add_option("experiment", experiment, "one of: " + names)->required();
  app.add_option("--config", config_path, "key=value configuration file")->required();
  app.add_option("--seed", seed, "master seed (overrides 'seed')");
  app.add_option("--out", out, "output directory (overrides 'output_dir')");
  app.add_option("--workers", workers, "worker threads (overrides 'workers')")->check(CLI::PositiveNumber);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    rvrs::cli::RunContext ctx;
    ctx.experiment = experiment;
    ctx.config = rvrs::cli::Config::load(config_path);
    if (seed) ctx.config.set("seed", std::to_string(*seed));
    if (out) ctx.config.set("output_dir", *out);
    if (workers) ctx.config.set("workers", std::to_string(*workers));
    ctx.seed = static_cast<std::uint64_t>(ctx.config.get_int("seed", 0));
    ctx.workers = static_cast<int>(ctx.config.get_int("workers", 1));
    ctx.out = ctx.config.get_string("output_dir", "results/" + experiment);
    if (ctx.config.get_int("seed", 0) < 0) throw rvrs::ConfigError("seed must be non-negative");
    if (ctx.workers < 1) throw rvrs::ConfigError("workers must be at least 1");
    rvrs::cli::run_experiment(ctx);
    std::cout << (ctx.out / "summary.json").string() << '\n';
    return 0;
  } catch (const rvrs::ConfigError& e) {
    std::cerr << "rvrs: configuration error: " << e.what() << '\n';
    return 2;
  } catch (const rvrs::DivergedError& e) {
    std::cerr << "rvrs: diverged at iteration " << e.iteration() << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "rvrs: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
