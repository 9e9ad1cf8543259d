#include <iostream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "mare/mare.hpp"

namespace {

// Loads a config, printing the schema error JSON on failure.
std::optional<mare::RunSpec> load_or_report(const std::string& path) {
    try {
        return mare::load_config(path);
    } catch (const std::exception& e) {
        std::cout << mare::error_json(e).dump() << "\n";
        return std::nullopt;
    }
}

}  // namespace

int main(int argc, char** argv) {
    spdlog::set_default_logger(spdlog::stderr_color_mt("mare"));
    spdlog::set_pattern("[%H:%M:%S] [%l] %v");

    CLI::App app{"Magnetization-resolved master equation simulator"};
    app.require_subcommand(1);
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "Only log warnings and errors");

    std::string config;
    auto* run = app.add_subcommand("run", "Run the protocol described by a config file");
    run->add_option("config", config, "INI config")->required();

    auto* validity = app.add_subcommand("validity", "Report the Markov and secular validity numbers");
    validity->add_option("config", config, "INI config")->required();

    mare::OracleOptions oracle_opts;
    auto* oracle = app.add_subcommand("oracle", "Check the analytic propagator against the ODE oracle");
    oracle->add_option("--grid-size", oracle_opts.grid_size, "Effective spin count N' (even, <= 198)");
    oracle->add_option("--trials", oracle_opts.trials, "Number of random trials");
    oracle->add_option("--seed", oracle_opts.seed, "Seed for the trial generator");
    oracle->add_flag("--corrupt-rate", oracle_opts.corrupt_rate, "Perturb one engine rate (fault injection)");

    std::string pattern;
    auto* sweep = app.add_subcommand("sweep", "Run every config matching a glob on a worker pool (MARE_THREADS)");
    sweep->add_option("glob", pattern, "Config glob, quoted")->required();

    CLI11_PARSE(app, argc, argv);
    if (quiet) spdlog::set_level(spdlog::level::warn);

    if (*run) {
        const auto spec = load_or_report(config);
        return spec ? mare::cmd_run(*spec) : 1;
    }
    if (*validity) {
        const auto spec = load_or_report(config);
        return spec ? mare::cmd_validity(*spec) : 1;
    }
    if (*oracle) return mare::cmd_oracle(oracle_opts);
    if (*sweep) return mare::cmd_sweep(pattern);
    return 1;
}
