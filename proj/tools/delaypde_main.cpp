#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "delaypde/cli.hpp"
#include "delaypde/config.hpp"
#include "delaypde/errors.hpp"

namespace {

struct SubArgs {
    std::string config_path;
    std::string out_dir;
    int export_sdpa = 0;
};

void add_common(CLI::App* sub, SubArgs& args) {
    sub->add_option("--config", args.config_path, "path to the run configuration (INI)")
        ->required();
    sub->add_option("--out", args.out_dir, "output directory (overrides [output] directory)");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"boundary stabilization toolkit for reaction-diffusion systems with state delay"};
    app.require_subcommand(1);

    SubArgs args;
    CLI::App* eigs = app.add_subcommand("eigs", "compute the modal basis and bound report");
    CLI::App* synth = app.add_subcommand("synth", "synthesize or verify stabilizing gains");
    CLI::App* certify = app.add_subcommand("certify", "search for a stability certificate");
    CLI::App* simulate = app.add_subcommand("simulate", "run the closed-loop simulation");
    CLI::App* sweep = app.add_subcommand("sweep", "simulate across the configured delay list");
    for (CLI::App* sub : {eigs, synth, certify, simulate, sweep}) add_common(sub, args);
    certify->add_option("--export-sdpa", args.export_sdpa,
                        "also write the feasibility problem at this observer order (.dat-s)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : delaypde::cli::exit_validation;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        auto cfg = delaypde::config::load(args.config_path);
        delaypde::cli::CommandOptions opt;
        opt.out_override = args.out_dir;
        opt.export_sdpa = args.export_sdpa;
        return delaypde::cli::dispatch(command, cfg, opt, std::cout);
    } catch (const delaypde::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return delaypde::cli::exit_validation;
    } catch (const delaypde::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return delaypde::cli::exit_numerical;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return delaypde::cli::exit_numerical;
    }
}
