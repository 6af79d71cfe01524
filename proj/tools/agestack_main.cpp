#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "agestack/cli_io.hpp"
#include "agestack/errors.hpp"
#include "agestack/version.hpp"

namespace {

void add_common_options(CLI::App* cmd, agestack::CliOptions& options) {
    cmd->add_option("--config", options.config_path, "experiment or generator config file")
        ->required();
    cmd->add_option("--seed", options.seed, "master seed; every fit derives from it")
        ->required();
    cmd->add_option("--out", options.out_dir, "output directory (overrides the config)");
    cmd->add_option("--jobs", options.jobs, "worker threads for independent fits")
        ->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-level stacked age prediction across imaging sites"};
    app.set_version_flag("--version", std::string(agestack::kVersion));
    app.require_subcommand(1);

    agestack::CliOptions synth_opt, run_opt, sweep_opt, privacy_opt, regions_opt;

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic multi-site benchmark");
    add_common_options(synth, synth_opt);
    CLI::App* run =
        app.add_subcommand("run", "leave-one-site-out evaluation of the configured setups");
    add_common_options(run, run_opt);
    CLI::App* sweep =
        app.add_subcommand("sweep", "evaluation over growing training-site subsets");
    add_common_options(sweep, sweep_opt);
    CLI::App* privacy =
        app.add_subcommand("privacy", "site-identification probe on shared features");
    add_common_options(privacy, privacy_opt);
    privacy->add_option("--feature-space", privacy_opt.feature_space,
                        "features the probe sees: gmv|region_mean|l0|l0_oos");
    CLI::App* regions =
        app.add_subcommand("regions", "per-region age correlation of shared features");
    add_common_options(regions, regions_opt);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (synth->parsed()) {
            agestack::cmd_synth(synth_opt);
        } else if (run->parsed()) {
            agestack::cmd_run(run_opt);
        } else if (sweep->parsed()) {
            agestack::cmd_sweep(sweep_opt);
        } else if (privacy->parsed()) {
            agestack::cmd_privacy(privacy_opt);
        } else if (regions->parsed()) {
            agestack::cmd_regions(regions_opt);
        }
        return 0;
    } catch (const agestack::parse_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const agestack::validation_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const agestack::config_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
