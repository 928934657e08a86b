#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kvsim/config.hpp"
#include "kvsim/errors.hpp"
#include "kvsim/experiment.hpp"

namespace {

const std::vector<std::string> kAllPolicies = {"LRU_GPU_ONLY", "LRU_REACTIVE_HICACHE", "KVFLOW"};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"kvsim: workflow-aware KV-cache simulator"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<uint64_t> seed;
    std::optional<std::string> out_dir;
    std::vector<std::string> policies;
    std::string axis;
    std::vector<double> values;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("config", config_path, "experiment config file (JSON)")->required();
        cmd->add_option("--seed", seed, "override the config seed");
        cmd->add_option("--out-dir", out_dir, "override the config output directory");
    };

    CLI::App* cmd_run = app.add_subcommand("run", "simulate once; writes trace/aggregate/transfers CSVs");
    add_common(cmd_run);

    CLI::App* cmd_compare =
        app.add_subcommand("compare", "run the identical workload+seed under several policies");
    add_common(cmd_compare);
    cmd_compare->add_option("--policies", policies, "two or more of LRU_GPU_ONLY, LRU_REACTIVE_HICACHE, KVFLOW")
        ->required();

    CLI::App* cmd_sweep = app.add_subcommand("sweep", "one compare per value of a numeric config axis");
    add_common(cmd_sweep);
    cmd_sweep->add_option("--axis", axis, "config key to vary")->required();
    cmd_sweep->add_option("--values", values, "axis values")->required();
    cmd_sweep->add_option("--policies", policies, "policies per cell (default: all three)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        kvsim::ExperimentConfig cfg = kvsim::ExperimentConfig::from_file(config_path);
        if (seed) cfg.seed = *seed;
        if (out_dir) cfg.out_dir = *out_dir;
        if (cmd_run->parsed()) {
            kvsim::RunOutput out = kvsim::run_one(cfg, cfg.out_dir);
            std::cout << kvsim::aggregate_csv_header() << "\n"
                      << kvsim::aggregate_csv_row(kvsim::policy_name(cfg.scheduler.policy),
                                                  cfg.workload.label(), cfg.seed, out.agg)
                      << "\n";
        } else if (cmd_compare->parsed()) {
            auto rows = kvsim::run_compare(cfg, policies, cfg.out_dir);
            std::cout << kvsim::compare_csv_header() << "\n";
            for (const auto& row : rows) std::cout << kvsim::compare_csv_row(cfg, row) << "\n";
        } else {
            auto use = policies.empty() ? kAllPolicies : policies;
            auto rows = kvsim::run_sweep(cfg, axis, values, use, cfg.out_dir);
            std::cout << "axis,value," << kvsim::compare_csv_header() << "\n";
            for (const auto& row : rows) {
                kvsim::ExperimentConfig cell = cfg;
                kvsim::apply_axis(cell, row.axis, row.value);
                std::cout << row.axis << "," << kvsim::csv_double(row.value) << ","
                          << kvsim::compare_csv_row(cell, row.cmp) << "\n";
            }
        }
        return 0;
    } catch (const kvsim::SimError& e) {
        std::cerr << "error: " << e.what() << "\n";
        switch (e.code()) {
            case kvsim::ErrorCode::ConfigError:
            case kvsim::ErrorCode::UnknownAxis:
                return 2;
            default:
                return 3;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
