#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sncl/experiment.hpp"

namespace {

void apply_cli_overrides(sncl::ExperimentConfig& cfg, const std::string& seeds,
                         const std::string& out, int buffer, const std::string& method,
                         const std::string& scale, const std::vector<std::string>& sets) {
    if (!seeds.empty()) cfg.set("seeds", seeds);
    if (!out.empty()) cfg.set("out", out);
    if (buffer > 0) cfg.set("buffer", std::to_string(buffer));
    if (!method.empty()) cfg.set("method", method);
    if (!scale.empty()) cfg.set("scale", scale);
    for (const std::string& kv : sets) sncl::apply_override(cfg, kv);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"sncl: continual-learning experiment runner"};
    app.require_subcommand(1);

    std::string config_path, seeds, out, method, scale, report_dir;
    int buffer = 0;
    std::vector<std::string> sets;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "key = value config file")->required();
        cmd->add_option("--seed", seeds, "comma-separated seed list override");
        cmd->add_option("--out", out, "output directory override");
        cmd->add_option("--buffer", buffer, "replay buffer capacity override");
        cmd->add_option("--method", method, "method list override (sgd,er,der,sncl)");
        cmd->add_option("--scale", scale, "reduced or full");
        cmd->add_option("--set", sets, "extra key=value overrides")->take_all();
    };

    CLI::App* run_cmd = app.add_subcommand("run", "execute one experiment per seed");
    add_common(run_cmd);
    CLI::App* sweep_cmd = app.add_subcommand("sweep", "grid-search the grid.* config keys");
    add_common(sweep_cmd);
    CLI::App* report_cmd = app.add_subcommand("report", "summarize an existing run directory");
    report_cmd->add_option("dir", report_dir, "run directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(report_cmd)) return sncl::run_report(report_dir);
        sncl::ExperimentConfig cfg = sncl::parse_config_file(config_path);
        apply_cli_overrides(cfg, seeds, out, buffer, method, scale, sets);
        if (app.got_subcommand(run_cmd)) return sncl::run_experiment(cfg);
        return sncl::run_sweep(cfg);
    } catch (const sncl::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
