#pragma once

#include <string>
#include <vector>

#include "sncl/config.hpp"
#include "sncl/trainer.hpp"

namespace sncl {

struct RunResult {
    std::string method;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    RunMetrics metrics;
};

/// One seeded run of one method; fully determined by (cfg, method, seed).
RunResult run_single(const ExperimentConfig& cfg, const std::string& method, std::uint64_t seed);

/// Executes every method x seed cell of the config on a small worker pool,
/// writes per-run metrics JSON, the aggregate CSV and the SVG charts.
/// Returns a process exit code (0 = all runs ok).
int run_experiment(const ExperimentConfig& cfg);

/// Grid search over the config's `grid.*` lists; writes sweep.csv ranked by
/// mean average accuracy and prints the best cell.
int run_sweep(const ExperimentConfig& cfg);

/// Re-reads the metrics JSON files under a run directory, prints the
/// accuracy matrix, forgetting and final sparsity, and regenerates charts.
int run_report(const std::string& dir);

// Exposed for tests.
std::string metrics_to_json(const ExperimentConfig& cfg, const RunResult& result);
RunResult metrics_from_json(const std::string& text);
std::string aggregate_csv_row(const ExperimentConfig& cfg, const std::string& method,
                              const std::vector<RunResult>& results);

inline constexpr const char* kAggregateHeader =
    "protocol,method,buffer,seed_count,avg_acc_mean,avg_acc_std,forgetting_mean";

} // namespace sncl
