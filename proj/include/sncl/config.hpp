#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sncl/common.hpp"

namespace sncl {

/// Everything a run needs, parsed from a key=value config file plus
/// command-line overrides. Unknown keys are rejected. The grammar is
/// documented in the README; later assignments win.
struct ExperimentConfig {
    std::string protocol = "pmnist"; // pmnist | rmnist | split | mnist360
    std::string data = "synth";      // synth | idx
    std::string data_dir;            // IDX cache; falls back to $SNCL_DATA_DIR
    std::vector<std::string> methods = {"sncl"};
    int buffer = 200;
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
    int epochs = 1;
    std::string scale = "reduced"; // reduced | full
    std::string out = "out";

    double lr = 0.1;
    double gate_lr = 10.0; // log_lambda step size
    double grad_clip = 12.0;
    int batch = 32;
    int hidden = 100;
    std::optional<double> alpha, beta, gamma, eta; // override a method's free weights

    int tasks = 5;
    std::size_t train_per_task = 2000;
    std::size_t test_per_task = 1000;
    int eval_every = 100;
    double prune_threshold = 0.05;
    bool per_sample_gates = true;
    std::string sampler = "auto";          // auto | reservoir | lrs
    bool refresh_losses = true;
    std::string lrs_admission = "reservoir"; // reservoir | batch
    double lrs_subsample = 1.0;
    bool identity_first = false;

    int synth_classes = 10;
    int synth_dim = 784;
    double synth_spread = 0.45;
    int synth_train_per_class = 1200;
    int synth_test_per_class = 250;
    // Each class is a union of this many blob modes, so a small replay
    // buffer cannot cover a class with a handful of samples.
    int synth_modes_per_class = 4;

    int split_classes_per_task = 2;
    std::size_t m360_samples_per_pair = 500;
    std::size_t m360_test_per_digit = 100;

    bool dump_buffer = false;
    bool save_model = false;

    // sweep grids: parameter name -> values; valid names: alpha, beta,
    // gamma, eta, lr.
    std::map<std::string, std::vector<double>> grids;

    void set(const std::string& key, const std::string& value);
    void validate() const;
};

ExperimentConfig parse_config_file(const std::string& path);

/// Applies "key=value" (as passed to --set) on top of a parsed config.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

} // namespace sncl
