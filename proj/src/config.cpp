#include "sncl/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "sncl/trainer.hpp"

namespace sncl {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ',')) {
        part = trim(part);
        if (!part.empty()) out.push_back(part);
    }
    return out;
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + value + "'");
    }
}

long parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const long v = std::stol(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected an integer, got '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw ConfigError(key + ": expected a boolean, got '" + value + "'");
}

} // namespace

void ExperimentConfig::set(const std::string& key, const std::string& value) {
    if (key == "protocol") {
        protocol = value;
    } else if (key == "data") {
        data = value;
    } else if (key == "data_dir") {
        data_dir = value;
    } else if (key == "method") {
        methods = split_list(value);
    } else if (key == "buffer") {
        buffer = static_cast<int>(parse_int(key, value));
    } else if (key == "seeds") {
        seeds.clear();
        for (const std::string& s : split_list(value)) {
            seeds.push_back(static_cast<std::uint64_t>(parse_int(key, s)));
        }
    } else if (key == "epochs") {
        epochs = static_cast<int>(parse_int(key, value));
    } else if (key == "scale") {
        if (value != "reduced" && value != "full") {
            throw ConfigError("scale must be reduced or full, got '" + value + "'");
        }
        scale = value;
        if (scale == "full") {
            // Paper-scale stream sizes; later keys may still override.
            tasks = 20;
            train_per_task = 0;
            test_per_task = 0;
            m360_samples_per_pair = 6000;
            m360_test_per_digit = 0;
        }
    } else if (key == "out") {
        out = value;
    } else if (key == "lr") {
        lr = parse_double(key, value);
    } else if (key == "gate_lr") {
        gate_lr = parse_double(key, value);
    } else if (key == "grad_clip") {
        grad_clip = parse_double(key, value);
    } else if (key == "batch") {
        batch = static_cast<int>(parse_int(key, value));
    } else if (key == "hidden") {
        hidden = static_cast<int>(parse_int(key, value));
    } else if (key == "alpha") {
        alpha = parse_double(key, value);
    } else if (key == "beta") {
        beta = parse_double(key, value);
    } else if (key == "gamma") {
        gamma = parse_double(key, value);
    } else if (key == "eta") {
        eta = parse_double(key, value);
    } else if (key == "tasks") {
        tasks = static_cast<int>(parse_int(key, value));
    } else if (key == "train_per_task") {
        train_per_task = static_cast<std::size_t>(parse_int(key, value));
    } else if (key == "test_per_task") {
        test_per_task = static_cast<std::size_t>(parse_int(key, value));
    } else if (key == "eval_every") {
        eval_every = static_cast<int>(parse_int(key, value));
    } else if (key == "prune_threshold") {
        prune_threshold = parse_double(key, value);
    } else if (key == "per_sample_gates") {
        per_sample_gates = parse_bool(key, value);
    } else if (key == "sampler") {
        sampler = value;
    } else if (key == "refresh_losses") {
        refresh_losses = parse_bool(key, value);
    } else if (key == "lrs_admission") {
        lrs_admission = value;
    } else if (key == "lrs_subsample") {
        lrs_subsample = parse_double(key, value);
    } else if (key == "identity_first") {
        identity_first = parse_bool(key, value);
    } else if (key == "synth_classes") {
        synth_classes = static_cast<int>(parse_int(key, value));
    } else if (key == "synth_dim") {
        synth_dim = static_cast<int>(parse_int(key, value));
    } else if (key == "synth_spread") {
        synth_spread = parse_double(key, value);
    } else if (key == "synth_train_per_class") {
        synth_train_per_class = static_cast<int>(parse_int(key, value));
    } else if (key == "synth_test_per_class") {
        synth_test_per_class = static_cast<int>(parse_int(key, value));
    } else if (key == "synth_modes_per_class") {
        synth_modes_per_class = static_cast<int>(parse_int(key, value));
    } else if (key == "split_classes_per_task") {
        split_classes_per_task = static_cast<int>(parse_int(key, value));
    } else if (key == "mnist360_samples_per_pair") {
        m360_samples_per_pair = static_cast<std::size_t>(parse_int(key, value));
    } else if (key == "mnist360_test_per_digit") {
        m360_test_per_digit = static_cast<std::size_t>(parse_int(key, value));
    } else if (key == "dump_buffer") {
        dump_buffer = parse_bool(key, value);
    } else if (key == "save_model") {
        save_model = parse_bool(key, value);
    } else if (key.rfind("grid.", 0) == 0) {
        const std::string param = key.substr(5);
        if (param != "alpha" && param != "beta" && param != "gamma" && param != "eta" &&
            param != "lr") {
            throw ConfigError("unknown sweep parameter '" + param + "'");
        }
        std::vector<double> values;
        for (const std::string& s : split_list(value)) values.push_back(parse_double(key, s));
        if (values.empty()) throw ConfigError("empty grid for " + key);
        grids[param] = std::move(values);
    } else {
        throw ConfigError("unknown config key '" + key + "'");
    }
}

void ExperimentConfig::validate() const {
    if (protocol != "pmnist" && protocol != "rmnist" && protocol != "split" &&
        protocol != "mnist360") {
        throw ConfigError("unknown protocol '" + protocol + "'");
    }
    if (data != "synth" && data != "idx") throw ConfigError("data must be synth or idx");
    if (methods.empty()) throw ConfigError("at least one method is required");
    for (const std::string& m : methods) method_from_name(m); // throws on junk
    if (buffer <= 0) throw ConfigError("buffer must be positive");
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(lr > 0)) throw ConfigError("lr must be positive");
    if (!(gate_lr > 0)) throw ConfigError("gate_lr must be positive");
    if (batch < 2) throw ConfigError("batch must be at least 2");
    if (hidden < 1) throw ConfigError("hidden must be positive");
    if (tasks < 1) throw ConfigError("tasks must be >= 1");
    if (!(prune_threshold > 0)) throw ConfigError("prune_threshold must be positive");
    if (sampler != "auto" && sampler != "reservoir" && sampler != "lrs") {
        throw ConfigError("sampler must be auto, reservoir or lrs");
    }
    if (lrs_admission != "reservoir" && lrs_admission != "batch") {
        throw ConfigError("lrs_admission must be reservoir or batch");
    }
    if (lrs_subsample <= 0 || lrs_subsample > 1) {
        throw ConfigError("lrs_subsample must be in (0, 1]");
    }
    if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
    if (synth_classes < 2) throw ConfigError("synth_classes must be >= 2");
    if (data == "synth" && protocol != "split" && synth_dim < 4) {
        throw ConfigError("synth_dim too small");
    }
}

ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    ExperimentConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            cfg.set(key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (cfg.data_dir.empty()) {
        if (const char* env = std::getenv("SNCL_DATA_DIR")) cfg.data_dir = env;
    }
    return cfg;
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("override must look like key=value, got '" + assignment + "'");
    }
    cfg.set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

} // namespace sncl
