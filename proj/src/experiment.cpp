#include "sncl/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "sncl/datasets.hpp"
#include "sncl/svg.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace sncl {

namespace {

struct BaseData {
    LabeledSetPtr train;
    LabeledSetPtr test;
};

BaseData build_base(const ExperimentConfig& cfg, std::uint64_t seed) {
    if (cfg.data == "idx") {
        if (cfg.data_dir.empty()) {
            throw ConfigError("data = idx needs data_dir or $SNCL_DATA_DIR");
        }
        const fs::path dir(cfg.data_dir);
        auto train = std::make_shared<LabeledSet>(
            load_idx((dir / "train-images-idx3-ubyte").string(),
                     (dir / "train-labels-idx1-ubyte").string()));
        auto test = std::make_shared<LabeledSet>(
            load_idx((dir / "t10k-images-idx3-ubyte").string(),
                     (dir / "t10k-labels-idx1-ubyte").string()));
        return {train, test};
    }
    // Synthetic stand-in with the MNIST geometry; the split shares centers.
    // Every class is a union of several blob modes (handwriting-style
    // variability), so replaying a few stored samples cannot cover it.
    const int modes = std::max(1, cfg.synth_modes_per_class);
    auto [train, test] = synth_blob_split(
        cfg.synth_classes * modes, std::max(1, cfg.synth_train_per_class / modes),
        std::max(1, cfg.synth_test_per_class / modes), cfg.synth_dim, cfg.synth_spread,
        mix_seed(seed, 0xda7a));
    for (int& y : train.labels) y %= cfg.synth_classes;
    for (int& y : test.labels) y %= cfg.synth_classes;
    return {std::make_shared<LabeledSet>(std::move(train)),
            std::make_shared<LabeledSet>(std::move(test))};
}

TaskStream build_stream(const ExperimentConfig& cfg, const BaseData& base, std::uint64_t seed) {
    const std::uint64_t stream_seed = mix_seed(seed, 0x57e3);
    StreamOptions opt;
    opt.train_per_task = cfg.train_per_task;
    opt.test_per_task = cfg.test_per_task;
    opt.identity_first = cfg.identity_first;
    if (cfg.protocol == "pmnist") {
        return build_pmnist(base.train, base.test, cfg.tasks, stream_seed, opt);
    }
    if (cfg.protocol == "rmnist") {
        return build_rmnist(base.train, base.test, cfg.tasks, stream_seed, opt);
    }
    if (cfg.protocol == "split") {
        const int classes = base.train->num_classes();
        std::vector<std::vector<int>> sets;
        for (int c = 0; c < classes; c += cfg.split_classes_per_task) {
            std::vector<int> group;
            for (int k = c; k < std::min(classes, c + cfg.split_classes_per_task); ++k) {
                group.push_back(k);
            }
            sets.push_back(std::move(group));
        }
        return build_split(base.train, base.test, sets, stream_seed, opt);
    }
    if (cfg.protocol == "mnist360") {
        return build_mnist360(base.train, base.test, stream_seed, cfg.m360_samples_per_pair,
                              cfg.m360_test_per_digit);
    }
    throw ConfigError("unknown protocol '" + cfg.protocol + "'");
}

MethodConfig method_config(const ExperimentConfig& cfg, Method m) {
    MethodConfig mc = MethodConfig::preset(m);
    // Overrides touch only the weights the method keeps structurally free.
    switch (m) {
        case Method::kSgd:
            break;
        case Method::kEr:
            if (cfg.alpha) mc.weights.alpha = *cfg.alpha;
            break;
        case Method::kDer:
            if (cfg.alpha) mc.weights.alpha = *cfg.alpha;
            if (cfg.beta) mc.weights.beta = *cfg.beta;
            break;
        case Method::kSncl:
            if (cfg.alpha) mc.weights.alpha = *cfg.alpha;
            if (cfg.beta) mc.weights.beta = *cfg.beta;
            if (cfg.gamma) mc.weights.gamma = *cfg.gamma;
            if (cfg.eta) mc.weights.eta = *cfg.eta;
            break;
    }
    if (cfg.sampler == "reservoir" && mc.sampler != SamplerKind::kNone) {
        mc.sampler = SamplerKind::kReservoir;
    } else if (cfg.sampler == "lrs" && mc.sampler != SamplerKind::kNone) {
        mc.sampler = SamplerKind::kLrs;
    }
    mc.validate();
    return mc;
}

} // namespace

RunResult run_single(const ExperimentConfig& cfg, const std::string& method, std::uint64_t seed) {
    RunResult result;
    result.method = method;
    result.seed = seed;
    try {
        const Method m = method_from_name(method);
        const MethodConfig mc = method_config(cfg, m);
        const BaseData base = build_base(cfg, seed);
        const TaskStream stream = build_stream(cfg, base, seed);

        MlpConfig model_cfg;
        model_cfg.input_dim = stream.input_dim;
        model_cfg.hidden = cfg.hidden;
        model_cfg.classes = stream.num_classes;
        model_cfg.gated = mc.gates_on;
        model_cfg.prune_threshold = cfg.prune_threshold;
        model_cfg.per_sample_gates = cfg.per_sample_gates;
        Rng init_rng(mix_seed(seed, 0x1417));
        GatedMlp model(model_cfg, init_rng);

        std::unique_ptr<ReplayBuffer> buffer;
        if (mc.sampler != SamplerKind::kNone) buffer = std::make_unique<ReplayBuffer>(cfg.buffer);

        TrainOptions opt;
        opt.lr = cfg.lr;
        opt.gate_lr = cfg.gate_lr;
        opt.grad_clip = cfg.grad_clip;
        opt.batch_size = cfg.batch;
        opt.epochs = cfg.epochs;
        opt.eval_every = cfg.eval_every;
        opt.refresh_losses = cfg.refresh_losses;
        opt.lrs_reservoir_admission = cfg.lrs_admission == "reservoir";
        opt.lrs_subsample = cfg.lrs_subsample;

        result.metrics = train_stream(model, stream, mc, buffer.get(), seed, opt);
        result.ok = true;

        if (cfg.dump_buffer && buffer) {
            const fs::path dir = fs::path(cfg.out) / (cfg.methods.size() > 1 ? method : "");
            fs::create_directories(dir);
            std::ofstream dump(dir / ("buffer_" + std::to_string(seed) + ".jsonl"));
            buffer->dump_jsonl(dump);
        }
        if (cfg.save_model) {
            const fs::path dir = fs::path(cfg.out) / (cfg.methods.size() > 1 ? method : "");
            fs::create_directories(dir);
            model.save((dir / ("model_" + std::to_string(seed) + ".json")).string());
        }
    } catch (const Error& e) {
        result.ok = false;
        result.error = e.what();
    }
    return result;
}

// ---------------------------------------------------------------------------
// Serialization

std::string metrics_to_json(const ExperimentConfig& cfg, const RunResult& result) {
    ordered_json j;
    j["schema"] = "sncl-run-metrics/1";
    j["protocol"] = cfg.protocol;
    j["method"] = result.method;
    j["buffer"] = cfg.buffer;
    j["seed"] = result.seed;
    j["status"] = result.ok ? "ok" : "failed";
    if (!result.ok) {
        j["error"] = result.error;
        return j.dump(2) + "\n";
    }
    const RunMetrics& m = result.metrics;
    j["accuracy"] = m.accuracy;
    j["avg_accuracy"] = m.avg_accuracy;
    j["forgetting"] = m.forgetting;
    j["avg_forgetting"] = m.avg_forgetting;
    ordered_json sparsity = ordered_json::array();
    for (const SparsitySnapshot& snap : m.sparsity) {
        ordered_json layers = ordered_json::array();
        for (const LayerSparsity& l : snap.layers) {
            layers.push_back({{"layer", l.layer_index},
                              {"active", l.active},
                              {"pruned", l.pruned},
                              {"mean_inv_lambda", l.mean_inv_lambda}});
        }
        sparsity.push_back({{"pruned_fraction", snap.pruned_fraction}, {"layers", layers}});
    }
    j["sparsity"] = std::move(sparsity);
    j["steps"] = m.steps;
    j["replay_steps"] = m.replay_steps;
    j["stale_refreshes"] = m.stale_refreshes;
    return j.dump(2) + "\n";
}

RunResult metrics_from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw ParseError(std::string("invalid metrics json: ") + e.what());
    }
    if (j.value("schema", "") != "sncl-run-metrics/1") {
        throw ParseError("unsupported metrics schema");
    }
    RunResult r;
    r.method = j.value("method", "");
    r.seed = j.value("seed", 0ull);
    r.ok = j.value("status", "") == "ok";
    if (!r.ok) {
        r.error = j.value("error", "");
        return r;
    }
    r.metrics.accuracy = j.at("accuracy").get<std::vector<std::vector<double>>>();
    r.metrics.avg_accuracy = j.at("avg_accuracy").get<double>();
    r.metrics.forgetting = j.at("forgetting").get<std::vector<double>>();
    r.metrics.avg_forgetting = j.at("avg_forgetting").get<double>();
    for (const auto& snap : j.at("sparsity")) {
        SparsitySnapshot s;
        s.pruned_fraction = snap.at("pruned_fraction").get<double>();
        for (const auto& l : snap.at("layers")) {
            s.layers.push_back({l.at("layer").get<int>(), l.at("active").get<int>(),
                                l.at("pruned").get<int>(), l.at("mean_inv_lambda").get<double>()});
        }
        r.metrics.sparsity.push_back(std::move(s));
    }
    r.metrics.steps = j.value("steps", 0ll);
    r.metrics.replay_steps = j.value("replay_steps", 0ll);
    r.metrics.stale_refreshes = j.value("stale_refreshes", 0ll);
    return r;
}

namespace {

std::string format_double(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

struct Stats {
    double mean = 0.0;
    double stddev = 0.0;
    int count = 0;
};

Stats stats_of(const std::vector<double>& values) {
    Stats s;
    s.count = static_cast<int>(values.size());
    if (values.empty()) return s;
    for (double v : values) s.mean += v;
    s.mean /= values.size();
    for (double v : values) s.stddev += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(s.stddev / values.size());
    return s;
}

} // namespace

std::string aggregate_csv_row(const ExperimentConfig& cfg, const std::string& method,
                              const std::vector<RunResult>& results) {
    std::vector<double> accs, forgets;
    for (const RunResult& r : results) {
        if (!r.ok) continue;
        accs.push_back(r.metrics.avg_accuracy * 100.0);
        forgets.push_back(r.metrics.avg_forgetting * 100.0);
    }
    const Stats acc = stats_of(accs);
    const Stats forget = stats_of(forgets);
    std::ostringstream row;
    row << cfg.protocol << ',' << method << ',' << cfg.buffer << ',' << acc.count << ','
        << format_double(acc.mean) << ',' << format_double(acc.stddev) << ','
        << format_double(forget.mean);
    return row.str();
}

// ---------------------------------------------------------------------------
// run / sweep / report

namespace {

std::vector<RunResult> execute_cells(const ExperimentConfig& cfg,
                                     const std::vector<std::pair<std::string, std::uint64_t>>& cells) {
    std::vector<RunResult> results(cells.size());
    const unsigned workers =
        std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(),
                                        static_cast<unsigned>(cells.size())));
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            results[i] = run_single(cfg, cells[i].first, cells[i].second);
        }
    };
    std::vector<std::thread> pool;
    for (unsigned w = 0; w + 1 < workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    return results;
}

fs::path method_dir(const ExperimentConfig& cfg, const std::string& method) {
    return cfg.methods.size() > 1 ? fs::path(cfg.out) / method : fs::path(cfg.out);
}

void replace_or_append_row(const fs::path& csv_path, const std::string& key_prefix,
                           const std::string& row) {
    std::vector<std::string> lines;
    if (fs::exists(csv_path)) {
        std::ifstream in(csv_path);
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line != kAggregateHeader &&
                line.compare(0, key_prefix.size(), key_prefix) != 0) {
                lines.push_back(line);
            }
        }
    }
    lines.push_back(row);
    std::ofstream out(csv_path, std::ios::trunc);
    out << kAggregateHeader << '\n';
    for (const std::string& line : lines) out << line << '\n';
}

void write_charts(const ExperimentConfig& cfg,
                  const std::map<std::string, std::vector<RunResult>>& by_method,
                  const fs::path& out_dir) {
    svg::LineChart acc_chart;
    acc_chart.title = "Average accuracy per evaluation point (" + cfg.protocol + ", buffer " +
                      std::to_string(cfg.buffer) + ")";
    acc_chart.x_label = "evaluation point";
    acc_chart.y_label = "accuracy";
    acc_chart.y_min = 0.0;
    acc_chart.y_max = 1.0;

    svg::LineChart sparsity_chart;
    sparsity_chart.title = "Pruned gate fraction per evaluation point";
    sparsity_chart.x_label = "evaluation point";
    sparsity_chart.y_label = "pruned fraction";
    sparsity_chart.y_min = 0.0;
    sparsity_chart.y_max = 1.0;

    for (const auto& [method, results] : by_method) {
        std::size_t points = 0;
        for (const RunResult& r : results) {
            if (r.ok && !r.metrics.accuracy.empty()) {
                points = std::max(points, r.metrics.accuracy.front().size());
            }
        }
        if (points == 0) continue;
        svg::Series acc_series{method, {}, {}};
        svg::Series spars_series{method, {}, {}};
        for (std::size_t e = 0; e < points; ++e) {
            double acc_sum = 0.0, spars_sum = 0.0;
            int n = 0;
            for (const RunResult& r : results) {
                if (!r.ok || r.metrics.accuracy.empty() ||
                    r.metrics.accuracy.front().size() <= e) {
                    continue;
                }
                double mean_over_splits = 0.0;
                for (const auto& row : r.metrics.accuracy) mean_over_splits += row[e];
                acc_sum += mean_over_splits / r.metrics.accuracy.size();
                if (e < r.metrics.sparsity.size()) {
                    spars_sum += r.metrics.sparsity[e].pruned_fraction;
                }
                ++n;
            }
            if (n == 0) continue;
            acc_series.x.push_back(static_cast<double>(e + 1));
            acc_series.y.push_back(acc_sum / n);
            spars_series.x.push_back(static_cast<double>(e + 1));
            spars_series.y.push_back(spars_sum / n);
        }
        acc_chart.series.push_back(std::move(acc_series));
        sparsity_chart.series.push_back(std::move(spars_series));
    }
    acc_chart.write((out_dir / "accuracy.svg").string());
    sparsity_chart.write((out_dir / "sparsity.svg").string());
}

} // namespace

int run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    fs::create_directories(cfg.out);

    std::vector<std::pair<std::string, std::uint64_t>> cells;
    for (const std::string& method : cfg.methods) {
        for (std::uint64_t seed : cfg.seeds) cells.emplace_back(method, seed);
    }
    const std::vector<RunResult> results = execute_cells(cfg, cells);

    std::map<std::string, std::vector<RunResult>> by_method;
    bool all_ok = true;
    for (const RunResult& r : results) {
        const fs::path dir = method_dir(cfg, r.method);
        fs::create_directories(dir);
        std::ofstream out(dir / ("metrics_" + std::to_string(r.seed) + ".json"));
        out << metrics_to_json(cfg, r);
        if (!r.ok) {
            all_ok = false;
            std::cerr << "[run] " << r.method << " seed " << r.seed << " failed: " << r.error
                      << "\n";
        }
        by_method[r.method].push_back(r);
    }

    const fs::path csv_path = fs::path(cfg.out) / "aggregate.csv";
    for (const std::string& method : cfg.methods) {
        const std::string row = aggregate_csv_row(cfg, method, by_method[method]);
        const std::string key = cfg.protocol + "," + method + "," + std::to_string(cfg.buffer) + ",";
        replace_or_append_row(csv_path, key, row);
        std::cout << row << "\n";
    }
    write_charts(cfg, by_method, cfg.out);

    double wall = 0.0;
    for (const RunResult& r : results) wall = std::max(wall, r.metrics.wall_clock_sec);
    std::cout << "[run] " << results.size() << " runs, slowest " << format_double(wall, 1)
              << "s, outputs in " << cfg.out << "\n";
    return all_ok ? 0 : 1;
}

int run_sweep(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.grids.empty()) throw ConfigError("sweep needs at least one grid.* key");
    if (cfg.methods.size() != 1) throw ConfigError("sweep runs one method at a time");
    fs::create_directories(cfg.out);

    // Cartesian product over the grid axes, in key order.
    std::vector<std::string> axes;
    for (const auto& [name, values] : cfg.grids) axes.push_back(name);
    std::vector<std::map<std::string, double>> cells{{}};
    for (const std::string& axis : axes) {
        std::vector<std::map<std::string, double>> grown;
        for (const auto& cell : cells) {
            for (double v : cfg.grids.at(axis)) {
                auto next = cell;
                next[axis] = v;
                grown.push_back(std::move(next));
            }
        }
        cells = std::move(grown);
    }

    struct Cell {
        std::map<std::string, double> params;
        double mean_acc = 0.0;
        int ok_runs = 0;
    };
    std::vector<Cell> ranked;
    for (const auto& params : cells) {
        ExperimentConfig cell_cfg = cfg;
        cell_cfg.grids.clear();
        for (const auto& [name, value] : params) {
            cell_cfg.set(name, format_double(value, 8));
        }
        std::vector<std::pair<std::string, std::uint64_t>> runs;
        for (std::uint64_t seed : cfg.seeds) runs.emplace_back(cfg.methods[0], seed);
        const std::vector<RunResult> results = execute_cells(cell_cfg, runs);
        Cell cell;
        cell.params = params;
        for (const RunResult& r : results) {
            if (r.ok) {
                cell.mean_acc += r.metrics.avg_accuracy;
                ++cell.ok_runs;
            }
        }
        if (cell.ok_runs > 0) cell.mean_acc /= cell.ok_runs;
        ranked.push_back(std::move(cell));
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const Cell& a, const Cell& b) { return a.mean_acc > b.mean_acc; });

    const fs::path csv_path = fs::path(cfg.out) / "sweep.csv";
    std::ofstream out(csv_path, std::ios::trunc);
    out << "rank";
    for (const std::string& axis : axes) out << ',' << axis;
    out << ",ok_runs,avg_acc_mean\n";
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        out << (i + 1);
        for (const std::string& axis : axes) out << ',' << format_double(ranked[i].params.at(axis), 6);
        out << ',' << ranked[i].ok_runs << ',' << format_double(ranked[i].mean_acc * 100.0);
        out << '\n';
    }

    std::cout << "[sweep] " << ranked.size() << " cells; best:";
    for (const std::string& axis : axes) {
        std::cout << ' ' << axis << '=' << format_double(ranked.front().params.at(axis), 6);
    }
    std::cout << " avg_acc=" << format_double(ranked.front().mean_acc * 100.0) << "\n";
    std::cout << "[sweep] ranking written to " << csv_path << "\n";
    return 0;
}

int run_report(const std::string& dir) {
    if (!fs::exists(dir)) throw ConfigError("report: no such directory: " + dir);
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        if (name.rfind("metrics_", 0) == 0 && entry.path().extension() == ".json") {
            files.push_back(entry.path());
        }
    }
    if (files.empty()) {
        throw ConfigError("report: no metrics_*.json files under " + dir);
    }
    std::sort(files.begin(), files.end());

    std::map<std::string, std::vector<RunResult>> by_method;
    ExperimentConfig chart_cfg; // only protocol/buffer feed the chart titles
    for (const fs::path& f : files) {
        std::ifstream in(f);
        std::stringstream ss;
        ss << in.rdbuf();
        ordered_json j = ordered_json::parse(ss.str());
        chart_cfg.protocol = j.value("protocol", chart_cfg.protocol);
        chart_cfg.buffer = j.value("buffer", chart_cfg.buffer);
        RunResult r = metrics_from_json(ss.str());
        by_method[r.method].push_back(std::move(r));
    }

    for (const auto& [method, results] : by_method) {
        std::cout << "== method " << method << " ==\n";
        for (const RunResult& r : results) {
            std::cout << "seed " << r.seed << ": ";
            if (!r.ok) {
                std::cout << "FAILED (" << r.error << ")\n";
                continue;
            }
            std::cout << "avg_acc=" << format_double(r.metrics.avg_accuracy * 100.0)
                      << " avg_forgetting=" << format_double(r.metrics.avg_forgetting * 100.0)
                      << "\n";
            std::cout << "  accuracy matrix (rows = eval split, cols = eval point):\n";
            for (std::size_t t = 0; t < r.metrics.accuracy.size(); ++t) {
                std::cout << "    split " << t << ":";
                for (double a : r.metrics.accuracy[t]) std::cout << ' ' << format_double(a);
                std::cout << "  forgetting=" << format_double(r.metrics.forgetting[t]) << "\n";
            }
            if (!r.metrics.sparsity.empty()) {
                const SparsitySnapshot& last = r.metrics.sparsity.back();
                std::cout << "  final pruned fraction: " << format_double(last.pruned_fraction);
                for (const LayerSparsity& l : last.layers) {
                    std::cout << "  layer" << l.layer_index << ": " << l.pruned << "/"
                              << (l.pruned + l.active)
                              << " pruned, mean 1/lambda=" << format_double(l.mean_inv_lambda);
                }
                std::cout << "\n";
            }
        }
    }
    write_charts(chart_cfg, by_method, dir);
    std::cout << "[report] charts regenerated under " << dir << "\n";
    return 0;
}

} // namespace sncl
