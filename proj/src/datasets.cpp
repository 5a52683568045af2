#include "sncl/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

namespace sncl {

int LabeledSet::num_classes() const {
    int k = 0;
    for (int y : labels) k = std::max(k, y + 1);
    return k;
}

// ---------------------------------------------------------------------------
// IDX parsing

namespace {

std::uint32_t read_be32(std::ifstream& in, const std::string& path, std::size_t offset) {
    unsigned char buf[4];
    if (!in.read(reinterpret_cast<char*>(buf), 4)) {
        throw ParseError(path + ": truncated at offset " + std::to_string(offset));
    }
    return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
           (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

} // namespace

LabeledSet load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw ParseError("cannot open " + images_path);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw ParseError("cannot open " + labels_path);

    const std::uint32_t img_magic = read_be32(img, images_path, 0);
    if (img_magic != 0x00000803u) {
        throw ParseError(images_path + ": bad magic at offset 0 (expected 0x803)");
    }
    const std::uint32_t count = read_be32(img, images_path, 4);
    const std::uint32_t rows = read_be32(img, images_path, 8);
    const std::uint32_t cols = read_be32(img, images_path, 12);

    const std::uint32_t lab_magic = read_be32(lab, labels_path, 0);
    if (lab_magic != 0x00000801u) {
        throw ParseError(labels_path + ": bad magic at offset 0 (expected 0x801)");
    }
    const std::uint32_t lab_count = read_be32(lab, labels_path, 4);
    if (lab_count != count) {
        throw ParseError(labels_path + ": " + std::to_string(lab_count) + " labels vs " +
                         std::to_string(count) + " images");
    }

    LabeledSet set;
    set.dim = static_cast<int>(rows * cols);
    set.inputs.resize(static_cast<std::size_t>(count) * set.dim);
    set.labels.resize(count);

    std::vector<unsigned char> buf(static_cast<std::size_t>(count) * set.dim);
    if (!img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
        throw ParseError(images_path + ": truncated pixel data at offset " +
                         std::to_string(16 + img.gcount()));
    }
    for (std::size_t i = 0; i < buf.size(); ++i) set.inputs[i] = buf[i] / 255.0;

    std::vector<unsigned char> lbuf(count);
    if (!lab.read(reinterpret_cast<char*>(lbuf.data()), static_cast<std::streamsize>(count))) {
        throw ParseError(labels_path + ": truncated label data at offset " +
                         std::to_string(8 + lab.gcount()));
    }
    for (std::uint32_t i = 0; i < count; ++i) set.labels[i] = lbuf[i];
    return set;
}

// ---------------------------------------------------------------------------
// Transforms

std::vector<double> rotate_image(const double* src, int side, double angle) {
    std::vector<double> out(static_cast<std::size_t>(side) * side, 0.0);
    const double c = std::cos(angle), s = std::sin(angle);
    const double mid = (side - 1) / 2.0;
    for (int r = 0; r < side; ++r) {
        for (int q = 0; q < side; ++q) {
            // Inverse map: rotate the destination coordinate back by -angle.
            const double dy = r - mid, dx = q - mid;
            const double sy = c * dy + s * dx + mid;
            const double sx = -s * dy + c * dx + mid;
            const int y0 = static_cast<int>(std::floor(sy));
            const int x0 = static_cast<int>(std::floor(sx));
            const double fy = sy - y0, fx = sx - x0;
            double acc = 0.0;
            for (int oy = 0; oy <= 1; ++oy) {
                for (int ox = 0; ox <= 1; ++ox) {
                    const int yy = y0 + oy, xx = x0 + ox;
                    if (yy < 0 || yy >= side || xx < 0 || xx >= side) continue;
                    const double w = (oy ? fy : 1.0 - fy) * (ox ? fx : 1.0 - fx);
                    acc += w * src[yy * side + xx];
                }
            }
            out[static_cast<std::size_t>(r) * side + q] = acc;
        }
    }
    return out;
}

namespace {

int square_side(int dim) {
    const int side = static_cast<int>(std::lround(std::sqrt(double(dim))));
    if (side * side != dim) {
        throw ConfigError("rotation needs a square image, got dim " + std::to_string(dim));
    }
    return side;
}

void materialize(const LabeledSet& base, const StreamSample& s,
                 const std::vector<int>* perm, double* out_row, int dim) {
    const double* src = base.row(s.index);
    if (s.angle != 0.0f) {
        const int side = square_side(dim);
        std::vector<double> rotated = rotate_image(src, side, s.angle);
        if (perm) {
            for (int d = 0; d < dim; ++d) out_row[d] = rotated[(*perm)[d]];
        } else {
            std::copy(rotated.begin(), rotated.end(), out_row);
        }
        return;
    }
    if (perm) {
        for (int d = 0; d < dim; ++d) out_row[d] = src[(*perm)[d]];
    } else {
        std::copy(src, src + dim, out_row);
    }
}

BatchData materialize_range(const LabeledSet& base, const std::vector<StreamSample>& samples,
                            const std::vector<int>* perm, std::size_t offset, std::size_t count,
                            int dim) {
    count = std::min(count, samples.size() > offset ? samples.size() - offset : 0);
    BatchData batch;
    batch.dim = dim;
    batch.batch = static_cast<int>(count);
    batch.x.resize(count * dim);
    batch.y.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const StreamSample& s = samples[offset + i];
        materialize(base, s, perm, batch.x.data() + i * dim, dim);
        batch.y[i] = base.labels[s.index];
    }
    return batch;
}

std::vector<std::uint32_t> pick_indices(std::size_t population, std::size_t cap, Rng& rng) {
    std::vector<std::uint32_t> idx(population);
    std::iota(idx.begin(), idx.end(), 0u);
    std::shuffle(idx.begin(), idx.end(), rng);
    if (cap > 0 && cap < idx.size()) idx.resize(cap);
    return idx;
}

} // namespace

BatchData fetch_train(const TaskStream& stream, std::size_t phase, std::size_t offset,
                      std::size_t count) {
    const Phase& p = stream.phases.at(phase);
    return materialize_range(*stream.train_base, p.train, p.pixel_perm.get(), offset, count,
                             stream.input_dim);
}

BatchData fetch_eval(const TaskStream& stream, std::size_t split, std::size_t offset,
                     std::size_t count) {
    const EvalSplit& e = stream.eval_splits.at(split);
    return materialize_range(*stream.test_base, e.samples, e.pixel_perm.get(), offset, count,
                             stream.input_dim);
}

// ---------------------------------------------------------------------------
// Stream builders

namespace {

std::vector<int> all_classes(const LabeledSet& set) {
    std::set<int> seen(set.labels.begin(), set.labels.end());
    return {seen.begin(), seen.end()};
}

TaskStream domain_stream(LabeledSetPtr train, LabeledSetPtr test, int tasks, std::uint64_t seed,
                         const StreamOptions& opt, bool permute) {
    if (tasks < 1) throw ConfigError("need at least one task");
    TaskStream stream;
    stream.train_base = train;
    stream.test_base = test;
    stream.input_dim = train->dim;
    stream.num_classes = std::max(train->num_classes(), test->num_classes());
    stream.setting = Setting::kDomainIl;

    Rng rng(mix_seed(seed, 0xdada));
    std::uniform_real_distribution<double> angle_dist(0.0, 3.14159265358979323846);
    const std::vector<int> classes = all_classes(*train);

    for (int t = 0; t < tasks; ++t) {
        std::shared_ptr<std::vector<int>> perm;
        float angle = 0.0f;
        if (permute) {
            if (!(t == 0 && opt.identity_first)) {
                perm = std::make_shared<std::vector<int>>(train->dim);
                std::iota(perm->begin(), perm->end(), 0);
                std::shuffle(perm->begin(), perm->end(), rng);
            }
        } else {
            angle = static_cast<float>(angle_dist(rng));
        }

        Phase phase;
        phase.pixel_perm = perm;
        phase.classes = classes;
        phase.boundary = true;
        for (std::uint32_t i : pick_indices(train->size(), opt.train_per_task, rng)) {
            phase.train.push_back({i, angle});
        }

        EvalSplit split;
        split.pixel_perm = perm;
        split.classes = classes;
        for (std::uint32_t i : pick_indices(test->size(), opt.test_per_task, rng)) {
            split.samples.push_back({i, angle});
        }
        stream.phases.push_back(std::move(phase));
        stream.eval_splits.push_back(std::move(split));
    }
    return stream;
}

} // namespace

TaskStream build_pmnist(LabeledSetPtr train, LabeledSetPtr test, int tasks, std::uint64_t seed,
                        const StreamOptions& opt) {
    return domain_stream(std::move(train), std::move(test), tasks, seed, opt, /*permute=*/true);
}

TaskStream build_rmnist(LabeledSetPtr train, LabeledSetPtr test, int tasks, std::uint64_t seed,
                        const StreamOptions& opt) {
    square_side(train->dim); // fail early on non-square inputs
    return domain_stream(std::move(train), std::move(test), tasks, seed, opt, /*permute=*/false);
}

TaskStream build_split(LabeledSetPtr train, LabeledSetPtr test,
                       const std::vector<std::vector<int>>& class_sets, std::uint64_t seed,
                       const StreamOptions& opt) {
    if (class_sets.empty()) throw ConfigError("build_split: no class sets");
    std::set<int> seen;
    for (const auto& cs : class_sets) {
        for (int c : cs) {
            if (!seen.insert(c).second) {
                throw ConfigError("build_split: class " + std::to_string(c) +
                                  " appears in two phases");
            }
        }
    }

    TaskStream stream;
    stream.train_base = train;
    stream.test_base = test;
    stream.input_dim = train->dim;
    stream.num_classes = std::max(train->num_classes(), test->num_classes());
    stream.setting = Setting::kClassIl;

    Rng rng(mix_seed(seed, 0x5917));
    for (const auto& cs : class_sets) {
        const std::set<int> members(cs.begin(), cs.end());
        Phase phase;
        phase.classes = cs;
        phase.boundary = true;
        std::vector<std::uint32_t> train_idx;
        for (std::uint32_t i = 0; i < train->size(); ++i) {
            if (members.count(train->labels[i])) train_idx.push_back(i);
        }
        std::shuffle(train_idx.begin(), train_idx.end(), rng);
        if (opt.train_per_task > 0 && opt.train_per_task < train_idx.size()) {
            train_idx.resize(opt.train_per_task);
        }
        for (std::uint32_t i : train_idx) phase.train.push_back({i, 0.0f});

        EvalSplit split;
        split.classes = cs;
        std::vector<std::uint32_t> test_idx;
        for (std::uint32_t i = 0; i < test->size(); ++i) {
            if (members.count(test->labels[i])) test_idx.push_back(i);
        }
        std::shuffle(test_idx.begin(), test_idx.end(), rng);
        if (opt.test_per_task > 0 && opt.test_per_task < test_idx.size()) {
            test_idx.resize(opt.test_per_task);
        }
        for (std::uint32_t i : test_idx) split.samples.push_back({i, 0.0f});

        stream.phases.push_back(std::move(phase));
        stream.eval_splits.push_back(std::move(split));
    }
    return stream;
}

TaskStream build_mnist360(LabeledSetPtr train, LabeledSetPtr test, std::uint64_t seed,
                          std::size_t samples_per_pair, std::size_t test_per_digit) {
    square_side(train->dim);
    constexpr int kDigits = 9;
    TaskStream stream;
    stream.train_base = train;
    stream.test_base = test;
    stream.input_dim = train->dim;
    stream.num_classes = kDigits;
    stream.setting = Setting::kDomainIl;
    stream.has_boundaries = false;

    Rng rng(mix_seed(seed, 0x360));

    std::vector<std::vector<std::uint32_t>> train_pool(kDigits);
    for (std::uint32_t i = 0; i < train->size(); ++i) {
        if (train->labels[i] < kDigits) train_pool[train->labels[i]].push_back(i);
    }
    for (auto& pool : train_pool) {
        if (pool.empty()) throw ConfigError("mnist360: a digit 0-8 is missing from the base set");
        std::shuffle(pool.begin(), pool.end(), rng);
    }

    // Each digit shows up in two consecutive pairs; its angle ramps
    // linearly over [0, 2pi) across all of its appearances.
    const std::size_t per_digit = samples_per_pair / 2;
    const std::size_t appearances = 2 * per_digit;
    std::vector<std::size_t> appearance_count(kDigits, 0);
    std::vector<std::size_t> pool_cursor(kDigits, 0);
    const double two_pi = 2.0 * 3.14159265358979323846;

    auto next_sample = [&](int digit) {
        auto& pool = train_pool[digit];
        const std::uint32_t idx = pool[pool_cursor[digit] % pool.size()];
        ++pool_cursor[digit];
        const double angle = two_pi * appearance_count[digit] / appearances;
        ++appearance_count[digit];
        return StreamSample{idx, static_cast<float>(angle)};
    };

    for (int pair = 0; pair < kDigits; ++pair) {
        const int a = pair, b = (pair + 1) % kDigits;
        Phase phase;
        phase.classes = {std::min(a, b), std::max(a, b)};
        phase.boundary = false;
        for (std::size_t i = 0; i < per_digit; ++i) {
            phase.train.push_back(next_sample(a));
            phase.train.push_back(next_sample(b));
        }
        stream.phases.push_back(std::move(phase));
    }

    // Single evaluation split: digits 0-8 at seeded angles in [0, 2pi).
    EvalSplit split;
    std::uniform_real_distribution<double> test_angle(0.0, two_pi);
    std::vector<std::vector<std::uint32_t>> test_pool(kDigits);
    for (std::uint32_t i = 0; i < test->size(); ++i) {
        if (test->labels[i] < kDigits) test_pool[test->labels[i]].push_back(i);
    }
    for (int d = 0; d < kDigits; ++d) {
        auto& pool = test_pool[d];
        std::shuffle(pool.begin(), pool.end(), rng);
        std::size_t take = test_per_digit > 0 ? std::min(test_per_digit, pool.size()) : pool.size();
        for (std::size_t i = 0; i < take; ++i) {
            split.samples.push_back({pool[i], static_cast<float>(test_angle(rng))});
        }
        split.classes.push_back(d);
    }
    stream.eval_splits.push_back(std::move(split));
    return stream;
}

namespace {

LabeledSet sample_blobs(const std::vector<double>& centers, int classes, int per_class, int dim,
                        double spread, Rng& rng) {
    std::normal_distribution<double> noise(0.0, spread);
    LabeledSet set;
    set.dim = dim;
    set.inputs.resize(static_cast<std::size_t>(classes) * per_class * dim);
    set.labels.resize(static_cast<std::size_t>(classes) * per_class);
    std::size_t row = 0;
    for (int k = 0; k < classes; ++k) {
        for (int i = 0; i < per_class; ++i, ++row) {
            double* out = set.inputs.data() + row * dim;
            const double* center = centers.data() + static_cast<std::size_t>(k) * dim;
            for (int d = 0; d < dim; ++d) {
                out[d] = std::clamp(center[d] + noise(rng), 0.0, 1.0);
            }
            set.labels[row] = k;
        }
    }
    return set;
}

std::vector<double> blob_centers(int classes, int dim, Rng& rng) {
    // Centers mimic image statistics: mostly dark. When dim is a square
    // grid the center is a sum of smooth 2-d bumps (stroke-like mass near
    // the middle, well-behaved under rotation); otherwise a seeded sparse
    // subset of coordinates carries the signal.
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> centers(static_cast<std::size_t>(classes) * dim, 0.0);
    const int side = static_cast<int>(std::lround(std::sqrt(double(dim))));
    if (side * side == dim && side >= 8) {
        std::uniform_real_distribution<double> pos(0.22 * side, 0.78 * side);
        std::uniform_real_distribution<double> width(side / 12.0, side / 7.0);
        std::uniform_real_distribution<double> amp(0.6, 1.0);
        std::uniform_int_distribution<int> bumps(3, 5);
        for (int k = 0; k < classes; ++k) {
            double* c = centers.data() + static_cast<std::size_t>(k) * dim;
            const int b = bumps(rng);
            for (int i = 0; i < b; ++i) {
                const double cx = pos(rng), cy = pos(rng);
                const double s2 = 2.0 * width(rng) * width(rng);
                const double a = amp(rng);
                for (int r = 0; r < side; ++r) {
                    for (int q = 0; q < side; ++q) {
                        const double dr = r - cy, dq = q - cx;
                        c[r * side + q] += a * std::exp(-(dr * dr + dq * dq) / s2);
                    }
                }
            }
            for (int d = 0; d < dim; ++d) c[d] = std::min(1.0, c[d]);
        }
        return centers;
    }
    std::uniform_real_distribution<double> active(0.45, 0.95);
    for (int k = 0; k < classes; ++k) {
        double* c = centers.data() + static_cast<std::size_t>(k) * dim;
        int lit = 0;
        for (int d = 0; d < dim; ++d) {
            if (unit(rng) < 0.18) {
                c[d] = active(rng);
                ++lit;
            }
        }
        if (lit == 0) c[static_cast<int>(unit(rng) * dim) % dim] = active(rng);
    }
    return centers;
}

} // namespace

LabeledSet synth_blobs(int classes, int per_class, int dim, double spread, std::uint64_t seed) {
    if (classes < 2) throw ConfigError("synth_blobs: need at least two classes");
    Rng rng(mix_seed(seed, 0xb10b5));
    const std::vector<double> centers = blob_centers(classes, dim, rng);
    return sample_blobs(centers, classes, per_class, dim, spread, rng);
}

std::pair<LabeledSet, LabeledSet> synth_blob_split(int classes, int train_per_class,
                                                   int test_per_class, int dim, double spread,
                                                   std::uint64_t seed) {
    if (classes < 2) throw ConfigError("synth_blob_split: need at least two classes");
    Rng rng(mix_seed(seed, 0xb10b5));
    const std::vector<double> centers = blob_centers(classes, dim, rng);
    LabeledSet train = sample_blobs(centers, classes, train_per_class, dim, spread, rng);
    LabeledSet test = sample_blobs(centers, classes, test_per_class, dim, spread, rng);
    return {std::move(train), std::move(test)};
}

std::string setting_name(Setting s) {
    switch (s) {
        case Setting::kClassIl: return "class_il";
        case Setting::kTaskIl: return "task_il";
        case Setting::kDomainIl: return "domain_il";
    }
    return "unknown";
}

} // namespace sncl
