#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sncl/common.hpp"

namespace sncl {

/// Flat row-major labeled set; inputs live in [0,1].
struct LabeledSet {
    int dim = 0;
    std::vector<double> inputs; // N x dim
    std::vector<int> labels;    // N

    std::size_t size() const { return labels.size(); }
    const double* row(std::size_t i) const { return inputs.data() + i * dim; }
    int num_classes() const;
};

using LabeledSetPtr = std::shared_ptr<const LabeledSet>;

/// Parses a big-endian IDX image/label file pair (magic 0x803 / 0x801),
/// scales bytes to [0,1] and flattens images row-major.
LabeledSet load_idx(const std::string& images_path, const std::string& labels_path);

enum class Setting { kClassIl, kTaskIl, kDomainIl };

std::string setting_name(Setting s);

/// One drawn sample: index into the base set plus the rotation applied to
/// it (0 = none). Pixel permutations are shared per phase.
struct StreamSample {
    std::uint32_t index = 0;
    float angle = 0.0f;
};

struct Phase {
    std::vector<StreamSample> train;                       // pre-shuffled draw order
    std::shared_ptr<const std::vector<int>> pixel_perm;    // null = identity
    std::vector<int> classes;                              // labels present in this phase
    bool boundary = true;                                  // false in boundary-free streams
};

/// Held-out split evaluated after each phase (one per task), or a single
/// split for boundary-free streams.
struct EvalSplit {
    std::vector<StreamSample> samples;
    std::shared_ptr<const std::vector<int>> pixel_perm;
    std::vector<int> classes;
};

struct TaskStream {
    LabeledSetPtr train_base;
    LabeledSetPtr test_base;
    std::vector<Phase> phases;
    std::vector<EvalSplit> eval_splits;
    int input_dim = 0;
    int num_classes = 0;
    Setting setting = Setting::kDomainIl;
    bool has_boundaries = true;
};

struct BatchData {
    std::vector<double> x; // B x dim
    std::vector<int> y;    // B
    int batch = 0;
    int dim = 0;
};

BatchData fetch_train(const TaskStream& stream, std::size_t phase, std::size_t offset,
                      std::size_t count);
BatchData fetch_eval(const TaskStream& stream, std::size_t split, std::size_t offset,
                     std::size_t count);

struct StreamOptions {
    std::size_t train_per_task = 0; // 0 = use everything
    std::size_t test_per_task = 0;
    bool identity_first = false;    // permuted streams: task 1 keeps pixel order
};

/// Domain-IL: task t applies one fixed seeded pixel permutation to train
/// and test.
TaskStream build_pmnist(LabeledSetPtr train, LabeledSetPtr test, int tasks, std::uint64_t seed,
                        const StreamOptions& opt = {});

/// Domain-IL: task t rotates every image by an angle drawn from U[0, pi),
/// inverse-mapped bilinear with zero padding.
TaskStream build_rmnist(LabeledSetPtr train, LabeledSetPtr test, int tasks, std::uint64_t seed,
                        const StreamOptions& opt = {});

/// Class-IL/Task-IL: each phase holds only its (disjoint) class set.
TaskStream build_split(LabeledSetPtr train, LabeledSetPtr test,
                       const std::vector<std::vector<int>>& class_sets, std::uint64_t seed,
                       const StreamOptions& opt = {});

/// Boundary-free stream of the nine consecutive digit pairs (0,1)..(8,0),
/// digits 0-8 only, each digit's rotation ramping linearly over [0, 2pi)
/// across its appearances; batches interleave the two active digits.
TaskStream build_mnist360(LabeledSetPtr train, LabeledSetPtr test, std::uint64_t seed,
                          std::size_t samples_per_pair, std::size_t test_per_digit = 0);

/// Gaussian clusters at seeded random centers, clamped to [0,1].
LabeledSet synth_blobs(int classes, int per_class, int dim, double spread, std::uint64_t seed);

/// Train/test pair over the same seeded centers with disjoint draws.
std::pair<LabeledSet, LabeledSet> synth_blob_split(int classes, int train_per_class,
                                                   int test_per_class, int dim, double spread,
                                                   std::uint64_t seed);

/// Rotates one side x side image about its center (bilinear, zero pad).
std::vector<double> rotate_image(const double* src, int side, double angle);

} // namespace sncl
