#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "sncl/mlp.hpp"

namespace sncl {

/// One full experience record: the input, its label, and the logits and
/// gated hidden activations the model produced when the sample was
/// observed, plus its most recent per-sample cross-entropy.
struct MemoryItem {
    std::vector<double> x;
    int y = 0;
    std::vector<double> z_hat;                 // [K]
    std::vector<std::vector<double>> h_hat;    // per gated layer, [H]
    double stored_loss = 0.0;
    std::int64_t insert_step = 0;              // unique offer id, set by the buffer
};

/// Runs one Deterministic-mode forward on x and stores logits and gated
/// features as plain constants (no graph linkage). `per_sample_loss` is the
/// training CE of this sample at the current parameters.
MemoryItem capture(const GatedMlp& model, const std::vector<double>& x, int y,
                   double per_sample_loss);

/// Fixed-capacity episodic memory. Single-writer; supports the classic
/// uniform reservoir baseline and the loss-aware class-balanced update.
class ReplayBuffer {
public:
    explicit ReplayBuffer(int capacity);

    int capacity() const { return capacity_; }
    std::size_t size() const { return items_.size(); }
    bool empty() const { return items_.empty(); }
    std::int64_t seen_count() const { return seen_; }
    const MemoryItem& item(std::size_t i) const { return items_[i]; }
    const std::vector<MemoryItem>& items() const { return items_; }

    /// Classic reservoir sampling: the n-th offered item ends up stored
    /// with probability capacity/n.
    void reservoir_update(MemoryItem item, Rng& rng);

    /// Loss-aware update over the whole incoming batch. When the buffer is
    /// below capacity the batch is appended (truncated to capacity in
    /// arrival order). Otherwise the buffer is rebuilt with a per-class
    /// quota of floor(M/R) items picked at a fixed stride over each class's
    /// loss-sorted candidates, so kept losses stay diverse and always
    /// include the per-class minimum; leftover slots go one each to the
    /// largest classes. Deterministic given its inputs.
    void lrs_update(std::vector<MemoryItem> batch_items);

    /// n item indices drawn uniformly without replacement (with
    /// replacement iff n > size). Empty buffer yields an empty draw: the
    /// caller trains on current data only.
    std::vector<std::size_t> sample_replay_batch(std::size_t n, Rng& rng) const;

    /// Overwrites stored_loss for the items whose insert_step matches;
    /// steps no longer present (evicted since sampling) are counted and
    /// ignored.
    void refresh_loss(const std::vector<std::int64_t>& item_steps,
                      const std::vector<double>& new_losses);
    std::int64_t stale_refresh_count() const { return stale_refreshes_; }

    /// One JSON object per line: {y, stored_loss, insert_step}.
    void dump_jsonl(std::ostream& out) const;

private:
    int capacity_ = 0;
    std::vector<MemoryItem> items_;
    std::int64_t seen_ = 0;
    std::int64_t stale_refreshes_ = 0;
};

} // namespace sncl
