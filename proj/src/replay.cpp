#include "sncl/replay.hpp"

#include <algorithm>
#include <map>
#include <ostream>
#include <set>

#include <json.hpp>

namespace sncl {

MemoryItem capture(const GatedMlp& model, const std::vector<double>& x, int y,
                   double per_sample_loss) {
    if (static_cast<int>(x.size()) != model.config().input_dim) {
        throw ShapeError("capture: sample width " + std::to_string(x.size()) + " vs model input " +
                         std::to_string(model.config().input_dim));
    }
    Graph g;
    auto xt = Tensor::make({1, model.config().input_dim}, x);
    ForwardTrace trace = model.forward(g, xt, GateMode::kDeterministic);
    MemoryItem item;
    item.x = x;
    item.y = y;
    item.z_hat = trace.logits->data;
    for (const TensorPtr& h : trace.features) item.h_hat.push_back(h->data);
    item.stored_loss = per_sample_loss;
    return item;
}

ReplayBuffer::ReplayBuffer(int capacity) : capacity_(capacity) {
    if (capacity <= 0) throw ConfigError("buffer capacity must be positive");
    items_.reserve(static_cast<std::size_t>(capacity));
}

void ReplayBuffer::reservoir_update(MemoryItem item, Rng& rng) {
    item.insert_step = seen_++;
    if (static_cast<int>(items_.size()) < capacity_) {
        items_.push_back(std::move(item));
        return;
    }
    // Keep the n-th offer with probability M/n; n == seen_ after the bump.
    std::uniform_int_distribution<std::int64_t> pick(0, seen_ - 1);
    const std::int64_t slot = pick(rng);
    if (slot < capacity_) items_[static_cast<std::size_t>(slot)] = std::move(item);
}

namespace {

// Ascending loss; insert_step then class id break ties so the update is a
// pure function of its inputs.
bool loss_order(const MemoryItem* a, const MemoryItem* b) {
    if (a->stored_loss != b->stored_loss) return a->stored_loss < b->stored_loss;
    if (a->insert_step != b->insert_step) return a->insert_step < b->insert_step;
    return a->y < b->y;
}

} // namespace

void ReplayBuffer::lrs_update(std::vector<MemoryItem> batch_items) {
    for (MemoryItem& item : batch_items) item.insert_step = seen_++;

    if (static_cast<int>(items_.size()) < capacity_) {
        for (MemoryItem& item : batch_items) {
            if (static_cast<int>(items_.size()) >= capacity_) break;
            items_.push_back(std::move(item));
        }
        return;
    }

    // Candidate pool: current buffer plus the incoming batch, grouped by class.
    std::map<int, std::vector<const MemoryItem*>> by_class;
    for (const MemoryItem& item : items_) by_class[item.y].push_back(&item);
    for (const MemoryItem& item : batch_items) by_class[item.y].push_back(&item);

    const int class_count = static_cast<int>(by_class.size());
    const int quota = capacity_ / class_count;

    int leftover = capacity_;
    std::vector<std::pair<int, std::vector<const MemoryItem*>>> classes;
    classes.reserve(by_class.size());
    for (auto& [label, candidates] : by_class) {
        std::sort(candidates.begin(), candidates.end(), loss_order);
        classes.emplace_back(label, std::move(candidates));
    }

    std::map<int, std::set<std::size_t>> picked; // class -> selected candidate indices
    for (auto& [label, candidates] : classes) {
        const std::size_t take = std::min<std::size_t>(quota, candidates.size());
        auto& sel = picked[label];
        if (take == candidates.size()) {
            for (std::size_t i = 0; i < candidates.size(); ++i) sel.insert(i);
        } else {
            for (std::size_t i = 0; i < take; ++i) {
                sel.insert(i * candidates.size() / take); // stride |S|/q, offset 0
            }
        }
        leftover -= static_cast<int>(sel.size());
    }

    // One extra slot each for the largest classes, taken at the stride
    // positions of quota+1 so the addition stays loss-diverse.
    std::vector<std::size_t> order(classes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return classes[a].second.size() > classes[b].second.size();
    });
    for (std::size_t oi : order) {
        if (leftover <= 0) break;
        auto& [label, candidates] = classes[oi];
        auto& sel = picked[label];
        if (sel.size() >= candidates.size()) continue;
        std::size_t chosen = candidates.size();
        for (std::size_t i = 0; i <= static_cast<std::size_t>(quota); ++i) {
            const std::size_t idx = i * candidates.size() / (quota + 1);
            if (!sel.count(idx)) {
                chosen = idx;
                break;
            }
        }
        if (chosen == candidates.size()) {
            for (std::size_t idx = 0; idx < candidates.size(); ++idx) {
                if (!sel.count(idx)) {
                    chosen = idx;
                    break;
                }
            }
        }
        sel.insert(chosen);
        --leftover;
    }

    std::vector<MemoryItem> rebuilt;
    rebuilt.reserve(static_cast<std::size_t>(capacity_));
    for (auto& [label, candidates] : classes) {
        for (std::size_t idx : picked[label]) rebuilt.push_back(*candidates[idx]);
    }
    items_ = std::move(rebuilt);
}

std::vector<std::size_t> ReplayBuffer::sample_replay_batch(std::size_t n, Rng& rng) const {
    std::vector<std::size_t> out;
    if (items_.empty()) return out; // no replay; caller trains on current data only
    out.reserve(n);
    if (n > items_.size()) {
        std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
        for (std::size_t i = 0; i < n; ++i) out.push_back(pick(rng));
        return out;
    }
    // Partial Fisher-Yates for a without-replacement draw.
    std::vector<std::size_t> pool(items_.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    for (std::size_t i = 0; i < n; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
        out.push_back(pool[i]);
    }
    return out;
}

void ReplayBuffer::refresh_loss(const std::vector<std::int64_t>& item_steps,
                                const std::vector<double>& new_losses) {
    if (item_steps.size() != new_losses.size()) {
        throw ShapeError("refresh_loss: " + std::to_string(item_steps.size()) + " ids vs " +
                         std::to_string(new_losses.size()) + " losses");
    }
    for (std::size_t i = 0; i < item_steps.size(); ++i) {
        bool found = false;
        for (MemoryItem& item : items_) {
            if (item.insert_step == item_steps[i]) {
                item.stored_loss = new_losses[i];
                found = true;
                break;
            }
        }
        if (!found) ++stale_refreshes_;
    }
}

void ReplayBuffer::dump_jsonl(std::ostream& out) const {
    for (const MemoryItem& item : items_) {
        nlohmann::ordered_json j{{"y", item.y},
                                 {"stored_loss", item.stored_loss},
                                 {"insert_step", item.insert_step}};
        out << j.dump() << '\n';
    }
}

} // namespace sncl
