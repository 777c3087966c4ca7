#pragma once

// Hand-specified sequence models for estimator oracles: the next-token
// distribution is an arbitrary function of the generated suffix, so exact
// probabilities can be computed by enumeration.

#include <functional>
#include <vector>

#include "eventfm/generator.hpp"

namespace eventfm::testing {

class TableModel final : public PathModel {
public:
    // dist(generated_suffix, out): fill out (size vocab) with the next-token
    // distribution; the context prefix is fixed and ignored by design.
    using Dist = std::function<void(const std::vector<int>&, std::vector<double>&)>;

    TableModel(int vocab, Dist dist) : vocab_(vocab), dist_(std::move(dist)), probs_(vocab, 0.0) {}

    int vocab_size() const override { return vocab_; }
    int max_context() const override { return 1 << 20; }
    void begin(const std::vector<int>&) override {
        suffix_.clear();
        dist_(suffix_, probs_);
    }
    const std::vector<double>& probs() const override { return probs_; }
    void push(int token) override {
        suffix_.push_back(token);
        dist_(suffix_, probs_);
    }

private:
    int vocab_;
    Dist dist_;
    std::vector<double> probs_;
    std::vector<int> suffix_;
};

inline PathModelFactory table_model_factory(int vocab, TableModel::Dist dist) {
    return [vocab, dist]() { return std::make_unique<TableModel>(vocab, dist); };
}

// Exact P[target sampled before the horizon] by exhaustive enumeration over
// all token sequences of length <= K (the measure of longer suffixes is
// carried by recursion). Mirrors the sampler's truncation and eos rules.
struct EnumerationOracle {
    int vocab;
    TableModel::Dist dist;
    GenerationTask task;
    TokenTimeView time_view;

    double exact_hit_probability() const {
        std::vector<int> suffix;
        return walk(suffix, 0, 0);
    }

    // Expectation of any per-path functional under the path measure.
    double expectation(const std::function<double(const std::vector<int>&)>& f) const {
        std::vector<int> suffix;
        return walk_expect(suffix, 0, 0, f);
    }

private:
    bool is_target(int t) const {
        for (int x : task.target_token_ids)
            if (x == t) return true;
        return false;
    }

    double walk(std::vector<int>& suffix, int step, long long elapsed) const {
        if (step >= task.max_new_tokens) return 0.0;
        std::vector<double> p(static_cast<size_t>(vocab));
        dist(suffix, p);
        double total = 0.0;
        for (int t = 0; t < vocab; ++t) {
            if (p[static_cast<size_t>(t)] == 0.0) continue;
            const long long e = elapsed + time_view.days[static_cast<size_t>(t)];
            if (e > task.horizon_days) continue;  // crossing step cannot host a hit
            if (is_target(t)) {
                total += p[static_cast<size_t>(t)];
                continue;  // first hit; later steps irrelevant
            }
            if (t == time_view.eos_id) continue;
            suffix.push_back(t);
            total += p[static_cast<size_t>(t)] * walk(suffix, step + 1, e);
            suffix.pop_back();
        }
        return total;
    }

    double walk_expect(std::vector<int>& suffix, int step, long long elapsed,
                       const std::function<double(const std::vector<int>&)>& f) const {
        if (step >= task.max_new_tokens) return f(suffix);
        std::vector<double> p(static_cast<size_t>(vocab));
        dist(suffix, p);
        double total = 0.0;
        for (int t = 0; t < vocab; ++t) {
            if (p[static_cast<size_t>(t)] == 0.0) continue;
            suffix.push_back(t);
            const long long e = elapsed + time_view.days[static_cast<size_t>(t)];
            if (e > task.horizon_days || t == time_view.eos_id) {
                total += p[static_cast<size_t>(t)] * f(suffix);
            } else {
                total += p[static_cast<size_t>(t)] * walk_expect(suffix, step + 1, e, f);
            }
            suffix.pop_back();
        }
        return total;
    }
};

}  // namespace eventfm::testing
