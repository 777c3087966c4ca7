#include "eventfm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "eventfm/common.hpp"
#include "eventfm/kernels.hpp"

namespace eventfm {

namespace ker = eventfm::kernels;

const char* lr_schedule_name(LrSchedule s) {
    return s == LrSchedule::linear_decay ? "linear_decay" : "constant";
}

std::optional<LrSchedule> parse_lr_schedule(std::string_view s) {
    if (s == "linear_decay") return LrSchedule::linear_decay;
    if (s == "constant") return LrSchedule::constant;
    return std::nullopt;
}

void TrainConfig::validate() const {
    if (epochs < 1 || batch_size < 1 || grad_accum_steps < 1)
        throw numeric_error("TrainConfig: counts must be >= 1");
    if (!(learning_rate >= 0.0)) throw numeric_error("TrainConfig: learning_rate must be >= 0");
    if (weight_decay < 0.0) throw numeric_error("TrainConfig: weight_decay must be >= 0");
}

AdamW::AdamW(Params<float>& params, const TrainConfig& cfg) : cfg_(cfg) {
    visit_params(params, std::function<void(const std::string&, Mat<float>&)>(
                             [&](const std::string&, Mat<float>& p) {
                                 m_.emplace_back(p.rows, p.cols);
                                 v_.emplace_back(p.rows, p.cols);
                             }));
}

void AdamW::step(Params<float>& params, Params<float>& grads, double lr) {
    ++t_;
    const float bc1 = 1.0f - static_cast<float>(std::pow(cfg_.beta1, static_cast<double>(t_)));
    const float bc2 = 1.0f - static_cast<float>(std::pow(cfg_.beta2, static_cast<double>(t_)));
    size_t i = 0;
    std::vector<Mat<float>*> gmats;
    visit_params(grads, std::function<void(const std::string&, Mat<float>&)>(
                            [&](const std::string&, Mat<float>& g) { gmats.push_back(&g); }));
    visit_params(params, std::function<void(const std::string&, Mat<float>&)>(
                             [&](const std::string&, Mat<float>& p) {
                                 ker::adamw_update(p.data(), gmats[i]->data(), m_[i].data(),
                                                   v_[i].data(), p.count(), static_cast<float>(lr),
                                                   static_cast<float>(cfg_.beta1),
                                                   static_cast<float>(cfg_.beta2),
                                                   static_cast<float>(cfg_.adam_eps),
                                                   static_cast<float>(cfg_.weight_decay), bc1, bc2);
                                 ++i;
                             }));
}

double scheduled_lr(const TrainConfig& cfg, int64_t step, int64_t total_steps) {
    if (cfg.schedule == LrSchedule::constant) return cfg.learning_rate;
    if (total_steps <= 0) return cfg.learning_rate;
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return cfg.learning_rate * (1.0 - frac);
}

std::vector<int> training_tokens(const ParticipantRecord& p, const Vocabulary& vocab,
                                 const ModelConfig& mc) {
    TokenSequence seq = encode(p, vocab);
    const int budget = mc.mode == FusionMode::prs_prefix ? mc.window - mc.n_soft_tokens : mc.window;
    if (static_cast<int>(seq.ids.size()) > budget) {
        // keep the most recent window of tokens
        seq.ids.erase(seq.ids.begin(), seq.ids.end() - budget);
    }
    return seq.ids;
}

ModelCheckpoint train(const Cohort& train_cohort, const Vocabulary& vocab, const ModelConfig& mc,
                      const TrainConfig& tc, TrainTrace* trace) {
    tc.validate();
    mc.validate();
    if (train_cohort.participants.empty()) throw numeric_error("train: empty cohort");

    struct Entry {
        std::vector<int> tokens;
        const std::vector<double>* prs;
    };
    std::vector<Entry> entries;
    entries.reserve(train_cohort.participants.size());
    for (const auto& p : train_cohort.participants) {
        if (mc.multimodal() && !p.prs)
            throw numeric_error("train: participant " + p.participant_id + " lacks a PRS vector");
        Entry e;
        e.tokens = training_tokens(p, vocab, mc);
        e.prs = p.prs ? &p.prs->values : nullptr;
        entries.push_back(std::move(e));
    }

    ModelCheckpoint ckpt;
    ckpt.params = make_params<float>(mc);
    init_params(ckpt.params, tc.seed);
    Params<float> grads = make_params<float>(mc);
    AdamW opt(ckpt.params, tc);

    const size_t n = entries.size();
    const size_t micro = static_cast<size_t>(tc.batch_size);
    const size_t micro_per_opt = static_cast<size_t>(tc.grad_accum_steps);
    const size_t micro_batches_per_epoch = (n + micro - 1) / micro;
    const int64_t opt_steps_per_epoch =
        static_cast<int64_t>((micro_batches_per_epoch + micro_per_opt - 1) / micro_per_opt);
    const int64_t total_steps = opt_steps_per_epoch * tc.epochs;

    if (trace) trace->epoch_loss.clear();
    int64_t opt_step = 0;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        std::vector<size_t> order(n);
        for (size_t i = 0; i < n; ++i) order[i] = i;
        Rng shuffle_rng(derive_seed(tc.seed, {hash_str("epoch-shuffle"), static_cast<uint64_t>(epoch)}));
        shuffle_rng.shuffle(order);

        double epoch_loss_sum = 0.0;
        int64_t epoch_batches = 0;
        size_t cursor = 0;
        size_t micro_in_step = 0;
        bool have_grads = false;
        while (cursor < n) {
            std::vector<SeqInput> batch;
            for (size_t b = 0; b < micro && cursor < n; ++b, ++cursor) {
                const Entry& e = entries[order[cursor]];
                SeqInput s;
                s.tokens = e.tokens;
                s.prs = e.prs;
                batch.push_back(std::move(s));
            }
            left_pad_batch(batch, Vocabulary::kPad);
            ForwardOptions opts;
            opts.train_mode = true;
            opts.rng_seed = derive_seed(tc.seed, {hash_str("dropout"), static_cast<uint64_t>(epoch),
                                                  static_cast<uint64_t>(cursor)});
            LossStats stats;
            try {
                stats = loss_and_gradients(ckpt.params, batch, opts, &grads);
            } catch (const numeric_error& err) {
                throw numeric_error(std::string("train: ") + err.what() + " (epoch " +
                                    std::to_string(epoch) + ", optimizer step " +
                                    std::to_string(opt_step) + ")");
            }
            epoch_loss_sum += stats.loss;
            ++epoch_batches;
            have_grads = true;
            ++micro_in_step;
            if (micro_in_step == micro_per_opt || cursor >= n) {
                // gradients of the mean were accumulated over micro-batches; rescale
                const float inv = 1.0f / static_cast<float>(micro_in_step);
                visit_params(grads, std::function<void(const std::string&, Mat<float>&)>(
                                        [&](const std::string&, Mat<float>& g) {
                                            for (auto& x : g.v) x *= inv;
                                        }));
                const double lr = scheduled_lr(tc, opt_step, total_steps);
                if (tc.learning_rate > 0.0) opt.step(ckpt.params, grads, lr);
                ++opt_step;
                visit_params(grads, std::function<void(const std::string&, Mat<float>&)>(
                                        [&](const std::string&, Mat<float>& g) { g.zero(); }));
                micro_in_step = 0;
                have_grads = false;
            }
        }
        (void)have_grads;
        if (trace) trace->epoch_loss.push_back(epoch_loss_sum / static_cast<double>(epoch_batches));
    }
    if (trace) trace->optimizer_steps = opt_step;
    return ckpt;
}

LossReport evaluate_loss(const Cohort& test, const Vocabulary& vocab, const ModelCheckpoint& ckpt) {
    LossReport report;
    const auto& mc = ckpt.params.config;
    std::vector<double> values(test.participants.size(), 0.0);
    std::vector<uint8_t> ok(test.participants.size(), 0);

    // read-only over the checkpoint; participants evaluated independently
#pragma omp parallel for schedule(dynamic)
    for (size_t i = 0; i < test.participants.size(); ++i) {
        const auto& p = test.participants[i];
        if (mc.multimodal() && !p.prs) continue;
        SeqInput s;
        s.tokens = training_tokens(p, vocab, mc);
        s.prs = p.prs ? &p.prs->values : nullptr;
        LossStats stats;
        try {
            stats = sequence_loss(ckpt.params, s);
        } catch (const numeric_error&) {
            continue;
        }
        if (stats.positions == 0) continue;
        values[i] = stats.loss;
        ok[i] = 1;
    }
    double sum = 0.0;
    size_t count = 0;
    for (size_t i = 0; i < test.participants.size(); ++i) {
        const auto& id = test.participants[i].participant_id;
        if (!ok[i]) {
            report.excluded.push_back(id);
            continue;
        }
        report.per_participant_loss[id] = values[i];
        sum += values[i];
        ++count;
    }
    if (count == 0) throw numeric_error("evaluate_loss: no scoreable participants");
    report.overall = sum / static_cast<double>(count);
    return report;
}

PairedLossTest paired_loss_test(const LossReport& a, const LossReport& b) {
    std::vector<double> diffs;
    for (const auto& [id, la] : a.per_participant_loss) {
        auto it = b.per_participant_loss.find(id);
        if (it != b.per_participant_loss.end()) diffs.push_back(it->second - la);
    }
    if (diffs.size() < 3) throw numeric_error("paired_loss_test: fewer than 3 shared participants");
    auto tests = stats::paired_difference_tests(diffs);
    PairedLossTest out;
    out.t_p = tests.t_p;
    out.wilcoxon_p = tests.wilcoxon_p;
    out.normality_p = tests.normality_p;
    out.degenerate = tests.degenerate;
    out.zero_variance = tests.zero_variance;
    out.n_shared = static_cast<int>(diffs.size());
    out.mean_diff = stats::mean_of(diffs);
    return out;
}

void save_loss_report(const LossReport& report, const std::string& path) {
    std::ostringstream out;
    out << "participant_id\tmean_token_ce\n";
    for (const auto& [id, loss] : report.per_participant_loss)
        out << id << '\t' << fmt_double(loss, 17) << '\n';
    out << "__overall__\t" << fmt_double(report.overall, 17) << '\n';
    write_file(path, out.str());
}

}  // namespace eventfm
