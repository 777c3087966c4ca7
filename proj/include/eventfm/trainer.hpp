#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "eventfm/model.hpp"
#include "eventfm/stats.hpp"
#include "eventfm/tokenizer.hpp"

namespace eventfm {

enum class LrSchedule { linear_decay, constant };

const char* lr_schedule_name(LrSchedule s);
std::optional<LrSchedule> parse_lr_schedule(std::string_view s);

struct TrainConfig {
    int epochs = 5;
    int batch_size = 2;
    double learning_rate = 1e-4;
    LrSchedule schedule = LrSchedule::linear_decay;
    double weight_decay = 0.01;
    int grad_accum_steps = 8;
    uint64_t seed = 1;

    // fixed AdamW moments; the paper names the optimizer and learning rate only
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const;
};

struct TrainTrace {
    std::vector<double> epoch_loss;  // mean training loss per epoch
    int64_t optimizer_steps = 0;
};

// AdamW state over a flattened view of the parameters.
class AdamW {
public:
    AdamW(Params<float>& params, const TrainConfig& cfg);
    // grads must share shapes with the parameter set
    void step(Params<float>& params, Params<float>& grads, double lr);
    int64_t steps_taken() const { return t_; }

private:
    std::vector<Mat<float>> m_, v_;
    TrainConfig cfg_;
    int64_t t_ = 0;
};

double scheduled_lr(const TrainConfig& cfg, int64_t step, int64_t total_steps);

// Encode + right-truncate a participant to the model window.
std::vector<int> training_tokens(const ParticipantRecord& p, const Vocabulary& vocab,
                                 const ModelConfig& mc);

ModelCheckpoint train(const Cohort& train_cohort, const Vocabulary& vocab, const ModelConfig& mc,
                      const TrainConfig& tc, TrainTrace* trace = nullptr);

struct LossReport {
    std::map<std::string, double> per_participant_loss;
    double overall = 0.0;                 // mean of per-participant values
    std::vector<std::string> excluded;    // participants with zero scoreable targets
};

LossReport evaluate_loss(const Cohort& test, const Vocabulary& vocab, const ModelCheckpoint& ckpt);

struct PairedLossTest {
    double t_p = 1.0;
    double wilcoxon_p = 1.0;
    double normality_p = 1.0;
    bool degenerate = false;
    bool zero_variance = false;
    int n_shared = 0;
    double mean_diff = 0.0;  // mean(b - a)
};

PairedLossTest paired_loss_test(const LossReport& a, const LossReport& b);

void save_loss_report(const LossReport& report, const std::string& path);

}  // namespace eventfm
