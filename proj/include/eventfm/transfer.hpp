#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eventfm/cohort.hpp"
#include "eventfm/model.hpp"
#include "eventfm/tokenizer.hpp"

namespace eventfm {

// Linear classification head over the frozen backbone's pooled state
// (last non-pad position, final layernorm output).
struct ClassifierHead {
    Mat<float> w;  // n_classes x d_model
    Mat<float> b;  // 1 x n_classes
    double dropout_rate = 0.1;
    int n_classes = 2;
};

struct HeadTrainConfig {
    int epochs = 50;
    double learning_rate = 1e-2;
    double dropout_rate = 0.1;
    uint64_t seed = 1;
};

struct LabeledPooled {
    std::vector<std::vector<float>> states;  // pooled backbone states
    std::vector<int> labels;
};

// Pooled states for each participant's context (events within history_days).
LabeledPooled extract_pooled_states(const ModelCheckpoint& ckpt, const Cohort& cohort,
                                    const Vocabulary& vocab, long long history_days,
                                    const std::vector<int>& labels);

ClassifierHead finetune_head(const LabeledPooled& train, int n_classes, const HeadTrainConfig& cfg);

// P(class 1) for one pooled state (single forward pass upstream).
double head_positive_probability(const ClassifierHead& head, const std::vector<float>& state);

// Mean over the projector's soft-token rows: a d_model embedding of the PRS.
std::vector<float> extract_prs_embedding(const ModelCheckpoint& ckpt, const std::vector<double>& prs);

// One-hidden-layer MLP with per-feature standardization from training data.
struct MlpClassifier {
    std::vector<double> feat_mean, feat_sd;  // training statistics
    std::vector<uint8_t> zero_variance;      // flagged features standardized to 0
    Mat<float> w1, b1;                       // hidden x d, 1 x hidden
    Mat<float> w2, b2;                       // 2 x hidden, 1 x 2
    int hidden = 100;
};

struct MlpTrainConfig {
    int hidden_width = 100;
    int max_epochs = 200;
    double learning_rate = 1e-2;
    double plateau_tol = 1e-5;  // early stop when train loss stops improving
    int plateau_patience = 10;
    uint64_t seed = 1;
};

MlpClassifier train_mlp_classifier(const std::vector<std::vector<float>>& features,
                                   const std::vector<int>& labels, const MlpTrainConfig& cfg);

double mlp_positive_probability(const MlpClassifier& clf, const std::vector<float>& features);

void save_mlp_classifier(const MlpClassifier& clf, const std::string& path);
MlpClassifier load_mlp_classifier(const std::string& path);

// Logistic regression on one-hot demographic codes (baseline model).
struct LogisticModel {
    std::vector<std::string> feature_codes;
    std::vector<double> w;
    double b = 0.0;
};

LogisticModel train_demographics_logistic(const Cohort& cohort, const std::vector<int>& labels,
                                          int epochs, double lr, uint64_t seed);
double logistic_positive_probability(const LogisticModel& m, const ParticipantRecord& p);

}  // namespace eventfm
