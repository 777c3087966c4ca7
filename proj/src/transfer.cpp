#include "eventfm/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "eventfm/common.hpp"
#include "eventfm/kernels.hpp"

namespace eventfm {

namespace ker = eventfm::kernels;
using ordered_json = nlohmann::ordered_json;

LabeledPooled extract_pooled_states(const ModelCheckpoint& ckpt, const Cohort& cohort,
                                    const Vocabulary& vocab, long long history_days,
                                    const std::vector<int>& labels) {
    if (labels.size() != cohort.participants.size())
        throw numeric_error("extract_pooled_states: label count mismatch");
    LabeledPooled out;
    out.states.resize(cohort.participants.size());
    out.labels = labels;
#pragma omp parallel for schedule(dynamic)
    for (size_t i = 0; i < cohort.participants.size(); ++i) {
        const auto& p = cohort.participants[i];
        SeqInput s;
        TokenSequence ctx = encode_context(p, vocab, history_days);
        s.tokens = std::move(ctx.ids);
        s.prs = p.prs ? &p.prs->values : nullptr;
        out.states[i] = pooled_state(ckpt.params, s);
    }
    return out;
}

namespace {

void softmax2(const float* z, double* p) {
    const double m = std::max(z[0], z[1]);
    const double e0 = std::exp(static_cast<double>(z[0]) - m);
    const double e1 = std::exp(static_cast<double>(z[1]) - m);
    p[0] = e0 / (e0 + e1);
    p[1] = e1 / (e0 + e1);
}

}  // namespace

ClassifierHead finetune_head(const LabeledPooled& train, int n_classes, const HeadTrainConfig& cfg) {
    if (n_classes != 2) throw numeric_error("finetune_head: only binary heads are supported");
    if (train.states.empty()) throw numeric_error("finetune_head: empty training set");
    std::set<int> classes(train.labels.begin(), train.labels.end());
    if (classes.size() < 2) throw numeric_error("finetune_head: single-class training set");
    const int d = static_cast<int>(train.states.front().size());

    ClassifierHead head;
    head.n_classes = n_classes;
    head.dropout_rate = cfg.dropout_rate;
    head.w.resize(n_classes, d);
    head.b.resize(1, n_classes);
    Rng init_rng(derive_seed(cfg.seed, {hash_str("head-init")}));
    fill_normal(head.w, init_rng, 0.02);

    const size_t n = train.states.size();
    std::vector<float> dropped(static_cast<size_t>(d));
    std::vector<float> logits(2), dlogits(2);
    // plain SGD over shuffled subjects; the backbone stays untouched
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<size_t> order(n);
        for (size_t i = 0; i < n; ++i) order[i] = i;
        Rng rng(derive_seed(cfg.seed, {hash_str("head-epoch"), static_cast<uint64_t>(epoch)}));
        rng.shuffle(order);
        for (size_t oi = 0; oi < n; ++oi) {
            const auto& x = train.states[order[oi]];
            const int y = train.labels[order[oi]];
            const double keep = 1.0 - cfg.dropout_rate;
            for (int t = 0; t < d; ++t) {
                const bool k = rng.uniform() >= cfg.dropout_rate;
                dropped[static_cast<size_t>(t)] = k ? x[static_cast<size_t>(t)] / static_cast<float>(keep) : 0.0f;
            }
            ker::linear(dropped.data(), 1, d, head.w.data(), head.b.data(), logits.data(), 2);
            double p[2];
            softmax2(logits.data(), p);
            dlogits[0] = static_cast<float>(p[0] - (y == 0 ? 1.0 : 0.0));
            dlogits[1] = static_cast<float>(p[1] - (y == 1 ? 1.0 : 0.0));
            const float lr = static_cast<float>(cfg.learning_rate);
            for (int cls = 0; cls < 2; ++cls) {
                float* wr = head.w.row(cls);
                for (int t = 0; t < d; ++t) wr[t] -= lr * dlogits[static_cast<size_t>(cls)] * dropped[static_cast<size_t>(t)];
                head.b.v[static_cast<size_t>(cls)] -= lr * dlogits[static_cast<size_t>(cls)];
            }
        }
    }
    return head;
}

double head_positive_probability(const ClassifierHead& head, const std::vector<float>& state) {
    std::vector<float> logits(2);
    ker::linear(state.data(), 1, static_cast<int>(state.size()), head.w.data(), head.b.data(),
                logits.data(), 2);
    double p[2];
    softmax2(logits.data(), p);
    return p[1];
}

std::vector<float> extract_prs_embedding(const ModelCheckpoint& ckpt, const std::vector<double>& prs) {
    if (!ckpt.params.config.multimodal())
        throw numeric_error("extract_prs_embedding: checkpoint has no genomics projector");
    Mat<float> soft = project_prs(ckpt.params, prs);
    std::vector<float> out(static_cast<size_t>(soft.cols), 0.0f);
    for (int r = 0; r < soft.rows; ++r)
        for (int c = 0; c < soft.cols; ++c) out[static_cast<size_t>(c)] += soft.at(r, c);
    for (auto& v : out) v /= static_cast<float>(soft.rows);
    return out;
}

MlpClassifier train_mlp_classifier(const std::vector<std::vector<float>>& features,
                                   const std::vector<int>& labels, const MlpTrainConfig& cfg) {
    if (features.empty() || features.size() != labels.size())
        throw numeric_error("train_mlp_classifier: misaligned inputs");
    const int d = static_cast<int>(features.front().size());
    const size_t n = features.size();

    MlpClassifier clf;
    clf.hidden = cfg.hidden_width;
    clf.feat_mean.assign(static_cast<size_t>(d), 0.0);
    clf.feat_sd.assign(static_cast<size_t>(d), 0.0);
    clf.zero_variance.assign(static_cast<size_t>(d), 0);
    for (const auto& f : features)
        for (int t = 0; t < d; ++t) clf.feat_mean[static_cast<size_t>(t)] += f[static_cast<size_t>(t)];
    for (auto& m : clf.feat_mean) m /= static_cast<double>(n);
    for (const auto& f : features)
        for (int t = 0; t < d; ++t) {
            const double c = f[static_cast<size_t>(t)] - clf.feat_mean[static_cast<size_t>(t)];
            clf.feat_sd[static_cast<size_t>(t)] += c * c;
        }
    for (int t = 0; t < d; ++t) {
        clf.feat_sd[static_cast<size_t>(t)] =
            n > 1 ? std::sqrt(clf.feat_sd[static_cast<size_t>(t)] / static_cast<double>(n - 1)) : 0.0;
        if (clf.feat_sd[static_cast<size_t>(t)] == 0.0) clf.zero_variance[static_cast<size_t>(t)] = 1;
    }

    std::vector<std::vector<float>> z(n, std::vector<float>(static_cast<size_t>(d)));
    for (size_t i = 0; i < n; ++i)
        for (int t = 0; t < d; ++t)
            z[i][static_cast<size_t>(t)] =
                clf.zero_variance[static_cast<size_t>(t)]
                    ? 0.0f
                    : static_cast<float>((features[i][static_cast<size_t>(t)] -
                                          clf.feat_mean[static_cast<size_t>(t)]) /
                                         clf.feat_sd[static_cast<size_t>(t)]);

    const int h = cfg.hidden_width;
    clf.w1.resize(h, d);
    clf.b1.resize(1, h);
    clf.w2.resize(2, h);
    clf.b2.resize(1, 2);
    Rng init_rng(derive_seed(cfg.seed, {hash_str("mlp-init")}));
    fill_normal(clf.w1, init_rng, 0.1);
    fill_normal(clf.w2, init_rng, 0.1);

    std::vector<float> h1(static_cast<size_t>(h)), a1(static_cast<size_t>(h)),
        logits(2), dlogits(2), da1(static_cast<size_t>(h)), dh1(static_cast<size_t>(h));
    double best_loss = 1e300;
    int stale = 0;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        std::vector<size_t> order(n);
        for (size_t i = 0; i < n; ++i) order[i] = i;
        Rng rng(derive_seed(cfg.seed, {hash_str("mlp-epoch"), static_cast<uint64_t>(epoch)}));
        rng.shuffle(order);
        double loss_sum = 0.0;
        const float lr = static_cast<float>(cfg.learning_rate);
        for (size_t oi = 0; oi < n; ++oi) {
            const auto& x = z[order[oi]];
            const int y = labels[order[oi]];
            ker::linear(x.data(), 1, d, clf.w1.data(), clf.b1.data(), h1.data(), h);
            ker::gelu_forward(h1.data(), a1.data(), h);
            ker::linear(a1.data(), 1, h, clf.w2.data(), clf.b2.data(), logits.data(), 2);
            double p[2];
            softmax2(logits.data(), p);
            loss_sum += -std::log(std::max(p[y == 1 ? 1 : 0], 1e-300));
            dlogits[0] = static_cast<float>(p[0] - (y == 0 ? 1.0 : 0.0));
            dlogits[1] = static_cast<float>(p[1] - (y == 1 ? 1.0 : 0.0));
            ker::linear_dx(dlogits.data(), 1, 2, clf.w2.data(), h, da1.data());
            for (int cls = 0; cls < 2; ++cls) {
                float* wr = clf.w2.row(cls);
                for (int t = 0; t < h; ++t) wr[t] -= lr * dlogits[static_cast<size_t>(cls)] * a1[static_cast<size_t>(t)];
                clf.b2.v[static_cast<size_t>(cls)] -= lr * dlogits[static_cast<size_t>(cls)];
            }
            ker::gelu_backward(h1.data(), da1.data(), dh1.data(), h);
            for (int t = 0; t < h; ++t) {
                float* wr = clf.w1.row(t);
                const float g = dh1[static_cast<size_t>(t)];
                for (int c = 0; c < d; ++c) wr[c] -= lr * g * x[static_cast<size_t>(c)];
                clf.b1.v[static_cast<size_t>(t)] -= lr * g;
            }
        }
        const double epoch_loss = loss_sum / static_cast<double>(n);
        if (epoch_loss < best_loss - cfg.plateau_tol) {
            best_loss = epoch_loss;
            stale = 0;
        } else if (++stale >= cfg.plateau_patience) {
            break;
        }
    }
    return clf;
}

double mlp_positive_probability(const MlpClassifier& clf, const std::vector<float>& features) {
    const int d = static_cast<int>(clf.feat_mean.size());
    if (static_cast<int>(features.size()) != d)
        throw numeric_error("mlp_positive_probability: feature dimension mismatch");
    std::vector<float> z(static_cast<size_t>(d));
    for (int t = 0; t < d; ++t)
        z[static_cast<size_t>(t)] =
            clf.zero_variance[static_cast<size_t>(t)]
                ? 0.0f
                : static_cast<float>((features[static_cast<size_t>(t)] - clf.feat_mean[static_cast<size_t>(t)]) /
                                     clf.feat_sd[static_cast<size_t>(t)]);
    std::vector<float> h1(static_cast<size_t>(clf.hidden)), a1(static_cast<size_t>(clf.hidden)), logits(2);
    ker::linear(z.data(), 1, d, clf.w1.data(), clf.b1.data(), h1.data(), clf.hidden);
    ker::gelu_forward(h1.data(), a1.data(), clf.hidden);
    ker::linear(a1.data(), 1, clf.hidden, clf.w2.data(), clf.b2.data(), logits.data(), 2);
    double p[2];
    softmax2(logits.data(), p);
    return p[1];
}

void save_mlp_classifier(const MlpClassifier& clf, const std::string& path) {
    ordered_json j;
    j["format_version"] = 1;
    j["hidden"] = clf.hidden;
    j["feat_mean"] = clf.feat_mean;
    j["feat_sd"] = clf.feat_sd;
    j["zero_variance"] = clf.zero_variance;
    auto dump = [](const Mat<float>& m) {
        ordered_json t;
        t["rows"] = m.rows;
        t["cols"] = m.cols;
        t["data"] = m.v;
        return t;
    };
    j["w1"] = dump(clf.w1);
    j["b1"] = dump(clf.b1);
    j["w2"] = dump(clf.w2);
    j["b2"] = dump(clf.b2);
    write_file(path, j.dump() + "\n");
}

MlpClassifier load_mlp_classifier(const std::string& path) {
    auto j = ordered_json::parse(read_file(path));
    if (j.value("format_version", 0) != 1) throw io_error(path + ": unsupported classifier version");
    MlpClassifier clf;
    clf.hidden = j.at("hidden").get<int>();
    clf.feat_mean = j.at("feat_mean").get<std::vector<double>>();
    clf.feat_sd = j.at("feat_sd").get<std::vector<double>>();
    clf.zero_variance = j.at("zero_variance").get<std::vector<uint8_t>>();
    auto load = [&](const char* key, Mat<float>& m) {
        const auto& t = j.at(key);
        m.resize(t.at("rows").get<int>(), t.at("cols").get<int>());
        m.v = t.at("data").get<std::vector<float>>();
    };
    load("w1", clf.w1);
    load("b1", clf.b1);
    load("w2", clf.w2);
    load("b2", clf.b2);
    return clf;
}

LogisticModel train_demographics_logistic(const Cohort& cohort, const std::vector<int>& labels,
                                          int epochs, double lr, uint64_t seed) {
    if (labels.size() != cohort.participants.size())
        throw numeric_error("train_demographics_logistic: label count mismatch");
    std::set<std::string> codes;
    for (const auto& p : cohort.participants)
        for (const auto& d : p.demographics) codes.insert(d);
    LogisticModel m;
    m.feature_codes.assign(codes.begin(), codes.end());
    m.w.assign(m.feature_codes.size(), 0.0);

    auto featurize = [&](const ParticipantRecord& p) {
        std::vector<double> x(m.feature_codes.size(), 0.0);
        for (const auto& d : p.demographics) {
            auto it = std::lower_bound(m.feature_codes.begin(), m.feature_codes.end(), d);
            if (it != m.feature_codes.end() && *it == d)
                x[static_cast<size_t>(it - m.feature_codes.begin())] = 1.0;
        }
        return x;
    };

    const size_t n = cohort.participants.size();
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::vector<size_t> order(n);
        for (size_t i = 0; i < n; ++i) order[i] = i;
        Rng rng(derive_seed(seed, {hash_str("logistic"), static_cast<uint64_t>(epoch)}));
        rng.shuffle(order);
        for (size_t oi = 0; oi < n; ++oi) {
            const auto x = featurize(cohort.participants[order[oi]]);
            double z = m.b;
            for (size_t t = 0; t < x.size(); ++t) z += m.w[t] * x[t];
            const double p = 1.0 / (1.0 + std::exp(-z));
            const double g = p - static_cast<double>(labels[order[oi]]);
            for (size_t t = 0; t < x.size(); ++t) m.w[t] -= lr * g * x[t];
            m.b -= lr * g;
        }
    }
    return m;
}

double logistic_positive_probability(const LogisticModel& m, const ParticipantRecord& p) {
    double z = m.b;
    for (const auto& d : p.demographics) {
        auto it = std::lower_bound(m.feature_codes.begin(), m.feature_codes.end(), d);
        if (it != m.feature_codes.end() && *it == d) z += m.w[static_cast<size_t>(it - m.feature_codes.begin())];
    }
    return 1.0 / (1.0 + std::exp(-z));
}

}  // namespace eventfm
