#include "eventfm/generator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <set>
#include <sstream>

#include "eventfm/common.hpp"

namespace eventfm {

const char* aggregation_name(Aggregation a) {
    switch (a) {
        case Aggregation::mean: return "mean";
        case Aggregation::median: return "median";
        case Aggregation::max: return "max";
    }
    return "?";
}

std::optional<Aggregation> parse_aggregation(std::string_view s) {
    if (s == "mean") return Aggregation::mean;
    if (s == "median") return Aggregation::median;
    if (s == "max") return Aggregation::max;
    return std::nullopt;
}

void GenerationTask::validate() const {
    if (target_token_ids.empty()) throw numeric_error("GenerationTask: empty target token set");
    if (n_paths < 1 || max_new_tokens < 1) throw numeric_error("GenerationTask: N and K must be >= 1");
    if (horizon_days < 1) throw numeric_error("GenerationTask: horizon_days must be >= 1");
    if (!(temperature >= 0.0)) throw numeric_error("GenerationTask: temperature must be >= 0");
}

namespace {

class TransformerPathModel final : public PathModel {
public:
    TransformerPathModel(const Params<float>& params, const std::vector<double>* prs)
        : session_(params, prs), params_(params) {}

    int vocab_size() const override { return params_.config.vocab_size; }
    int max_context() const override {
        const auto& c = params_.config;
        return c.mode == FusionMode::prs_prefix ? c.window - c.n_soft_tokens : c.window;
    }
    void begin(const std::vector<int>& context) override { session_.reset(context); }
    const std::vector<double>& probs() const override { return session_.next_probs(); }
    void push(int token) override { session_.append(token); }

private:
    DecoderSession session_;
    const Params<float>& params_;
};

}  // namespace

PathModelFactory transformer_path_model(const Params<float>& params, const std::vector<double>* prs) {
    return [&params, prs]() { return std::make_unique<TransformerPathModel>(params, prs); };
}

TokenTimeView token_time_view(const Vocabulary& vocab) {
    TokenTimeView view;
    view.days.resize(static_cast<size_t>(vocab.size()), 0);
    for (int id = 0; id < vocab.size(); ++id)
        if (vocab.kind(id) == TokenKind::time_interval) view.days[static_cast<size_t>(id)] = vocab.time_days(id);
    view.eos_id = Vocabulary::kEos;
    return view;
}

namespace {

int sample_from(const std::vector<double>& probs, double temperature, Rng& rng) {
    if (temperature < 1e-9) {
        int best = 0;
        for (size_t i = 1; i < probs.size(); ++i)
            if (probs[i] > probs[static_cast<size_t>(best)]) best = static_cast<int>(i);
        return best;
    }
    if (temperature == 1.0) {
        const double u = rng.uniform();
        double cum = 0.0;
        for (size_t i = 0; i < probs.size(); ++i) {
            cum += probs[i];
            if (u < cum) return static_cast<int>(i);
        }
        return static_cast<int>(probs.size()) - 1;
    }
    // reweight p^(1/T) through logs for stability
    std::vector<double> w(probs.size());
    double mx = -1e300;
    for (size_t i = 0; i < probs.size(); ++i) {
        w[i] = probs[i] > 0.0 ? std::log(probs[i]) / temperature : -1e300;
        mx = std::max(mx, w[i]);
    }
    double sum = 0.0;
    for (auto& x : w) {
        x = std::exp(x - mx);
        sum += x;
    }
    const double u = rng.uniform() * sum;
    double cum = 0.0;
    for (size_t i = 0; i < w.size(); ++i) {
        cum += w[i];
        if (u < cum) return static_cast<int>(i);
    }
    return static_cast<int>(w.size()) - 1;
}

template <class NextToken>
PathRecord run_path(PathModel& model, const std::vector<int>& context, const GenerationTask& task,
                    const TokenTimeView& time_view, NextToken&& next_token) {
    model.begin(context);
    PathRecord rec;
    for (int t : task.target_token_ids)
        if (t < 0 || t >= model.vocab_size())
            throw numeric_error("target token id out of vocabulary range");
    long long elapsed = 0;
    for (int step = 0; step < task.max_new_tokens; ++step) {
        const auto& probs = model.probs();
        double p = 0.0;
        for (int t : task.target_token_ids) p += probs[static_cast<size_t>(t)];
        const int token = next_token(probs, step);
        if (token < 0) break;  // forced path exhausted
        rec.p_target.push_back(p);
        rec.tokens.push_back(token);
        elapsed += time_view.days[static_cast<size_t>(token)];
        rec.elapsed.push_back(elapsed);
        if (elapsed > task.horizon_days) break;  // horizon crossed; further steps cannot count
        if (token == time_view.eos_id) break;
        if (step + 1 < task.max_new_tokens) model.push(token);
    }
    rec.truncation_step = truncation_step_for(rec, task.horizon_days);
    return rec;
}

}  // namespace

int truncation_step_for(const PathRecord& path, long long horizon_days) {
    for (size_t i = 0; i < path.elapsed.size(); ++i)
        if (path.elapsed[i] > horizon_days) return static_cast<int>(i) + 1;
    return static_cast<int>(path.tokens.size());
}

TrajectorySet sample_trajectories(const PathModelFactory& factory, const std::vector<int>& context,
                                  const GenerationTask& task, const TokenTimeView& time_view) {
    task.validate();
    if (context.empty()) throw numeric_error("sample_trajectories: empty context");
    {
        auto probe = factory();
        if (static_cast<int>(context.size()) + task.max_new_tokens > probe->max_context())
            throw numeric_error("sample_trajectories: context of " + std::to_string(context.size()) +
                                " tokens cannot host " + std::to_string(task.max_new_tokens) +
                                " new tokens within the window");
    }
    TrajectorySet out;
    out.paths.resize(static_cast<size_t>(task.n_paths));
    std::atomic<bool> failed{false};
    std::string error;
#pragma omp parallel for schedule(dynamic)
    for (int path = 0; path < task.n_paths; ++path) {
        if (failed.load(std::memory_order_relaxed)) continue;
        try {
            auto model = factory();
            Rng rng(derive_seed(task.seed, {hash_str("path"), static_cast<uint64_t>(path)}));
            out.paths[static_cast<size_t>(path)] =
                run_path(*model, context, task, time_view,
                         [&](const std::vector<double>& probs, int) {
                             return sample_from(probs, task.temperature, rng);
                         });
        } catch (const std::exception& e) {
#pragma omp critical
            error = e.what();
            failed.store(true, std::memory_order_relaxed);
        }
    }
    if (failed.load()) throw numeric_error("sample_trajectories: " + error);
    return out;
}

PathRecord trace_forced_path(PathModel& model, const std::vector<int>& context,
                             const std::vector<int>& forced_tokens, const GenerationTask& task,
                             const TokenTimeView& time_view) {
    size_t cursor = 0;
    return run_path(model, context, task, time_view, [&](const std::vector<double>&, int) {
        return cursor < forced_tokens.size() ? forced_tokens[cursor++] : -1;
    });
}

double mc_frequency(const TrajectorySet& trajs, const GenerationTask& task) {
    if (trajs.paths.empty()) throw numeric_error("mc_frequency: empty trajectory set");
    std::set<int> targets(task.target_token_ids.begin(), task.target_token_ids.end());
    int hits = 0;
    for (const auto& path : trajs.paths) {
        const int trunc = truncation_step_for(path, task.horizon_days);
        for (int i = 0; i < trunc; ++i) {
            if (targets.count(path.tokens[static_cast<size_t>(i)])) {
                ++hits;
                break;
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(trajs.paths.size());
}

double path_probability_single(const PathRecord& path, const GenerationTask& task) {
    const int trunc = truncation_step_for(path, task.horizon_days);
    if (static_cast<int>(path.p_target.size()) < trunc)
        throw numeric_error("path_probability: missing per-step probability records");
    double miss = 1.0;
    double score = 0.0;
    for (int i = 0; i < trunc; ++i) {
        const double p = path.p_target[static_cast<size_t>(i)];
        score += miss * p;
        miss *= 1.0 - p;
    }
    return score;
}

double path_probability(const TrajectorySet& trajs, const GenerationTask& task) {
    if (trajs.paths.empty()) throw numeric_error("path_probability: empty trajectory set");
    std::vector<double> scores;
    scores.reserve(trajs.paths.size());
    for (const auto& path : trajs.paths) scores.push_back(path_probability_single(path, task));
    switch (task.aggregation) {
        case Aggregation::mean: {
            double s = 0.0;
            for (double v : scores) s += v;
            return s / static_cast<double>(scores.size());
        }
        case Aggregation::median: {
            std::sort(scores.begin(), scores.end());
            const size_t n = scores.size();
            return n % 2 == 1 ? scores[n / 2] : 0.5 * (scores[n / 2 - 1] + scores[n / 2]);
        }
        case Aggregation::max:
            return *std::max_element(scores.begin(), scores.end());
    }
    throw numeric_error("path_probability: bad aggregation");
}

// ---------------------------------------------------------------------------
// Cohort scoring
// ---------------------------------------------------------------------------

ScoreCohortResult score_cohort(const ModelCheckpoint& ckpt, const Cohort& cohort,
                               const Vocabulary& vocab, const GenerationTask& task,
                               long long history_days) {
    task.validate();
    const auto time_view = token_time_view(vocab);
    std::set<int> targets(task.target_token_ids.begin(), task.target_token_ids.end());

    struct Job {
        size_t participant = 0;
        std::vector<int> context;
    };
    ScoreCohortResult result;
    std::vector<Job> jobs;
    const int budget = ckpt.params.config.mode == FusionMode::prs_prefix
                           ? ckpt.params.config.window - ckpt.params.config.n_soft_tokens
                           : ckpt.params.config.window;
    for (size_t i = 0; i < cohort.participants.size(); ++i) {
        const auto& p = cohort.participants[i];
        if (ckpt.params.config.multimodal() && !p.prs) {
            result.exclusions.emplace_back(p.participant_id, "missing_prs");
            continue;
        }
        TokenSequence ctx = encode_context(p, vocab, history_days);
        bool has_target = false;
        for (int id : ctx.ids)
            if (targets.count(id)) {
                has_target = true;
                break;
            }
        if (has_target) {
            result.exclusions.emplace_back(p.participant_id, "target_in_history");
            continue;
        }
        if (static_cast<int>(ctx.ids.size()) + task.max_new_tokens > budget) {
            result.exclusions.emplace_back(p.participant_id, "context_too_long");
            continue;
        }
        jobs.push_back({i, std::move(ctx.ids)});
    }
    if (jobs.empty()) throw numeric_error("score_cohort: no eligible participants");

    result.scores.resize(jobs.size());
    std::atomic<bool> failed{false};
    std::string error;
#pragma omp parallel for schedule(dynamic)
    for (size_t j = 0; j < jobs.size(); ++j) {
        if (failed.load(std::memory_order_relaxed)) continue;
        try {
            const auto& p = cohort.participants[jobs[j].participant];
            GenerationTask local = task;
            local.seed = derive_seed(task.seed, {hash_str(p.participant_id)});
            const std::vector<double>* prs = p.prs ? &p.prs->values : nullptr;
            // paths sampled serially here; participants run in parallel
            TrajectorySet trajs;
            trajs.paths.resize(static_cast<size_t>(local.n_paths));
            for (int path = 0; path < local.n_paths; ++path) {
                TransformerPathModel model(ckpt.params, prs);
                Rng rng(derive_seed(local.seed, {hash_str("path"), static_cast<uint64_t>(path)}));
                trajs.paths[static_cast<size_t>(path)] =
                    run_path(model, jobs[j].context, local, time_view,
                             [&](const std::vector<double>& probs, int) {
                                 return sample_from(probs, local.temperature, rng);
                             });
            }
            ParticipantScore score;
            score.participant_id = p.participant_id;
            score.mc_frequency = mc_frequency(trajs, local);
            score.path_probability = path_probability(trajs, local);
            score.n_paths = local.n_paths;
            for (const auto& path : trajs.paths)
                if (!path.elapsed.empty() && path.elapsed.back() > local.horizon_days)
                    ++score.truncated_paths;
            result.scores[j] = std::move(score);
        } catch (const std::exception& e) {
#pragma omp critical
            error = e.what();
            failed.store(true, std::memory_order_relaxed);
        }
    }
    if (failed.load()) throw numeric_error("score_cohort: " + error);
    return result;
}

void save_scores(const ScoreCohortResult& result, const std::string& scores_path,
                 const std::string& exclusions_path) {
    std::ostringstream out;
    out << "participant_id\testimator\tvalue\tn_paths\ttruncated_paths\n";
    for (const auto& s : result.scores) {
        out << s.participant_id << "\tmc_frequency\t" << fmt_double(s.mc_frequency, 17) << '\t'
            << s.n_paths << '\t' << s.truncated_paths << '\n';
        out << s.participant_id << "\tpath_probability\t" << fmt_double(s.path_probability, 17)
            << '\t' << s.n_paths << '\t' << s.truncated_paths << '\n';
    }
    write_file(scores_path, out.str());

    std::ostringstream ex;
    ex << "participant_id\treason\n";
    for (const auto& [id, reason] : result.exclusions) ex << id << '\t' << reason << '\n';
    write_file(exclusions_path, ex.str());
}

LoadedScores load_scores(const std::string& path) {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line)) throw io_error(path + ": empty score file");
    LoadedScores out;
    std::map<std::string, std::pair<double, double>> by_id;
    std::vector<std::string> order;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_tabs(line);
        if (f.size() != 5) throw io_error(path + ": bad score row '" + line + "'");
        double v = 0.0;
        if (!parse_double(f[2], v)) throw io_error(path + ": bad value '" + f[2] + "'");
        if (!by_id.count(f[0])) order.push_back(f[0]);
        if (f[1] == "mc_frequency") by_id[f[0]].first = v;
        else if (f[1] == "path_probability") by_id[f[0]].second = v;
        else throw io_error(path + ": unknown estimator '" + f[1] + "'");
    }
    for (const auto& id : order) {
        out.participant_ids.push_back(id);
        out.mc_frequency.push_back(by_id[id].first);
        out.path_probability.push_back(by_id[id].second);
    }
    return out;
}

}  // namespace eventfm
