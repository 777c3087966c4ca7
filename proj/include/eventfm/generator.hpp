#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "eventfm/cohort.hpp"
#include "eventfm/model.hpp"
#include "eventfm/tokenizer.hpp"

namespace eventfm {

// Anything that can report a next-token distribution given a growing context.
// One instance serves one path; parallel paths use separate instances.
class PathModel {
public:
    virtual ~PathModel() = default;
    virtual int vocab_size() const = 0;
    // Maximum total tokens (context + generated) this model can hold.
    virtual int max_context() const = 0;
    virtual void begin(const std::vector<int>& context) = 0;
    // Temperature-1 distribution over the next token.
    virtual const std::vector<double>& probs() const = 0;
    virtual void push(int token) = 0;
};

using PathModelFactory = std::function<std::unique_ptr<PathModel>()>;

PathModelFactory transformer_path_model(const Params<float>& params,
                                        const std::vector<double>* prs);

enum class Aggregation { mean, median, max };
const char* aggregation_name(Aggregation a);
std::optional<Aggregation> parse_aggregation(std::string_view s);

struct GenerationTask {
    std::vector<int> target_token_ids;
    long long horizon_days = 1;
    int n_paths = 10;          // N
    int max_new_tokens = 64;   // K
    double temperature = 1.0;
    Aggregation aggregation = Aggregation::mean;
    uint64_t seed = 0;

    void validate() const;
};

struct PathRecord {
    std::vector<int> tokens;            // sampled tokens, at most K
    std::vector<double> p_target;       // target-set mass before sampling each step
    std::vector<long long> elapsed;     // cumulative elapsed days after each step
    int truncation_step = 0;            // 1-based; first step crossing the horizon, or length
};

struct TrajectorySet {
    std::vector<PathRecord> paths;
};

// Day length per token id (0 for non-time tokens) plus the eos id, so the
// sampler does not depend on a full Vocabulary.
struct TokenTimeView {
    std::vector<long long> days;  // size == vocab
    int eos_id = -1;
};

TokenTimeView token_time_view(const Vocabulary& vocab);

TrajectorySet sample_trajectories(const PathModelFactory& factory, const std::vector<int>& context,
                                  const GenerationTask& task, const TokenTimeView& time_view);

// Replay a fixed token sequence through the model, recording the same
// per-step probabilities and truncation as the sampler (enumeration oracle
// entry point).
PathRecord trace_forced_path(PathModel& model, const std::vector<int>& context,
                             const std::vector<int>& forced_tokens, const GenerationTask& task,
                             const TokenTimeView& time_view);

// 1-based truncation step for an arbitrary horizon over a recorded path.
int truncation_step_for(const PathRecord& path, long long horizon_days);

// Fraction of paths containing a target token before the horizon.
double mc_frequency(const TrajectorySet& trajs, const GenerationTask& task);

// Per-path telescoping estimate, aggregated per task.aggregation.
double path_probability(const TrajectorySet& trajs, const GenerationTask& task);
double path_probability_single(const PathRecord& path, const GenerationTask& task);

// ---------------------------------------------------------------------------
// Cohort scoring
// ---------------------------------------------------------------------------

struct ParticipantScore {
    std::string participant_id;
    double mc_frequency = 0.0;
    double path_probability = 0.0;
    int n_paths = 0;
    int truncated_paths = 0;  // paths that crossed the horizon before K tokens
};

struct ScoreCohortResult {
    std::vector<ParticipantScore> scores;
    std::vector<std::pair<std::string, std::string>> exclusions;  // (participant, reason)
};

ScoreCohortResult score_cohort(const ModelCheckpoint& ckpt, const Cohort& cohort,
                               const Vocabulary& vocab, const GenerationTask& task,
                               long long history_days);

void save_scores(const ScoreCohortResult& result, const std::string& scores_path,
                 const std::string& exclusions_path);

struct LoadedScores {
    std::vector<std::string> participant_ids;
    std::vector<double> mc_frequency;
    std::vector<double> path_probability;
};

LoadedScores load_scores(const std::string& path);

}  // namespace eventfm
