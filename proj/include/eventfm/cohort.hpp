#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace eventfm {

enum class EventKind { condition, procedure, measurement, visit_start, visit_end, demographic };

const char* event_kind_name(EventKind k);
std::optional<EventKind> parse_event_kind(std::string_view s);

struct EventRecord {
    std::string participant_id;
    long long time_days = 0;        // days since the cohort epoch
    std::string code;
    EventKind kind = EventKind::condition;
    std::optional<double> numeric_value;  // present iff kind == measurement
    std::string visit_id;                 // empty when the event is not tied to a visit
};

struct TaskLabel {
    bool positive = false;
    long long time_zero_days = 0;
    long long horizon_days = 0;
};

struct PrsValues {
    std::vector<double> values;
    std::vector<std::string> trait_ids;
};

struct ParticipantRecord {
    std::string participant_id;
    std::vector<std::string> demographics;  // demographic codes in input order
    std::vector<EventRecord> events;        // sorted by (time_days, input order)
    std::optional<PrsValues> prs;
    std::map<std::string, TaskLabel> labels;
};

enum class Provenance { ingested, synthetic };

struct Cohort {
    std::vector<ParticipantRecord> participants;
    std::string epoch = "2000-01-01";
    Provenance provenance = Provenance::ingested;

    const ParticipantRecord* find(const std::string& id) const;
};

struct ParseIssue {
    size_t line_no = 0;
    std::string message;
};

struct LoadReport {
    std::vector<ParseIssue> rejected;  // malformed lines, with diagnostics
};

// Events file: UTF-8 TSV with a required header
// participant_id\ttime_days\tcode\tkind\tnumeric_value\tvisit_id
Cohort load_events(const std::string& path, LoadReport* report = nullptr);
void save_events(const Cohort& cohort, const std::string& path);

// Cohort directory layout: events.tsv + labels.tsv + prs.tsv + manifest.json.
Cohort load_cohort_dir(const std::string& dir);
void save_cohort_dir(const Cohort& cohort, const std::string& dir);

Cohort filter_participants(const Cohort& cohort, size_t min_events, size_t max_events);
Cohort filter_rare_codes(const Cohort& cohort, size_t min_participants);

// Deterministic disjoint split; test size is round(n * test_fraction).
std::pair<Cohort, Cohort> split(const Cohort& cohort, double test_fraction, uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic cohort with a planted genetic latent.
//
// Per participant a latent g ~ N(0,1) drives (a) a sparse subset of PRS
// traits, (b) mildly elevated emission of three prodromal codes, and (c) the
// per-visit hazard of the target condition, which is logistic in
// genetic_effect*g + history_effect*(prodromal count so far).
// ---------------------------------------------------------------------------

struct SynthConfig {
    size_t n_participants = 2000;
    size_t n_traits = 16;
    size_t n_codes = 60;   // condition/procedure codes; measurements added on top
    double visit_rate_per_year = 8.0;
    double genetic_effect = 1.0;
    double history_effect = 0.8;
    double noise_sd = 0.5;
    uint64_t seed = 1;

    void validate() const;
};

// Fixed structural names used by the generator.
inline constexpr const char* kTargetCode = "TARGET_COND";
inline constexpr const char* kTargetTask = "target_onset";
inline constexpr long long kTargetHorizonDays = 1460;
inline constexpr int kNumProdromalCodes = 3;
inline constexpr int kNumTaggingTraits = 4;

std::string prodromal_code(int i);
// Weight of latent g on tagging trait j (0 for non-tagging traits).
double tagging_weight(size_t trait);
// Sum of the tagging-trait PRS entries, the raw genetic baseline score.
double tagging_prs_sum(const PrsValues& prs);

Cohort generate_synthetic(const SynthConfig& config);

}  // namespace eventfm
