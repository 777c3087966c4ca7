#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "eventfm/cohort.hpp"

namespace eventfm {

enum class TokenKind : uint8_t {
    code,
    quantile,
    time_interval,
    visit_start,
    visit_end,
    demographic,
    pad,
    bos,
    eos,
    unknown
};

const char* token_kind_name(TokenKind k);

struct VocabEntry {
    std::string text;
    TokenKind kind = TokenKind::code;
    long long days = 0;  // day length for time_interval tokens, else 0
};

struct BuildVocabReport;

// Token ids are dense; specials occupy fixed slots at the front.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnknown = 3;

    // {1d..10y}; the endpoints are fixed, the interior is a geometric-ish ladder.
    static const std::vector<long long>& default_time_grid();

    int size() const { return static_cast<int>(entries_.size()); }
    const VocabEntry& entry(int id) const;
    int id_of(const std::string& text) const;  // -1 when absent
    int id_or_unknown(const std::string& text) const;
    TokenKind kind(int id) const { return entry(id).kind; }
    long long time_days(int id) const { return entry(id).days; }

    int n_quantiles() const { return n_quantiles_; }
    const std::vector<long long>& time_grid() const { return time_grid_; }
    const std::map<std::string, std::vector<double>>& quantile_bounds() const { return quantile_bounds_; }

    // 1-based quantile bucket for a measurement value; ties at a boundary go
    // to the lower bucket.
    int quantile_bucket(const std::string& code, double value) const;
    int quantile_token_id(const std::string& code, int bucket) const;
    int time_token_id(long long days) const;

    std::vector<int> ids_of_kind(TokenKind k) const;
    // Code tokens whose text contains the (case-sensitive) stem.
    std::vector<int> code_ids_containing(const std::string& stem) const;

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

    friend Vocabulary build_vocabulary(const Cohort& train, int n_quantiles, BuildVocabReport* report);

private:
    std::vector<VocabEntry> entries_;
    std::unordered_map<std::string, int> text_to_id_;
    std::map<std::string, std::vector<double>> quantile_bounds_;
    std::vector<long long> time_grid_;
    int n_quantiles_ = 10;

    int add(const std::string& text, TokenKind kind, long long days = 0);
};

struct BuildVocabReport {
    // measurement codes whose training values could not fill distinct boundaries
    std::vector<std::string> collapsed_quantile_codes;
};

Vocabulary build_vocabulary(const Cohort& train, int n_quantiles, BuildVocabReport* report = nullptr);

// Greedy largest-first decomposition of a day gap over the grid, capped at
// kMaxTimeTokensPerGap tokens (the remainder is dropped once the cap binds).
inline constexpr int kMaxTimeTokensPerGap = 5;
std::vector<long long> decompose_gap(long long gap_days, const std::vector<long long>& grid);

struct TokenSequence {
    std::vector<int> ids;
    std::vector<long long> time_offsets_days;  // cumulative day offset at each token
};

TokenSequence encode(const ParticipantRecord& p, const Vocabulary& vocab);
std::vector<std::string> decode(const std::vector<int>& ids, const Vocabulary& vocab);

// Scoring-time context: bos + demographics + events in (0, history_days] with
// the usual time-token interleaving + trailing alignment time tokens that
// bring the clock to exactly history_days.
TokenSequence encode_context(const ParticipantRecord& p, const Vocabulary& vocab, long long history_days);

}  // namespace eventfm
