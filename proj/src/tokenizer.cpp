#include "eventfm/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "eventfm/common.hpp"

namespace eventfm {

using ordered_json = nlohmann::ordered_json;

const char* token_kind_name(TokenKind k) {
    switch (k) {
        case TokenKind::code: return "code";
        case TokenKind::quantile: return "quantile";
        case TokenKind::time_interval: return "time_interval";
        case TokenKind::visit_start: return "visit_start";
        case TokenKind::visit_end: return "visit_end";
        case TokenKind::demographic: return "demographic";
        case TokenKind::pad: return "pad";
        case TokenKind::bos: return "bos";
        case TokenKind::eos: return "eos";
        case TokenKind::unknown: return "unknown";
    }
    return "?";
}

namespace {

TokenKind parse_token_kind(const std::string& s) {
    for (int k = 0; k <= static_cast<int>(TokenKind::unknown); ++k)
        if (s == token_kind_name(static_cast<TokenKind>(k))) return static_cast<TokenKind>(k);
    throw io_error("unknown token kind '" + s + "'");
}

std::string time_token_text(long long days) { return "<t:" + std::to_string(days) + "d>"; }

std::string quantile_token_text(const std::string& code, int bucket, int n) {
    return code + "|q" + std::to_string(bucket) + "/" + std::to_string(n);
}

std::string visit_start_text(const std::string& type) { return "VS:" + type; }

constexpr const char* kVisitEndText = "VE";

}  // namespace

const std::vector<long long>& Vocabulary::default_time_grid() {
    static const std::vector<long long> grid = {1, 2, 4, 7, 14, 30, 60, 90, 180, 365, 730, 1825, 3650};
    return grid;
}

int Vocabulary::add(const std::string& text, TokenKind kind, long long days) {
    auto it = text_to_id_.find(text);
    if (it != text_to_id_.end()) return it->second;
    const int id = static_cast<int>(entries_.size());
    entries_.push_back({text, kind, days});
    text_to_id_.emplace(text, id);
    return id;
}

const VocabEntry& Vocabulary::entry(int id) const {
    if (id < 0 || id >= size()) throw numeric_error("token id " + std::to_string(id) + " out of range");
    return entries_[static_cast<size_t>(id)];
}

int Vocabulary::id_of(const std::string& text) const {
    auto it = text_to_id_.find(text);
    return it == text_to_id_.end() ? -1 : it->second;
}

int Vocabulary::id_or_unknown(const std::string& text) const {
    const int id = id_of(text);
    return id < 0 ? kUnknown : id;
}

int Vocabulary::quantile_bucket(const std::string& code, double value) const {
    auto it = quantile_bounds_.find(code);
    if (it == quantile_bounds_.end()) return -1;
    int below = 0;
    for (double b : it->second)
        if (b < value) ++below;
    return below + 1;
}

int Vocabulary::quantile_token_id(const std::string& code, int bucket) const {
    return id_of(quantile_token_text(code, bucket, n_quantiles_));
}

int Vocabulary::time_token_id(long long days) const { return id_of(time_token_text(days)); }

std::vector<int> Vocabulary::ids_of_kind(TokenKind k) const {
    std::vector<int> out;
    for (int i = 0; i < size(); ++i)
        if (entries_[static_cast<size_t>(i)].kind == k) out.push_back(i);
    return out;
}

std::vector<int> Vocabulary::code_ids_containing(const std::string& stem) const {
    std::vector<int> out;
    for (int i = 0; i < size(); ++i) {
        const auto& e = entries_[static_cast<size_t>(i)];
        if (e.kind == TokenKind::code && e.text.find(stem) != std::string::npos) out.push_back(i);
    }
    return out;
}

void Vocabulary::save(const std::string& path) const {
    ordered_json j;
    j["format_version"] = 1;
    j["n_quantiles"] = n_quantiles_;
    j["time_grid"] = time_grid_;
    ordered_json tokens = ordered_json::array();
    for (int i = 0; i < size(); ++i) {
        const auto& e = entries_[static_cast<size_t>(i)];
        ordered_json t;
        t["id"] = i;
        t["text"] = e.text;
        t["kind"] = token_kind_name(e.kind);
        if (e.kind == TokenKind::time_interval) t["days"] = e.days;
        tokens.push_back(std::move(t));
    }
    j["tokens"] = std::move(tokens);
    ordered_json qb;
    for (const auto& [code, bounds] : quantile_bounds_) qb[code] = bounds;
    j["quantile_bounds"] = std::move(qb);
    write_file(path, j.dump(2) + "\n");
}

Vocabulary Vocabulary::load(const std::string& path) {
    auto j = ordered_json::parse(read_file(path));
    if (j.value("format_version", 0) != 1)
        throw io_error(path + ": unsupported vocabulary format_version");
    Vocabulary v;
    v.n_quantiles_ = j.at("n_quantiles").get<int>();
    v.time_grid_ = j.at("time_grid").get<std::vector<long long>>();
    for (const auto& t : j.at("tokens")) {
        const int id = t.at("id").get<int>();
        if (id != v.size()) throw io_error(path + ": non-contiguous token ids");
        v.add(t.at("text").get<std::string>(), parse_token_kind(t.at("kind").get<std::string>()),
              t.value("days", 0LL));
    }
    for (auto it = j.at("quantile_bounds").begin(); it != j.at("quantile_bounds").end(); ++it)
        v.quantile_bounds_[it.key()] = it.value().get<std::vector<double>>();
    if (v.size() <= kUnknown || v.entries_[kPad].kind != TokenKind::pad)
        throw io_error(path + ": vocabulary missing special tokens");
    return v;
}

Vocabulary build_vocabulary(const Cohort& train, int n_quantiles, BuildVocabReport* report) {
    if (train.participants.empty()) throw numeric_error("build_vocabulary: empty training cohort");
    if (n_quantiles < 2) throw numeric_error("build_vocabulary: n_quantiles must be >= 2");

    Vocabulary v;
    v.n_quantiles_ = n_quantiles;
    v.time_grid_ = Vocabulary::default_time_grid();
    v.add("<pad>", TokenKind::pad);
    v.add("<bos>", TokenKind::bos);
    v.add("<eos>", TokenKind::eos);
    v.add("<unk>", TokenKind::unknown);
    for (long long d : v.time_grid_) v.add(time_token_text(d), TokenKind::time_interval, d);

    std::set<std::string> demographics;
    std::set<std::string> visit_types;
    std::set<std::string> codes;
    std::map<std::string, std::vector<double>> measurement_values;
    for (const auto& p : train.participants) {
        for (const auto& d : p.demographics) demographics.insert(d);
        for (const auto& e : p.events) {
            switch (e.kind) {
                case EventKind::visit_start:
                    visit_types.insert(e.code);
                    break;
                case EventKind::visit_end:
                    break;
                case EventKind::measurement:
                    if (e.numeric_value) measurement_values[e.code].push_back(*e.numeric_value);
                    break;
                case EventKind::condition:
                case EventKind::procedure:
                    codes.insert(e.code);
                    break;
                case EventKind::demographic:
                    demographics.insert(e.code);
                    break;
            }
        }
    }

    for (const auto& d : demographics) v.add(d, TokenKind::demographic);
    for (const auto& t : visit_types) v.add(visit_start_text(t), TokenKind::visit_start);
    v.add(kVisitEndText, TokenKind::visit_end);
    for (const auto& c : codes) v.add(c, TokenKind::code);

    for (auto& [code, values] : measurement_values) {
        std::sort(values.begin(), values.end());
        const size_t n = values.size();
        std::vector<double> bounds;
        bounds.reserve(static_cast<size_t>(n_quantiles - 1));
        for (int k = 1; k < n_quantiles; ++k) {
            const double p = static_cast<double>(k) / n_quantiles;
            size_t idx = static_cast<size_t>(std::ceil(p * static_cast<double>(n)));
            idx = idx == 0 ? 0 : idx - 1;
            if (idx >= n) idx = n - 1;
            bounds.push_back(values[idx]);
        }
        std::set<double> distinct(values.begin(), values.end());
        if (report && distinct.size() < static_cast<size_t>(n_quantiles))
            report->collapsed_quantile_codes.push_back(code);
        v.quantile_bounds_[code] = std::move(bounds);
        for (int b = 1; b <= n_quantiles; ++b)
            v.add(quantile_token_text(code, b, n_quantiles), TokenKind::quantile);
    }
    return v;
}

std::vector<long long> decompose_gap(long long gap_days, const std::vector<long long>& grid) {
    if (gap_days < 0) throw numeric_error("decompose_gap: negative gap");
    std::vector<long long> out;
    long long rem = gap_days;
    while (rem >= grid.front() && static_cast<int>(out.size()) < kMaxTimeTokensPerGap) {
        long long step = grid.front();
        for (long long g : grid) {
            if (g <= rem) step = g;
        }
        out.push_back(step);
        rem -= step;
    }
    return out;
}

namespace {

struct SeqBuilder {
    const Vocabulary& vocab;
    TokenSequence seq;
    long long clock = 0;

    explicit SeqBuilder(const Vocabulary& v) : vocab(v) {}

    void push(int id) {
        seq.ids.push_back(id);
        seq.time_offsets_days.push_back(clock);
    }

    void push_gap(long long gap_days) {
        for (long long d : decompose_gap(gap_days, vocab.time_grid())) {
            const int id = vocab.time_token_id(d);
            clock += d;
            seq.ids.push_back(id);
            seq.time_offsets_days.push_back(clock);
        }
    }

    void push_event(const EventRecord& e) {
        switch (e.kind) {
            case EventKind::visit_start:
                push(vocab.id_or_unknown(visit_start_text(e.code)));
                break;
            case EventKind::visit_end:
                push(vocab.id_or_unknown(kVisitEndText));
                break;
            case EventKind::measurement: {
                const int bucket = e.numeric_value ? vocab.quantile_bucket(e.code, *e.numeric_value) : -1;
                const int id = bucket > 0 ? vocab.quantile_token_id(e.code, bucket) : -1;
                push(id >= 0 ? id : Vocabulary::kUnknown);
                break;
            }
            case EventKind::condition:
            case EventKind::procedure:
                push(vocab.id_or_unknown(e.code));
                break;
            case EventKind::demographic:
                push(vocab.id_or_unknown(e.code));
                break;
        }
    }
};

}  // namespace

TokenSequence encode(const ParticipantRecord& p, const Vocabulary& vocab) {
    SeqBuilder b(vocab);
    b.push(Vocabulary::kBos);
    for (const auto& d : p.demographics) b.push(vocab.id_or_unknown(d));
    long long prev_day = 0;  // day 0 is the participant's timeline origin
    for (const auto& e : p.events) {
        if (e.time_days > prev_day) {
            b.push_gap(e.time_days - prev_day);
            prev_day = e.time_days;
        }
        b.push_event(e);
    }
    b.push(Vocabulary::kEos);
    return b.seq;
}

TokenSequence encode_context(const ParticipantRecord& p, const Vocabulary& vocab, long long history_days) {
    if (history_days < 0) throw numeric_error("encode_context: negative history window");
    SeqBuilder b(vocab);
    b.push(Vocabulary::kBos);
    for (const auto& d : p.demographics) b.push(vocab.id_or_unknown(d));
    long long prev_day = 0;
    for (const auto& e : p.events) {
        if (e.time_days > history_days) break;
        if (e.time_days > prev_day) {
            b.push_gap(e.time_days - prev_day);
            prev_day = e.time_days;
        }
        b.push_event(e);
    }
    if (history_days > prev_day) b.push_gap(history_days - prev_day);
    return b.seq;
}

std::vector<std::string> decode(const std::vector<int>& ids, const Vocabulary& vocab) {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int id : ids) out.push_back(vocab.entry(id).text);
    return out;
}

}  // namespace eventfm
