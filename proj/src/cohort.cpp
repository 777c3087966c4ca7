#include "eventfm/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "eventfm/common.hpp"

namespace eventfm {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

const char* event_kind_name(EventKind k) {
    switch (k) {
        case EventKind::condition: return "condition";
        case EventKind::procedure: return "procedure";
        case EventKind::measurement: return "measurement";
        case EventKind::visit_start: return "visit_start";
        case EventKind::visit_end: return "visit_end";
        case EventKind::demographic: return "demographic";
    }
    return "?";
}

std::optional<EventKind> parse_event_kind(std::string_view s) {
    if (s == "condition") return EventKind::condition;
    if (s == "procedure") return EventKind::procedure;
    if (s == "measurement") return EventKind::measurement;
    if (s == "visit_start") return EventKind::visit_start;
    if (s == "visit_end") return EventKind::visit_end;
    if (s == "demographic") return EventKind::demographic;
    return std::nullopt;
}

const ParticipantRecord* Cohort::find(const std::string& id) const {
    for (const auto& p : participants)
        if (p.participant_id == id) return &p;
    return nullptr;
}

namespace {

constexpr const char* kEventsHeader = "participant_id\ttime_days\tcode\tkind\tnumeric_value\tvisit_id";

void sort_participant_events(ParticipantRecord& p) {
    std::stable_sort(p.events.begin(), p.events.end(),
                     [](const EventRecord& a, const EventRecord& b) { return a.time_days < b.time_days; });
}

}  // namespace

Cohort load_events(const std::string& path, LoadReport* report) {
    std::string data = read_file(path);
    Cohort cohort;
    std::unordered_map<std::string, size_t> index;

    size_t line_no = 0;
    size_t pos = 0;
    bool saw_header = false;
    while (pos <= data.size()) {
        size_t end = data.find('\n', pos);
        if (end == std::string::npos) end = data.size();
        std::string_view line(data.data() + pos, end - pos);
        pos = end + 1;
        if (line.empty() && pos > data.size()) break;
        ++line_no;
        if (line.empty()) continue;
        if (!saw_header) {
            if (line != kEventsHeader)
                throw io_error(path + ": bad or missing header (expected '" + kEventsHeader + "')");
            saw_header = true;
            continue;
        }
        auto fields = split_tabs(line);
        auto reject = [&](const std::string& why) {
            if (report) report->rejected.push_back({line_no, why});
        };
        if (fields.size() != 6) {
            reject("expected 6 fields, got " + std::to_string(fields.size()));
            continue;
        }
        EventRecord ev;
        ev.participant_id = fields[0];
        if (ev.participant_id.empty()) {
            reject("empty participant_id");
            continue;
        }
        long long t = 0;
        if (!parse_long(fields[1], t)) {
            reject("unparseable time_days '" + fields[1] + "'");
            continue;
        }
        if (t < 0) {
            reject("time_days " + std::to_string(t) + " precedes the cohort epoch");
            continue;
        }
        ev.time_days = t;
        ev.code = fields[2];
        auto kind = parse_event_kind(fields[3]);
        if (!kind) {
            reject("unknown kind '" + fields[3] + "'");
            continue;
        }
        ev.kind = *kind;
        if (ev.kind == EventKind::measurement) {
            double v = 0.0;
            if (fields[4].empty() || !parse_double(fields[4], v)) {
                reject("measurement without a numeric_value");
                continue;
            }
            ev.numeric_value = v;
        } else if (!fields[4].empty()) {
            reject("numeric_value on non-measurement kind");
            continue;
        }
        ev.visit_id = fields[5];

        auto [it, inserted] = index.try_emplace(ev.participant_id, cohort.participants.size());
        if (inserted) {
            ParticipantRecord p;
            p.participant_id = ev.participant_id;
            cohort.participants.push_back(std::move(p));
        }
        ParticipantRecord& p = cohort.participants[it->second];
        if (ev.kind == EventKind::demographic) {
            p.demographics.push_back(ev.code);
        } else {
            p.events.push_back(std::move(ev));
        }
    }
    if (!saw_header && !data.empty())
        throw io_error(path + ": bad or missing header");
    for (auto& p : cohort.participants) sort_participant_events(p);
    return cohort;
}

void save_events(const Cohort& cohort, const std::string& path) {
    std::ostringstream out;
    out << kEventsHeader << "\n";
    for (const auto& p : cohort.participants) {
        for (const auto& d : p.demographics)
            out << p.participant_id << "\t0\t" << d << "\tdemographic\t\t\n";
        for (const auto& e : p.events) {
            out << p.participant_id << '\t' << e.time_days << '\t' << e.code << '\t'
                << event_kind_name(e.kind) << '\t';
            if (e.numeric_value) out << fmt_double(*e.numeric_value, 17);
            out << '\t' << e.visit_id << '\n';
        }
    }
    write_file(path, out.str());
}

void save_cohort_dir(const Cohort& cohort, const std::string& dir) {
    fs::create_directories(dir);
    save_events(cohort, (fs::path(dir) / "events.tsv").string());

    std::ostringstream labels;
    labels << "participant_id\ttask\tpositive\ttime_zero_days\thorizon_days\n";
    for (const auto& p : cohort.participants)
        for (const auto& [task, lbl] : p.labels)
            labels << p.participant_id << '\t' << task << '\t' << (lbl.positive ? 1 : 0) << '\t'
                   << lbl.time_zero_days << '\t' << lbl.horizon_days << '\n';
    write_file((fs::path(dir) / "labels.tsv").string(), labels.str());

    std::ostringstream prs;
    const ParticipantRecord* first_with_prs = nullptr;
    for (const auto& p : cohort.participants)
        if (p.prs) {
            first_with_prs = &p;
            break;
        }
    if (first_with_prs) {
        prs << "participant_id";
        for (const auto& t : first_with_prs->prs->trait_ids) prs << '\t' << t;
        prs << '\n';
        for (const auto& p : cohort.participants) {
            if (!p.prs) continue;
            prs << p.participant_id;
            for (double v : p.prs->values) prs << '\t' << fmt_double(v, 17);
            prs << '\n';
        }
    } else {
        prs << "participant_id\n";
    }
    write_file((fs::path(dir) / "prs.tsv").string(), prs.str());

    size_t n_events = 0;
    for (const auto& p : cohort.participants) n_events += p.events.size();
    ordered_json manifest;
    manifest["epoch"] = cohort.epoch;
    manifest["provenance"] = cohort.provenance == Provenance::synthetic ? "synthetic" : "ingested";
    manifest["n_participants"] = cohort.participants.size();
    manifest["n_events"] = n_events;
    write_file((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

Cohort load_cohort_dir(const std::string& dir) {
    Cohort cohort = load_events((fs::path(dir) / "events.tsv").string());

    auto manifest_path = fs::path(dir) / "manifest.json";
    if (fs::exists(manifest_path)) {
        auto manifest = ordered_json::parse(read_file(manifest_path.string()));
        cohort.epoch = manifest.value("epoch", cohort.epoch);
        cohort.provenance = manifest.value("provenance", "ingested") == std::string("synthetic")
                                ? Provenance::synthetic
                                : Provenance::ingested;
    }

    std::unordered_map<std::string, ParticipantRecord*> by_id;
    for (auto& p : cohort.participants) by_id[p.participant_id] = &p;

    auto labels_path = fs::path(dir) / "labels.tsv";
    if (fs::exists(labels_path)) {
        std::istringstream in(read_file(labels_path.string()));
        std::string line;
        bool header = true;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            if (header) {
                header = false;
                continue;
            }
            auto f = split_tabs(line);
            if (f.size() != 5) throw io_error(labels_path.string() + ": bad row '" + line + "'");
            auto it = by_id.find(f[0]);
            if (it == by_id.end()) continue;
            TaskLabel lbl;
            lbl.positive = f[2] == "1";
            long long tz = 0, hz = 0;
            if (!parse_long(f[3], tz) || !parse_long(f[4], hz))
                throw io_error(labels_path.string() + ": bad numbers in '" + line + "'");
            lbl.time_zero_days = tz;
            lbl.horizon_days = hz;
            it->second->labels[f[1]] = lbl;
        }
    }

    auto prs_path = fs::path(dir) / "prs.tsv";
    if (fs::exists(prs_path)) {
        std::istringstream in(read_file(prs_path.string()));
        std::string line;
        std::vector<std::string> traits;
        bool header = true;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto f = split_tabs(line);
            if (header) {
                header = false;
                traits.assign(f.begin() + 1, f.end());
                continue;
            }
            auto it = by_id.find(f[0]);
            if (it == by_id.end()) continue;
            if (f.size() != traits.size() + 1)
                throw io_error(prs_path.string() + ": row width mismatch for " + f[0]);
            PrsValues prs;
            prs.trait_ids = traits;
            prs.values.reserve(traits.size());
            for (size_t i = 1; i < f.size(); ++i) {
                double v = 0.0;
                if (!parse_double(f[i], v))
                    throw io_error(prs_path.string() + ": bad value '" + f[i] + "'");
                prs.values.push_back(v);
            }
            it->second->prs = std::move(prs);
        }
    }
    return cohort;
}

Cohort filter_participants(const Cohort& cohort, size_t min_events, size_t max_events) {
    if (min_events > max_events) throw numeric_error("filter_participants: min_events > max_events");
    Cohort out;
    out.epoch = cohort.epoch;
    out.provenance = cohort.provenance;
    for (const auto& p : cohort.participants) {
        const size_t n = p.events.size();
        if (n >= min_events && n <= max_events) out.participants.push_back(p);
    }
    return out;
}

Cohort filter_rare_codes(const Cohort& cohort, size_t min_participants) {
    if (min_participants < 1) throw numeric_error("filter_rare_codes: min_participants must be >= 1");
    auto is_code_kind = [](EventKind k) {
        return k == EventKind::condition || k == EventKind::procedure || k == EventKind::measurement;
    };
    std::unordered_map<std::string, std::unordered_set<std::string>> code_participants;
    for (const auto& p : cohort.participants)
        for (const auto& e : p.events)
            if (is_code_kind(e.kind)) code_participants[e.code].insert(p.participant_id);

    Cohort out;
    out.epoch = cohort.epoch;
    out.provenance = cohort.provenance;
    for (const auto& p : cohort.participants) {
        ParticipantRecord q = p;
        q.events.clear();
        for (const auto& e : p.events) {
            if (is_code_kind(e.kind) && code_participants[e.code].size() < min_participants) continue;
            q.events.push_back(e);
        }
        out.participants.push_back(std::move(q));
    }
    return out;
}

std::pair<Cohort, Cohort> split(const Cohort& cohort, double test_fraction, uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw numeric_error("split: test_fraction must be in (0,1)");
    const size_t n = cohort.participants.size();
    if (n < 2) throw numeric_error("split: need at least 2 participants");
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(derive_seed(seed, {hash_str("cohort-split")}));
    rng.shuffle(order);
    const size_t n_test = static_cast<size_t>(std::llround(static_cast<double>(n) * test_fraction));

    Cohort train, test;
    train.epoch = test.epoch = cohort.epoch;
    train.provenance = test.provenance = cohort.provenance;
    std::vector<bool> in_test(n, false);
    for (size_t i = 0; i < n_test; ++i) in_test[order[i]] = true;
    for (size_t i = 0; i < n; ++i)
        (in_test[i] ? test : train).participants.push_back(cohort.participants[i]);
    return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

void SynthConfig::validate() const {
    if (n_participants < 1 || n_traits < 1 || n_codes < 1)
        throw numeric_error("SynthConfig: counts must be >= 1");
    if (!(visit_rate_per_year > 0.0)) throw numeric_error("SynthConfig: visit rate must be > 0");
    if (noise_sd < 0.0) throw numeric_error("SynthConfig: noise_sd must be >= 0");
}

std::string prodromal_code(int i) { return "PRO_" + std::to_string(i); }

double tagging_weight(size_t trait) {
    static const double w[kNumTaggingTraits] = {1.0, 0.8, 0.6, 0.4};
    return trait < kNumTaggingTraits ? w[trait] : 0.0;
}

double tagging_prs_sum(const PrsValues& prs) {
    double s = 0.0;
    const size_t n = std::min<size_t>(kNumTaggingTraits, prs.values.size());
    for (size_t j = 0; j < n; ++j) s += prs.values[j];
    return s;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

constexpr double kTargetHazardBase = -6.0;
constexpr double kProdromalBase = -2.2;
constexpr double kProdromalSlope = 0.6;
constexpr double kChronicReemit = 0.4;

}  // namespace

Cohort generate_synthetic(const SynthConfig& config) {
    config.validate();
    Cohort cohort;
    cohort.epoch = "2010-01-01";
    cohort.provenance = Provenance::synthetic;
    cohort.participants.reserve(config.n_participants);

    const size_t n_meas_codes = std::max<size_t>(2, config.n_codes / 6);
    std::vector<std::string> trait_ids(config.n_traits);
    for (size_t j = 0; j < config.n_traits; ++j) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "trait_%02zu", j);
        trait_ids[j] = buf;
    }

    for (size_t idx = 0; idx < config.n_participants; ++idx) {
        Rng rng(derive_seed(config.seed, {hash_str("participant"), idx}));
        ParticipantRecord p;
        {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "P%06zu", idx);
            p.participant_id = buf;
        }
        const bool female = rng.uniform() < 0.52;
        p.demographics.push_back(female ? "DEM_SEX_F" : "DEM_SEX_M");
        p.demographics.push_back(female ? "DEM_GENDER_F" : "DEM_GENDER_M");
        const char* races[4] = {"DEM_RACE_A", "DEM_RACE_B", "DEM_RACE_C", "DEM_RACE_D"};
        p.demographics.push_back(races[rng.below(4)]);

        const double g = rng.normal();
        PrsValues prs;
        prs.trait_ids = trait_ids;
        prs.values.resize(config.n_traits);
        for (size_t j = 0; j < config.n_traits; ++j)
            prs.values[j] = tagging_weight(j) * g + config.noise_sd * rng.normal();
        p.prs = std::move(prs);

        const double span_years = rng.uniform(4.0, 7.0);
        const long long span_days = static_cast<long long>(span_years * 365.0);
        const int n_visits = rng.poisson(config.visit_rate_per_year * span_years);
        std::set<long long> visit_days;
        for (int v = 0; v < n_visits; ++v) {
            for (int attempt = 0; attempt < 16; ++attempt) {
                long long day = 1 + static_cast<long long>(rng.below(static_cast<uint64_t>(span_days)));
                if (visit_days.insert(day).second) break;
            }
        }

        const double prodromal_p = sigmoid(kProdromalBase + kProdromalSlope * config.genetic_effect * g);
        bool prodromal_seen[kNumProdromalCodes] = {false, false, false};
        int prodromal_distinct = 0;
        bool onset = false;
        long long onset_day = -1;
        int visit_no = 0;
        for (long long day : visit_days) {
            ++visit_no;
            const bool inpatient = rng.uniform() < 0.15;
            const std::string visit_id = "V" + std::to_string(visit_no);
            const std::string visit_type = inpatient ? "VT_INPT" : "VT_OUTPT";
            p.events.push_back({p.participant_id, day, visit_type, EventKind::visit_start, std::nullopt, visit_id});

            const int n_inner = 1 + rng.poisson(1.2);
            for (int e = 0; e < n_inner; ++e) {
                if (rng.uniform() < 0.25) {
                    const size_t m = rng.below(n_meas_codes);
                    char buf[16];
                    std::snprintf(buf, sizeof(buf), "M%02zu", m);
                    const double value = rng.normal(40.0 + 15.0 * static_cast<double>(m), 10.0);
                    p.events.push_back({p.participant_id, day, buf, EventKind::measurement, value, visit_id});
                } else {
                    // zipf-ish draw over the condition codes
                    const double u = rng.uniform();
                    const size_t c = std::min<size_t>(config.n_codes - 1,
                                                      static_cast<size_t>(std::pow(static_cast<double>(config.n_codes), u)) - 1);
                    char buf[16];
                    std::snprintf(buf, sizeof(buf), "C%03zu", c);
                    p.events.push_back({p.participant_id, day, buf, EventKind::condition, std::nullopt, visit_id});
                }
            }
            for (int c = 0; c < kNumProdromalCodes; ++c) {
                if (rng.uniform() < prodromal_p) {
                    p.events.push_back({p.participant_id, day, prodromal_code(c), EventKind::condition, std::nullopt, visit_id});
                    if (!prodromal_seen[c]) {
                        prodromal_seen[c] = true;
                        ++prodromal_distinct;
                    }
                }
            }
            if (!onset) {
                const double h = sigmoid(kTargetHazardBase + config.genetic_effect * g +
                                         config.history_effect * prodromal_distinct);
                if (rng.uniform() < h) {
                    onset = true;
                    onset_day = day;
                    p.events.push_back({p.participant_id, day, kTargetCode, EventKind::condition, std::nullopt, visit_id});
                }
            } else if (rng.uniform() < kChronicReemit) {
                p.events.push_back({p.participant_id, day, kTargetCode, EventKind::condition, std::nullopt, visit_id});
            }
            p.events.push_back({p.participant_id, day, visit_type, EventKind::visit_end, std::nullopt, visit_id});
        }

        TaskLabel lbl;
        lbl.time_zero_days = 0;
        lbl.horizon_days = kTargetHorizonDays;
        lbl.positive = onset && onset_day > 0 && onset_day <= kTargetHorizonDays;
        p.labels[kTargetTask] = lbl;

        sort_participant_events(p);
        cohort.participants.push_back(std::move(p));
    }
    return cohort;
}

}  // namespace eventfm
