#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "eventfm/cohort.hpp"
#include "eventfm/common.hpp"
#include "eventfm/stats.hpp"

using namespace eventfm;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const std::string& name) {
    auto dir = fs::temp_directory_path() / "eventfm_cohort_tests";
    fs::create_directories(dir);
    return (dir / name).string();
}

constexpr const char* kHeader = "participant_id\ttime_days\tcode\tkind\tnumeric_value\tvisit_id";

}  // namespace

TEST_CASE("load_events sorts and groups a small fixture") {
    const std::string path = temp_path("basic.tsv");
    write_file(path, std::string(kHeader) +
                         "\n"
                         "P1\t30\tC001\tcondition\t\tV2\n"
                         "P1\t5\tC002\tcondition\t\tV1\n"
                         "P1\t5\tM01\tmeasurement\t42.5\tV1\n");
    LoadReport report;
    Cohort c = load_events(path, &report);
    REQUIRE(c.participants.size() == 1);
    CHECK(report.rejected.empty());
    const auto& p = c.participants[0];
    REQUIRE(p.events.size() == 3);
    CHECK(p.events[0].time_days == 5);
    CHECK(p.events[0].code == "C002");  // stable order within the same day
    CHECK(p.events[1].code == "M01");
    CHECK(p.events[1].numeric_value == doctest::Approx(42.5));
    CHECK(p.events[2].time_days == 30);
}

TEST_CASE("load_events accepts an empty file body") {
    const std::string path = temp_path("empty.tsv");
    write_file(path, std::string(kHeader) + "\n");
    LoadReport report;
    Cohort c = load_events(path, &report);
    CHECK(c.participants.empty());
    CHECK(report.rejected.empty());
}

TEST_CASE("malformed rows are rejected with diagnostics, the rest kept") {
    const std::string path = temp_path("malformed.tsv");
    write_file(path, std::string(kHeader) +
                         "\n"
                         "P1\t5\tM01\tmeasurement\t\tV1\n"     // measurement without value
                         "P1\t6\tC001\tcondition\t\tV1\n"
                         "P1\t-3\tC002\tcondition\t\tV1\n"     // before the epoch
                         "P1\t7\tC003\tbogus_kind\t\tV1\n"
                         "P1\t8\tC004\tcondition\t1.5\tV1\n");  // value on a condition
    LoadReport report;
    Cohort c = load_events(path, &report);
    REQUIRE(c.participants.size() == 1);
    CHECK(c.participants[0].events.size() == 1);
    CHECK(c.participants[0].events[0].code == "C001");
    CHECK(report.rejected.size() == 4);
}

TEST_CASE("missing header is an error") {
    const std::string path = temp_path("noheader.tsv");
    write_file(path, "P1\t5\tC1\tcondition\t\t\n");
    CHECK_THROWS_AS(load_events(path), io_error);
}

namespace {

Cohort cohort_with_event_counts(const std::vector<size_t>& counts) {
    Cohort c;
    for (size_t i = 0; i < counts.size(); ++i) {
        ParticipantRecord p;
        p.participant_id = "P" + std::to_string(i);
        for (size_t e = 0; e < counts[i]; ++e)
            p.events.push_back({p.participant_id, static_cast<long long>(e), "C1",
                                EventKind::condition, std::nullopt, ""});
        c.participants.push_back(std::move(p));
    }
    return c;
}

}  // namespace

TEST_CASE("filter_participants applies inclusive bounds") {
    Cohort c = cohort_with_event_counts({50, 150, 2500});
    Cohort f = filter_participants(c, 100, 2000);
    REQUIRE(f.participants.size() == 1);
    CHECK(f.participants[0].events.size() == 150);

    CHECK(filter_participants(c, 0, SIZE_MAX).participants.size() == 3);
    CHECK(filter_participants(c, 3000, SIZE_MAX).participants.empty());

    // idempotence with the same bounds
    Cohort ff = filter_participants(f, 100, 2000);
    CHECK(ff.participants.size() == f.participants.size());
}

TEST_CASE("filter_rare_codes drops codes below the participant threshold") {
    Cohort c;
    for (int i = 0; i < 300; ++i) {
        ParticipantRecord p;
        p.participant_id = "P" + std::to_string(i);
        p.events.push_back({p.participant_id, 1, "COMMON", EventKind::condition, std::nullopt, ""});
        if (i == 0)
            p.events.push_back({p.participant_id, 2, "RARE", EventKind::condition, std::nullopt, ""});
        c.participants.push_back(std::move(p));
    }
    Cohort f = filter_rare_codes(c, 200);
    for (const auto& p : f.participants)
        for (const auto& e : p.events) CHECK(e.code != "RARE");
    CHECK(f.participants[0].events.size() == 1);

    // threshold 1 is the identity
    Cohort id = filter_rare_codes(c, 1);
    CHECK(id.participants[0].events.size() == 2);

    // threshold above cohort size removes all code events; demographics survive
    Cohort demo = c;
    demo.participants[0].demographics.push_back("DEM_SEX_F");
    Cohort wiped = filter_rare_codes(demo, 1000);
    size_t remaining = 0;
    for (const auto& p : wiped.participants) remaining += p.events.size();
    CHECK(remaining == 0);
    CHECK(wiped.participants[0].demographics.size() == 1);
}

TEST_CASE("filter_rare_codes preserves per-participant event order") {
    SynthConfig cfg;
    cfg.n_participants = 30;
    cfg.seed = 5;
    Cohort c = generate_synthetic(cfg);
    Cohort f = filter_rare_codes(c, 2);
    for (size_t i = 0; i < f.participants.size(); ++i) {
        const auto& kept = f.participants[i].events;
        for (size_t e = 1; e < kept.size(); ++e) CHECK(kept[e - 1].time_days <= kept[e].time_days);
        // kept events appear in the original order
        size_t cursor = 0;
        for (const auto& orig : c.participants[i].events) {
            if (cursor < kept.size() && orig.code == kept[cursor].code &&
                orig.time_days == kept[cursor].time_days)
                ++cursor;
        }
        CHECK(cursor == kept.size());
    }
}

TEST_CASE("split is exact, disjoint and seed-deterministic") {
    Cohort c = cohort_with_event_counts(std::vector<size_t>(100, 3));
    auto [train1, test1] = split(c, 0.1, 7);
    CHECK(train1.participants.size() == 90);
    CHECK(test1.participants.size() == 10);

    std::set<std::string> seen;
    for (const auto& p : train1.participants) seen.insert(p.participant_id);
    for (const auto& p : test1.participants) CHECK(seen.count(p.participant_id) == 0);
    for (const auto& p : test1.participants) seen.insert(p.participant_id);
    CHECK(seen.size() == 100);

    auto [train2, test2] = split(c, 0.1, 7);
    REQUIRE(test1.participants.size() == test2.participants.size());
    for (size_t i = 0; i < test1.participants.size(); ++i)
        CHECK(test1.participants[i].participant_id == test2.participants[i].participant_id);

    auto [train3, test3] = split(c, 0.1, 8);
    std::set<std::string> t1, t3;
    for (const auto& p : test1.participants) t1.insert(p.participant_id);
    for (const auto& p : test3.participants) t3.insert(p.participant_id);
    CHECK(t1 != t3);

    CHECK_THROWS_AS(split(cohort_with_event_counts({1}), 0.5, 1), numeric_error);
    CHECK_THROWS_AS(split(c, 0.0, 1), numeric_error);

    // sizes are exact for any seed
    for (uint64_t s = 0; s < 20; ++s) {
        auto [tr, te] = split(c, 0.25, s);
        CHECK(te.participants.size() == 25);
        CHECK(tr.participants.size() == 75);
    }
}

TEST_CASE("synthetic cohorts carry no genetic signal when the effect is zero") {
    SynthConfig cfg;
    cfg.n_participants = 2000;
    cfg.genetic_effect = 0.0;
    cfg.seed = 3;
    Cohort c = generate_synthetic(cfg);
    std::vector<double> prs_sum, label;
    for (const auto& p : c.participants) {
        prs_sum.push_back(tagging_prs_sum(*p.prs));
        label.push_back(p.labels.at(kTargetTask).positive ? 1.0 : 0.0);
    }
    auto r = stats::spearman_positive(prs_sum, label);
    CHECK(std::abs(r.rho) < 0.05);
}

TEST_CASE("planted signal shows up at genetic_effect = 1") {
    SynthConfig cfg;
    cfg.n_participants = 2000;
    cfg.genetic_effect = 1.0;
    cfg.seed = 3;
    Cohort c = generate_synthetic(cfg);
    std::vector<double> prs_sum, label;
    size_t positives = 0;
    for (const auto& p : c.participants) {
        prs_sum.push_back(tagging_prs_sum(*p.prs));
        const bool pos = p.labels.at(kTargetTask).positive;
        positives += pos;
        label.push_back(pos ? 1.0 : 0.0);
    }
    // keep the label prevalence in a workable band
    CHECK(positives > c.participants.size() / 10);
    CHECK(positives < c.participants.size() * 6 / 10);
    auto r = stats::spearman_positive(prs_sum, label);
    CHECK(r.rho > 0.0);
    CHECK(r.p_one_sided < 0.001);
}

TEST_CASE("generation is byte-identical for a fixed seed") {
    SynthConfig cfg;
    cfg.n_participants = 50;
    cfg.seed = 12;
    const std::string d1 = temp_path("synth_a");
    const std::string d2 = temp_path("synth_b");
    save_cohort_dir(generate_synthetic(cfg), d1);
    save_cohort_dir(generate_synthetic(cfg), d2);
    for (const char* f : {"events.tsv", "labels.tsv", "prs.tsv"})
        CHECK(read_file((fs::path(d1) / f).string()) == read_file((fs::path(d2) / f).string()));
}

TEST_CASE("labels are consistent with generated target events") {
    SynthConfig cfg;
    cfg.n_participants = 300;
    cfg.seed = 9;
    Cohort c = generate_synthetic(cfg);
    for (const auto& p : c.participants) {
        const auto& lbl = p.labels.at(kTargetTask);
        bool found = false;
        for (const auto& e : p.events)
            if (e.code == kTargetCode && e.time_days > lbl.time_zero_days &&
                e.time_days <= lbl.time_zero_days + lbl.horizon_days)
                found = true;
        CHECK(lbl.positive == found);
    }
}

TEST_CASE("raw tagging-PRS AUROC rises with the planted effect") {
    double mean_auc[3] = {0.0, 0.0, 0.0};
    const double effects[3] = {0.0, 0.5, 1.0};
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        for (int e = 0; e < 3; ++e) {
            SynthConfig cfg;
            cfg.n_participants = 600;
            cfg.genetic_effect = effects[e];
            cfg.seed = seed;
            Cohort c = generate_synthetic(cfg);
            std::vector<int> labels;
            std::vector<double> scores;
            for (const auto& p : c.participants) {
                labels.push_back(p.labels.at(kTargetTask).positive ? 1 : 0);
                scores.push_back(tagging_prs_sum(*p.prs));
            }
            mean_auc[e] += stats::auroc(labels, scores) / 10.0;
        }
    }
    CHECK(mean_auc[0] < mean_auc[1]);
    CHECK(mean_auc[1] < mean_auc[2]);
}

TEST_CASE("cohort directory round-trips through save and load") {
    SynthConfig cfg;
    cfg.n_participants = 20;
    cfg.seed = 21;
    Cohort c = generate_synthetic(cfg);
    const std::string dir = temp_path("roundtrip");
    save_cohort_dir(c, dir);
    Cohort r = load_cohort_dir(dir);
    REQUIRE(r.participants.size() == c.participants.size());
    CHECK(r.provenance == Provenance::synthetic);
    for (size_t i = 0; i < c.participants.size(); ++i) {
        const auto& a = c.participants[i];
        const auto& b = r.participants[i];
        CHECK(a.participant_id == b.participant_id);
        CHECK(a.events.size() == b.events.size());
        CHECK(a.demographics == b.demographics);
        REQUIRE(b.prs.has_value());
        REQUIRE(a.prs->values.size() == b.prs->values.size());
        for (size_t j = 0; j < a.prs->values.size(); ++j)
            CHECK(a.prs->values[j] == b.prs->values[j]);  // exact: 17 significant digits
        CHECK(a.labels.at(kTargetTask).positive == b.labels.at(kTargetTask).positive);
    }
}
