#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <map>

#include "eventfm/common.hpp"
#include "eventfm/tokenizer.hpp"

using namespace eventfm;

namespace {

EventRecord ev(const std::string& pid, long long day, const std::string& code, EventKind kind,
               std::optional<double> value = std::nullopt, const std::string& visit = "") {
    return {pid, day, code, kind, value, visit};
}

// 2 measurement codes, 3 condition codes, 1 visit type
Cohort vocab_fixture() {
    Cohort c;
    ParticipantRecord p;
    p.participant_id = "P0";
    for (int i = 0; i < 100; ++i) {
        const long long day = i + 1;
        p.events.push_back(ev("P0", day, "VT_OUT", EventKind::visit_start, std::nullopt, "V" + std::to_string(i)));
        p.events.push_back(ev("P0", day, "M_A", EventKind::measurement, static_cast<double>(i + 1), "V" + std::to_string(i)));
        p.events.push_back(ev("P0", day, "M_B", EventKind::measurement, 1000.0 + i, "V" + std::to_string(i)));
        p.events.push_back(ev("P0", day, "C_" + std::to_string(i % 3), EventKind::condition, std::nullopt, "V" + std::to_string(i)));
        p.events.push_back(ev("P0", day, "VT_OUT", EventKind::visit_end, std::nullopt, "V" + std::to_string(i)));
    }
    c.participants.push_back(std::move(p));
    return c;
}

}  // namespace

TEST_CASE("vocabulary contents follow the construction rule") {
    Vocabulary v = build_vocabulary(vocab_fixture(), 10);
    // 2*10 quantile + 3 codes + 2 visit + 13 time + 4 specials (no demographics here)
    CHECK(v.size() == 20 + 3 + 2 + 13 + 4);
    CHECK(v.ids_of_kind(TokenKind::quantile).size() == 20);
    CHECK(v.ids_of_kind(TokenKind::code).size() == 3);
    CHECK(v.ids_of_kind(TokenKind::visit_start).size() == 1);
    CHECK(v.ids_of_kind(TokenKind::visit_end).size() == 1);
    CHECK(v.ids_of_kind(TokenKind::time_interval).size() == 13);
    CHECK(v.id_of("<pad>") == Vocabulary::kPad);
    CHECK(v.id_of("<bos>") == Vocabulary::kBos);
    CHECK(v.id_of("<eos>") == Vocabulary::kEos);
    CHECK(v.id_of("<unk>") == Vocabulary::kUnknown);
}

TEST_CASE("decile boundaries over 1..100 put value 55 in bucket 6") {
    Vocabulary v = build_vocabulary(vocab_fixture(), 10);
    const auto& bounds = v.quantile_bounds().at("M_A");
    REQUIRE(bounds.size() == 9);
    for (int k = 0; k < 9; ++k) CHECK(bounds[static_cast<size_t>(k)] == doctest::Approx(10.0 * (k + 1)));
    CHECK(v.quantile_bucket("M_A", 55.0) == 6);
    CHECK(v.quantile_bucket("M_A", 50.0) == 5);  // boundary ties go down
    CHECK(v.quantile_bucket("M_A", 0.5) == 1);
    CHECK(v.quantile_bucket("M_A", 1e9) == 10);
}

TEST_CASE("two quantiles yield a single boundary at the median") {
    Vocabulary v = build_vocabulary(vocab_fixture(), 2);
    const auto& bounds = v.quantile_bounds().at("M_A");
    REQUIRE(bounds.size() == 1);
    CHECK(bounds[0] == doctest::Approx(50.0));
}

TEST_CASE("low-cardinality measurements collapse boundaries with a warning") {
    Cohort c;
    ParticipantRecord p;
    p.participant_id = "P0";
    for (int i = 0; i < 20; ++i)
        p.events.push_back(ev("P0", i + 1, "M_CONST", EventKind::measurement, i < 10 ? 1.0 : 2.0));
    c.participants.push_back(std::move(p));
    BuildVocabReport report;
    Vocabulary v = build_vocabulary(c, 10, &report);
    REQUIRE(report.collapsed_quantile_codes.size() == 1);
    CHECK(report.collapsed_quantile_codes[0] == "M_CONST");
    const auto& bounds = v.quantile_bounds().at("M_CONST");
    for (size_t i = 1; i < bounds.size(); ++i) CHECK(bounds[i] >= bounds[i - 1]);
}

TEST_CASE("gap decomposition is greedy largest-first with a 5-token cap") {
    const auto& grid = Vocabulary::default_time_grid();
    CHECK(decompose_gap(0, grid).empty());
    CHECK(decompose_gap(400, grid) == std::vector<long long>{365, 30, 4, 1});
    CHECK(decompose_gap(40000, grid) == std::vector<long long>{3650, 3650, 3650, 3650, 3650});
    // coverage: remainder below the smallest grid entry unless the cap binds
    for (long long g = 0; g <= 18250; g += 37) {
        auto parts = decompose_gap(g, grid);
        long long sum = 0;
        for (long long p : parts) sum += p;
        CHECK(sum <= g);
        if (parts.size() < static_cast<size_t>(kMaxTimeTokensPerGap)) CHECK(g - sum < grid.front());
    }
}

TEST_CASE("encode handles a demographics-only participant") {
    Cohort train = vocab_fixture();
    train.participants[0].demographics = {"DEM_SEX_F"};
    Vocabulary v = build_vocabulary(train, 10);
    ParticipantRecord p;
    p.participant_id = "PX";
    p.demographics = {"DEM_SEX_F"};
    TokenSequence seq = encode(p, v);
    REQUIRE(seq.ids.size() == 3);
    CHECK(seq.ids[0] == Vocabulary::kBos);
    CHECK(v.kind(seq.ids[1]) == TokenKind::demographic);
    CHECK(seq.ids[2] == Vocabulary::kEos);
}

TEST_CASE("a day-zero visit with a median measurement encodes without time tokens") {
    Vocabulary v = build_vocabulary(vocab_fixture(), 10);
    ParticipantRecord p;
    p.participant_id = "PX";
    p.events.push_back(ev("PX", 0, "VT_OUT", EventKind::visit_start, std::nullopt, "V1"));
    p.events.push_back(ev("PX", 0, "M_A", EventKind::measurement, 50.0, "V1"));
    p.events.push_back(ev("PX", 0, "VT_OUT", EventKind::visit_end, std::nullopt, "V1"));
    TokenSequence seq = encode(p, v);
    std::vector<TokenKind> kinds;
    for (int id : seq.ids) kinds.push_back(v.kind(id));
    CHECK(kinds == std::vector<TokenKind>{TokenKind::bos, TokenKind::visit_start, TokenKind::quantile,
                                          TokenKind::visit_end, TokenKind::eos});
    CHECK(seq.ids[2] == v.quantile_token_id("M_A", 5));  // 50 ties down to bucket 5
}

TEST_CASE("a 400-day gap between visits appears as its greedy decomposition") {
    Vocabulary v = build_vocabulary(vocab_fixture(), 10);
    ParticipantRecord p;
    p.participant_id = "PX";
    p.events.push_back(ev("PX", 0, "VT_OUT", EventKind::visit_start, std::nullopt, "V1"));
    p.events.push_back(ev("PX", 0, "C_0", EventKind::condition, std::nullopt, "V1"));
    p.events.push_back(ev("PX", 0, "VT_OUT", EventKind::visit_end, std::nullopt, "V1"));
    p.events.push_back(ev("PX", 400, "VT_OUT", EventKind::visit_start, std::nullopt, "V2"));
    p.events.push_back(ev("PX", 400, "C_1", EventKind::condition, std::nullopt, "V2"));
    p.events.push_back(ev("PX", 400, "VT_OUT", EventKind::visit_end, std::nullopt, "V2"));
    TokenSequence seq = encode(p, v);
    std::vector<long long> gap_days;
    bool after_close = false;
    for (size_t i = 0; i < seq.ids.size(); ++i) {
        if (v.kind(seq.ids[i]) == TokenKind::visit_end) after_close = true;
        else if (v.kind(seq.ids[i]) == TokenKind::time_interval && after_close)
            gap_days.push_back(v.time_days(seq.ids[i]));
        else if (v.kind(seq.ids[i]) == TokenKind::visit_start && after_close && !gap_days.empty())
            break;
    }
    CHECK(gap_days == std::vector<long long>{365, 30, 4, 1});
    CHECK(seq.time_offsets_days.back() == 400);
}

TEST_CASE("unknown codes map to the unknown token") {
    Vocabulary v = build_vocabulary(vocab_fixture(), 10);
    ParticipantRecord p;
    p.participant_id = "PX";
    p.events.push_back(ev("PX", 0, "NEVER_SEEN", EventKind::condition));
    TokenSequence seq = encode(p, v);
    CHECK(seq.ids[1] == Vocabulary::kUnknown);
}

TEST_CASE("decode round-trips and rejects out-of-range ids") {
    Vocabulary v = build_vocabulary(vocab_fixture(), 10);
    ParticipantRecord p;
    p.participant_id = "PX";
    p.events.push_back(ev("PX", 3, "C_0", EventKind::condition));
    p.events.push_back(ev("PX", 9, "M_B", EventKind::measurement, 1005.0));
    TokenSequence seq = encode(p, v);
    auto texts = decode(seq.ids, v);
    std::vector<int> re;
    for (const auto& t : texts) re.push_back(v.id_of(t));
    CHECK(re == seq.ids);
    CHECK(decode({Vocabulary::kPad}, v)[0] == "<pad>");
    CHECK_THROWS_AS(decode({v.size()}, v), numeric_error);
}

TEST_CASE("vocabulary file round-trips byte for byte") {
    Vocabulary v = build_vocabulary(vocab_fixture(), 10);
    auto dir = std::filesystem::temp_directory_path() / "eventfm_tok_tests";
    std::filesystem::create_directories(dir);
    const std::string p1 = (dir / "vocab1.json").string();
    const std::string p2 = (dir / "vocab2.json").string();
    v.save(p1);
    Vocabulary loaded = Vocabulary::load(p1);
    loaded.save(p2);
    CHECK(read_file(p1) == read_file(p2));
    CHECK(loaded.size() == v.size());
    CHECK(loaded.quantile_bucket("M_A", 55.0) == 6);
}

// Property suite over randomized participants (also exercised at acceptance
// scale): quantile monotonicity, time coverage, visit balance, determinism,
// offset consistency.
TEST_CASE("tokenizer properties hold on randomized participants") {
    Cohort train = vocab_fixture();
    train.participants[0].demographics = {"DEM_SEX_F", "DEM_RACE_A"};
    Vocabulary v = build_vocabulary(train, 10);
    Rng rng(2024);

    for (int trial = 0; trial < 200; ++trial) {
        ParticipantRecord p;
        p.participant_id = "R" + std::to_string(trial);
        if (rng.uniform() < 0.8) p.demographics.push_back("DEM_SEX_F");
        long long day = static_cast<long long>(rng.below(3));
        const int n_visits = 1 + static_cast<int>(rng.below(12));
        for (int visit = 0; visit < n_visits; ++visit) {
            const std::string vid = "V" + std::to_string(visit);
            p.events.push_back(ev(p.participant_id, day, "VT_OUT", EventKind::visit_start, std::nullopt, vid));
            const int n_inner = 1 + static_cast<int>(rng.below(4));
            for (int e = 0; e < n_inner; ++e) {
                if (rng.uniform() < 0.4) {
                    const char* code = rng.uniform() < 0.5 ? "M_A" : "M_B";
                    p.events.push_back(ev(p.participant_id, day, code, EventKind::measurement,
                                          rng.uniform(-50.0, 1200.0), vid));
                } else {
                    p.events.push_back(ev(p.participant_id, day,
                                          "C_" + std::to_string(rng.below(4)), EventKind::condition,
                                          std::nullopt, vid));
                }
            }
            p.events.push_back(ev(p.participant_id, day, "VT_OUT", EventKind::visit_end, std::nullopt, vid));
            day += static_cast<long long>(rng.below(700));
        }

        TokenSequence seq = encode(p, v);
        TokenSequence seq2 = encode(p, v);
        CHECK(seq.ids == seq2.ids);  // determinism
        REQUIRE(seq.ids.size() == seq.time_offsets_days.size());

        int depth = 0;
        long long sum_days = 0;
        for (size_t i = 0; i < seq.ids.size(); ++i) {
            const TokenKind k = v.kind(seq.ids[i]);
            if (k == TokenKind::visit_start) ++depth;
            if (k == TokenKind::visit_end) --depth;
            CHECK(depth >= 0);
            CHECK(depth <= 1);
            if (k == TokenKind::time_interval) sum_days += v.time_days(seq.ids[i]);
            if (i > 0) CHECK(seq.time_offsets_days[i] >= seq.time_offsets_days[i - 1]);
        }
        CHECK(depth == 0);
        CHECK(seq.time_offsets_days.back() == sum_days);  // offset consistency
    }

    // quantile monotonicity with ties going down
    for (int trial = 0; trial < 500; ++trial) {
        const double a = rng.uniform(-100.0, 200.0);
        const double b = rng.uniform(-100.0, 200.0);
        const double lo = std::min(a, b), hi = std::max(a, b);
        CHECK(v.quantile_bucket("M_A", lo) <= v.quantile_bucket("M_A", hi));
    }
}

TEST_CASE("encode_context windows events and aligns the clock") {
    Vocabulary v = build_vocabulary(vocab_fixture(), 10);
    ParticipantRecord p;
    p.participant_id = "PX";
    p.demographics = {};
    p.events.push_back(ev("PX", 10, "VT_OUT", EventKind::visit_start, std::nullopt, "V1"));
    p.events.push_back(ev("PX", 10, "C_0", EventKind::condition, std::nullopt, "V1"));
    p.events.push_back(ev("PX", 10, "VT_OUT", EventKind::visit_end, std::nullopt, "V1"));
    p.events.push_back(ev("PX", 500, "VT_OUT", EventKind::visit_start, std::nullopt, "V2"));
    p.events.push_back(ev("PX", 500, "C_1", EventKind::condition, std::nullopt, "V2"));
    p.events.push_back(ev("PX", 500, "VT_OUT", EventKind::visit_end, std::nullopt, "V2"));

    // history 0: bos only (no demographics on this fixture)
    TokenSequence h0 = encode_context(p, v, 0);
    REQUIRE(h0.ids.size() == 1);
    CHECK(h0.ids[0] == Vocabulary::kBos);

    // history 90: the day-10 visit plus alignment tokens to day 90
    TokenSequence h90 = encode_context(p, v, 90);
    bool saw_c0 = false, saw_c1 = false;
    long long clock = h90.time_offsets_days.back();
    for (int id : h90.ids) {
        if (id == v.id_of("C_0")) saw_c0 = true;
        if (id == v.id_of("C_1")) saw_c1 = true;
    }
    CHECK(saw_c0);
    CHECK(!saw_c1);
    CHECK(clock == 90);
}
