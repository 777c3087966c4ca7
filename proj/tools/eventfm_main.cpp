// Command-line pipeline: synthetic cohorts -> tokenization -> training ->
// generative risk scoring -> paired evaluation -> meta-analysis -> figures.

#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "eventfm/cohort.hpp"
#include "eventfm/common.hpp"
#include "eventfm/generator.hpp"
#include "eventfm/manifest.hpp"
#include "eventfm/model.hpp"
#include "eventfm/plot.hpp"
#include "eventfm/prs.hpp"
#include "eventfm/stats.hpp"
#include "eventfm/tokenizer.hpp"
#include "eventfm/trainer.hpp"
#include "eventfm/transfer.hpp"

namespace fs = std::filesystem;
using namespace eventfm;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitInput = 3;
constexpr int kExitNumeric = 4;

std::string resolve_out_dir(std::string dir, const std::string& sub) {
    if (dir.empty()) {
        const char* root = std::getenv("EVENTFM_OUT");
        dir = (fs::path(root ? root : "out") / sub).string();
    }
    fs::create_directories(dir);
    return dir;
}

RunManifest start_manifest(const std::string& sub, uint64_t seed) {
    RunManifest m;
    m.tool_version = kToolVersion;
    m.subcommand = sub;
    m.seed = seed;
    return m;
}

void finish_manifest(RunManifest& m, const std::string& out_dir) {
    write_manifest(m, (fs::path(out_dir) / "manifest.json").string());
}

struct SplitFile {
    std::vector<std::string> train;
    std::vector<std::string> test;
};

void save_split(const SplitFile& s, const std::string& path) {
    ordered_json j;
    j["train"] = s.train;
    j["test"] = s.test;
    write_file(path, j.dump(2) + "\n");
}

SplitFile load_split(const std::string& path) {
    auto j = ordered_json::parse(read_file(path));
    SplitFile s;
    s.train = j.at("train").get<std::vector<std::string>>();
    s.test = j.at("test").get<std::vector<std::string>>();
    return s;
}

Cohort subset_cohort(const Cohort& cohort, const std::vector<std::string>& ids) {
    std::set<std::string> keep(ids.begin(), ids.end());
    Cohort out;
    out.epoch = cohort.epoch;
    out.provenance = cohort.provenance;
    for (const auto& p : cohort.participants)
        if (keep.count(p.participant_id)) out.participants.push_back(p);
    return out;
}

Cohort load_subset(const std::string& cohort_dir, const std::string& split_path,
                   const std::string& subset) {
    Cohort cohort = load_cohort_dir(cohort_dir);
    if (split_path.empty() || subset == "all") return cohort;
    SplitFile s = load_split(split_path);
    if (subset == "train") return subset_cohort(cohort, s.train);
    if (subset == "test") return subset_cohort(cohort, s.test);
    throw io_error("unknown subset '" + subset + "' (use train|test|all)");
}

// Binary label per participant: first target event in (window, window+horizon].
// window < 0 means "use the stored task label as-is".
std::vector<int> labels_for(const Cohort& cohort, const std::string& task,
                            const std::string& target_code, long long window, long long horizon) {
    std::vector<int> labels(cohort.participants.size(), 0);
    for (size_t i = 0; i < cohort.participants.size(); ++i) {
        const auto& p = cohort.participants[i];
        if (window < 0) {
            auto it = p.labels.find(task);
            if (it == p.labels.end()) throw io_error("participant " + p.participant_id + " has no label for task '" + task + "'");
            labels[i] = it->second.positive ? 1 : 0;
        } else {
            for (const auto& e : p.events) {
                if (e.code == target_code && e.time_days > window && e.time_days <= window + horizon) {
                    labels[i] = 1;
                    break;
                }
            }
        }
    }
    return labels;
}

void write_metrics_table(const std::string& path,
                         const std::vector<stats::BootstrapDelta>& rows) {
    std::ostringstream out;
    out << "metric\ta\tb\tdelta\tse\tci_low\tci_high\tp_value\tpct_change\titerations\tredrawn\n";
    for (const auto& r : rows) {
        const double pct = r.point_a != 0.0 ? 100.0 * (r.point_b - r.point_a) / r.point_a : 0.0;
        out << r.metric << '\t' << fmt_double(r.point_a) << '\t' << fmt_double(r.point_b) << '\t'
            << fmt_double(r.mean_delta) << '\t' << fmt_double(r.se) << '\t' << fmt_double(r.ci_low)
            << '\t' << fmt_double(r.ci_high) << '\t' << fmt_double(r.p_two_sided) << '\t'
            << fmt_double(pct) << '\t' << r.iterations << '\t' << r.redrawn << '\n';
    }
    write_file(path, out.str());
}

GenerationTask make_task(const Vocabulary& vocab, const std::string& target_code,
                         const std::string& target_stem, long long horizon, int n_paths, int k,
                         double temperature, const std::string& agg, uint64_t seed) {
    GenerationTask task;
    if (!target_stem.empty()) {
        for (int id : vocab.code_ids_containing(target_stem)) task.target_token_ids.push_back(id);
    } else {
        const int id = vocab.id_of(target_code);
        if (id < 0) throw io_error("target code '" + target_code + "' not in vocabulary");
        task.target_token_ids.push_back(id);
    }
    if (task.target_token_ids.empty()) throw io_error("no vocabulary tokens match the target");
    task.horizon_days = horizon;
    task.n_paths = n_paths;
    task.max_new_tokens = k;
    task.temperature = temperature;
    auto a = parse_aggregation(agg);
    if (!a) throw io_error("unknown aggregation '" + agg + "'");
    task.aggregation = *a;
    task.seed = seed;
    return task;
}

// ---------------------------------------------------------------------------
// Subcommand bodies (shared by normal dispatch and `rerun`)
// ---------------------------------------------------------------------------

int run_synth(const std::map<std::string, std::string>& a) {
    SynthConfig cfg;
    cfg.n_participants = std::stoull(a.at("n"));
    cfg.n_traits = std::stoull(a.at("traits"));
    cfg.n_codes = std::stoull(a.at("codes"));
    cfg.visit_rate_per_year = std::stod(a.at("visit-rate"));
    cfg.genetic_effect = std::stod(a.at("genetic-effect"));
    cfg.history_effect = std::stod(a.at("history-effect"));
    cfg.noise_sd = std::stod(a.at("noise-sd"));
    cfg.seed = std::stoull(a.at("seed"));
    const std::string out_dir = a.at("out");
    fs::create_directories(out_dir);

    Cohort cohort = generate_synthetic(cfg);
    save_cohort_dir(cohort, out_dir);

    size_t positives = 0, events = 0;
    for (const auto& p : cohort.participants) {
        events += p.events.size();
        auto it = p.labels.find(kTargetTask);
        if (it != p.labels.end() && it->second.positive) ++positives;
    }
    RunManifest m = start_manifest("synth", cfg.seed);
    m.args = a;
    for (const char* f : {"events.tsv", "labels.tsv", "prs.tsv", "manifest.json"})
        add_output(m, (fs::path(out_dir) / f).string());
    finish_manifest(m, out_dir);
    std::cout << "[synth] dir=" << out_dir << " participants=" << cohort.participants.size()
              << " positives=" << positives << " events=" << events << "\n";
    return 0;
}

int run_tokenize(const std::map<std::string, std::string>& a) {
    const std::string cohort_dir = a.at("cohort");
    const std::string out_dir = a.at("out");
    fs::create_directories(out_dir);
    const uint64_t seed = std::stoull(a.at("seed"));

    Cohort cohort = load_cohort_dir(cohort_dir);
    cohort = filter_participants(cohort, std::stoull(a.at("min-events")), std::stoull(a.at("max-events")));
    cohort = filter_rare_codes(cohort, std::stoull(a.at("min-code-participants")));
    auto [train_c, test_c] = split(cohort, std::stod(a.at("test-fraction")), seed);

    BuildVocabReport report;
    Vocabulary vocab = build_vocabulary(train_c, std::stoi(a.at("quantiles")), &report);
    const std::string vocab_path = (fs::path(out_dir) / "vocab.json").string();
    vocab.save(vocab_path);

    SplitFile sf;
    for (const auto& p : train_c.participants) sf.train.push_back(p.participant_id);
    for (const auto& p : test_c.participants) sf.test.push_back(p.participant_id);
    const std::string split_path = (fs::path(out_dir) / "split.json").string();
    save_split(sf, split_path);

    size_t total_tokens = 0;
    for (const auto& p : train_c.participants) total_tokens += encode(p, vocab).ids.size();
    std::ostringstream stats_out;
    stats_out << "key\tvalue\n";
    stats_out << "vocab_size\t" << vocab.size() << "\n";
    stats_out << "train_participants\t" << train_c.participants.size() << "\n";
    stats_out << "test_participants\t" << test_c.participants.size() << "\n";
    stats_out << "mean_train_tokens\t"
              << fmt_double(train_c.participants.empty()
                                ? 0.0
                                : static_cast<double>(total_tokens) / train_c.participants.size())
              << "\n";
    stats_out << "collapsed_quantile_codes\t" << report.collapsed_quantile_codes.size() << "\n";
    const std::string stats_path = (fs::path(out_dir) / "tokenize_stats.tsv").string();
    write_file(stats_path, stats_out.str());

    RunManifest m = start_manifest("tokenize", seed);
    m.args = a;
    add_input(m, (fs::path(cohort_dir) / "events.tsv").string());
    add_output(m, vocab_path);
    add_output(m, split_path);
    add_output(m, stats_path);
    finish_manifest(m, out_dir);
    std::cout << "[tokenize] vocab=" << vocab.size() << " train=" << sf.train.size()
              << " test=" << sf.test.size() << " out=" << out_dir << "\n";
    return 0;
}

int run_prs(const std::map<std::string, std::string>& a) {
    const std::string out_dir = a.at("out");
    fs::create_directories(out_dir);
    PrsParams params;
    params.p_lead = std::stod(a.at("p-lead"));
    params.p_secondary = std::stod(a.at("p-secondary"));
    params.r2_threshold = std::stod(a.at("r2"));
    params.p_retain = std::stod(a.at("p-retain"));
    params.max_variants = std::stoull(a.at("max-variants"));
    const double k_sd = std::stod(a.at("k-sd"));

    auto effects = load_effects(a.at("effects"));
    auto dosages = load_dosages(a.at("dosages"));
    auto ld = LdPanel::load(a.at("ld"));
    auto result = compute_prs_matrix(effects, dosages, ld, params, k_sd);
    const std::string matrix_path = (fs::path(out_dir) / "prs_matrix.tsv").string();
    const std::string bounds_path = (fs::path(out_dir) / "prs_bounds.json").string();
    save_prs_matrix(result, matrix_path, bounds_path);

    RunManifest m = start_manifest("prs", 0);
    m.args = a;
    add_input(m, a.at("effects"));
    add_input(m, a.at("dosages"));
    add_input(m, a.at("ld"));
    add_output(m, matrix_path);
    add_output(m, bounds_path);
    finish_manifest(m, out_dir);
    std::cout << "[prs] traits=" << result.trait_ids.size()
              << " participants=" << result.participant_ids.size() << " out=" << out_dir << "\n";
    return 0;
}

ModelConfig model_config_from_args(const std::map<std::string, std::string>& a, int vocab_size,
                                   int prs_dim) {
    ModelConfig mc;
    mc.d_model = std::stoi(a.at("d-model"));
    mc.n_layers = std::stoi(a.at("layers"));
    mc.n_heads = std::stoi(a.at("heads"));
    mc.window = std::stoi(a.at("window"));
    mc.vocab_size = vocab_size;
    auto mode = parse_fusion_mode(a.at("mode"));
    if (!mode) throw io_error("unknown mode '" + a.at("mode") + "'");
    mc.mode = *mode;
    mc.n_soft_tokens = std::stoi(a.at("soft-tokens"));
    mc.projector_hidden = std::stoi(a.at("proj-hidden"));
    mc.prs_dim = mc.multimodal() ? prs_dim : 0;
    mc.dropout_rate = std::stod(a.at("dropout"));
    return mc;
}

int run_train(const std::map<std::string, std::string>& a) {
    const std::string out_dir = a.at("out");
    fs::create_directories(out_dir);
    const uint64_t seed = std::stoull(a.at("seed"));

    Cohort train_c = load_subset(a.at("cohort"), a.at("split"), a.at("subset"));
    if (train_c.participants.empty()) throw io_error("training subset is empty");
    Vocabulary vocab = Vocabulary::load(a.at("vocab"));

    int prs_dim = 0;
    for (const auto& p : train_c.participants)
        if (p.prs) prs_dim = static_cast<int>(p.prs->values.size());
    ModelConfig mc = model_config_from_args(a, vocab.size(), prs_dim);

    TrainConfig tc;
    tc.epochs = std::stoi(a.at("epochs"));
    tc.batch_size = std::stoi(a.at("batch-size"));
    tc.learning_rate = std::stod(a.at("lr"));
    auto sched = parse_lr_schedule(a.at("schedule"));
    if (!sched) throw io_error("unknown schedule '" + a.at("schedule") + "'");
    tc.schedule = *sched;
    tc.weight_decay = std::stod(a.at("weight-decay"));
    tc.grad_accum_steps = std::stoi(a.at("grad-accum"));
    tc.seed = seed;

    TrainTrace trace;
    ModelCheckpoint ckpt = train(train_c, vocab, mc, tc, &trace);

    const std::string ckpt_path = (fs::path(out_dir) / "checkpoint.bin").string();
    save_checkpoint(ckpt, ckpt_path);
    std::ostringstream trace_out;
    trace_out << "epoch,mean_loss\n";
    for (size_t e = 0; e < trace.epoch_loss.size(); ++e)
        trace_out << e << ',' << fmt_double(trace.epoch_loss[e], 17) << '\n';
    const std::string trace_path = (fs::path(out_dir) / "loss_trace.csv").string();
    write_file(trace_path, trace_out.str());

    ordered_json cfg_snapshot;
    cfg_snapshot["model"] = ordered_json::parse(model_config_to_json(mc));
    cfg_snapshot["train"] = {{"epochs", tc.epochs},
                             {"batch_size", tc.batch_size},
                             {"learning_rate", tc.learning_rate},
                             {"schedule", lr_schedule_name(tc.schedule)},
                             {"weight_decay", tc.weight_decay},
                             {"grad_accum_steps", tc.grad_accum_steps},
                             {"seed", tc.seed}};
    cfg_snapshot["optimizer_steps"] = trace.optimizer_steps;
    const std::string cfg_path = (fs::path(out_dir) / "config.json").string();
    write_file(cfg_path, cfg_snapshot.dump(2) + "\n");

    RunManifest m = start_manifest("train", seed);
    m.args = a;
    add_input(m, a.at("vocab"));
    add_output(m, ckpt_path);
    add_output(m, trace_path);
    add_output(m, cfg_path);
    finish_manifest(m, out_dir);
    std::cout << "[train] mode=" << fusion_mode_name(mc.mode) << " params=" << param_count(ckpt.params)
              << " steps=" << trace.optimizer_steps << " final_loss="
              << fmt_double(trace.epoch_loss.empty() ? 0.0 : trace.epoch_loss.back(), 6)
              << " out=" << out_dir << "\n";
    return 0;
}

int run_loss(const std::map<std::string, std::string>& a) {
    const std::string out_dir = a.at("out");
    fs::create_directories(out_dir);
    Cohort test_c = load_subset(a.at("cohort"), a.at("split"), a.at("subset"));
    Vocabulary vocab = Vocabulary::load(a.at("vocab"));

    ModelCheckpoint ca = load_checkpoint(a.at("ckpt"));
    LossReport ra = evaluate_loss(test_c, vocab, ca);
    const std::string loss_a_path = (fs::path(out_dir) / "loss_a.tsv").string();
    save_loss_report(ra, loss_a_path);

    RunManifest m = start_manifest("loss", 0);
    m.args = a;
    add_input(m, a.at("ckpt"));
    add_output(m, loss_a_path);

    std::ostringstream summary;
    summary << "[loss] a=" << fmt_double(ra.overall, 6);
    if (!a.at("ckpt-b").empty()) {
        ModelCheckpoint cb = load_checkpoint(a.at("ckpt-b"));
        LossReport rb = evaluate_loss(test_c, vocab, cb);
        const std::string loss_b_path = (fs::path(out_dir) / "loss_b.tsv").string();
        save_loss_report(rb, loss_b_path);
        PairedLossTest test = paired_loss_test(ra, rb);
        ordered_json j;
        j["n_shared"] = test.n_shared;
        j["mean_diff_b_minus_a"] = test.mean_diff;
        j["t_p"] = test.t_p;
        j["wilcoxon_p"] = test.wilcoxon_p;
        j["normality_p"] = test.normality_p;
        j["degenerate"] = test.degenerate;
        j["zero_variance"] = test.zero_variance;
        const std::string tests_path = (fs::path(out_dir) / "paired_tests.json").string();
        write_file(tests_path, j.dump(2) + "\n");
        add_input(m, a.at("ckpt-b"));
        add_output(m, loss_b_path);
        add_output(m, tests_path);
        summary << " b=" << fmt_double(rb.overall, 6) << " t_p=" << fmt_double(test.t_p, 4)
                << " wilcoxon_p=" << fmt_double(test.wilcoxon_p, 4);
    }
    finish_manifest(m, out_dir);
    std::cout << summary.str() << " out=" << out_dir << "\n";
    return 0;
}

int run_score(const std::map<std::string, std::string>& a) {
    const std::string out_dir = a.at("out");
    fs::create_directories(out_dir);
    const uint64_t seed = std::stoull(a.at("seed"));
    Cohort cohort = load_subset(a.at("cohort"), a.at("split"), a.at("subset"));
    Vocabulary vocab = Vocabulary::load(a.at("vocab"));
    ModelCheckpoint ckpt = load_checkpoint(a.at("ckpt"));

    GenerationTask task = make_task(vocab, a.at("target-code"), a.at("target-stem"),
                                    std::stoll(a.at("horizon-days")), std::stoi(a.at("n-paths")),
                                    std::stoi(a.at("max-new-tokens")), std::stod(a.at("temperature")),
                                    a.at("agg"), seed);
    ScoreCohortResult result = score_cohort(ckpt, cohort, vocab, task, std::stoll(a.at("history-days")));

    const std::string scores_path = (fs::path(out_dir) / "scores.tsv").string();
    const std::string excl_path = (fs::path(out_dir) / "exclusions.tsv").string();
    save_scores(result, scores_path, excl_path);

    RunManifest m = start_manifest("score", seed);
    m.args = a;
    add_input(m, a.at("ckpt"));
    add_input(m, a.at("vocab"));
    add_output(m, scores_path);
    add_output(m, excl_path);
    finish_manifest(m, out_dir);
    std::cout << "[score] scored=" << result.scores.size() << " excluded=" << result.exclusions.size()
              << " targets=" << task.target_token_ids.size() << " out=" << out_dir << "\n";
    return 0;
}

int run_eval(const std::map<std::string, std::string>& a) {
    const std::string out_dir = a.at("out");
    fs::create_directories(out_dir);
    const uint64_t seed = std::stoull(a.at("seed"));
    const int iterations = std::stoi(a.at("iterations"));
    const double threshold = std::stod(a.at("threshold"));

    Cohort cohort = load_subset(a.at("cohort"), a.at("split"), a.at("subset"));
    LoadedScores sa = load_scores(a.at("scores-a"));
    LoadedScores sb = load_scores(a.at("scores-b"));
    const bool use_path = a.at("estimator") == "path_probability";
    if (!use_path && a.at("estimator") != "mc_frequency")
        throw io_error("unknown estimator '" + a.at("estimator") + "'");

    const long long window = std::stoll(a.at("relabel-window"));
    const auto labels_all = labels_for(cohort, a.at("task"), a.at("target-code"), window,
                                       std::stoll(a.at("relabel-horizon")));
    std::map<std::string, int> label_by_id;
    for (size_t i = 0; i < cohort.participants.size(); ++i)
        label_by_id[cohort.participants[i].participant_id] = labels_all[i];

    std::map<std::string, double> a_by_id, b_by_id;
    for (size_t i = 0; i < sa.participant_ids.size(); ++i)
        a_by_id[sa.participant_ids[i]] = use_path ? sa.path_probability[i] : sa.mc_frequency[i];
    for (size_t i = 0; i < sb.participant_ids.size(); ++i)
        b_by_id[sb.participant_ids[i]] = use_path ? sb.path_probability[i] : sb.mc_frequency[i];

    stats::PairedPredictions pp;
    for (const auto& [id, score_a] : a_by_id) {
        auto itb = b_by_id.find(id);
        auto itl = label_by_id.find(id);
        if (itb == b_by_id.end() || itl == label_by_id.end()) continue;
        pp.labels.push_back(itl->second);
        pp.score_a.push_back(score_a);
        pp.score_b.push_back(itb->second);
    }
    if (pp.labels.size() < 10) throw io_error("eval: fewer than 10 aligned subjects");

    std::vector<stats::BootstrapDelta> rows;
    rows.push_back(stats::paired_bootstrap(pp, "AUPRC", [](const auto& l, const auto& s) { return stats::auprc(l, s); }, iterations, derive_seed(seed, {1})));
    rows.push_back(stats::paired_bootstrap(pp, "AUROC", [](const auto& l, const auto& s) { return stats::auroc(l, s); }, iterations, derive_seed(seed, {2})));
    const std::string thr_tag = "@" + fmt_double(threshold, 3);
    auto thr_metric = [threshold](auto pick) {
        return [threshold, pick](const std::vector<int>& l, const std::vector<double>& s) {
            return pick(stats::thresholded_metrics(l, s, threshold));
        };
    };
    rows.push_back(stats::paired_bootstrap(pp, "Accuracy" + thr_tag, thr_metric([](const stats::ThresholdedMetrics& m) { return m.accuracy; }), iterations, derive_seed(seed, {3})));
    rows.push_back(stats::paired_bootstrap(pp, "Precision" + thr_tag, thr_metric([](const stats::ThresholdedMetrics& m) { return m.precision; }), iterations, derive_seed(seed, {4})));
    rows.push_back(stats::paired_bootstrap(pp, "Recall" + thr_tag, thr_metric([](const stats::ThresholdedMetrics& m) { return m.recall; }), iterations, derive_seed(seed, {5})));
    rows.push_back(stats::paired_bootstrap(pp, "F1" + thr_tag, thr_metric([](const stats::ThresholdedMetrics& m) { return m.f1; }), iterations, derive_seed(seed, {6})));
    rows.push_back(stats::paired_bootstrap(pp, "Specificity" + thr_tag, thr_metric([](const stats::ThresholdedMetrics& m) { return m.specificity; }), iterations, derive_seed(seed, {7})));

    const std::string metrics_path = (fs::path(out_dir) / "metrics.tsv").string();
    write_metrics_table(metrics_path, rows);

    auto prd = stats::pr_difference(pp, std::stoi(a.at("recall-grid")), iterations,
                                    derive_seed(seed, {8}));
    std::ostringstream prd_out;
    prd_out << "recall\tdelta\tmean_delta\tci_low\tci_high\n";
    for (const auto& pt : prd.points)
        prd_out << fmt_double(pt.recall) << '\t' << fmt_double(pt.delta) << '\t'
                << fmt_double(pt.mean_delta) << '\t' << fmt_double(pt.ci_low) << '\t'
                << fmt_double(pt.ci_high) << '\n';
    const std::string prd_path = (fs::path(out_dir) / "pr_difference.tsv").string();
    write_file(prd_path, prd_out.str());

    auto dump_roc = [&](const std::vector<double>& scores, const std::string& path) {
        auto roc = stats::roc_curve(pp.labels, scores);
        std::ostringstream o;
        o << "fpr\ttpr\n";
        for (const auto& p : roc) o << fmt_double(p.fpr) << '\t' << fmt_double(p.tpr) << '\n';
        write_file(path, o.str());
    };
    const std::string roc_a_path = (fs::path(out_dir) / "roc_a.tsv").string();
    const std::string roc_b_path = (fs::path(out_dir) / "roc_b.tsv").string();
    dump_roc(pp.score_a, roc_a_path);
    dump_roc(pp.score_b, roc_b_path);

    RunManifest m = start_manifest("eval", seed);
    m.args = a;
    add_input(m, a.at("scores-a"));
    add_input(m, a.at("scores-b"));
    add_output(m, metrics_path);
    add_output(m, prd_path);
    add_output(m, roc_a_path);
    add_output(m, roc_b_path);
    finish_manifest(m, out_dir);
    std::cout << "[eval] subjects=" << pp.labels.size() << " dAUROC="
              << fmt_double(rows[1].mean_delta, 6) << " p=" << fmt_double(rows[1].p_two_sided, 4)
              << " out=" << out_dir << "\n";
    return 0;
}

int run_meta(const std::map<std::string, std::string>& a) {
    const std::string out_dir = a.at("out");
    fs::create_directories(out_dir);

    std::vector<stats::EffectSize> effects;
    {
        std::istringstream in(read_file(a.at("effects")));
        std::string line;
        bool header = true;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            if (header) {
                header = false;
                continue;
            }
            auto f = split_tabs(line);
            if (f.size() != 3) throw io_error("effects file row must be task\\tdelta\\tse");
            stats::EffectSize e;
            e.task = f[0];
            if (!parse_double(f[1], e.delta) || !parse_double(f[2], e.se))
                throw io_error("bad effects row '" + line + "'");
            effects.push_back(std::move(e));
        }
    }
    auto result = stats::meta_analysis(effects);

    std::ostringstream out;
    out << "row\teffect\tse\tci_low\tci_high\tp_value\n";
    for (const auto& e : result.effects)
        out << e.task << '\t' << fmt_double(e.delta) << '\t' << fmt_double(e.se) << '\t'
            << fmt_double(e.delta - 1.959963984540054 * e.se) << '\t'
            << fmt_double(e.delta + 1.959963984540054 * e.se) << '\t' << "" << '\n';
    out << "pooled_fixed\t" << fmt_double(result.fixed.pooled) << '\t' << fmt_double(result.fixed.se)
        << '\t' << fmt_double(result.fixed.ci_low) << '\t' << fmt_double(result.fixed.ci_high)
        << '\t' << fmt_double(result.fixed.p_two_sided) << '\n';
    out << "pooled_random\t" << fmt_double(result.random.pooled) << '\t'
        << fmt_double(result.random.se) << '\t' << fmt_double(result.random.ci_low) << '\t'
        << fmt_double(result.random.ci_high) << '\t' << fmt_double(result.random.p_two_sided) << '\n';
    const std::string meta_path = (fs::path(out_dir) / "meta.tsv").string();
    write_file(meta_path, out.str());

    ordered_json j;
    j["q"] = result.q;
    j["q_p"] = result.q_p;
    j["i2"] = result.i2;
    j["tau2"] = result.tau2;
    j["preferred"] = result.preferred;
    j["preferred_reason"] = result.preferred_reason;
    const std::string het_path = (fs::path(out_dir) / "heterogeneity.json").string();
    write_file(het_path, j.dump(2) + "\n");

    RunManifest m = start_manifest("meta", 0);
    m.args = a;
    add_input(m, a.at("effects"));
    add_output(m, meta_path);
    add_output(m, het_path);
    finish_manifest(m, out_dir);
    std::cout << "[meta] k=" << effects.size() << " fixed=" << fmt_double(result.fixed.pooled, 6)
              << " random=" << fmt_double(result.random.pooled, 6) << " I2="
              << fmt_double(result.i2, 4) << " preferred=" << result.preferred << " out=" << out_dir
              << "\n";
    return 0;
}

int run_transfer(const std::map<std::string, std::string>& a) {
    const std::string out_dir = a.at("out");
    fs::create_directories(out_dir);
    const uint64_t seed = std::stoull(a.at("seed"));
    const long long history = std::stoll(a.at("history-days"));
    const long long horizon = std::stoll(a.at("horizon-days"));
    const std::string target = a.at("target-code");

    Cohort train_c = load_subset(a.at("cohort"), a.at("split"), "train");
    Cohort test_c = load_subset(a.at("cohort"), a.at("split"), "test");
    Vocabulary vocab = Vocabulary::load(a.at("vocab"));
    ModelCheckpoint ckpt = load_checkpoint(a.at("ckpt"));

    const auto train_labels = labels_for(train_c, kTargetTask, target, history, horizon);
    const auto test_labels = labels_for(test_c, kTargetTask, target, history, horizon);

    RunManifest m = start_manifest("transfer", seed);
    m.args = a;
    add_input(m, a.at("ckpt"));

    std::ostringstream out;
    out << "model\tauroc\tauprc\n";
    std::ostringstream summary;
    if (a.at("pathway") == "head") {
        auto train_states = extract_pooled_states(ckpt, train_c, vocab, history, train_labels);
        auto test_states = extract_pooled_states(ckpt, test_c, vocab, history, test_labels);
        HeadTrainConfig hc;
        hc.seed = seed;
        ClassifierHead head = finetune_head(train_states, 2, hc);
        std::vector<double> scores(test_states.states.size());
        for (size_t i = 0; i < test_states.states.size(); ++i)
            scores[i] = head_positive_probability(head, test_states.states[i]);
        out << "finetuned_head\t" << fmt_double(stats::auroc(test_labels, scores)) << '\t'
            << fmt_double(stats::auprc(test_labels, scores)) << '\n';
        summary << "[transfer] pathway=head auroc=" << fmt_double(stats::auroc(test_labels, scores), 6);
    } else if (a.at("pathway") == "embed") {
        auto embed_features = [&](const Cohort& c) {
            std::vector<std::vector<float>> f(c.participants.size());
            for (size_t i = 0; i < c.participants.size(); ++i) {
                if (!c.participants[i].prs) throw io_error("participant lacks PRS for embed pathway");
                f[i] = extract_prs_embedding(ckpt, c.participants[i].prs->values);
            }
            return f;
        };
        auto raw_features = [&](const Cohort& c) {
            std::vector<std::vector<float>> f(c.participants.size());
            for (size_t i = 0; i < c.participants.size(); ++i) {
                const auto& v = c.participants[i].prs->values;
                f[i].assign(v.begin(), v.end());
            }
            return f;
        };
        MlpTrainConfig mcfg;
        mcfg.hidden_width = std::stoi(a.at("hidden"));
        mcfg.seed = seed;
        auto clf_embed = train_mlp_classifier(embed_features(train_c), train_labels, mcfg);
        auto clf_raw = train_mlp_classifier(raw_features(train_c), train_labels, mcfg);
        auto ef = embed_features(test_c);
        auto rf = raw_features(test_c);
        stats::PairedPredictions pp;
        pp.labels = test_labels;
        for (size_t i = 0; i < test_c.participants.size(); ++i) {
            pp.score_a.push_back(mlp_positive_probability(clf_raw, rf[i]));
            pp.score_b.push_back(mlp_positive_probability(clf_embed, ef[i]));
        }
        out << "raw_prs_mlp\t" << fmt_double(stats::auroc(pp.labels, pp.score_a)) << '\t'
            << fmt_double(stats::auprc(pp.labels, pp.score_a)) << '\n';
        out << "embedded_prs_mlp\t" << fmt_double(stats::auroc(pp.labels, pp.score_b)) << '\t'
            << fmt_double(stats::auprc(pp.labels, pp.score_b)) << '\n';
        LogisticModel base = train_demographics_logistic(train_c, train_labels, 20, 0.1, seed);
        std::vector<double> base_scores(test_c.participants.size());
        for (size_t i = 0; i < test_c.participants.size(); ++i)
            base_scores[i] = logistic_positive_probability(base, test_c.participants[i]);
        out << "demographics_logistic\t" << fmt_double(stats::auroc(test_labels, base_scores)) << '\t'
            << fmt_double(stats::auprc(test_labels, base_scores)) << '\n';

        const int iters = std::stoi(a.at("iterations"));
        std::vector<stats::BootstrapDelta> rows;
        rows.push_back(stats::paired_bootstrap(pp, "AUROC", [](const auto& l, const auto& s) { return stats::auroc(l, s); }, iters, derive_seed(seed, {11})));
        rows.push_back(stats::paired_bootstrap(pp, "AUPRC", [](const auto& l, const auto& s) { return stats::auprc(l, s); }, iters, derive_seed(seed, {12})));
        const std::string delta_path = (fs::path(out_dir) / "embed_vs_raw.tsv").string();
        write_metrics_table(delta_path, rows);
        add_output(m, delta_path);
        const std::string clf_path = (fs::path(out_dir) / "mlp_classifier.json").string();
        save_mlp_classifier(clf_embed, clf_path);
        add_output(m, clf_path);
        summary << "[transfer] pathway=embed dAUROC=" << fmt_double(rows[0].mean_delta, 6)
                << " p=" << fmt_double(rows[0].p_two_sided, 4);
    } else {
        throw io_error("unknown pathway '" + a.at("pathway") + "' (use head|embed)");
    }
    const std::string report_path = (fs::path(out_dir) / "transfer_report.tsv").string();
    write_file(report_path, out.str());
    add_output(m, report_path);
    finish_manifest(m, out_dir);
    std::cout << summary.str() << " out=" << out_dir << "\n";
    return 0;
}

int run_plot(const std::map<std::string, std::string>& a) {
    const std::string out_dir = a.at("out");
    fs::create_directories(out_dir);
    RunManifest m = start_manifest("plot", 0);
    m.args = a;
    std::ostringstream summary;
    summary << "[plot]";

    if (!a.at("eval-dir").empty()) {
        const fs::path eval_dir(a.at("eval-dir"));
        // delta bars per metric
        {
            std::istringstream in(read_file((eval_dir / "metrics.tsv").string()));
            std::string line;
            std::getline(in, line);
            std::vector<std::string> groups;
            std::vector<plot::Bar> bars;
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                auto f = split_tabs(line);
                plot::Bar b;
                b.label = f[0];
                b.value = std::stod(f[3]);
                b.ci_low = std::stod(f[5]);
                b.ci_high = std::stod(f[6]);
                groups.push_back(f[0]);
                bars.push_back(b);
            }
            const std::string path = (fs::path(out_dir) / "delta_bars.svg").string();
            plot::bar_chart_svg(path, "Paired bootstrap deltas (B - A)", groups, {"delta"}, {bars});
            add_input(m, (eval_dir / "metrics.tsv").string());
            add_output(m, path);
        }
        // ROC overlay
        {
            auto load_curve = [&](const std::string& name, const std::string& label) {
                std::istringstream in(read_file((eval_dir / name).string()));
                std::string line;
                std::getline(in, line);
                plot::Curve c;
                c.label = label;
                while (std::getline(in, line)) {
                    if (line.empty()) continue;
                    auto f = split_tabs(line);
                    c.x.push_back(std::stod(f[0]));
                    c.y.push_back(std::stod(f[1]));
                }
                return c;
            };
            const std::string path = (fs::path(out_dir) / "roc.svg").string();
            plot::step_chart_svg(path, "ROC", "false positive rate", "true positive rate",
                                 {load_curve("roc_a.tsv", "model A"), load_curve("roc_b.tsv", "model B")},
                                 true);
            add_output(m, path);
        }
        // PR difference band
        {
            std::istringstream in(read_file((eval_dir / "pr_difference.tsv").string()));
            std::string line;
            std::getline(in, line);
            std::vector<double> x, mean, lo, hi;
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                auto f = split_tabs(line);
                x.push_back(std::stod(f[0]));
                mean.push_back(std::stod(f[2]));
                lo.push_back(std::stod(f[3]));
                hi.push_back(std::stod(f[4]));
            }
            const std::string path = (fs::path(out_dir) / "pr_difference.svg").string();
            plot::band_chart_svg(path, "Precision difference (B - A)", "recall", "delta precision",
                                 x, mean, lo, hi);
            add_output(m, path);
        }
        summary << " eval=" << a.at("eval-dir");
    }
    if (!a.at("meta-dir").empty()) {
        const fs::path meta_dir(a.at("meta-dir"));
        std::istringstream in(read_file((meta_dir / "meta.tsv").string()));
        std::string line;
        std::getline(in, line);
        std::vector<plot::ForestRow> rows;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto f = split_tabs(line);
            plot::ForestRow r;
            r.label = f[0];
            r.effect = std::stod(f[1]);
            r.ci_low = std::stod(f[3]);
            r.ci_high = std::stod(f[4]);
            r.is_summary = r.label.rfind("pooled_", 0) == 0;
            rows.push_back(r);
        }
        const std::string path = (fs::path(out_dir) / "forest.svg").string();
        plot::forest_plot_svg(path, "Meta-analysis of deltas", rows);
        add_input(m, (meta_dir / "meta.tsv").string());
        add_output(m, path);
        summary << " meta=" << a.at("meta-dir");
    }
    finish_manifest(m, out_dir);
    std::cout << summary.str() << " out=" << out_dir << "\n";
    return 0;
}

int dispatch(const std::string& sub, const std::map<std::string, std::string>& args);

int run_rerun(const std::map<std::string, std::string>& a) {
    RunManifest m = read_manifest(a.at("manifest"));
    return dispatch(m.subcommand, m.args);
}

int dispatch(const std::string& sub, const std::map<std::string, std::string>& args) {
    if (sub == "synth") return run_synth(args);
    if (sub == "tokenize") return run_tokenize(args);
    if (sub == "prs") return run_prs(args);
    if (sub == "train") return run_train(args);
    if (sub == "loss") return run_loss(args);
    if (sub == "score") return run_score(args);
    if (sub == "eval") return run_eval(args);
    if (sub == "meta") return run_meta(args);
    if (sub == "transfer") return run_transfer(args);
    if (sub == "plot") return run_plot(args);
    if (sub == "rerun") return run_rerun(args);
    throw io_error("unknown subcommand '" + sub + "'");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"event-stream foundation model workbench"};
    app.require_subcommand(1);

    // Every option is stored as a string so manifests can replay runs exactly.
    std::map<std::string, std::map<std::string, std::string>> args;
    auto opt = [&](CLI::App* sub, const std::string& flag, const std::string& def,
                   const std::string& help, bool required = false) {
        auto& slot = args[sub->get_name()][flag];
        slot = def;
        auto* o = sub->add_option("--" + flag, slot, help);
        if (required) o->required();
        return o;
    };

    auto* synth = app.add_subcommand("synth", "generate a synthetic cohort with a planted genetic signal");
    opt(synth, "out", "", "output cohort directory");
    opt(synth, "n", "2000", "participants");
    opt(synth, "traits", "16", "PRS traits");
    opt(synth, "codes", "60", "condition codes");
    opt(synth, "visit-rate", "8", "visits per year");
    opt(synth, "genetic-effect", "1.0", "log-hazard weight of the latent");
    opt(synth, "history-effect", "0.8", "log-hazard weight of prodromal history");
    opt(synth, "noise-sd", "0.5", "PRS noise sd");
    opt(synth, "seed", "1", "seed");

    auto* tokenize = app.add_subcommand("tokenize", "filter, split and build the vocabulary");
    opt(tokenize, "cohort", "", "cohort directory", true);
    opt(tokenize, "out", "", "output directory");
    opt(tokenize, "quantiles", "10", "quantile buckets per measurement");
    opt(tokenize, "min-events", "20", "min events per participant");
    opt(tokenize, "max-events", "500", "max events per participant");
    opt(tokenize, "min-code-participants", "10", "min distinct participants per code");
    opt(tokenize, "test-fraction", "0.1", "held-out fraction");
    opt(tokenize, "seed", "7", "split seed");

    auto* prs = app.add_subcommand("prs", "effects + dosages + LD panel -> PRS matrix");
    opt(prs, "effects", "", "effects table (trait_id, variant_id, beta, p_value)", true);
    opt(prs, "dosages", "", "dosage matrix (participants x variants)", true);
    opt(prs, "ld", "", "LD panel matrix", true);
    opt(prs, "out", "", "output directory");
    opt(prs, "p-lead", "1e-4", "lead variant p threshold");
    opt(prs, "p-secondary", "1.1e-4", "secondary clump p threshold");
    opt(prs, "r2", "0.1", "clump R^2 threshold");
    opt(prs, "p-retain", "5e-8", "retention p threshold");
    opt(prs, "max-variants", "1500", "max variants per trait");
    opt(prs, "k-sd", "4", "winsorization width in sds");

    auto* train_cmd = app.add_subcommand("train", "fit a checkpoint with next-token prediction");
    opt(train_cmd, "cohort", "", "cohort directory", true);
    opt(train_cmd, "vocab", "", "vocabulary file", true);
    opt(train_cmd, "split", "", "split.json (optional)");
    opt(train_cmd, "subset", "train", "train|test|all");
    opt(train_cmd, "out", "", "run directory");
    opt(train_cmd, "mode", "ehr_only", "ehr_only|prs_prefix|prs_cross");
    opt(train_cmd, "d-model", "64", "embedding size");
    opt(train_cmd, "layers", "4", "decoder layers");
    opt(train_cmd, "heads", "4", "attention heads");
    opt(train_cmd, "window", "256", "max context length");
    opt(train_cmd, "soft-tokens", "4", "projected soft tokens");
    opt(train_cmd, "proj-hidden", "256", "projector hidden width");
    opt(train_cmd, "dropout", "0.0", "dropout rate");
    opt(train_cmd, "epochs", "5", "training epochs");
    opt(train_cmd, "batch-size", "2", "sequences per micro-batch");
    opt(train_cmd, "lr", "1e-4", "peak learning rate");
    opt(train_cmd, "schedule", "linear_decay", "linear_decay|constant");
    opt(train_cmd, "weight-decay", "0.01", "AdamW weight decay");
    opt(train_cmd, "grad-accum", "8", "micro-batches per optimizer step");
    opt(train_cmd, "seed", "1", "seed");

    auto* loss_cmd = app.add_subcommand("loss", "held-out loss and the paired loss comparison");
    opt(loss_cmd, "cohort", "", "cohort directory", true);
    opt(loss_cmd, "vocab", "", "vocabulary file", true);
    opt(loss_cmd, "split", "", "split.json (optional)");
    opt(loss_cmd, "subset", "test", "train|test|all");
    opt(loss_cmd, "ckpt", "", "checkpoint A", true);
    opt(loss_cmd, "ckpt-b", "", "checkpoint B (enables the paired test)");
    opt(loss_cmd, "out", "", "output directory");

    auto* score_cmd = app.add_subcommand("score", "Monte Carlo trajectory risk scores");
    opt(score_cmd, "cohort", "", "cohort directory", true);
    opt(score_cmd, "vocab", "", "vocabulary file", true);
    opt(score_cmd, "split", "", "split.json (optional)");
    opt(score_cmd, "subset", "test", "train|test|all");
    opt(score_cmd, "ckpt", "", "checkpoint", true);
    opt(score_cmd, "out", "", "output directory");
    opt(score_cmd, "target-code", std::string(kTargetCode), "target condition code");
    opt(score_cmd, "target-stem", "", "match all code tokens containing this stem instead");
    opt(score_cmd, "history-days", "0", "history window before time zero");
    opt(score_cmd, "horizon-days", "1460", "prediction horizon");
    opt(score_cmd, "n-paths", "10", "Monte Carlo paths per subject");
    opt(score_cmd, "max-new-tokens", "48", "generated tokens per path (K)");
    opt(score_cmd, "temperature", "1.0", "sampling temperature");
    opt(score_cmd, "agg", "mean", "mean|median|max aggregation");
    opt(score_cmd, "seed", "1", "seed");

    auto* eval_cmd = app.add_subcommand("eval", "paired bootstrap model comparison");
    opt(eval_cmd, "cohort", "", "cohort directory", true);
    opt(eval_cmd, "split", "", "split.json (optional)");
    opt(eval_cmd, "subset", "test", "train|test|all");
    opt(eval_cmd, "scores-a", "", "score file for model A", true);
    opt(eval_cmd, "scores-b", "", "score file for model B", true);
    opt(eval_cmd, "estimator", "path_probability", "path_probability|mc_frequency");
    opt(eval_cmd, "task", std::string(kTargetTask), "label task name");
    opt(eval_cmd, "target-code", std::string(kTargetCode), "target code for relabeling");
    opt(eval_cmd, "relabel-window", "-1", "relabel: window start in days (-1 = stored labels)");
    opt(eval_cmd, "relabel-horizon", "1460", "relabel: horizon in days");
    opt(eval_cmd, "threshold", "0.5", "threshold for thresholded metrics");
    opt(eval_cmd, "iterations", "2000", "bootstrap iterations");
    opt(eval_cmd, "recall-grid", "101", "recall grid points");
    opt(eval_cmd, "out", "", "output directory");
    opt(eval_cmd, "seed", "1", "seed");

    auto* meta_cmd = app.add_subcommand("meta", "pool per-task deltas (fixed + DerSimonian-Laird)");
    opt(meta_cmd, "effects", "", "TSV with header: task, delta, se", true);
    opt(meta_cmd, "out", "", "output directory");

    auto* transfer_cmd = app.add_subcommand("transfer", "fine-tuned head or PRS-embedding transfer");
    opt(transfer_cmd, "cohort", "", "cohort directory", true);
    opt(transfer_cmd, "vocab", "", "vocabulary file", true);
    opt(transfer_cmd, "split", "", "split.json", true);
    opt(transfer_cmd, "ckpt", "", "checkpoint", true);
    opt(transfer_cmd, "pathway", "head", "head|embed");
    opt(transfer_cmd, "target-code", std::string(kTargetCode), "target condition code");
    opt(transfer_cmd, "history-days", "365", "context window for the head pathway");
    opt(transfer_cmd, "horizon-days", "1460", "label horizon after the window");
    opt(transfer_cmd, "hidden", "100", "MLP hidden width (embed pathway)");
    opt(transfer_cmd, "iterations", "2000", "bootstrap iterations (embed pathway)");
    opt(transfer_cmd, "out", "", "output directory");
    opt(transfer_cmd, "seed", "1", "seed");

    auto* plot_cmd = app.add_subcommand("plot", "render SVG figures from eval/meta outputs");
    opt(plot_cmd, "eval-dir", "", "eval output directory");
    opt(plot_cmd, "meta-dir", "", "meta output directory");
    opt(plot_cmd, "out", "", "output directory");

    auto* rerun_cmd = app.add_subcommand("rerun", "replay a run from its manifest");
    opt(rerun_cmd, "manifest", "", "manifest.json from a previous run", true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    const std::string sub = app.get_subcommands().front()->get_name();
    auto sub_args = args[sub];
    if (sub_args.count("out") && sub != "rerun") sub_args["out"] = resolve_out_dir(sub_args["out"], sub);

    try {
        return dispatch(sub, sub_args);
    } catch (const io_error& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitInput;
    } catch (const numeric_error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
