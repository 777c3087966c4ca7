#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace eventfm::stats {

// ---------------------------------------------------------------------------
// Distribution helpers
// ---------------------------------------------------------------------------

double normal_cdf(double x);
double normal_sf(double x);
// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);
// Regularized upper incomplete gamma Q(a, x).
double gamma_q(double a, double x);
double student_t_sf(double t, double df);      // one-sided upper tail
double student_t_two_sided(double t, double df);
double chi2_sf(double x, double df);

// ---------------------------------------------------------------------------
// Threshold-free metrics
// ---------------------------------------------------------------------------

// Mann-Whitney AUROC: P(score_pos > score_neg) + 0.5 P(tie).
double auroc(const std::vector<int>& labels, const std::vector<double>& scores);

// Average precision with tied scores grouped.
double auprc(const std::vector<int>& labels, const std::vector<double>& scores);

struct ThresholdedMetrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double specificity = 0.0;
    bool zero_predicted_positives = false;
};

ThresholdedMetrics thresholded_metrics(const std::vector<int>& labels,
                                       const std::vector<double>& scores, double threshold);

struct PrPoint {
    double recall = 0.0;
    double precision = 0.0;
};

// PR curve points in threshold-sweep order (descending score, ties grouped).
std::vector<PrPoint> pr_curve(const std::vector<int>& labels, const std::vector<double>& scores);

// Stepwise-constant-from-the-right interpolation onto `grid` (ascending
// recalls in [0,1]). recall 0 maps to the maximum-threshold precision.
std::vector<double> precision_at_recall(const std::vector<PrPoint>& curve,
                                        const std::vector<double>& grid);

std::vector<double> uniform_grid(int points);  // `points` values spanning [0,1]

// ROC curve points (fpr, tpr) in sweep order, for plotting.
struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
};
std::vector<RocPoint> roc_curve(const std::vector<int>& labels, const std::vector<double>& scores);

// ---------------------------------------------------------------------------
// Paired tests
// ---------------------------------------------------------------------------

struct PairedTestResult {
    double t_p = 1.0;            // two-sided paired t-test
    double wilcoxon_p = 1.0;     // two-sided signed-rank
    double normality_p = 1.0;    // D'Agostino-Pearson K^2 on the differences
    bool degenerate = false;     // all differences zero
    bool zero_variance = false;  // constant nonzero shift
};

PairedTestResult paired_difference_tests(const std::vector<double>& diffs);

struct SpearmanResult {
    double rho = 0.0;
    double p_one_sided = 1.0;  // H1: rho > 0
};

SpearmanResult spearman_positive(const std::vector<double>& x, const std::vector<double>& y);

// ---------------------------------------------------------------------------
// Paired bootstrap
// ---------------------------------------------------------------------------

struct PairedPredictions {
    std::vector<int> labels;      // 0/1 per subject
    std::vector<double> score_a;  // model A
    std::vector<double> score_b;  // model B
};

using Metric = std::function<double(const std::vector<int>&, const std::vector<double>&)>;

struct BootstrapDelta {
    std::string metric;
    double point_a = 0.0;  // metric(A) on the full sample
    double point_b = 0.0;
    double mean_delta = 0.0;
    double se = 0.0;  // sd of the bootstrap delta distribution
    double ci_low = 0.0;
    double ci_high = 0.0;
    double p_two_sided = 1.0;
    int iterations = 0;
    int redrawn = 0;  // single-class resamples redrawn
};

BootstrapDelta paired_bootstrap(const PairedPredictions& pp, const std::string& metric_name,
                                const Metric& metric, int iterations, uint64_t seed);

struct PrDifferencePoint {
    double recall = 0.0;
    double delta = 0.0;  // full-sample precision_b - precision_a
    double mean_delta = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
};

struct PrDifferenceResult {
    std::vector<PrDifferencePoint> points;
    int iterations = 0;
    int excluded = 0;  // single-class resamples excluded
};

PrDifferenceResult pr_difference(const PairedPredictions& pp, int recall_grid_size, int iterations,
                                 uint64_t seed);

// ---------------------------------------------------------------------------
// Meta-analysis
// ---------------------------------------------------------------------------

struct EffectSize {
    std::string task;
    double delta = 0.0;
    double se = 0.0;
};

struct PooledEstimate {
    double pooled = 0.0;
    double se = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    double p_two_sided = 1.0;
};

struct MetaResult {
    std::vector<EffectSize> effects;
    PooledEstimate fixed;
    PooledEstimate random;
    double tau2 = 0.0;
    double q = 0.0;
    double q_p = 1.0;
    double i2 = 0.0;
    std::string preferred;         // "fixed" or "random"
    std::string preferred_reason;
};

MetaResult meta_analysis(const std::vector<EffectSize>& effects);

// Mean / sample sd of a vector (sd with n-1 denominator).
double mean_of(const std::vector<double>& v);
double sample_sd(const std::vector<double>& v);

}  // namespace eventfm::stats
