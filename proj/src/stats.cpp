#include "eventfm/stats.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>

#include "eventfm/common.hpp"

namespace eventfm::stats {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }
double normal_sf(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

namespace {

constexpr double kZ975 = 1.959963984540054;

// Lentz continued fraction for the incomplete beta.
double betacf(double a, double b, double x) {
    constexpr int max_iter = 300;
    constexpr double eps = 3e-16;
    constexpr double fpmin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::abs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::abs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::abs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < eps) break;
    }
    return h;
}

double gamma_p_series(double a, double x) {
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int n = 0; n < 500; ++n) {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if (std::abs(del) < std::abs(sum) * 3e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

double gamma_q_cf(double a, double x) {
    constexpr double fpmin = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / fpmin;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < fpmin) d = fpmin;
        c = b + an / c;
        if (std::abs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 3e-16) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                         b * std::log(1.0 - x);
    const double bt = std::exp(ln_bt);
    if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
    return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

double gamma_q(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw numeric_error("gamma_q: bad arguments");
    if (x == 0.0) return 1.0;
    if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
    return gamma_q_cf(a, x);
}

double student_t_sf(double t, double df) {
    const double p = 0.5 * incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
    return t >= 0.0 ? p : 1.0 - p;
}

double student_t_two_sided(double t, double df) {
    return incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

double chi2_sf(double x, double df) { return gamma_q(df / 2.0, x / 2.0); }

// ---------------------------------------------------------------------------
// Rank helpers
// ---------------------------------------------------------------------------

namespace {

// average ranks (1-based) with ties shared
std::vector<double> average_ranks(const std::vector<double>& v) {
    const size_t n = v.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

void check_binary_labels(const std::vector<int>& labels, const std::vector<double>& scores) {
    if (labels.size() != scores.size()) throw numeric_error("labels/scores size mismatch");
    if (labels.empty()) throw numeric_error("empty inputs");
}

}  // namespace

double auroc(const std::vector<int>& labels, const std::vector<double>& scores) {
    check_binary_labels(labels, scores);
    size_t n_pos = 0;
    for (int l : labels) n_pos += l ? 1 : 0;
    const size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw numeric_error("auroc: need both classes");
    const auto ranks = average_ranks(scores);
    double rank_sum = 0.0;
    for (size_t i = 0; i < labels.size(); ++i)
        if (labels[i]) rank_sum += ranks[i];
    const double u = rank_sum - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double auprc(const std::vector<int>& labels, const std::vector<double>& scores) {
    check_binary_labels(labels, scores);
    size_t n_pos = 0;
    for (int l : labels) n_pos += l ? 1 : 0;
    if (n_pos == 0) throw numeric_error("auprc: no positive labels");
    std::vector<size_t> order(labels.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });
    double ap = 0.0;
    double tp = 0.0, fp = 0.0, prev_recall = 0.0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        double gtp = 0.0, gfp = 0.0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            if (labels[order[j]]) ++gtp; else ++gfp;
            ++j;
        }
        tp += gtp;
        fp += gfp;
        const double recall = tp / static_cast<double>(n_pos);
        const double precision = tp / (tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return ap;
}

ThresholdedMetrics thresholded_metrics(const std::vector<int>& labels,
                                       const std::vector<double>& scores, double threshold) {
    check_binary_labels(labels, scores);
    double tp = 0, fp = 0, tn = 0, fn = 0;
    for (size_t i = 0; i < labels.size(); ++i) {
        const bool pred = scores[i] >= threshold;
        if (labels[i] && pred) ++tp;
        else if (!labels[i] && pred) ++fp;
        else if (!labels[i]) ++tn;
        else ++fn;
    }
    ThresholdedMetrics m;
    m.accuracy = (tp + tn) / static_cast<double>(labels.size());
    m.zero_predicted_positives = (tp + fp) == 0;
    m.precision = m.zero_predicted_positives ? 0.0 : tp / (tp + fp);
    m.recall = (tp + fn) > 0 ? tp / (tp + fn) : 0.0;
    m.specificity = (tn + fp) > 0 ? tn / (tn + fp) : 0.0;
    m.f1 = (m.precision + m.recall) > 0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    return m;
}

std::vector<PrPoint> pr_curve(const std::vector<int>& labels, const std::vector<double>& scores) {
    check_binary_labels(labels, scores);
    size_t n_pos = 0;
    for (int l : labels) n_pos += l ? 1 : 0;
    if (n_pos == 0) throw numeric_error("pr_curve: no positive labels");
    std::vector<size_t> order(labels.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });
    std::vector<PrPoint> pts;
    double tp = 0.0, fp = 0.0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            if (labels[order[j]]) ++tp; else ++fp;
            ++j;
        }
        pts.push_back({tp / static_cast<double>(n_pos), tp / (tp + fp)});
        i = j;
    }
    return pts;
}

std::vector<double> precision_at_recall(const std::vector<PrPoint>& curve,
                                        const std::vector<double>& grid) {
    if (curve.empty()) throw numeric_error("precision_at_recall: empty curve");
    std::vector<double> out(grid.size(), curve.back().precision);
    for (size_t g = 0; g < grid.size(); ++g) {
        for (const auto& pt : curve) {
            if (pt.recall >= grid[g]) {
                out[g] = pt.precision;
                break;
            }
        }
    }
    return out;
}

std::vector<double> uniform_grid(int points) {
    if (points < 2) throw numeric_error("uniform_grid: need >= 2 points");
    std::vector<double> g(static_cast<size_t>(points));
    for (int i = 0; i < points; ++i)
        g[static_cast<size_t>(i)] = static_cast<double>(i) / static_cast<double>(points - 1);
    return g;
}

std::vector<RocPoint> roc_curve(const std::vector<int>& labels, const std::vector<double>& scores) {
    check_binary_labels(labels, scores);
    double n_pos = 0, n_neg = 0;
    for (int l : labels) (l ? n_pos : n_neg) += 1;
    if (n_pos == 0 || n_neg == 0) throw numeric_error("roc_curve: need both classes");
    std::vector<size_t> order(labels.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });
    std::vector<RocPoint> pts{{0.0, 0.0}};
    double tp = 0.0, fp = 0.0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            if (labels[order[j]]) ++tp; else ++fp;
            ++j;
        }
        pts.push_back({fp / n_neg, tp / n_pos});
        i = j;
    }
    return pts;
}

// ---------------------------------------------------------------------------
// Paired tests
// ---------------------------------------------------------------------------

namespace {

double dagostino_k2_p(const std::vector<double>& v) {
    const size_t n_sz = v.size();
    if (n_sz < 8) return std::numeric_limits<double>::quiet_NaN();
    const double n = static_cast<double>(n_sz);
    const double mean = mean_of(v);
    double m2 = 0, m3 = 0, m4 = 0;
    for (double x : v) {
        const double c = x - mean;
        m2 += c * c;
        m3 += c * c * c;
        m4 += c * c * c * c;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if (m2 <= 0.0) return std::numeric_limits<double>::quiet_NaN();
    const double g1 = m3 / std::pow(m2, 1.5);
    const double b2 = m4 / (m2 * m2);

    // skewness z (D'Agostino 1970)
    const double y = g1 * std::sqrt((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0)));
    const double beta2 = 3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0) /
                         ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
    const double w2 = -1.0 + std::sqrt(2.0 * (beta2 - 1.0));
    const double delta = 1.0 / std::sqrt(0.5 * std::log(w2));
    const double alpha = std::sqrt(2.0 / (w2 - 1.0));
    const double ya = y / alpha;
    const double z1 = delta * std::log(ya + std::sqrt(ya * ya + 1.0));

    // kurtosis z (Anscombe & Glynn 1983)
    const double eb2 = 3.0 * (n - 1.0) / (n + 1.0);
    const double vb2 = 24.0 * n * (n - 2.0) * (n - 3.0) / ((n + 1.0) * (n + 1.0) * (n + 3.0) * (n + 5.0));
    const double x = (b2 - eb2) / std::sqrt(vb2);
    const double sqrtbeta1 = 6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0)) *
                             std::sqrt(6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0)));
    const double a = 6.0 + 8.0 / sqrtbeta1 * (2.0 / sqrtbeta1 + std::sqrt(1.0 + 4.0 / (sqrtbeta1 * sqrtbeta1)));
    const double t1 = 1.0 - 2.0 / (9.0 * a);
    const double denom = 1.0 + x * std::sqrt(2.0 / (a - 4.0));
    const double t2 = std::cbrt((1.0 - 2.0 / a) / denom);
    const double z2 = (t1 - t2) / std::sqrt(2.0 / (9.0 * a));

    const double k2 = z1 * z1 + z2 * z2;
    return chi2_sf(k2, 2.0);
}

}  // namespace

PairedTestResult paired_difference_tests(const std::vector<double>& diffs) {
    if (diffs.size() < 3) throw numeric_error("paired tests need >= 3 paired observations");
    PairedTestResult r;
    const double n = static_cast<double>(diffs.size());
    const double mean = mean_of(diffs);
    const double sd = sample_sd(diffs);

    bool all_zero = true;
    for (double d : diffs)
        if (d != 0.0) all_zero = false;

    if (sd == 0.0) {
        if (all_zero) {
            r.degenerate = true;
            r.t_p = 1.0;
            r.wilcoxon_p = 1.0;
            r.normality_p = std::numeric_limits<double>::quiet_NaN();
            return r;
        }
        r.zero_variance = true;
        r.t_p = 0.0;  // constant nonzero shift: p -> 0
    } else {
        const double t = mean / (sd / std::sqrt(n));
        r.t_p = student_t_two_sided(t, n - 1.0);
    }
    r.normality_p = dagostino_k2_p(diffs);

    // Wilcoxon signed-rank, zeros dropped, normal approximation with tie correction.
    std::vector<double> nz;
    for (double d : diffs)
        if (d != 0.0) nz.push_back(d);
    if (nz.empty()) {
        r.degenerate = true;
        r.wilcoxon_p = 1.0;
        return r;
    }
    std::vector<double> abs_nz(nz.size());
    for (size_t i = 0; i < nz.size(); ++i) abs_nz[i] = std::abs(nz[i]);
    const auto ranks = average_ranks(abs_nz);
    double w_plus = 0.0;
    for (size_t i = 0; i < nz.size(); ++i)
        if (nz[i] > 0.0) w_plus += ranks[i];
    const double m = static_cast<double>(nz.size());
    const double mu = m * (m + 1.0) / 4.0;
    double tie_term = 0.0;
    {
        std::vector<double> sorted(abs_nz);
        std::sort(sorted.begin(), sorted.end());
        size_t i = 0;
        while (i < sorted.size()) {
            size_t j = i;
            while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
            const double t = static_cast<double>(j - i + 1);
            tie_term += t * t * t - t;
            i = j + 1;
        }
    }
    const double sigma2 = m * (m + 1.0) * (2.0 * m + 1.0) / 24.0 - tie_term / 48.0;
    if (sigma2 <= 0.0) {
        r.wilcoxon_p = 1.0;
        return r;
    }
    const double z = (w_plus - mu) / std::sqrt(sigma2);
    r.wilcoxon_p = std::min(1.0, 2.0 * normal_sf(std::abs(z)));
    return r;
}

SpearmanResult spearman_positive(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw numeric_error("spearman: size mismatch");
    if (x.size() < 3) throw numeric_error("spearman: need >= 3 pairs");
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    const double mx = mean_of(rx), my = mean_of(ry);
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < rx.size(); ++i) {
        const double a = rx[i] - mx, b = ry[i] - my;
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if (sxx == 0.0 || syy == 0.0) throw numeric_error("spearman: constant input");
    SpearmanResult r;
    r.rho = sxy / std::sqrt(sxx * syy);
    const double n = static_cast<double>(x.size());
    if (r.rho >= 1.0) {
        r.p_one_sided = 0.0;
    } else if (r.rho <= -1.0) {
        r.p_one_sided = 1.0;
    } else {
        const double t = r.rho * std::sqrt((n - 2.0) / (1.0 - r.rho * r.rho));
        r.p_one_sided = student_t_sf(t, n - 2.0);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Bootstrap
// ---------------------------------------------------------------------------

namespace {

double quantile_linear(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const size_t lo = static_cast<size_t>(std::floor(pos));
    const size_t hi = static_cast<size_t>(std::ceil(pos));
    const double frac = pos - static_cast<double>(lo);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}

bool single_class(const std::vector<int>& labels) {
    bool has0 = false, has1 = false;
    for (int l : labels) (l ? has1 : has0) = true;
    return !(has0 && has1);
}

}  // namespace

BootstrapDelta paired_bootstrap(const PairedPredictions& pp, const std::string& metric_name,
                                const Metric& metric, int iterations, uint64_t seed) {
    const size_t n = pp.labels.size();
    if (n == 0 || pp.score_a.size() != n || pp.score_b.size() != n)
        throw numeric_error("paired_bootstrap: misaligned inputs");
    if (iterations < 100) throw numeric_error("paired_bootstrap: iterations must be >= 100");

    BootstrapDelta out;
    out.metric = metric_name;
    out.iterations = iterations;
    out.point_a = metric(pp.labels, pp.score_a);  // throws if undefined on the full sample
    out.point_b = metric(pp.labels, pp.score_b);

    std::vector<double> deltas(static_cast<size_t>(iterations), 0.0);
    std::vector<int> redraw_counts(static_cast<size_t>(iterations), 0);
    std::atomic<bool> failed{false};
#pragma omp parallel for schedule(static)
    for (int it = 0; it < iterations; ++it) {
        if (failed.load(std::memory_order_relaxed)) continue;
        std::vector<int> labels(n);
        std::vector<double> sa(n), sb(n);
        bool drew = false;
        for (int attempt = 0; attempt <= 10000; ++attempt) {
            Rng rng(derive_seed(seed, {hash_str("bootstrap"), static_cast<uint64_t>(it),
                                       static_cast<uint64_t>(attempt)}));
            for (size_t s = 0; s < n; ++s) {
                const size_t idx = static_cast<size_t>(rng.below(n));
                labels[s] = pp.labels[idx];
                sa[s] = pp.score_a[idx];
                sb[s] = pp.score_b[idx];
            }
            if (single_class(labels)) {
                ++redraw_counts[static_cast<size_t>(it)];
                continue;
            }
            drew = true;
            break;
        }
        if (!drew) {
            failed.store(true, std::memory_order_relaxed);
            continue;
        }
        deltas[static_cast<size_t>(it)] = metric(labels, sb) - metric(labels, sa);
    }
    if (failed.load()) throw numeric_error("paired_bootstrap: cannot draw a two-class resample");
    for (int c : redraw_counts) out.redrawn += c;

    out.mean_delta = mean_of(deltas);
    out.se = sample_sd(deltas);
    out.ci_low = quantile_linear(deltas, 0.025);
    out.ci_high = quantile_linear(deltas, 0.975);
    double n_le = 0, n_ge = 0;
    for (double d : deltas) {
        if (d <= 0.0) ++n_le;
        if (d >= 0.0) ++n_ge;
    }
    const double iters = static_cast<double>(iterations);
    double p = 2.0 * std::min(n_le / iters, n_ge / iters);
    p = std::max(p, 2.0 / iters);
    out.p_two_sided = std::min(p, 1.0);
    return out;
}

PrDifferenceResult pr_difference(const PairedPredictions& pp, int recall_grid_size, int iterations,
                                 uint64_t seed) {
    const size_t n = pp.labels.size();
    if (n == 0 || pp.score_a.size() != n || pp.score_b.size() != n)
        throw numeric_error("pr_difference: misaligned inputs");
    const auto grid = uniform_grid(recall_grid_size);

    PrDifferenceResult out;
    out.iterations = iterations;
    const auto pa = precision_at_recall(pr_curve(pp.labels, pp.score_a), grid);
    const auto pb = precision_at_recall(pr_curve(pp.labels, pp.score_b), grid);

    std::vector<std::vector<double>> deltas(grid.size());
    std::vector<uint8_t> included(static_cast<size_t>(iterations), 0);
    std::vector<std::vector<double>> iter_deltas(static_cast<size_t>(iterations));
#pragma omp parallel for schedule(static)
    for (int it = 0; it < iterations; ++it) {
        Rng rng(derive_seed(seed, {hash_str("pr-bootstrap"), static_cast<uint64_t>(it)}));
        std::vector<int> labels(n);
        std::vector<double> sa(n), sb(n);
        for (size_t s = 0; s < n; ++s) {
            const size_t idx = static_cast<size_t>(rng.below(n));
            labels[s] = pp.labels[idx];
            sa[s] = pp.score_a[idx];
            sb[s] = pp.score_b[idx];
        }
        if (single_class(labels)) continue;  // excluded, not redrawn
        const auto ra = precision_at_recall(pr_curve(labels, sa), grid);
        const auto rb = precision_at_recall(pr_curve(labels, sb), grid);
        auto& dl = iter_deltas[static_cast<size_t>(it)];
        dl.resize(grid.size());
        for (size_t g = 0; g < grid.size(); ++g) dl[g] = rb[g] - ra[g];
        included[static_cast<size_t>(it)] = 1;
    }
    for (int it = 0; it < iterations; ++it) {
        if (!included[static_cast<size_t>(it)]) {
            ++out.excluded;
            continue;
        }
        for (size_t g = 0; g < grid.size(); ++g)
            deltas[g].push_back(iter_deltas[static_cast<size_t>(it)][g]);
    }
    if (deltas[0].empty()) throw numeric_error("pr_difference: every resample was single-class");

    out.points.resize(grid.size());
    for (size_t g = 0; g < grid.size(); ++g) {
        auto& pt = out.points[g];
        pt.recall = grid[g];
        pt.delta = pb[g] - pa[g];
        pt.mean_delta = mean_of(deltas[g]);
        pt.ci_low = quantile_linear(deltas[g], 0.025);
        pt.ci_high = quantile_linear(deltas[g], 0.975);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Meta-analysis
// ---------------------------------------------------------------------------

MetaResult meta_analysis(const std::vector<EffectSize>& effects) {
    const size_t k = effects.size();
    if (k < 2) throw numeric_error("meta_analysis: need k >= 2 effects");
    for (const auto& e : effects)
        if (!(e.se > 0.0)) throw numeric_error("meta_analysis: standard errors must be positive");

    MetaResult r;
    r.effects = effects;

    double sw = 0.0, sw2 = 0.0, swt = 0.0;
    for (const auto& e : effects) {
        const double w = 1.0 / (e.se * e.se);
        sw += w;
        sw2 += w * w;
        swt += w * e.delta;
    }
    r.fixed.pooled = swt / sw;
    r.fixed.se = 1.0 / std::sqrt(sw);

    r.q = 0.0;
    for (const auto& e : effects) {
        const double w = 1.0 / (e.se * e.se);
        const double c = e.delta - r.fixed.pooled;
        r.q += w * c * c;
    }
    const double df = static_cast<double>(k - 1);
    r.q_p = chi2_sf(r.q, df);
    r.i2 = r.q > 0.0 ? std::max(0.0, (r.q - df) / r.q) : 0.0;
    const double denom = sw - sw2 / sw;
    r.tau2 = denom > 0.0 ? std::max(0.0, (r.q - df) / denom) : 0.0;

    double sw_r = 0.0, swt_r = 0.0;
    for (const auto& e : effects) {
        const double w = 1.0 / (e.se * e.se + r.tau2);
        sw_r += w;
        swt_r += w * e.delta;
    }
    r.random.pooled = swt_r / sw_r;
    r.random.se = 1.0 / std::sqrt(sw_r);

    for (PooledEstimate* est : {&r.fixed, &r.random}) {
        est->ci_low = est->pooled - kZ975 * est->se;
        est->ci_high = est->pooled + kZ975 * est->se;
        est->p_two_sided = 2.0 * normal_sf(std::abs(est->pooled / est->se));
    }

    if (k <= 5) {
        r.preferred = "random";
        r.preferred_reason = "k <= 5 tasks limit the power of Q";
    } else if (r.i2 <= 0.25 || r.q_p >= 0.10) {
        r.preferred = "fixed";
        r.preferred_reason = "low heterogeneity (I2 <= 25% or Q p >= 0.10)";
    } else {
        r.preferred = "random";
        r.preferred_reason = "moderate-to-high heterogeneity";
    }
    return r;
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) throw numeric_error("mean_of: empty");
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double sample_sd(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) {
        const double c = x - m;
        s += c * c;
    }
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace eventfm::stats
