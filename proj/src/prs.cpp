#include "eventfm/prs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "eventfm/common.hpp"

namespace eventfm {

using ordered_json = nlohmann::ordered_json;

LdPanel::LdPanel(std::vector<std::string> variant_ids, std::vector<double> r2_matrix)
    : ids_(std::move(variant_ids)), r2_(std::move(r2_matrix)) {
    const size_t n = ids_.size();
    if (r2_.size() != n * n) throw numeric_error("LdPanel: matrix size mismatch");
    for (size_t i = 0; i < n; ++i) index_[ids_[i]] = i;
    if (index_.size() != n) throw numeric_error("LdPanel: duplicate variant ids");
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) {
            const double v = r2_[i * n + j];
            if (v < 0.0 || v > 1.0) throw numeric_error("LdPanel: R^2 outside [0,1]");
            if (std::abs(v - r2_[j * n + i]) > 1e-12) throw numeric_error("LdPanel: asymmetric matrix");
        }
}

bool LdPanel::contains(const std::string& variant_id) const { return index_.count(variant_id) > 0; }

double LdPanel::r2(const std::string& a, const std::string& b) const {
    auto ia = index_.find(a);
    auto ib = index_.find(b);
    if (ia == index_.end()) throw numeric_error("LD panel missing variant '" + a + "'");
    if (ib == index_.end()) throw numeric_error("LD panel missing variant '" + b + "'");
    return r2_[ia->second * ids_.size() + ib->second];
}

LdPanel LdPanel::load(const std::string& path) {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line)) throw io_error(path + ": empty LD panel");
    auto header = split_tabs(line);
    if (header.empty() || header[0] != "variant_id")
        throw io_error(path + ": LD header must start with 'variant_id'");
    std::vector<std::string> ids(header.begin() + 1, header.end());
    const size_t n = ids.size();
    std::vector<double> m(n * n, 0.0);
    size_t row = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_tabs(line);
        if (f.size() != n + 1 || row >= n) throw io_error(path + ": malformed LD row");
        if (f[0] != ids[row]) throw io_error(path + ": LD row order mismatch at '" + f[0] + "'");
        for (size_t j = 0; j < n; ++j) {
            double v = 0.0;
            if (!parse_double(f[j + 1], v)) throw io_error(path + ": bad R^2 '" + f[j + 1] + "'");
            m[row * n + j] = v;
        }
        ++row;
    }
    if (row != n) throw io_error(path + ": LD matrix truncated");
    return LdPanel(std::move(ids), std::move(m));
}

void LdPanel::save(const std::string& path) const {
    std::ostringstream out;
    out << "variant_id";
    for (const auto& id : ids_) out << '\t' << id;
    out << '\n';
    const size_t n = ids_.size();
    for (size_t i = 0; i < n; ++i) {
        out << ids_[i];
        for (size_t j = 0; j < n; ++j) out << '\t' << fmt_double(r2_[i * n + j], 17);
        out << '\n';
    }
    write_file(path, out.str());
}

std::vector<VariantEffect> clump(const std::vector<VariantEffect>& effects, const LdPanel& ld,
                                 double p_lead, double p_secondary, double r2_threshold) {
    for (const auto& e : effects) {
        if (!ld.contains(e.variant_id))
            throw numeric_error("clump: variant '" + e.variant_id + "' missing from LD panel");
        if (!effects.empty() && e.trait_id != effects.front().trait_id)
            throw numeric_error("clump: effects span multiple traits");
    }
    std::vector<bool> assigned(effects.size(), false);
    std::vector<VariantEffect> leads;
    for (;;) {
        size_t best = effects.size();
        for (size_t i = 0; i < effects.size(); ++i) {
            if (assigned[i] || effects[i].p_value > p_lead) continue;
            if (best == effects.size() || effects[i].p_value < effects[best].p_value ||
                (effects[i].p_value == effects[best].p_value &&
                 effects[i].variant_id < effects[best].variant_id))
                best = i;
        }
        if (best == effects.size()) break;
        assigned[best] = true;
        leads.push_back(effects[best]);
        for (size_t i = 0; i < effects.size(); ++i) {
            if (assigned[i] || effects[i].p_value > p_secondary) continue;
            if (ld.r2(effects[best].variant_id, effects[i].variant_id) >= r2_threshold)
                assigned[i] = true;
        }
    }
    return leads;
}

std::vector<VariantEffect> select_variants(std::vector<VariantEffect> leads, double p_retain,
                                           size_t max_variants) {
    leads.erase(std::remove_if(leads.begin(), leads.end(),
                               [&](const VariantEffect& e) { return e.p_value > p_retain; }),
                leads.end());
    std::sort(leads.begin(), leads.end(), [](const VariantEffect& a, const VariantEffect& b) {
        const double aa = std::abs(a.beta), ab = std::abs(b.beta);
        if (aa != ab) return aa > ab;
        return a.variant_id < b.variant_id;
    });
    if (leads.size() > max_variants) leads.resize(max_variants);
    return leads;
}

double score(const std::map<std::string, double>& dosages, const std::vector<VariantEffect>& selected) {
    double s = 0.0;
    for (const auto& e : selected) {
        auto it = dosages.find(e.variant_id);
        if (it == dosages.end())
            throw numeric_error("score: missing dosage for variant '" + e.variant_id + "'");
        s += e.beta * it->second;
    }
    return s;
}

ClipBounds compute_clip_bounds(const std::vector<std::vector<double>>& trait_matrix, double k_sd) {
    if (trait_matrix.empty()) throw numeric_error("compute_clip_bounds: empty matrix");
    const size_t n_traits = trait_matrix.front().size();
    const size_t n = trait_matrix.size();
    ClipBounds b;
    b.low.resize(n_traits);
    b.high.resize(n_traits);
    for (size_t j = 0; j < n_traits; ++j) {
        double mean = 0.0;
        for (const auto& row : trait_matrix) mean += row[j];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (const auto& row : trait_matrix) {
            const double c = row[j] - mean;
            var += c * c;
        }
        const double sd = n > 1 ? std::sqrt(var / static_cast<double>(n - 1)) : 0.0;
        if (std::isinf(k_sd)) {
            b.low[j] = -std::numeric_limits<double>::infinity();
            b.high[j] = std::numeric_limits<double>::infinity();
        } else {
            b.low[j] = mean - k_sd * sd;
            b.high[j] = mean + k_sd * sd;
        }
    }
    return b;
}

std::vector<double> apply_clip(const std::vector<double>& values, const ClipBounds& bounds) {
    if (values.size() != bounds.low.size()) throw numeric_error("apply_clip: dimension mismatch");
    std::vector<double> out(values.size());
    for (size_t j = 0; j < values.size(); ++j)
        out[j] = std::min(std::max(values[j], bounds.low[j]), bounds.high[j]);
    return out;
}

EffectsTable load_effects(const std::string& path) {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line)) throw io_error(path + ": empty effects table");
    if (split_tabs(line) != std::vector<std::string>{"trait_id", "variant_id", "beta", "p_value"})
        throw io_error(path + ": bad effects header");
    EffectsTable table;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto f = split_tabs(line);
        if (f.size() != 4)
            throw io_error(path + ":" + std::to_string(line_no) + ": expected 4 fields");
        VariantEffect e;
        e.trait_id = f[0];
        e.variant_id = f[1];
        if (!parse_double(f[2], e.beta) || !parse_double(f[3], e.p_value) || !std::isfinite(e.beta) ||
            !(e.p_value > 0.0 && e.p_value <= 1.0))
            throw io_error(path + ":" + std::to_string(line_no) + ": invalid beta/p_value");
        table.by_trait[e.trait_id].push_back(std::move(e));
    }
    return table;
}

DosageMatrix load_dosages(const std::string& path) {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line)) throw io_error(path + ": empty dosage matrix");
    auto header = split_tabs(line);
    if (header.empty() || header[0] != "participant_id")
        throw io_error(path + ": dosage header must start with 'participant_id'");
    DosageMatrix m;
    m.variant_ids.assign(header.begin() + 1, header.end());
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto f = split_tabs(line);
        if (f.size() != m.variant_ids.size() + 1)
            throw io_error(path + ":" + std::to_string(line_no) + ": row width mismatch");
        m.participant_ids.push_back(f[0]);
        std::vector<double> row(m.variant_ids.size());
        for (size_t j = 0; j < m.variant_ids.size(); ++j) {
            double v = 0.0;
            if (!parse_double(f[j + 1], v) || v < 0.0 || v > 2.0)
                throw io_error(path + ":" + std::to_string(line_no) + ": dosage outside [0,2]");
            row[j] = v;
        }
        m.values.push_back(std::move(row));
    }
    return m;
}

std::map<std::string, double> DosageMatrix::row_map(size_t participant) const {
    std::map<std::string, double> out;
    for (size_t j = 0; j < variant_ids.size(); ++j)
        out[variant_ids[j]] = values[participant][j];
    return out;
}

PrsMatrixResult compute_prs_matrix(const EffectsTable& effects, const DosageMatrix& dosages,
                                   const LdPanel& ld, const PrsParams& params, double k_sd) {
    PrsMatrixResult result;
    result.participant_ids = dosages.participant_ids;

    std::vector<std::pair<std::string, std::vector<VariantEffect>>> selected_by_trait;
    for (const auto& [trait, trait_effects] : effects.by_trait) {
        auto leads = clump(trait_effects, ld, params.p_lead, params.p_secondary, params.r2_threshold);
        auto selected = select_variants(std::move(leads), params.p_retain, params.max_variants);
        if (selected.empty()) continue;  // traits with no significant variant are dropped
        result.trait_ids.push_back(trait);
        result.variants_used[trait] = selected.size();
        selected_by_trait.emplace_back(trait, std::move(selected));
    }

    result.values.assign(dosages.participant_ids.size(),
                         std::vector<double>(result.trait_ids.size(), 0.0));
    for (size_t i = 0; i < dosages.participant_ids.size(); ++i) {
        auto row = dosages.row_map(i);
        for (size_t j = 0; j < selected_by_trait.size(); ++j)
            result.values[i][j] = score(row, selected_by_trait[j].second);
    }
    result.bounds = compute_clip_bounds(result.values, k_sd);
    for (auto& row : result.values) row = apply_clip(row, result.bounds);
    return result;
}

void save_prs_matrix(const PrsMatrixResult& result, const std::string& matrix_path,
                     const std::string& bounds_path) {
    std::ostringstream out;
    out << "participant_id";
    for (const auto& t : result.trait_ids) out << '\t' << t;
    out << '\n';
    for (size_t i = 0; i < result.participant_ids.size(); ++i) {
        out << result.participant_ids[i];
        for (double v : result.values[i]) out << '\t' << fmt_double(v, 17);
        out << '\n';
    }
    write_file(matrix_path, out.str());

    ordered_json j;
    j["k_sd_bounds"] = ordered_json::array();
    for (size_t t = 0; t < result.trait_ids.size(); ++t) {
        ordered_json b;
        b["trait_id"] = result.trait_ids[t];
        b["low"] = result.bounds.low[t];
        b["high"] = result.bounds.high[t];
        b["variants_used"] = result.variants_used.at(result.trait_ids[t]);
        j["k_sd_bounds"].push_back(std::move(b));
    }
    write_file(bounds_path, j.dump(2) + "\n");
}

}  // namespace eventfm
