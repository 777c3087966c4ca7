#pragma once

#include <map>
#include <string>
#include <vector>

namespace eventfm {

struct VariantEffect {
    std::string variant_id;
    std::string trait_id;
    double beta = 0.0;
    double p_value = 1.0;
};

// Symmetric pairwise R^2 over a fixed variant set.
class LdPanel {
public:
    LdPanel() = default;
    LdPanel(std::vector<std::string> variant_ids, std::vector<double> r2_matrix);

    size_t size() const { return ids_.size(); }
    bool contains(const std::string& variant_id) const;
    double r2(const std::string& a, const std::string& b) const;

    static LdPanel load(const std::string& path);
    void save(const std::string& path) const;

private:
    std::vector<std::string> ids_;
    std::map<std::string, size_t> index_;
    std::vector<double> r2_;  // row-major size x size
};

struct PrsParams {
    double p_lead = 1e-4;
    double p_secondary = 1.1e-4;
    double r2_threshold = 0.1;
    double p_retain = 5e-8;
    size_t max_variants = 1500;
};

// Greedy clumping: repeatedly promote the unassigned variant with the
// smallest p <= p_lead to lead status and absorb its correlated neighbours.
std::vector<VariantEffect> clump(const std::vector<VariantEffect>& effects, const LdPanel& ld,
                                 double p_lead, double p_secondary, double r2_threshold);

std::vector<VariantEffect> select_variants(std::vector<VariantEffect> leads, double p_retain,
                                           size_t max_variants);

double score(const std::map<std::string, double>& dosages, const std::vector<VariantEffect>& selected);

struct ClipBounds {
    std::vector<double> low;
    std::vector<double> high;
};

// Winsorization bounds at mean +- k_sd * sd (sample sd, n-1 denominator),
// computed per trait over the training matrix [participants x traits].
ClipBounds compute_clip_bounds(const std::vector<std::vector<double>>& trait_matrix, double k_sd);
std::vector<double> apply_clip(const std::vector<double>& values, const ClipBounds& bounds);

// File-level pipeline: effects table + dosage matrix + LD panel -> PRS matrix.
struct EffectsTable {
    // trait -> effects, preserving file order within a trait
    std::map<std::string, std::vector<VariantEffect>> by_trait;
};

EffectsTable load_effects(const std::string& path);

struct DosageMatrix {
    std::vector<std::string> participant_ids;
    std::vector<std::string> variant_ids;
    std::vector<std::vector<double>> values;  // participants x variants

    std::map<std::string, double> row_map(size_t participant) const;
};

DosageMatrix load_dosages(const std::string& path);

struct PrsMatrixResult {
    std::vector<std::string> participant_ids;
    std::vector<std::string> trait_ids;  // traits with >= 1 retained variant
    std::vector<std::vector<double>> values;
    ClipBounds bounds;
    std::map<std::string, size_t> variants_used;
};

PrsMatrixResult compute_prs_matrix(const EffectsTable& effects, const DosageMatrix& dosages,
                                   const LdPanel& ld, const PrsParams& params, double k_sd);

void save_prs_matrix(const PrsMatrixResult& result, const std::string& matrix_path,
                     const std::string& bounds_path);

}  // namespace eventfm
