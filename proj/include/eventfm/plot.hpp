#pragma once

#include <string>
#include <vector>

namespace eventfm::plot {

struct Bar {
    std::string label;
    double value = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
};

// Grouped bars with error whiskers (Figure-3 style AUC comparisons).
void bar_chart_svg(const std::string& path, const std::string& title,
                   const std::vector<std::string>& groups, const std::vector<std::string>& series,
                   const std::vector<std::vector<Bar>>& values);  // [series][group]

struct Curve {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

// Step curves on the unit square (ROC overlays).
void step_chart_svg(const std::string& path, const std::string& title,
                    const std::string& x_label, const std::string& y_label,
                    const std::vector<Curve>& curves, bool diagonal);

// Mean line with a shaded CI band (precision-recall difference).
void band_chart_svg(const std::string& path, const std::string& title,
                    const std::string& x_label, const std::string& y_label,
                    const std::vector<double>& x, const std::vector<double>& mean,
                    const std::vector<double>& lo, const std::vector<double>& hi);

struct ForestRow {
    std::string label;
    double effect = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    bool is_summary = false;  // drawn as a diamond
};

void forest_plot_svg(const std::string& path, const std::string& title,
                     const std::vector<ForestRow>& rows);

}  // namespace eventfm::plot
