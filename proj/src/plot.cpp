#include "eventfm/plot.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "eventfm/common.hpp"

namespace eventfm::plot {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 420.0;
constexpr double kMarginL = 70.0;
constexpr double kMarginR = 20.0;
constexpr double kMarginT = 40.0;
constexpr double kMarginB = 55.0;

const char* kSeriesColors[] = {"#4878d0", "#ee854a", "#6acc64", "#d65f5f", "#956cb4", "#8c613c"};

std::string f2(double v) { return fmt_double(v, 6); }

class Svg {
public:
    Svg(const std::string& title) {
        out_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
             << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
        out_ << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
        text(kWidth / 2.0, kMarginT / 2.0 + 4.0, title, 14, "middle", true);
    }

    void line(double x1, double y1, double x2, double y2, const std::string& color, double w,
              const std::string& dash = "") {
        out_ << "<line x1=\"" << f2(x1) << "\" y1=\"" << f2(y1) << "\" x2=\"" << f2(x2)
             << "\" y2=\"" << f2(y2) << "\" stroke=\"" << color << "\" stroke-width=\"" << w << "\"";
        if (!dash.empty()) out_ << " stroke-dasharray=\"" << dash << "\"";
        out_ << "/>\n";
    }

    void rect(double x, double y, double w, double h, const std::string& fill, double opacity = 1.0) {
        out_ << "<rect x=\"" << f2(x) << "\" y=\"" << f2(y) << "\" width=\"" << f2(w)
             << "\" height=\"" << f2(h) << "\" fill=\"" << fill << "\" fill-opacity=\"" << opacity
             << "\"/>\n";
    }

    void polyline(const std::string& pts, const std::string& color, double w) {
        out_ << "<polyline points=\"" << pts << "\" fill=\"none\" stroke=\"" << color
             << "\" stroke-width=\"" << w << "\"/>\n";
    }

    void polygon(const std::string& pts, const std::string& fill, double opacity) {
        out_ << "<polygon points=\"" << pts << "\" fill=\"" << fill << "\" fill-opacity=\""
             << opacity << "\" stroke=\"none\"/>\n";
    }

    void text(double x, double y, const std::string& s, int size, const std::string& anchor,
              bool bold = false) {
        out_ << "<text x=\"" << f2(x) << "\" y=\"" << f2(y) << "\" font-family=\"sans-serif\""
             << " font-size=\"" << size << "\" text-anchor=\"" << anchor << "\"";
        if (bold) out_ << " font-weight=\"bold\"";
        out_ << ">" << s << "</text>\n";
    }

    void save(const std::string& path) {
        out_ << "</svg>\n";
        write_file(path, out_.str());
    }

private:
    std::ostringstream out_;
};

struct Scale {
    double lo = 0.0, hi = 1.0, px0 = 0.0, px1 = 1.0;
    double operator()(double v) const { return px0 + (v - lo) / (hi - lo) * (px1 - px0); }
};

void axes(Svg& svg, const Scale& xs, const Scale& ys, const std::string& x_label,
          const std::string& y_label, int ticks = 5) {
    svg.line(xs.px0, ys.px0, xs.px1, ys.px0, "#333333", 1.0);
    svg.line(xs.px0, ys.px0, xs.px0, ys.px1, "#333333", 1.0);
    for (int i = 0; i <= ticks; ++i) {
        const double fx = xs.lo + (xs.hi - xs.lo) * i / ticks;
        const double fy = ys.lo + (ys.hi - ys.lo) * i / ticks;
        svg.line(xs(fx), ys.px0, xs(fx), ys.px0 + 4.0, "#333333", 1.0);
        svg.text(xs(fx), ys.px0 + 18.0, fmt_double(fx, 3), 10, "middle");
        svg.line(xs.px0 - 4.0, ys(fy), xs.px0, ys(fy), "#333333", 1.0);
        svg.text(xs.px0 - 8.0, ys(fy) + 3.0, fmt_double(fy, 3), 10, "end");
    }
    svg.text((xs.px0 + xs.px1) / 2.0, kHeight - 12.0, x_label, 12, "middle");
    svg.text(16.0, (ys.px0 + ys.px1) / 2.0, y_label, 12, "middle");
}

}  // namespace

void bar_chart_svg(const std::string& path, const std::string& title,
                   const std::vector<std::string>& groups, const std::vector<std::string>& series,
                   const std::vector<std::vector<Bar>>& values) {
    Svg svg(title);
    double lo = 0.0, hi = 0.0;
    for (const auto& row : values)
        for (const auto& b : row) {
            lo = std::min({lo, b.ci_low, b.value});
            hi = std::max({hi, b.ci_high, b.value});
        }
    if (hi == lo) hi = lo + 1.0;
    const double pad = 0.08 * (hi - lo);
    Scale ys{lo - (lo < 0 ? pad : 0.0), hi + pad, kHeight - kMarginB, kMarginT};
    Scale xs{0.0, static_cast<double>(groups.size()), kMarginL, kWidth - kMarginR};
    axes(svg, xs, ys, "", "value");

    const double group_w = (xs.px1 - xs.px0) / static_cast<double>(groups.size());
    const double bar_w = group_w * 0.8 / static_cast<double>(std::max<size_t>(1, series.size()));
    for (size_t s = 0; s < series.size(); ++s) {
        const std::string color = kSeriesColors[s % 6];
        for (size_t g = 0; g < groups.size(); ++g) {
            const Bar& b = values[s][g];
            const double x = xs.px0 + group_w * (static_cast<double>(g) + 0.1) + bar_w * static_cast<double>(s);
            const double y0 = ys(std::max(0.0, ys.lo));
            const double y1 = ys(b.value);
            svg.rect(x, std::min(y0, y1), bar_w * 0.92, std::abs(y0 - y1), color);
            svg.line(x + bar_w * 0.46, ys(b.ci_low), x + bar_w * 0.46, ys(b.ci_high), "#222222", 1.2);
            svg.line(x + bar_w * 0.26, ys(b.ci_low), x + bar_w * 0.66, ys(b.ci_low), "#222222", 1.2);
            svg.line(x + bar_w * 0.26, ys(b.ci_high), x + bar_w * 0.66, ys(b.ci_high), "#222222", 1.2);
        }
        svg.rect(kMarginL + 10.0 + 120.0 * static_cast<double>(s), kMarginT - 12.0, 10, 10, color);
        svg.text(kMarginL + 24.0 + 120.0 * static_cast<double>(s), kMarginT - 3.0, series[s], 11, "start");
    }
    for (size_t g = 0; g < groups.size(); ++g)
        svg.text(xs.px0 + group_w * (static_cast<double>(g) + 0.5), ys.px0 + 32.0, groups[g], 11, "middle");
    svg.save(path);
}

void step_chart_svg(const std::string& path, const std::string& title, const std::string& x_label,
                    const std::string& y_label, const std::vector<Curve>& curves, bool diagonal) {
    Svg svg(title);
    Scale xs{0.0, 1.0, kMarginL, kWidth - kMarginR};
    Scale ys{0.0, 1.0, kHeight - kMarginB, kMarginT};
    axes(svg, xs, ys, x_label, y_label);
    if (diagonal) svg.line(xs(0), ys(0), xs(1), ys(1), "#999999", 1.0, "4,4");
    for (size_t c = 0; c < curves.size(); ++c) {
        const auto& cur = curves[c];
        std::ostringstream pts;
        for (size_t i = 0; i < cur.x.size(); ++i) {
            if (i > 0) pts << " " << f2(xs(cur.x[i])) << "," << f2(ys(cur.y[i - 1]));  // step
            pts << " " << f2(xs(cur.x[i])) << "," << f2(ys(cur.y[i]));
        }
        svg.polyline(pts.str(), kSeriesColors[c % 6], 1.6);
        svg.rect(kMarginL + 10.0 + 170.0 * static_cast<double>(c), kMarginT - 12.0, 10, 10,
                 kSeriesColors[c % 6]);
        svg.text(kMarginL + 24.0 + 170.0 * static_cast<double>(c), kMarginT - 3.0, cur.label, 11, "start");
    }
    svg.save(path);
}

void band_chart_svg(const std::string& path, const std::string& title, const std::string& x_label,
                    const std::string& y_label, const std::vector<double>& x,
                    const std::vector<double>& mean, const std::vector<double>& lo,
                    const std::vector<double>& hi) {
    Svg svg(title);
    double vmin = 0.0, vmax = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        vmin = std::min({vmin, lo[i]});
        vmax = std::max({vmax, hi[i]});
    }
    if (vmax == vmin) vmax = vmin + 1.0;
    const double pad = 0.08 * (vmax - vmin);
    Scale xs{0.0, 1.0, kMarginL, kWidth - kMarginR};
    Scale ys{vmin - pad, vmax + pad, kHeight - kMarginB, kMarginT};
    axes(svg, xs, ys, x_label, y_label);
    svg.line(xs(0), ys(0), xs(1), ys(0), "#999999", 1.0, "4,4");

    std::ostringstream band;
    for (size_t i = 0; i < x.size(); ++i) band << " " << f2(xs(x[i])) << "," << f2(ys(hi[i]));
    for (size_t i = x.size(); i-- > 0;) band << " " << f2(xs(x[i])) << "," << f2(ys(lo[i]));
    svg.polygon(band.str(), kSeriesColors[0], 0.25);
    std::ostringstream mid;
    for (size_t i = 0; i < x.size(); ++i) mid << " " << f2(xs(x[i])) << "," << f2(ys(mean[i]));
    svg.polyline(mid.str(), kSeriesColors[0], 1.8);
    svg.save(path);
}

void forest_plot_svg(const std::string& path, const std::string& title,
                     const std::vector<ForestRow>& rows) {
    Svg svg(title);
    double vmin = 0.0, vmax = 0.0;
    for (const auto& r : rows) {
        vmin = std::min(vmin, r.ci_low);
        vmax = std::max(vmax, r.ci_high);
    }
    if (vmax == vmin) vmax = vmin + 1.0;
    const double pad = 0.15 * (vmax - vmin);
    Scale xs{vmin - pad, vmax + pad, kMarginL + 120.0, kWidth - kMarginR};
    const double row_h = (kHeight - kMarginT - kMarginB) / static_cast<double>(rows.size());
    svg.line(xs(0.0), kMarginT, xs(0.0), kHeight - kMarginB, "#999999", 1.0, "4,4");
    for (size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        const double y = kMarginT + row_h * (static_cast<double>(i) + 0.5);
        svg.text(kMarginL + 110.0, y + 4.0, r.label, 11, "end");
        svg.line(xs(r.ci_low), y, xs(r.ci_high), y, "#222222", 1.4);
        if (r.is_summary) {
            std::ostringstream diamond;
            diamond << f2(xs(r.ci_low)) << "," << f2(y) << " " << f2(xs(r.effect)) << ","
                    << f2(y - 7.0) << " " << f2(xs(r.ci_high)) << "," << f2(y) << " "
                    << f2(xs(r.effect)) << "," << f2(y + 7.0);
            svg.polygon(diamond.str(), kSeriesColors[3], 0.9);
        } else {
            svg.rect(xs(r.effect) - 4.0, y - 4.0, 8.0, 8.0, kSeriesColors[0]);
        }
        svg.text(kWidth - kMarginR - 4.0, y - 6.0,
                 fmt_double(r.effect, 4) + " [" + fmt_double(r.ci_low, 4) + ", " +
                     fmt_double(r.ci_high, 4) + "]",
                 9, "end");
    }
    // x tick labels
    for (int i = 0; i <= 4; ++i) {
        const double v = xs.lo + (xs.hi - xs.lo) * i / 4.0;
        svg.line(xs(v), kHeight - kMarginB, xs(v), kHeight - kMarginB + 4.0, "#333333", 1.0);
        svg.text(xs(v), kHeight - kMarginB + 18.0, fmt_double(v, 3), 10, "middle");
    }
    svg.save(path);
}

}  // namespace eventfm::plot
