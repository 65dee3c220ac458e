#pragma once

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "core.hpp"
#include "formula.hpp"
#include "geometry.hpp"

namespace ubiquity {

/// Rectangles with base radius in [r_min, r_max] take part in a count.
struct RadiusWindow {
    double r_min = 0.0;
    double r_max = 1.0;

    bool contains(double r) const { return r >= r_min && r <= r_max; }
};

/// Scale-matched window for level p: thinnest side r^tau_d in [2^-p, 2^(octaves - p)].
inline RadiusWindow scale_window(const ShrinkProfile& profile, int level, double octaves = 3.0)
{
    const double t = profile.back();
    return {std::exp2(-level / t), std::exp2((octaves - level) / t)};
}

/// Sorted, duplicate-free Morton codes of the level-p cells hit by the windowed rectangles.
inline std::vector<std::uint64_t> cell_set(const std::vector<AnisotropicRectangle>& rects, int level,
                                           const RadiusWindow& window, unsigned threads = 0,
                                           std::int64_t budget = std::int64_t{1} << 27)
{
    if (rects.empty()) return {};
    const int d = rects.front().dim();
    require(level >= 0 && d * level <= 60, "count_cells: need d * level <= 60");
    if (threads == 0) threads = default_threads();
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(rects.size())));

    std::vector<std::vector<std::uint64_t>> shards(threads);
    std::vector<std::exception_ptr> errors(threads);
    auto work = [&](unsigned w) {
        try {
            auto& out = shards[w];
            for (std::size_t n = w; n < rects.size(); n += threads) {
                const auto& r = rects[n];
                require(r.dim() == d, "count_cells: mixed dimensions");
                if (!window.contains(r.base_radius)) continue;
                for_each_cell(r, level, budget, [&](const IndexVec& k) { out.push_back(morton_encode(k, level)); });
                if (static_cast<std::int64_t>(out.size()) > budget) {
                    std::sort(out.begin(), out.end());
                    out.erase(std::unique(out.begin(), out.end()), out.end());
                    if (static_cast<std::int64_t>(out.size()) > budget)
                        throw BudgetExceeded("count_cells: cell budget exceeded");
                }
            }
            std::sort(out.begin(), out.end());
            out.erase(std::unique(out.begin(), out.end()), out.end());
        } catch (...) {
            errors[w] = std::current_exception();
        }
    };
    if (threads == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < threads; ++w) pool.emplace_back(work, w);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    std::vector<std::uint64_t> merged;
    for (auto& s : shards) {
        std::vector<std::uint64_t> next;
        next.reserve(merged.size() + s.size());
        std::set_union(merged.begin(), merged.end(), s.begin(), s.end(), std::back_inserter(next));
        merged.swap(next);
        std::vector<std::uint64_t>().swap(s);
        if (static_cast<std::int64_t>(merged.size()) > budget) throw BudgetExceeded("count_cells: cell budget exceeded");
    }
    return merged;
}

/// Number of distinct level-p cells met by the union of the windowed rectangles.
inline std::int64_t count_cells(const std::vector<AnisotropicRectangle>& rects, int level, const RadiusWindow& window,
                                unsigned threads = 0, std::int64_t budget = std::int64_t{1} << 27)
{
    return static_cast<std::int64_t>(cell_set(rects, level, window, threads, budget).size());
}

struct LevelCount {
    int level = 0;
    std::int64_t cells = 0;
};

struct BoxFit {
    double slope = 0.0;
    double intercept = 0.0;
    double stderr_slope = 0.0;
};

/// Least-squares slope of log2 N_p against p. A finite, scale-matched window
/// can overshoot [0, d] slightly, so the range check allows `tolerance`.
inline BoxFit fit_box_dimension(const std::vector<LevelCount>& counts, int d, double tolerance = 0.1)
{
    require(counts.size() >= 3, "fit_box_dimension: need at least 3 levels");
    const double n = static_cast<double>(counts.size());
    double mx = 0.0, my = 0.0;
    for (const auto& c : counts) {
        require(c.cells > 0, "fit_box_dimension: empty level");
        mx += c.level;
        my += std::log2(static_cast<double>(c.cells));
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    bool constant = true;
    for (const auto& c : counts) {
        const double dx = c.level - mx, dy = std::log2(static_cast<double>(c.cells)) - my;
        sxx += dx * dx;
        sxy += dx * dy;
        constant = constant && c.cells == counts.front().cells;
    }
    require(sxx > 0.0, "fit_box_dimension: levels must differ");
    require(!constant, "fit_box_dimension: degenerate (constant) counts");
    BoxFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double ssr = 0.0;
    for (const auto& c : counts) {
        const double e = std::log2(static_cast<double>(c.cells)) - (fit.intercept + fit.slope * c.level);
        ssr += e * e;
    }
    fit.stderr_slope = n > 2 ? std::sqrt(ssr / (n - 2) / sxx) : 0.0;
    require(fit.slope >= -tolerance && fit.slope <= d + tolerance,
            "fit_box_dimension: slope " + std::to_string(fit.slope) + " outside [0, d]");
    return fit;
}

/// log2 of a rectangle's cheapest covering cost at exponent s:
/// min_k log2 r^(tau_k s + sum_{i: tau_i < tau_k} (tau_i - tau_k)).
inline double log2_covering_cost(double r, const ShrinkProfile& tau, double s)
{
    const double lr = std::log2(r);
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k < tau.dim(); ++k) {
        double e = tau[k] * s;
        for (int i = 0; i < tau.dim(); ++i)
            if (tau[i] < tau[k]) e += tau[i] - tau[k];
        best = std::min(best, e * lr);
    }
    return best;
}

inline double total_covering_cost(const std::vector<AnisotropicRectangle>& rects, const RadiusWindow& window, double s)
{
    CompensatedSum sum;
    for (const auto& r : rects)
        if (window.contains(r.base_radius)) sum.add(std::exp2(log2_covering_cost(r.base_radius, r.profile, s)));
    return sum.value();
}

/// s at which the windowed covering cost crosses `threshold`, by bisection.
inline double covering_cost_exponent(const std::vector<AnisotropicRectangle>& rects, const RadiusWindow& window,
                                     double s_lo, double s_hi, double threshold = 1.0, int iterations = 60)
{
    require(s_lo < s_hi, "covering_cost_exponent: need s_lo < s_hi");
    const double f_lo = total_covering_cost(rects, window, s_lo) - threshold;
    const double f_hi = total_covering_cost(rects, window, s_hi) - threshold;
    require(f_lo >= 0.0 && f_hi <= 0.0, "covering_cost_exponent: no sign change in [s_lo, s_hi]");
    for (int it = 0; it < iterations; ++it) {
        const double mid = 0.5 * (s_lo + s_hi);
        if (total_covering_cost(rects, window, mid) >= threshold) s_lo = mid;
        else s_hi = mid;
    }
    return 0.5 * (s_lo + s_hi);
}

inline void write_counts_csv(std::ostream& os, const std::vector<LevelCount>& counts)
{
    os << "p,N_p\n";
    for (const auto& c : counts) os << c.level << "," << c.cells << "\n";
}

/// log-log plot of the counts with the fitted line and a reference line of slope s.
inline void write_counts_svg(std::ostream& os, const std::vector<LevelCount>& counts, const BoxFit& fit,
                             double theory_slope)
{
    const double W = 480, H = 360, m = 48;
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (const auto& c : counts) {
        const double y = std::log2(static_cast<double>(c.cells));
        x0 = std::min(x0, double(c.level));
        x1 = std::max(x1, double(c.level));
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
    }
    if (x1 <= x0) x1 = x0 + 1;
    if (y1 <= y0) y1 = y0 + 1;
    auto px = [&](double x) { return m + (x - x0) / (x1 - x0) * (W - 2 * m); };
    auto py = [&](double y) { return H - m - (y - y0) / (y1 - y0) * (H - 2 * m); };
    char buf[256];
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"360\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    std::snprintf(buf, sizeof buf, "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", m, H - m, W - m,
                  H - m);
    os << buf;
    std::snprintf(buf, sizeof buf, "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", m, m, m, H - m);
    os << buf;
    for (const auto& c : counts) {
        std::snprintf(buf, sizeof buf, "<circle cx=\"%.3f\" cy=\"%.3f\" r=\"3\" fill=\"navy\"/>\n", px(c.level),
                      py(std::log2(static_cast<double>(c.cells))));
        os << buf;
    }
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.3f\" y1=\"%.3f\" x2=\"%.3f\" y2=\"%.3f\" stroke=\"navy\" stroke-width=\"1.5\"/>\n",
                  px(x0), py(fit.intercept + fit.slope * x0), px(x1), py(fit.intercept + fit.slope * x1));
    os << buf;
    // theory line through the centroid of the data
    double mx = 0, my = 0;
    for (const auto& c : counts) {
        mx += c.level;
        my += std::log2(static_cast<double>(c.cells));
    }
    mx /= counts.size();
    my /= counts.size();
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.3f\" y1=\"%.3f\" x2=\"%.3f\" y2=\"%.3f\" stroke=\"crimson\" stroke-dasharray=\"6 4\"/>\n",
                  px(x0), py(my + theory_slope * (x0 - mx)), px(x1), py(my + theory_slope * (x1 - mx)));
    os << buf;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%g\" y=\"%g\" font-size=\"12\">fit %.4f +- %.4f, s = %.4f (dashed)</text>\n", m, m - 16,
                  fit.slope, fit.stderr_slope, theory_slope);
    os << buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" font-size=\"12\">p</text>\n", W / 2, H - 12);
    os << buf;
    std::snprintf(buf, sizeof buf, "<text x=\"8\" y=\"%g\" font-size=\"12\">log2 N_p</text>\n", H / 2);
    os << buf;
    os << "</svg>\n";
}

}  // namespace ubiquity
