#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "boxcount.hpp"
#include "cantor.hpp"
#include "formula.hpp"
#include "measure.hpp"
#include "sequence.hpp"

namespace ubiquity::cli {

inline constexpr const char* kToolVersion = "1.0.0";
inline constexpr int kSchemaVersion = 1;

enum ExitCode : int { kOk = 0, kInvalid = 2, kCertificateFailed = 3, kBudget = 4 };

struct ExperimentConfig {
    MeasureSpec measure = MeasureSpec::lebesgue(2);
    ShrinkProfile profile = ShrinkProfile({1.0, 2.0});
    BallSequenceSpec sequence;
    std::uint64_t seed = 1;
    unsigned threads = 0;  // 0: all cores
    std::string out = "out";

    // boxcount
    int level_lo = 6;
    int level_hi = 12;
    double window_octaves = 3.0;
    std::int64_t cell_budget = std::int64_t{1} << 27;

    // formula
    int scan_points = 101;

    // cantor and certify
    CantorParams cantor;
    int sampled_paths = 256;  // eta-distributed root-to-leaf paths materialized by `cantor`
    CertificateParams certificate;

    // diagnose
    int coverage_level = 8;

    // sweep: box-count slope per profile
    std::vector<ShrinkProfile> sweep_profiles;

    void validate() const
    {
        require(profile.dim() == measure.d, "config: profile dimension must match the measure");
        sequence.validate();
        require(level_lo >= 0 && level_lo + 2 <= level_hi, "config: need at least 3 box-count levels");
        require(measure.d * level_hi <= 60, "config: d * level_hi must be <= 60");
        require(window_octaves > 0.0, "config: window_octaves must be positive");
        require(cell_budget > 0, "config: cell_budget must be positive");
        require(scan_points >= 2, "config: scan_points must be >= 2");
        require(coverage_level >= 0 && measure.d * coverage_level <= 60, "config: bad coverage level");
        cantor.validate();
        require(sampled_paths >= 0, "config: sampled_paths must be >= 0");
        require(certificate.samples > 0 && certificate.slack >= 0.0, "config: bad certificate parameters");
        for (const auto& p : sweep_profiles) require(p.dim() == measure.d, "config: sweep profile dimension mismatch");
    }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where)
{
    require(j.is_object(), where + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        require(ok, where + ": unknown key '" + key + "'");
    }
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& out)
{
    if (j.contains(key)) out = j.at(key).get<T>();
}

inline std::string hex64(std::uint64_t x)
{
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
    return buf;
}

/// FNV-1a, used for the config hash in manifests.
inline std::uint64_t fnv1a(const std::string& s)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string fmt(double x)
{
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", x);
    return buf;
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const ExperimentConfig& c)
{
    auto profiles = nlohmann::json::array();
    for (const auto& p : c.sweep_profiles) profiles.push_back(p.exponents());
    const auto& k = c.cantor;
    j = {{"schema_version", kSchemaVersion},
         {"measure", c.measure},
         {"profile", c.profile.exponents()},
         {"sequence", c.sequence},
         {"seed", c.seed},
         {"threads", c.threads},
         {"out", c.out},
         {"formula", {{"scan_points", c.scan_points}}},
         {"boxcount",
          {{"levels", {c.level_lo, c.level_hi}}, {"window_octaves", c.window_octaves}, {"cell_budget", c.cell_budget}}},
         {"cantor",
          {{"depth", k.depth},
           {"eps0", k.schedule.eps0},
           {"mass_floor", k.mass_floor},
           {"mass_target", k.mass_target},
           {"mass_constant", k.mass_constant},
           {"probe_span", k.probe_span},
           {"scale_gap", k.scale_gap},
           {"refine", k.refine},
           {"rho_samples", k.rho_samples},
           {"rho_acceptance", k.rho_acceptance},
           {"max_draws", k.max_draws},
           {"max_tests", k.max_tests},
           {"cube_budget", k.cube_budget},
           {"query_budget", k.query_budget},
           {"enforce_size", k.enforce_size},
           {"sampled_paths", c.sampled_paths}}},
         {"certificate",
          {{"samples", c.certificate.samples},
           {"slack", c.certificate.slack},
           {"octave_lo", c.certificate.octave_lo},
           {"octave_hi", c.certificate.octave_hi}}},
         {"diagnose", {{"level", c.coverage_level}}},
         {"sweep", {{"profiles", profiles}}}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c)
{
    using detail::read;
    c = ExperimentConfig{};
    detail::check_keys(j,
                       {"schema_version", "measure", "profile", "sequence", "seed", "threads", "out", "formula",
                        "boxcount", "cantor", "certificate", "diagnose", "sweep"},
                       "config");
    const int version = j.value("schema_version", kSchemaVersion);
    require(version == kSchemaVersion, "config: unsupported schema_version " + std::to_string(version));
    read(j, "measure", c.measure);
    if (j.contains("profile")) c.profile = ShrinkProfile(j.at("profile").get<std::vector<double>>());
    read(j, "sequence", c.sequence);
    read(j, "seed", c.seed);
    read(j, "threads", c.threads);
    read(j, "out", c.out);
    if (j.contains("formula")) {
        const auto& f = j.at("formula");
        detail::check_keys(f, {"scan_points"}, "config.formula");
        read(f, "scan_points", c.scan_points);
    }
    if (j.contains("boxcount")) {
        const auto& b = j.at("boxcount");
        detail::check_keys(b, {"levels", "window_octaves", "cell_budget"}, "config.boxcount");
        if (b.contains("levels")) {
            const auto lv = b.at("levels").get<std::vector<int>>();
            require(lv.size() == 2, "config.boxcount.levels: expected [lo, hi]");
            c.level_lo = lv[0];
            c.level_hi = lv[1];
        }
        read(b, "window_octaves", c.window_octaves);
        read(b, "cell_budget", c.cell_budget);
    }
    if (j.contains("cantor")) {
        const auto& k = j.at("cantor");
        detail::check_keys(k,
                           {"depth", "eps0", "mass_floor", "mass_target", "mass_constant", "probe_span", "scale_gap",
                            "refine", "rho_samples", "rho_acceptance", "max_draws", "max_tests", "cube_budget",
                            "query_budget", "enforce_size", "sampled_paths"},
                           "config.cantor");
        auto& p = c.cantor;
        read(k, "depth", p.depth);
        read(k, "eps0", p.schedule.eps0);
        read(k, "mass_floor", p.mass_floor);
        read(k, "mass_target", p.mass_target);
        read(k, "mass_constant", p.mass_constant);
        read(k, "probe_span", p.probe_span);
        read(k, "scale_gap", p.scale_gap);
        read(k, "refine", p.refine);
        read(k, "rho_samples", p.rho_samples);
        read(k, "rho_acceptance", p.rho_acceptance);
        read(k, "max_draws", p.max_draws);
        read(k, "max_tests", p.max_tests);
        read(k, "cube_budget", p.cube_budget);
        read(k, "query_budget", p.query_budget);
        read(k, "enforce_size", p.enforce_size);
        read(k, "sampled_paths", c.sampled_paths);
    }
    if (j.contains("certificate")) {
        const auto& k = j.at("certificate");
        detail::check_keys(k, {"samples", "slack", "octave_lo", "octave_hi"}, "config.certificate");
        read(k, "samples", c.certificate.samples);
        read(k, "slack", c.certificate.slack);
        read(k, "octave_lo", c.certificate.octave_lo);
        read(k, "octave_hi", c.certificate.octave_hi);
    }
    if (j.contains("diagnose")) {
        detail::check_keys(j.at("diagnose"), {"level"}, "config.diagnose");
        read(j.at("diagnose"), "level", c.coverage_level);
    }
    if (j.contains("sweep")) {
        detail::check_keys(j.at("sweep"), {"profiles"}, "config.sweep");
        if (j.at("sweep").contains("profiles"))
            for (const auto& p : j.at("sweep").at("profiles")) c.sweep_profiles.emplace_back(p.get<std::vector<double>>());
    }
}

inline ExperimentConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    require(static_cast<bool>(in), "config: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw InvalidArgument(std::string("config: ") + e.what());
    }
    return j.get<ExperimentConfig>();
}

/// Command-line values that take precedence over the config file.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    std::optional<std::string> out;
    std::optional<std::pair<int, int>> levels;
    std::optional<int> depth;
    std::optional<std::int64_t> cell_budget;
};

/// Parses "A..B".
inline std::pair<int, int> parse_levels(const std::string& s)
{
    const auto dots = s.find("..");
    require(dots != std::string::npos, "--levels: expected A..B");
    try {
        std::size_t used = 0;
        const int a = std::stoi(s.substr(0, dots), &used);
        require(used == dots, "--levels: expected A..B");
        const std::string rest = s.substr(dots + 2);
        const int b = std::stoi(rest, &used);
        require(used == rest.size(), "--levels: expected A..B");
        return {a, b};
    } catch (const std::logic_error&) {
        throw InvalidArgument("--levels: expected A..B with integers");
    }
}

inline void apply(ExperimentConfig& c, const Overrides& o)
{
    if (o.seed) c.seed = *o.seed;
    if (o.threads) c.threads = *o.threads;
    if (o.out) c.out = *o.out;
    if (o.levels) {
        c.level_lo = o.levels->first;
        c.level_hi = o.levels->second;
    }
    if (o.depth) c.cantor.depth = *o.depth;
    if (o.cell_budget) c.cell_budget = *o.cell_budget;
}

// ---------------------------------------------------------------------------
// Plots

struct Series {
    std::string label;
    std::string color;
    std::vector<std::pair<double, double>> points;
    bool dashed = false;
    bool markers = true;
};

/// Line chart of one or more series on shared linear axes.
inline void write_series_svg(std::ostream& os, const std::string& title, const std::string& xlabel,
                             const std::string& ylabel, const std::vector<Series>& series)
{
    const double W = 560, H = 380, m = 56;
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (const auto& s : series)
        for (auto [x, y] : s.points) {
            if (!std::isfinite(x) || !std::isfinite(y)) continue;
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
    if (x0 > x1) x0 = 0, x1 = 1;
    if (y0 > y1) y0 = 0, y1 = 1;
    if (x1 <= x0) x1 = x0 + 1;
    if (y1 <= y0) y1 = y0 + 1;
    auto px = [&](double x) { return m + (x - x0) / (x1 - x0) * (W - 2 * m); };
    auto py = [&](double y) { return H - m - (y - y0) / (y1 - y0) * (H - 2 * m); };
    char buf[320];
    std::snprintf(buf, sizeof buf, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" height=\"%g\">\n", W, H);
    os << buf << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    std::snprintf(buf, sizeof buf,
                  "<path d=\"M%g %g H%g M%g %g V%g\" stroke=\"black\" fill=\"none\"/>\n", m, H - m, W - m, m, m, H - m);
    os << buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" font-size=\"11\">%.4g</text>\n", m - 4, H - m + 14, x0);
    os << buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" font-size=\"11\" text-anchor=\"end\">%.4g</text>\n", W - m,
                  H - m + 14, x1);
    os << buf;
    std::snprintf(buf, sizeof buf, "<text x=\"4\" y=\"%g\" font-size=\"11\">%.4g</text>\n", H - m, y0);
    os << buf;
    std::snprintf(buf, sizeof buf, "<text x=\"4\" y=\"%g\" font-size=\"11\">%.4g</text>\n", m + 4, y1);
    os << buf;
    double ly = m;
    for (const auto& s : series) {
        std::string d;
        for (auto [x, y] : s.points) {
            if (!std::isfinite(x) || !std::isfinite(y)) continue;
            std::snprintf(buf, sizeof buf, "%s%.3f %.3f", d.empty() ? "M" : " L", px(x), py(y));
            d += buf;
        }
        if (!d.empty()) {
            os << "<path d=\"" << d << "\" fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\""
               << (s.dashed ? " stroke-dasharray=\"6 4\"" : "") << "/>\n";
            if (s.markers)
                for (auto [x, y] : s.points) {
                    if (!std::isfinite(x) || !std::isfinite(y)) continue;
                    std::snprintf(buf, sizeof buf, "<circle cx=\"%.3f\" cy=\"%.3f\" r=\"2.5\" fill=\"%s\"/>\n", px(x),
                                  py(y), s.color.c_str());
                    os << buf;
                }
        }
        std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" font-size=\"12\" fill=\"%s\">%s</text>\n", W - m - 150,
                      ly, s.color.c_str(), s.label.c_str());
        os << buf;
        ly += 16;
    }
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"20\" font-size=\"13\">%s</text>\n", m, title.c_str());
    os << buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" font-size=\"12\">%s</text>\n", W / 2, H - 14, xlabel.c_str());
    os << buf;
    std::snprintf(buf, sizeof buf, "<text x=\"4\" y=\"%g\" font-size=\"12\">%s</text>\n", H / 2, ylabel.c_str());
    os << buf << "</svg>\n";
}

/// Materialized Cantor rectangles in global coordinates, projected on the first two axes.
inline void write_tree_svg(std::ostream& os, const CantorTree& tree, std::size_t limit = 20000)
{
    const double S = 560;
    const char* colors[] = {"#1f4e9c", "#c0392b", "#1e8449", "#7d3c98", "#b9770e"};
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"560\" height=\"560\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\" stroke=\"black\"/>\n";
    char buf[320];
    std::size_t drawn = 0;
    const int d = tree.dim();
    for (const auto& R : tree.rects()) {
        if (drawn >= limit) break;
        const auto& host = tree.cubes()[R.host].host;
        if (host.global_level > 50) continue;
        auto global = [&](const Point& u) {
            const Point y = R.data.rect.map(u);
            std::array<double, 2> g{0.0, 0.5};
            for (int i = 0; i < std::min(d, 2); ++i) g[i] = host.global_corner[i] + std::ldexp(y[i], -host.global_level);
            return g;
        };
        std::string path;
        const double corners[4][2] = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
        for (const auto& c : corners) {
            Point u(d, 0.0);
            u[0] = c[0];
            if (d > 1) u[1] = c[1];
            const auto g = global(u);
            std::snprintf(buf, sizeof buf, "%s%.3f %.3f", path.empty() ? "M" : " L", g[0] * S, (1.0 - g[1]) * S);
            path += buf;
        }
        os << "<path d=\"" << path << " Z\" fill=\"" << colors[(R.generation - 1) % 5] << "\" fill-opacity=\"0.5\" stroke=\""
           << colors[(R.generation - 1) % 5] << "\" stroke-width=\"0.5\"/>\n";
        ++drawn;
    }
    os << "</svg>\n";
}

// ---------------------------------------------------------------------------
// Commands

/// Output of a command: exit code, a console report and the artifacts to write.
struct CommandResult {
    int exit_code = kOk;
    std::string report;
    std::string csv;
    std::string svg;
    std::string jsonl;
    nlohmann::json measured = nlohmann::json::object();
    nlohmann::json extra;  // written as certificate.json by certify
};

inline double config_alpha(const ExperimentConfig& c) { return dimension(c.measure); }

inline CommandResult cmd_formula(const ExperimentConfig& c)
{
    CommandResult r;
    const double alpha = config_alpha(c);
    const auto sv = s_value(alpha, c.profile);
    std::ostringstream csv, rep;
    csv << "v,f_v,s\n";
    Series f{"f(v)", "navy", {}}, s_line{"s", "crimson", {}, true, false};
    const double hi = c.profile.back();
    std::vector<double> vs;
    for (int i = 0; i < c.scan_points; ++i) vs.push_back(1.0 + (hi - 1.0) * i / (c.scan_points - 1));
    for (double t : c.profile.exponents()) vs.push_back(t);
    std::sort(vs.begin(), vs.end());
    vs.erase(std::unique(vs.begin(), vs.end()), vs.end());
    for (double v : vs) {
        const double fv = f_of_v(alpha, c.profile, v);
        csv << detail::fmt(v) << "," << detail::fmt(fv) << "," << detail::fmt(sv.s) << "\n";
        f.points.push_back({v, fv});
        s_line.points.push_back({v, sv.s});
    }
    rep << "alpha = " << detail::fmt(alpha) << "\ns = " << detail::fmt(sv.s) << "\nargmin k = " << sv.argmin_k << "\n";
    std::ostringstream svg;
    write_series_svg(svg, "f(v) on [1, tau_d]", "v", "f(v)", {f, s_line});
    r.report = rep.str();
    r.csv = csv.str();
    r.svg = svg.str();
    r.measured = {{"alpha", alpha}, {"argmin_k", sv.argmin_k}};
    return r;
}

inline std::vector<AnisotropicRectangle> config_rectangles(const ExperimentConfig& c, const ShrinkProfile& profile)
{
    Rng rng(mix_seed(c.seed, 0xba11));
    const auto balls = generate_balls(c.sequence, c.measure, c.sequence.count, rng);
    require(!balls.empty(), "boxcount: the ball sequence is empty");
    return shrink_sequence(balls, profile, c.sequence.rotation);
}

inline std::pair<std::vector<LevelCount>, BoxFit> box_fit(const ExperimentConfig& c,
                                                          const std::vector<AnisotropicRectangle>& rects,
                                                          const ShrinkProfile& profile)
{
    std::vector<LevelCount> counts;
    for (int p = c.level_lo; p <= c.level_hi; ++p)
        counts.push_back(
            {p, count_cells(rects, p, scale_window(profile, p, c.window_octaves), c.threads, c.cell_budget)});
    return {counts, fit_box_dimension(counts, c.measure.d)};
}

inline CommandResult cmd_boxcount(const ExperimentConfig& c)
{
    CommandResult r;
    const double s = s_value(config_alpha(c), c.profile).s;
    const auto rects = config_rectangles(c, c.profile);
    const auto [counts, fit] = box_fit(c, rects, c.profile);
    std::ostringstream csv, rep, svg;
    csv << "p,N_p,s\n";
    for (const auto& lc : counts) csv << lc.level << "," << lc.cells << "," << detail::fmt(s) << "\n";
    write_counts_svg(svg, counts, fit, s);
    rep << "rectangles = " << rects.size() << "\nslope = " << detail::fmt(fit.slope) << " +- "
        << detail::fmt(fit.stderr_slope) << "\ns = " << detail::fmt(s) << "\n";
    r.report = rep.str();
    r.csv = csv.str();
    r.svg = svg.str();
    r.measured = {{"slope", fit.slope}, {"stderr", fit.stderr_slope}, {"intercept", fit.intercept},
                  {"rectangles", rects.size()}};
    return r;
}

inline nlohmann::json tree_constants(const CantorTree& tree)
{
    auto gens = nlohmann::json::array();
    for (const auto& g : tree.generations())
        if (g.generation >= 1 && g.generation <= tree.depth())
            gens.push_back({{"generation", g.generation},
                            {"eps", g.eps},
                            {"rho", g.rho},
                            {"probe_depth", g.probe_depth},
                            {"rho_accepted_fraction", g.accepted_fraction}});
    return {{"alpha", tree.alpha()},
            {"mass_constant", tree.mass_constant()},
            {"kappa", tree.kappa()},
            {"mass_floor", tree.params().mass_floor},
            {"generations", gens}};
}

inline nlohmann::json audit_json(const AuditReport& a)
{
    return {{"cubes", a.cubes},
            {"rects", a.rects},
            {"conservation_error", a.conservation_error},
            {"separation_pairs", a.separation_pairs},
            {"separation_violations", a.separation_violations},
            {"nesting_violations", a.nesting_violations},
            {"size_order_violations", a.size_order_violations},
            {"greedy_checks", a.greedy_checks},
            {"greedy_sampled", a.greedy_sampled},
            {"greedy_violations", a.greedy_violations},
            {"rect_bound_violations", a.majorect_violations},
            {"rect_bound_margin_log2", a.majorect_margin},
            {"cube_bound_violations", a.majomes_violations},
            {"cube_bound_margin_log2", a.majomes_margin},
            {"rect_bound_strict_violations", a.majorect_strict_violations},
            {"cube_bound_strict_violations", a.majomes_strict_violations},
            {"size_condition_failures", a.size_condition_failures},
            {"pass", a.pass()},
            {"strict_pass", a.strict_pass()}};
}

inline CantorParams effective_cantor(const ExperimentConfig& c)
{
    auto p = c.cantor;
    p.threads = c.threads == 0 ? default_threads() : c.threads;
    return p;
}

inline std::string tree_csv(const CantorTree& tree)
{
    std::ostringstream csv;
    const auto sum = tree.summary();
    csv << "generation,eps,rho,rects,retained_min,retained_mean,s\n";
    for (const auto& g : sum.at("generations"))
        csv << g.at("generation").get<int>() << "," << detail::fmt(g.at("eps").get<double>()) << ","
            << detail::fmt(g.at("rho").get<double>()) << "," << g.at("rects").get<std::int64_t>() << ","
            << detail::fmt(g.value("retained_min", 0.0)) << "," << detail::fmt(g.value("retained_mean", 0.0)) << ","
            << detail::fmt(tree.s()) << "\n";
    return csv.str();
}

inline CommandResult cmd_cantor(const ExperimentConfig& c)
{
    CommandResult r;
    auto tree = build_cantor(c.measure, c.sequence, c.profile, effective_cantor(c), c.seed);
    Rng paths(mix_seed(c.seed, 0x9a75));
    for (int i = 0; i < c.sampled_paths; ++i) tree.sample_point(paths);
    const auto audit = tree.audit();
    std::ostringstream jl, svg, rep;
    tree.write_jsonl(jl);
    write_tree_svg(svg, tree);
    rep << "rectangles = " << tree.rects().size() << ", cubes = " << tree.cubes().size() << "\ns = " << detail::fmt(tree.s())
        << "\naudit " << (audit.pass() ? "pass" : "FAIL") << " (conservation " << detail::fmt(audit.conservation_error)
        << ", separation " << audit.separation_violations << "/" << audit.separation_pairs << ", rect bound "
        << audit.majorect_violations << ", cube bound " << audit.majomes_violations << ")\n";
    r.report = rep.str();
    r.csv = tree_csv(tree);
    r.svg = svg.str();
    r.jsonl = jl.str();
    r.measured = tree_constants(tree);
    r.measured["audit"] = audit_json(audit);
    r.exit_code = audit.pass() ? kOk : kCertificateFailed;
    return r;
}

inline CommandResult cmd_certify(const ExperimentConfig& c)
{
    CommandResult r;
    auto tree = build_cantor(c.measure, c.sequence, c.profile, effective_cantor(c), c.seed);
    Rng rng(mix_seed(c.seed, 0xce27));
    const auto cert = certify_holder(tree, c.certificate, rng);
    const auto audit = tree.audit();
    std::ostringstream csv, jl, svg, rep;
    csv << "octave,samples,min_exponent,mean_exponent,p,threshold,log2_constant,pass,s\n";
    Series mins{"min exponent", "navy", {}}, thr{"threshold", "crimson", {}, true, false};
    for (const auto& row : cert.rows) {
        csv << row.octave << "," << row.samples << "," << detail::fmt(row.min_exponent) << ","
            << detail::fmt(row.mean_exponent) << "," << row.p << "," << detail::fmt(row.threshold) << ","
            << detail::fmt(row.log2_constant) << "," << (row.pass ? 1 : 0) << "," << detail::fmt(cert.s) << "\n";
        mins.points.push_back({double(row.octave), row.min_exponent});
        thr.points.push_back({double(row.octave), row.threshold});
    }
    write_series_svg(svg, "per-octave minimum exponent log eta(C) / log r", "octave j (r ~ 2^-j)", "exponent",
                     {mins, thr});
    tree.write_jsonl(jl);
    std::int64_t failing = 0;
    for (const auto& row : cert.rows) failing += row.pass ? 0 : 1;
    rep << "s = " << detail::fmt(cert.s) << ", claimed lower bound s - 4 eps_P = " << detail::fmt(cert.claimed)
        << "\noctaves " << cert.octave_lo << ".." << cert.octave_hi << ", samples " << cert.samples << ", failing octaves "
        << failing << "\ncertificate " << (cert.pass ? "pass" : "FAIL") << ", audit "
        << (audit.pass() ? "pass" : "FAIL") << "\n";
    r.report = rep.str();
    r.csv = csv.str();
    r.svg = svg.str();
    r.jsonl = jl.str();
    r.measured = tree_constants(tree);
    r.measured["audit"] = audit_json(audit);
    r.extra = to_json(cert);
    r.exit_code = cert.pass && audit.pass() ? kOk : kCertificateFailed;
    return r;
}

inline CommandResult cmd_diagnose(const ExperimentConfig& c)
{
    CommandResult r;
    const double s = s_value(config_alpha(c), c.profile).s;
    Rng rng(mix_seed(c.seed, 0xba11));
    const auto balls = generate_balls(c.sequence, c.measure, c.sequence.count, rng);
    const auto cov = coverage_diagnostics(c.measure, balls, c.coverage_level, c.cell_budget);
    std::ostringstream csv, svg, rep;
    csv << "tail_start,covered_mass,ball_mass_sum,s\n";
    Series covered{"covered mass", "navy", {}}, sum{"ball mass sum", "crimson", {}};
    for (const auto& row : cov.rows) {
        csv << row.tail_start << "," << detail::fmt(row.covered_mass) << "," << detail::fmt(row.ball_mass_sum) << ","
            << detail::fmt(s) << "\n";
        const double x = std::log2(static_cast<double>(row.tail_start));
        covered.points.push_back({x, row.covered_mass});
        sum.points.push_back({x, std::min(row.ball_mass_sum, 2.0)});
    }
    write_series_svg(svg, "tail coverage at level " + std::to_string(cov.level), "log2 N", "mass", {covered, sum});
    const double qb = quasi_bernoulli_constant(c.measure, std::min(8, 52 / c.measure.d));
    rep << "balls = " << balls.size() << ", level " << cov.level << "\ncovered mass of the full sequence = "
        << detail::fmt(cov.rows.front().covered_mass) << "\nquasi-Bernoulli constant estimate = " << detail::fmt(qb)
        << "\ns = " << detail::fmt(s) << "\n";
    r.report = rep.str();
    r.csv = csv.str();
    r.svg = svg.str();
    r.measured = {{"balls", balls.size()}, {"level", cov.level}, {"quasi_bernoulli_constant", qb},
                  {"dimension", dimension(c.measure)}};
    return r;
}

inline CommandResult cmd_sweep(const ExperimentConfig& c)
{
    CommandResult r;
    auto profiles = c.sweep_profiles;
    if (profiles.empty()) profiles.push_back(c.profile);
    const double alpha = config_alpha(c);
    std::ostringstream csv, svg, rep;
    csv << "profile,s,slope,stderr\n";
    Series fitted{"fitted slope", "navy", {}}, theory{"s", "crimson", {}, true};
    auto rows = nlohmann::json::array();
    for (std::size_t i = 0; i < profiles.size(); ++i) {
        const auto& p = profiles[i];
        const double s = s_value(alpha, p).s;
        const auto rects = config_rectangles(c, p);
        const auto [counts, fit] = box_fit(c, rects, p);
        std::string name;
        for (double t : p.exponents()) name += (name.empty() ? "" : " ") + detail::fmt(t);
        csv << name << "," << detail::fmt(s) << "," << detail::fmt(fit.slope) << "," << detail::fmt(fit.stderr_slope)
            << "\n";
        rep << "tau = (" << name << "): s = " << detail::fmt(s) << ", slope = " << detail::fmt(fit.slope) << "\n";
        fitted.points.push_back({double(i), fit.slope});
        theory.points.push_back({double(i), s});
        rows.push_back({{"profile", p.exponents()}, {"s", s}, {"slope", fit.slope}});
    }
    write_series_svg(svg, "box-count slope per profile", "profile index", "dimension", {fitted, theory});
    r.report = rep.str();
    r.csv = csv.str();
    r.svg = svg.str();
    r.measured = {{"sweep", rows}};
    return r;
}

inline const std::vector<std::string>& command_names()
{
    static const std::vector<std::string> names{"formula", "boxcount", "cantor", "certify", "diagnose", "sweep"};
    return names;
}

inline CommandResult dispatch(const std::string& command, const ExperimentConfig& c)
{
    if (command == "formula") return cmd_formula(c);
    if (command == "boxcount") return cmd_boxcount(c);
    if (command == "cantor") return cmd_cantor(c);
    if (command == "certify") return cmd_certify(c);
    if (command == "diagnose") return cmd_diagnose(c);
    if (command == "sweep") return cmd_sweep(c);
    throw InvalidArgument("unknown command '" + command + "'");
}

inline void write_file(const std::filesystem::path& p, const std::string& content)
{
    std::ofstream out(p, std::ios::binary);
    require(static_cast<bool>(out), "cannot write '" + p.string() + "'");
    out << content;
}

inline std::string utc_timestamp()
{
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Runs a command and writes manifest.json plus its artifacts to c.out.
/// Errors map to exit codes: invalid input 2, budget 4, mass floor 3.
inline int run(const std::string& command, ExperimentConfig c, std::ostream& out, std::ostream& err)
{
    CommandResult r;
    nlohmann::json failure;
    try {
        c.validate();
        r = dispatch(command, c);
    } catch (const InvalidArgument& e) {
        err << "error: " << e.what() << "\n";
        return kInvalid;
    } catch (const nlohmann::json::exception& e) {
        err << "error: " << e.what() << "\n";
        return kInvalid;
    } catch (const BudgetExceeded& e) {
        r.exit_code = kBudget;
        failure = {{"kind", "budget"}, {"message", e.what()}};
    } catch (const MassFloorError& e) {
        r.exit_code = kCertificateFailed;
        failure = {{"kind", "mass_floor"}, {"message", e.what()}, {"achieved", e.achieved()}};
    }
    const std::filesystem::path dir(c.out);
    std::filesystem::create_directories(dir);
    const nlohmann::json config = c;
    nlohmann::json manifest = {{"tool", "ubiquity"},
                               {"version", kToolVersion},
                               {"schema_version", kSchemaVersion},
                               {"command", command},
                               {"config", config},
                               {"config_hash", detail::hex64(detail::fnv1a(config.dump()))},
                               {"seed", c.seed},
                               {"compiler", __VERSION__},
                               {"json_library",
                                std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                               {"s_value", s_value(dimension(c.measure), c.profile).s},
                               {"measured", r.measured},
                               {"exit_code", r.exit_code},
                               {"created", utc_timestamp()}};
    if (!failure.is_null()) manifest["failure"] = failure;
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
    if (!r.csv.empty()) write_file(dir / "results.csv", r.csv);
    if (!r.svg.empty()) write_file(dir / "plot.svg", r.svg);
    if (!r.jsonl.empty()) write_file(dir / "tree.jsonl", r.jsonl);
    if (!r.extra.is_null()) write_file(dir / "certificate.json", r.extra.dump(2) + "\n");
    if (!failure.is_null()) err << "error: " << failure.at("message").get<std::string>() << "\n";
    out << r.report;
    return r.exit_code;
}

}  // namespace ubiquity::cli
