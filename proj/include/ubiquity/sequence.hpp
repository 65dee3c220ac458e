#pragma once

#include <cstdio>
#include <numeric>
#include <ostream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "core.hpp"
#include "formula.hpp"
#include "geometry.hpp"
#include "measure.hpp"

namespace ubiquity {

enum class SequenceKind { Iid, Jarnik, ExplicitList };
enum class RotationKind { Identity, FixedAngleSet, SeededRandomOrthogonal };

struct RotationPolicy {
    RotationKind kind = RotationKind::Identity;
    std::vector<double> angles;  // FixedAngleSet: cycled by ball index, acting on the first two axes
    std::uint64_t seed = 0;      // SeededRandomOrthogonal

    /// Rotation attached to the n-th ball (0-based); depends only on (policy, n).
    Rotation at(int d, std::size_t n) const;
};

/// Generator contract for (B_n). Iid: centers drawn from mu, r_n = c n^(-1/gamma)
/// (gamma <= 0 selects gamma = dim mu, the borderline divergent choice).
/// Jarnik: reduced p/q in [0,1] for q_min <= q <= q_max with r = q^-2.
struct BallSequenceSpec {
    SequenceKind kind = SequenceKind::Iid;
    double c = 0.5;
    double gamma = 0.0;
    std::int64_t count = 1000;
    std::int64_t q_min = 2;
    std::int64_t q_max = 100;
    std::vector<Ball> balls;
    RotationPolicy rotation;

    void validate() const
    {
        switch (kind) {
        case SequenceKind::Iid:
            require(c > 0.0 && c <= 1.0, "iid sequence: c must lie in (0, 1]");
            require(std::isfinite(gamma), "iid sequence: gamma must be finite");
            require(count >= 1, "iid sequence: count must be >= 1");
            break;
        case SequenceKind::Jarnik:
            require(q_min >= 1 && q_max >= q_min, "jarnik sequence: need 1 <= q_min <= q_max");
            break;
        case SequenceKind::ExplicitList:
            for (const auto& b : balls)
                for (double x : b.center) require(x >= 0.0 && x <= 1.0, "explicit sequence: centers must lie in [0,1]^d");
            break;
        }
        if (rotation.kind == RotationKind::FixedAngleSet)
            require(!rotation.angles.empty(), "rotation policy: fixed angle set is empty");
    }
};

namespace detail {

/// Gram-Schmidt (applied twice) of a seeded Gaussian matrix; rows of the result
/// are orthonormal and the implied triangular factor has a positive diagonal.
inline Rotation random_orthogonal(int d, Rng& rng)
{
    if (d == 1) return Rotation::identity(1);
    if (d == 2) return Rotation::planar(2, 2.0 * M_PI * rng.uniform());
    std::vector<double> m(d * d);
    for (auto& x : m) x = rng.normal();
    for (int pass = 0; pass < 2; ++pass)
        for (int i = 0; i < d; ++i) {
            for (int k = 0; k < i; ++k) {
                double dot = 0.0;
                for (int j = 0; j < d; ++j) dot += m[i * d + j] * m[k * d + j];
                for (int j = 0; j < d; ++j) m[i * d + j] -= dot * m[k * d + j];
            }
            double norm = 0.0;
            for (int j = 0; j < d; ++j) norm += m[i * d + j] * m[i * d + j];
            norm = std::sqrt(norm);
            for (int j = 0; j < d; ++j) m[i * d + j] /= norm;
        }
    return Rotation::from_rows(d, m);
}

}  // namespace detail

inline Rotation RotationPolicy::at(int d, std::size_t n) const
{
    switch (kind) {
    case RotationKind::Identity: return Rotation::identity(d);
    case RotationKind::FixedAngleSet: return d == 1 ? Rotation::identity(1) : Rotation::planar(d, angles[n % angles.size()]);
    case RotationKind::SeededRandomOrthogonal: {
        Rng rng(mix_seed(seed, n));
        return detail::random_orthogonal(d, rng);
    }
    }
    return Rotation::identity(d);
}

inline double effective_gamma(const BallSequenceSpec& spec, const MeasureSpec& mu)
{
    return spec.gamma > 0.0 ? spec.gamma : dimension(mu);
}

/// Reduced fractions p/q in [0,1], q ascending, p ascending within each q.
inline std::vector<Ball> jarnik_balls(std::int64_t q_min, std::int64_t q_max, std::int64_t limit)
{
    std::vector<Ball> out;
    for (std::int64_t q = q_min; q <= q_max; ++q) {
        const double r = 1.0 / (static_cast<double>(q) * static_cast<double>(q));
        for (std::int64_t p = 0; p <= q; ++p) {
            if (std::gcd(p, q) != 1) continue;
            if (static_cast<std::int64_t>(out.size()) >= limit) return out;
            out.emplace_back(Point{static_cast<double>(p) / static_cast<double>(q)}, r);
        }
    }
    return out;
}

/// First n balls of the sequence (all of it for Jarnik/ExplicitList if shorter).
inline std::vector<Ball> generate_balls(const BallSequenceSpec& spec, const MeasureSpec& mu, std::int64_t n, Rng& rng)
{
    spec.validate();
    require(n >= 1, "generate_balls: need N >= 1");
    switch (spec.kind) {
    case SequenceKind::Iid: {
        const double gamma = effective_gamma(spec, mu);
        require(gamma > 0.0, "iid sequence: gamma must be positive");
        const int depth = 52 / mu.d;
        std::vector<Ball> out;
        out.reserve(static_cast<std::size_t>(n));
        for (std::int64_t i = 1; i <= n; ++i)
            out.emplace_back(sample_point(mu, rng, depth), spec.c * std::pow(static_cast<double>(i), -1.0 / gamma));
        return out;
    }
    case SequenceKind::Jarnik:
        require(mu.d == 1, "jarnik sequence: only defined in dimension 1");
        return jarnik_balls(spec.q_min, spec.q_max, n);
    case SequenceKind::ExplicitList: {
        for (const auto& b : spec.balls) require(b.dim() == mu.d, "explicit sequence: dimension mismatch");
        const auto m = std::min<std::size_t>(spec.balls.size(), static_cast<std::size_t>(n));
        return {spec.balls.begin(), spec.balls.begin() + static_cast<std::ptrdiff_t>(m)};
    }
    }
    return {};
}

/// R_n = x_n + O_n diag(r_n^tau) [0,1]^d, O_n from the rotation policy.
inline std::vector<AnisotropicRectangle> shrink_sequence(const std::vector<Ball>& balls, const ShrinkProfile& profile,
                                                         const RotationPolicy& policy)
{
    std::vector<AnisotropicRectangle> out;
    out.reserve(balls.size());
    for (std::size_t n = 0; n < balls.size(); ++n) {
        require(balls[n].radius < 1.0, "shrink_sequence: ball " + std::to_string(n) + " has radius >= 1");
        out.push_back(shrink_ball(balls[n], profile, policy.at(balls[n].dim(), n)));
    }
    return out;
}

struct CoverageRow {
    std::int64_t tail_start = 1;  // 1-based N
    double covered_mass = 0.0;    // mu of level-p cubes touched by the union over n >= N
    double ball_mass_sum = 0.0;   // sum over n >= N of the level-p upper bound on mu(B_n)
};

struct CoverageReport {
    int level = 0;
    std::vector<CoverageRow> rows;
};

/// Surrogate for mu(limsup B_n) = 1 on a dyadic ladder of tail starts.
inline CoverageReport coverage_diagnostics(const MeasureSpec& mu, const std::vector<Ball>& balls, int level,
                                           std::int64_t budget = std::int64_t{1} << 27)
{
    require(level >= 0 && mu.d * level <= 60, "coverage_diagnostics: need d * level <= 60");
    CoverageReport report;
    report.level = level;
    std::vector<std::int64_t> ladder;
    for (std::int64_t n = 1; n <= static_cast<std::int64_t>(balls.size()); n *= 2) ladder.push_back(n);
    if (ladder.empty()) {
        report.rows.push_back({1, 0.0, 0.0});
        return report;
    }
    std::unordered_set<std::uint64_t> touched;
    CompensatedSum covered, ball_sum;
    auto next = ladder.rbegin();
    std::vector<CoverageRow> rows;
    for (auto n = static_cast<std::int64_t>(balls.size()); n >= 1; --n) {
        const Ball& b = balls[n - 1];
        require(b.dim() == mu.d, "coverage_diagnostics: dimension mismatch");
        Point corner = b.center;
        for (auto& x : corner) x -= b.radius;
        const auto body = axis_rectangle(corner, SmallVec<double>(mu.d, 2 * b.radius));
        for (const auto& cube : rasterize_rectangle(body, level, budget))
            if (touched.insert(morton_encode(cube.index, level)).second) covered.add(cube_mass(mu, cube));
        if (static_cast<std::int64_t>(touched.size()) > budget)
            throw BudgetExceeded("coverage_diagnostics: cell budget exceeded");
        ball_sum.add(b.radius > 0 ? ball_mass_bounds(mu, b, level).upper : 0.0);
        if (next != ladder.rend() && *next == n) {
            rows.push_back({n, covered.value(), ball_sum.value()});
            ++next;
        }
    }
    report.rows.assign(rows.rbegin(), rows.rend());
    return report;
}

inline std::string format_double(double x)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

/// CSV: n, x_1..x_d, r, tau_1..tau_d, o_11..o_dd (rotation row-major).
inline void write_rectangles_csv(std::ostream& os, const std::vector<AnisotropicRectangle>& rects)
{
    if (rects.empty()) {
        os << "n,r\n";
        return;
    }
    const int d = rects.front().dim();
    os << "n";
    for (int i = 1; i <= d; ++i) os << ",x_" << i;
    os << ",r";
    for (int i = 1; i <= d; ++i) os << ",tau_" << i;
    for (int i = 1; i <= d; ++i)
        for (int j = 1; j <= d; ++j) os << ",o_" << i << j;
    os << "\n";
    for (std::size_t n = 0; n < rects.size(); ++n) {
        const auto& r = rects[n];
        os << n + 1;
        for (double x : r.anchor) os << "," << format_double(x);
        os << "," << format_double(r.base_radius);
        for (double t : r.profile.exponents()) os << "," << format_double(t);
        for (double o : r.rotation.row_major()) os << "," << format_double(o);
        os << "\n";
    }
}

inline void write_balls_csv(std::ostream& os, const std::vector<Ball>& balls)
{
    const int d = balls.empty() ? 1 : balls.front().dim();
    os << "n";
    for (int i = 1; i <= d; ++i) os << ",x_" << i;
    os << ",r\n";
    for (std::size_t n = 0; n < balls.size(); ++n) {
        os << n + 1;
        for (double x : balls[n].center) os << "," << format_double(x);
        os << "," << format_double(balls[n].radius) << "\n";
    }
}

inline void to_json(nlohmann::json& j, const RotationPolicy& p)
{
    switch (p.kind) {
    case RotationKind::Identity: j = {{"kind", "identity"}}; break;
    case RotationKind::FixedAngleSet: j = {{"kind", "fixed_angles"}, {"angles", p.angles}}; break;
    case RotationKind::SeededRandomOrthogonal: j = {{"kind", "random_orthogonal"}, {"seed", p.seed}}; break;
    }
}

inline void from_json(const nlohmann::json& j, RotationPolicy& p)
{
    p = RotationPolicy{};
    const auto kind = j.value("kind", std::string("identity"));
    if (kind == "identity") p.kind = RotationKind::Identity;
    else if (kind == "fixed_angles") {
        p.kind = RotationKind::FixedAngleSet;
        p.angles = j.at("angles").get<std::vector<double>>();
    } else if (kind == "random_orthogonal") {
        p.kind = RotationKind::SeededRandomOrthogonal;
        p.seed = j.value("seed", std::uint64_t{0});
    } else throw InvalidArgument("rotation policy: unknown kind '" + kind + "'");
}

inline void to_json(nlohmann::json& j, const BallSequenceSpec& s)
{
    switch (s.kind) {
    case SequenceKind::Iid: j = {{"kind", "iid"}, {"c", s.c}, {"gamma", s.gamma}, {"count", s.count}}; break;
    case SequenceKind::Jarnik: j = {{"kind", "jarnik"}, {"q_min", s.q_min}, {"q_max", s.q_max}}; break;
    case SequenceKind::ExplicitList: {
        auto list = nlohmann::json::array();
        for (const auto& b : s.balls)
            list.push_back({{"center", std::vector<double>(b.center.begin(), b.center.end())}, {"radius", b.radius}});
        j = {{"kind", "list"}, {"balls", list}};
        break;
    }
    }
    j["rotation"] = s.rotation;
}

inline void from_json(const nlohmann::json& j, BallSequenceSpec& s)
{
    s = BallSequenceSpec{};
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "iid") {
        s.kind = SequenceKind::Iid;
        s.c = j.value("c", s.c);
        s.gamma = j.value("gamma", s.gamma);
        s.count = j.value("count", s.count);
    } else if (kind == "jarnik") {
        s.kind = SequenceKind::Jarnik;
        s.q_min = j.value("q_min", s.q_min);
        s.q_max = j.value("q_max", s.q_max);
    } else if (kind == "list") {
        s.kind = SequenceKind::ExplicitList;
        for (const auto& b : j.at("balls")) {
            const auto c = b.at("center").get<std::vector<double>>();
            s.balls.emplace_back(Point::from(std::span<const double>(c)), b.at("radius").get<double>());
        }
    } else throw InvalidArgument("sequence: unknown kind '" + kind + "'");
    if (j.contains("rotation")) s.rotation = j.at("rotation").get<RotationPolicy>();
    s.validate();
}

}  // namespace ubiquity
