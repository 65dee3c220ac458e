#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "core.hpp"
#include "geometry.hpp"

namespace ubiquity {

enum class MeasureKind { Lebesgue, Bernoulli, Markov };

/// Quasi-Bernoulli measure on [0,1]^d described on the dyadic grid. Symbols are
/// the 2^d child numbers (bit i = digit of coordinate i).
struct MeasureSpec {
    MeasureKind kind = MeasureKind::Lebesgue;
    int d = 1;
    std::vector<double> weights;     // Bernoulli: one per child
    std::vector<double> initial;     // Markov: distribution of the first digit
    std::vector<double> transition;  // Markov: row-major 2^d x 2^d

    int symbols() const { return 1 << d; }
    double transition_at(int from, int to) const { return transition[from * symbols() + to]; }

    static MeasureSpec lebesgue(int d)
    {
        MeasureSpec m;
        m.kind = MeasureKind::Lebesgue;
        m.d = d;
        m.validate();
        return m;
    }

    static MeasureSpec bernoulli(std::vector<double> w)
    {
        MeasureSpec m;
        m.kind = MeasureKind::Bernoulli;
        int d = 0;
        while ((std::size_t{1} << d) < w.size()) ++d;
        m.d = d;
        m.weights = std::move(w);
        m.validate();
        return m;
    }

    static MeasureSpec markov(std::vector<double> init, std::vector<double> trans)
    {
        MeasureSpec m;
        m.kind = MeasureKind::Markov;
        int d = 0;
        while ((std::size_t{1} << d) < init.size()) ++d;
        m.d = d;
        m.initial = std::move(init);
        m.transition = std::move(trans);
        m.validate();
        return m;
    }

    void validate() const
    {
        require(d >= 1 && d <= kMaxDim, "measure dimension must be in [1, 8]");
        const auto S = static_cast<std::size_t>(symbols());
        auto check_distribution = [](std::span<const double> p, const char* what) {
            double total = 0.0;
            for (double x : p) {
                require(std::isfinite(x) && x > 0.0, std::string(what) + ": weights must be strictly positive");
                total += x;
            }
            require(std::abs(total - 1.0) <= 1e-12, std::string(what) + ": weights must sum to 1");
        };
        switch (kind) {
        case MeasureKind::Lebesgue:
            break;
        case MeasureKind::Bernoulli:
            require(weights.size() == S, "bernoulli: need 2^d weights");
            check_distribution(weights, "bernoulli");
            break;
        case MeasureKind::Markov:
            require(initial.size() == S, "markov: need 2^d initial probabilities");
            require(transition.size() == S * S, "markov: need 2^d x 2^d transition matrix");
            check_distribution(initial, "markov initial");
            for (std::size_t a = 0; a < S; ++a)
                check_distribution(std::span<const double>(transition).subspan(a * S, S), "markov row");
            break;
        }
    }

    /// Probability of child `to` given the previous digit (`from` < 0 at the root).
    double step(int from, int to) const
    {
        switch (kind) {
        case MeasureKind::Lebesgue: return std::ldexp(1.0, -d);
        case MeasureKind::Bernoulli: return weights[to];
        case MeasureKind::Markov: return from < 0 ? initial[to] : transition_at(from, to);
        }
        return 0.0;
    }

    friend bool operator==(const MeasureSpec&, const MeasureSpec&) = default;
};

inline const char* to_string(MeasureKind k)
{
    switch (k) {
    case MeasureKind::Lebesgue: return "lebesgue";
    case MeasureKind::Bernoulli: return "bernoulli";
    case MeasureKind::Markov: return "markov";
    }
    return "?";
}

inline double cube_mass(const MeasureSpec& mu, const DyadicCube& cube)
{
    require(cube.dim() == mu.d, "cube_mass: dimension mismatch");
    if (mu.kind == MeasureKind::Lebesgue) return std::ldexp(1.0, -mu.d * cube.level);
    double m = 1.0;
    int prev = -1;
    for (int j = 1; j <= cube.level; ++j) {
        const int c = cube.digit(j);
        m *= mu.step(prev, c);
        prev = c;
    }
    return m;
}

inline double log2_cube_mass(const MeasureSpec& mu, const DyadicCube& cube)
{
    require(cube.dim() == mu.d, "log2_cube_mass: dimension mismatch");
    if (mu.kind == MeasureKind::Lebesgue) return -static_cast<double>(mu.d * cube.level);
    double m = 0.0;
    int prev = -1;
    for (int j = 1; j <= cube.level; ++j) {
        const int c = cube.digit(j);
        m += std::log2(mu.step(prev, c));
        prev = c;
    }
    return m;
}

/// mu^D: the normalized restriction to D pushed forward onto [0,1]^d.
inline MeasureSpec rescale(const MeasureSpec& mu, const DyadicCube& cube)
{
    require(cube.dim() == mu.d, "rescale: dimension mismatch");
    if (mu.kind != MeasureKind::Markov || cube.level == 0) return mu;
    MeasureSpec out = mu;
    const int last = cube.digit(cube.level);
    const int S = mu.symbols();
    out.initial.assign(mu.transition.begin() + last * S, mu.transition.begin() + (last + 1) * S);
    return out;
}

struct MassBounds {
    double lower = 0.0;
    double upper = 0.0;
};

namespace detail {

inline Box clipped_ball_box(const Ball& ball)
{
    Box b{ball.center, ball.center};
    for (int i = 0; i < ball.dim(); ++i) {
        b.lo[i] = std::max(0.0, ball.center[i] - ball.radius);
        b.hi[i] = std::min(1.0, ball.center[i] + ball.radius);
    }
    return b;
}

struct BoundsWalker {
    const MeasureSpec& mu;
    const Box& box;
    int target;
    std::int64_t budget;
    std::int64_t visited = 0;
    CompensatedSum lower, upper;

    void visit(const DyadicCube& cube, double mass, int prev)
    {
        if (++visited > budget) throw BudgetExceeded("ball_mass_bounds: node budget exceeded");
        const double s = cube.side();
        bool inside = true;
        for (int i = 0; i < cube.dim(); ++i) {
            const double a = static_cast<double>(cube.index[i]) * s, b = a + s;
            if (b <= box.lo[i] || a >= box.hi[i]) return;  // interiors disjoint
            if (a < box.lo[i] || b > box.hi[i]) inside = false;
        }
        if (inside) {
            lower.add(mass);
            upper.add(mass);
            return;
        }
        if (cube.level == target) {
            upper.add(mass);
            return;
        }
        for (int c = 0; c < mu.symbols(); ++c) visit(cube_child(cube, c), mass * mu.step(prev, c), c);
    }
};

}  // namespace detail

/// Dyadic bracketing of mu(B): lower sums level-p cubes inside B, upper sums
/// level-p cubes whose interior meets B (boundaries carry no mass).
inline MassBounds ball_mass_bounds(const MeasureSpec& mu, const Ball& ball, int level,
                                   std::int64_t budget = std::int64_t{1} << 24)
{
    require(ball.dim() == mu.d, "ball_mass_bounds: dimension mismatch");
    require(level >= 0 && level <= 62, "ball_mass_bounds: level must be in [0, 62]");
    const Box box = detail::clipped_ball_box(ball);
    for (int i = 0; i < mu.d; ++i)
        if (box.hi[i] <= box.lo[i]) return {};
    if (mu.kind == MeasureKind::Lebesgue) {
        double lower = 1.0, upper = 1.0;
        for (int i = 0; i < mu.d; ++i) {
            const double a = std::ldexp(box.lo[i], level), b = std::ldexp(box.hi[i], level);
            lower *= std::max(0.0, std::floor(b) - std::ceil(a));
            upper *= std::ceil(b) - std::floor(a);
        }
        return {std::ldexp(lower, -mu.d * level), std::ldexp(upper, -mu.d * level)};
    }
    detail::BoundsWalker walker{mu, box, level, budget};
    walker.visit(DyadicCube::root(mu.d), 1.0, -1);
    return {walker.lower.value(), walker.upper.value()};
}

/// Upper bound on mu(B) used by the E-set test: exact for Lebesgue, dyadic
/// upper bound `refine` levels below the radius otherwise.
inline double ball_mass_upper(const MeasureSpec& mu, const Ball& ball, int refine = 6)
{
    if (mu.kind == MeasureKind::Lebesgue) {
        const Box box = detail::clipped_ball_box(ball);
        double v = 1.0;
        for (int i = 0; i < mu.d; ++i) v *= std::max(0.0, box.hi[i] - box.lo[i]);
        return v;
    }
    const int base = ball.radius > 0 ? static_cast<int>(std::ceil(-std::log2(ball.radius))) : 62;
    return ball_mass_bounds(mu, ball, std::clamp(base + refine, 0, 62)).upper;
}

/// Stationary distribution by power iteration (positive chains have a unique one).
inline std::vector<double> stationary_distribution(const MeasureSpec& mu, double tol = 1e-13)
{
    require(mu.kind == MeasureKind::Markov, "stationary_distribution: markov measure required");
    const int S = mu.symbols();
    std::vector<double> pi(S, 1.0 / S), next(S);
    for (int it = 0; it < 1000000; ++it) {
        std::fill(next.begin(), next.end(), 0.0);
        for (int a = 0; a < S; ++a)
            for (int b = 0; b < S; ++b) next[b] += pi[a] * mu.transition_at(a, b);
        double diff = 0.0;
        for (int b = 0; b < S; ++b) diff = std::max(diff, std::abs(next[b] - pi[b]));
        pi.swap(next);
        if (diff <= tol) break;
    }
    return pi;
}

inline double entropy_bits(std::span<const double> p)
{
    double h = 0.0;
    for (double x : p)
        if (x > 0) h -= x * std::log2(x);
    return h;
}

/// Exact dimension: d (Lebesgue), entropy in bits (Bernoulli), entropy rate (Markov).
inline double dimension(const MeasureSpec& mu)
{
    switch (mu.kind) {
    case MeasureKind::Lebesgue: return mu.d;
    case MeasureKind::Bernoulli: return entropy_bits(mu.weights);
    case MeasureKind::Markov: {
        const auto pi = stationary_distribution(mu);
        const int S = mu.symbols();
        double h = 0.0;
        for (int a = 0; a < S; ++a)
            h += pi[a] * entropy_bits(std::span<const double>(mu.transition).subspan(a * S, S));
        return h;
    }
    }
    return 0.0;
}

/// Empirical lower estimate of C_mu: the largest two-sided ratio between
/// mu^D(D') = mu(DD')/mu(D) and mu(D') over D up to max_level and D' up to probe_level.
inline double quasi_bernoulli_constant(const MeasureSpec& mu, int max_level, int probe_level = 2,
                                       std::int64_t budget = std::int64_t{1} << 22)
{
    require(max_level >= 1, "quasi_bernoulli_constant: max_level must be >= 1");
    if (mu.kind != MeasureKind::Markov) return 1.0;
    const int d = mu.d;
    double total = 0.0;
    for (int l = 1; l <= max_level; ++l) total += std::ldexp(1.0, d * l);
    if (total > static_cast<double>(budget)) throw BudgetExceeded("quasi_bernoulli_constant: too many cubes");

    std::vector<DyadicCube> probes;
    std::vector<DyadicCube> frontier{DyadicCube::root(d)};
    for (int l = 1; l <= probe_level; ++l) {
        std::vector<DyadicCube> next;
        for (const auto& c : frontier)
            for (auto& ch : cube_children(c)) next.push_back(ch);
        probes.insert(probes.end(), next.begin(), next.end());
        frontier = std::move(next);
    }
    std::vector<double> probe_mass;
    for (const auto& q : probes) probe_mass.push_back(cube_mass(mu, q));

    double worst = 1.0;
    frontier = {DyadicCube::root(d)};
    for (int l = 1; l <= max_level; ++l) {
        std::vector<DyadicCube> next;
        for (const auto& c : frontier)
            for (auto& ch : cube_children(c)) next.push_back(ch);
        for (const auto& cube : next) {
            const double m = cube_mass(mu, cube);
            for (std::size_t i = 0; i < probes.size(); ++i) {
                const double ratio = cube_mass(mu, cube_concat(cube, probes[i])) / m / probe_mass[i];
                worst = std::max({worst, ratio, 1.0 / ratio});
            }
        }
        frontier = std::move(next);
    }
    return worst;
}

/// Level-`depth` cube drawn with probability mu(D).
inline DyadicCube sample_cube(const MeasureSpec& mu, Rng& rng, int depth)
{
    require(depth >= 0 && depth <= 62, "sample: depth must be in [0, 62]");
    IndexVec k(mu.d, 0);
    std::vector<double> w(mu.symbols());
    int prev = -1;
    for (int j = 0; j < depth; ++j) {
        for (int c = 0; c < mu.symbols(); ++c) w[c] = mu.step(prev, c);
        const int c = rng.categorical(w);
        for (int i = 0; i < mu.d; ++i) k[i] = 2 * k[i] + ((c >> i) & 1);
        prev = c;
    }
    return DyadicCube(depth, k);
}

/// Point whose level-`depth` cube is distributed by mu, uniform inside that cube.
inline Point sample_point(const MeasureSpec& mu, Rng& rng, int depth)
{
    require(depth >= 1, "sample_point: depth must be >= 1");
    const DyadicCube cube = sample_cube(mu, rng, depth);
    Point x(mu.d);
    for (int i = 0; i < mu.d; ++i) x[i] = std::ldexp(static_cast<double>(cube.index[i]) + rng.uniform(), -depth);
    return x;
}

/// E^{beta,eps,rho}: B(x,r) inside [0,1]^d and nu(B(x,r)) <= K r^(beta-eps) for all probed r.
struct ESetParams {
    double alpha = 0.0;
    double epsilon = 0.1;
    double rho = 0.5;
    int probe_depth = 1;
    /// Multiplicative constant K on the mass bound; 1 reproduces the bare definition.
    double mass_constant = 1.0;
    /// Extra dyadic levels used to bracket ball masses of non-Lebesgue measures.
    int refine = 6;

    int first_probe() const { return static_cast<int>(std::ceil(-std::log2(rho) - 1e-12)); }

    void validate() const
    {
        require(alpha >= 0.0, "e-set: alpha must be >= 0");
        require(epsilon > 0.0 && epsilon <= alpha, "e-set: epsilon must lie in (0, alpha]");
        require(rho > 0.0 && rho <= 1.0, "e-set: rho must lie in (0, 1]");
        require(probe_depth >= first_probe(), "e-set: probe_depth must be >= ceil(log2(1/rho))");
        require(mass_constant > 0.0, "e-set: mass constant must be positive");
    }
};

/// Sound one-sided test at dyadic radii 2^-j <= rho, j <= probe_depth.
inline bool e_set_member(const MeasureSpec& mu, const Point& x, const ESetParams& params)
{
    params.validate();
    require(x.size() == mu.d, "e_set_member: dimension mismatch");
    for (int j = params.first_probe(); j <= params.probe_depth; ++j) {
        const double r = std::ldexp(1.0, -j);
        for (int i = 0; i < mu.d; ++i)
            if (x[i] - r < 0.0 || x[i] + r > 1.0) return false;
        const double bound = params.mass_constant * std::pow(r, params.alpha - params.epsilon);
        if (ball_mass_upper(mu, Ball(x, r), params.refine) > bound) return false;
    }
    return true;
}

struct RhoChoice {
    double rho = 0.5;
    int probe_depth = 1;
    double accepted_fraction = 0.0;
};

/// Halves rho until at least `target` of `samples` mu-distributed points pass the
/// E-set test; probes span `probe_span` octaves below rho.
inline RhoChoice adaptive_rho(const MeasureSpec& mu, ESetParams params, int probe_span, int samples, Rng& rng,
                              double target = 0.5, int max_halvings = 40)
{
    require(samples > 0, "adaptive_rho: samples must be positive");
    std::vector<Point> pts;
    pts.reserve(samples);
    for (int i = 0; i < samples; ++i) pts.push_back(sample_point(mu, rng, 52 / mu.d));
    double rho = 0.5;
    for (int h = 0; h < max_halvings; ++h, rho /= 2) {
        params.rho = rho;
        params.probe_depth = params.first_probe() + probe_span;
        int ok = 0;
        for (const auto& x : pts) ok += e_set_member(mu, x, params) ? 1 : 0;
        const double frac = static_cast<double>(ok) / samples;
        if (frac >= target) return {rho, params.probe_depth, frac};
    }
    throw BudgetExceeded("adaptive_rho: no dyadic rho reaches the requested acceptance");
}

inline void to_json(nlohmann::json& j, const MeasureSpec& mu)
{
    j = nlohmann::json{{"kind", to_string(mu.kind)}, {"d", mu.d}};
    if (mu.kind == MeasureKind::Bernoulli) j["weights"] = mu.weights;
    if (mu.kind == MeasureKind::Markov) {
        j["initial"] = mu.initial;
        const int S = mu.symbols();
        auto rows = nlohmann::json::array();
        for (int a = 0; a < S; ++a)
            rows.push_back(std::vector<double>(mu.transition.begin() + a * S, mu.transition.begin() + (a + 1) * S));
        j["transition"] = rows;
    }
}

inline void from_json(const nlohmann::json& j, MeasureSpec& mu)
{
    require(j.is_object() && j.contains("kind"), "measure: object with 'kind' required");
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "lebesgue") {
        require(j.contains("d"), "measure: lebesgue needs 'd'");
        mu = MeasureSpec::lebesgue(j.at("d").get<int>());
    } else if (kind == "bernoulli") {
        mu = MeasureSpec::bernoulli(j.at("weights").get<std::vector<double>>());
    } else if (kind == "markov") {
        std::vector<double> flat;
        for (const auto& row : j.at("transition"))
            for (double x : row.get<std::vector<double>>()) flat.push_back(x);
        mu = MeasureSpec::markov(j.at("initial").get<std::vector<double>>(), flat);
    } else {
        throw InvalidArgument("measure: unknown kind '" + kind + "'");
    }
    if (j.contains("d")) require(j.at("d").get<int>() == mu.d, "measure: 'd' disagrees with weights");
}

}  // namespace ubiquity
