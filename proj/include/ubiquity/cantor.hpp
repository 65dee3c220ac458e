#pragma once

#include <cstdio>
#include <deque>
#include <exception>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "core.hpp"
#include "formula.hpp"
#include "geometry.hpp"
#include "measure.hpp"
#include "sequence.hpp"

namespace ubiquity {

/// eps_p = eps0 2^-p.
struct EpsilonSchedule {
    double eps0 = 0.2;

    double eps(int p) const { return std::ldexp(eps0, -p); }

    void validate(double s) const
    {
        require(eps0 > 0.0 && eps0 <= std::min(1.0, s / 4.0) + 1e-15,
                "epsilon schedule: eps0 must lie in (0, min(1, s/4)]");
    }
};

/// Raised when a host cube cannot retain the configured fraction of its mass.
class MassFloorError : public std::runtime_error {
public:
    MassFloorError(const std::string& what, double achieved) : std::runtime_error(what), achieved_(achieved) {}
    double achieved() const { return achieved_; }

private:
    double achieved_;
};

// ---------------------------------------------------------------------------
// Greedy Vitali selection

/// Indices of a greedy disjoint subfamily: decreasing radius, ties in input order.
inline std::vector<std::size_t> greedy_disjoint_indices(const std::vector<Ball>& candidates)
{
    std::vector<std::size_t> order(candidates.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return candidates[a].radius > candidates[b].radius; });
    std::vector<std::size_t> chosen;
    for (std::size_t i : order) {
        bool free = true;
        for (std::size_t j : chosen)
            if (balls_intersect(candidates[i], candidates[j])) {
                free = false;
                break;
            }
        if (free) chosen.push_back(i);
    }
    return chosen;
}

inline std::vector<Ball> greedy_disjoint_selection(const std::vector<Ball>& candidates)
{
    std::vector<Ball> out;
    for (std::size_t i : greedy_disjoint_indices(candidates)) out.push_back(candidates[i]);
    return out;
}

struct DisjointCoverCheck {
    bool disjoint = true;
    bool covered = true;           // every candidate meets a selected ball at least as large
    std::int64_t candidates_checked = 0;
    bool exhaustive = true;

    bool ok() const { return disjoint && covered; }
};

/// O(N^2) check of pairwise disjointness and the 5r-covering property. Above
/// `exhaustive_limit` candidates, a seeded sample of that many is checked.
inline DisjointCoverCheck verify_disjoint_cover(const std::vector<Ball>& candidates, const std::vector<Ball>& selected,
                                                std::size_t exhaustive_limit = 1000, std::uint64_t seed = 0)
{
    DisjointCoverCheck out;
    // pairwise disjointness by a sweep along the first axis
    std::vector<std::size_t> by_left(selected.size());
    std::iota(by_left.begin(), by_left.end(), std::size_t{0});
    auto left = [&](std::size_t i) { return selected[i].center[0] - selected[i].radius; };
    std::sort(by_left.begin(), by_left.end(), [&](std::size_t a, std::size_t b) { return left(a) < left(b); });
    for (std::size_t a = 0; a < by_left.size() && out.disjoint; ++a) {
        const Ball& A = selected[by_left[a]];
        for (std::size_t b = a + 1; b < by_left.size(); ++b) {
            if (left(by_left[b]) > A.center[0] + A.radius) break;
            if (balls_intersect(A, selected[by_left[b]])) {
                out.disjoint = false;
                break;
            }
        }
    }
    std::vector<std::size_t> idx(candidates.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (idx.size() > exhaustive_limit) {
        Rng rng(seed);
        for (std::size_t i = 0; i < exhaustive_limit; ++i)
            std::swap(idx[i], idx[i + static_cast<std::size_t>(rng.uniform() * static_cast<double>(idx.size() - i))]);
        idx.resize(exhaustive_limit);
        out.exhaustive = false;
    }
    for (std::size_t i : idx) {
        const Ball& c = candidates[i];
        bool hit = false;
        for (const Ball& s : selected)
            if (s.radius >= c.radius && balls_intersect(c, s)) {
                hit = true;
                break;
            }
        out.covered = out.covered && hit;
        ++out.candidates_checked;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Per-cube selection

/// A host cube D seen from its own rescaled frame: the unit cube with mu^D.
struct HostCube {
    MeasureSpec mu;           // mu^D
    int global_level = 0;     // D has side 2^-global_level
    double log2_mass = 0.0;   // log2 mu(D)
    Point global_corner;      // approximate; used only by enumerated streams
    std::uint64_t key = 0;    // path hash, seeds everything drawn inside D
};

/// Candidate ball in the host frame, plus its radius in global units.
struct Candidate {
    Point center;
    double radius = 0.0;
    double log2_radius = 0.0;
    std::uint64_t tag = 0;    // rotation index
};

using CandidateStream = std::function<std::optional<Candidate>()>;

struct SelectionRules {
    ShrinkProfile profile;
    RotationPolicy rotation;
    ESetParams eset;              // alpha, eps_q, rho_q, probes, mass constant
    double mass_floor = 0.1;      // required retained fraction of mu(D)
    double mass_target = 0.25;    // selection stops once this much is retained
    std::int64_t max_draws = std::int64_t{1} << 24;
    std::int64_t max_tests = std::int64_t{1} << 22;
    bool need_lattice = false;    // non-leaf generation: C(R) must be nonempty
    int max_lattice_level = 52;   // relative lattice depth kept exact in double frames
    bool enforce_size = false;    // reject candidates failing the size conditions
    double host_eta = 1.0;        // eta(D), for the size conditions
    double next_rho = 0.5;        // rho_{q+1}
};

struct SelectedRect {
    Ball selection;               // L = B(x, 4r), host frame
    AnisotropicRectangle rect;    // host frame; base_radius is the local radius
    double log2_radius = 0.0;     // global
    double mass_upper = 0.0;      // bounds on mu^D(L)
    double mass_lower = 0.0;
    bool size_ok = false;         // size conditions held
    std::uint64_t tag = 0;
};

struct SelectionStats {
    std::int64_t draws = 0;
    std::int64_t too_large = 0;
    std::int64_t tests = 0;
    std::int64_t rejected_overlap = 0;
    std::int64_t rejected_eset = 0;
    std::int64_t rejected_lattice = 0;
    std::int64_t rejected_size = 0;
    double retained_lower = 0.0;
    double retained_upper = 0.0;
    bool exhausted = false;
    DisjointCoverCheck check;
};

struct Selection {
    std::vector<SelectedRect> rects;
    SelectionStats stats;
};

namespace detail {

/// Uniform hash grid over selected balls. Radii arrive non-increasing, so a cell
/// twice the first radius means every later ball spans at most 2^d cells.
class SelectionGrid {
public:
    explicit SelectionGrid(int d) : d_(d) {}

    template <class Rects>
    bool meets(const Ball& b, const Rects& rects) const
    {
        if (cell_ <= 0.0) return false;
        bool hit = false;
        for_cells(b, [&](std::uint64_t key) {
            if (hit) return;
            auto it = cells_.find(key);
            if (it == cells_.end()) return;
            for (auto n : it->second)
                if (balls_intersect(b, rects[n].selection)) {
                    hit = true;
                    return;
                }
        });
        return hit;
    }

    void insert(const Ball& b, std::size_t n)
    {
        if (cell_ <= 0.0) cell_ = 4.0 * b.radius;
        for_cells(b, [&](std::uint64_t key) { cells_[key].push_back(n); });
    }

private:
    template <class Fn>
    void for_cells(const Ball& b, Fn&& fn) const
    {
        std::array<std::int64_t, kMaxDim> lo{}, hi{}, k{};
        for (int i = 0; i < d_; ++i) {
            lo[i] = static_cast<std::int64_t>(std::floor((b.center[i] - b.radius) / cell_));
            hi[i] = static_cast<std::int64_t>(std::floor((b.center[i] + b.radius) / cell_));
            k[i] = lo[i];
        }
        while (true) {
            std::uint64_t key = 0x51ed;
            for (int i = 0; i < d_; ++i) key = mix_seed(key, static_cast<std::uint64_t>(k[i]));
            fn(key);
            int i = 0;
            for (; i < d_; ++i) {
                if (++k[i] <= hi[i]) break;
                k[i] = lo[i];
            }
            if (i == d_) return;
        }
    }

    int d_;
    double cell_ = 0.0;
    std::unordered_map<std::uint64_t, std::vector<std::size_t>> cells_;
};

}  // namespace detail

/// log2 of the size-condition slack: both must be >= 0 for a candidate to pass.
/// (a) r^-eps >= K 2^(alpha-eps) eta(D) (4 2^P)^(alpha-eps) / floor
/// (b) r^-eps >= rho_{q+1}^(-d/tau_d)
inline std::pair<double, double> size_condition_margins(double log2_r, int global_level, const SelectionRules& rules)
{
    const auto& e = rules.eset;
    const double a = e.alpha - e.epsilon;
    const double lhs = -e.epsilon * log2_r;
    const double need_a = std::log2(e.mass_constant) + a + std::log2(rules.host_eta) + a * (2.0 + global_level) -
                          std::log2(rules.mass_floor);
    const double need_b = -(rules.profile.dim() / rules.profile.back()) * std::log2(rules.next_rho);
    return {lhs - need_a, lhs - need_b};
}

/// Greedy selection inside one host cube, in the cube's frame. The stream must
/// deliver non-increasing radii; each accepted candidate is E-set admissible for
/// mu^D, has 4r <= rho_q, and its L is disjoint from earlier ones.
inline Selection select_generation(const HostCube& host, const SelectionRules& rules, const CandidateStream& stream,
                                   Rng& rng)
{
    rules.eset.validate();
    const int d = host.mu.d;
    require(rules.profile.dim() == d, "select_generation: profile dimension mismatch");
    Selection out;
    auto& st = out.stats;
    const double r_max = rules.eset.rho / 4.0;
    const double r_min = std::ldexp(1.0, -rules.eset.probe_depth) / 4.0;
    // lattice level of the thinnest side, computed in logs so tiny sides do not underflow
    auto lattice_level_of = [&](double log2_r) {
        const double log2_side = rules.profile.back() * (log2_r - host.global_level) + host.global_level;
        return -static_cast<int>(std::floor(log2_side - 3.0 - 0.5 * std::log2(static_cast<double>(d))));
    };
    if (rules.need_lattice && lattice_level_of(std::log2(r_max)) > rules.max_lattice_level)
        throw MassFloorError("select_generation: admissible cubes of every allowed radius lie below double resolution "
                             "of the host frame (lattice level " +
                                 std::to_string(lattice_level_of(std::log2(r_max))) + ")",
                             0.0);
    std::vector<Ball> rejected;  // overlap rejections, for the cover check
    detail::SelectionGrid grid(d);
    double prev = kLog2Inf;

    while (true) {
        if (st.draws >= rules.max_draws || st.tests >= rules.max_tests) {
            st.exhausted = true;
            break;
        }
        const auto cand = stream();
        if (!cand) {
            st.exhausted = true;
            break;
        }
        ++st.draws;
        require(cand->radius <= prev * (1 + 1e-12), "select_generation: stream radii must be non-increasing");
        prev = cand->radius;
        if (cand->radius > r_max) {
            ++st.too_large;
            continue;
        }
        if (cand->radius < r_min) {
            st.exhausted = true;
            break;
        }
        const Ball L(cand->center, 4.0 * cand->radius);
        const bool overlap = grid.meets(L, out.rects);
        if (overlap) {
            ++st.rejected_overlap;
            rejected.push_back(L);
            continue;
        }
        ++st.tests;
        if (!e_set_member(host.mu, cand->center, rules.eset)) {
            ++st.rejected_eset;
            continue;
        }
        SelectedRect sel;
        sel.selection = L;
        sel.log2_radius = cand->log2_radius;
        sel.tag = cand->tag;
        sel.rect.anchor = cand->center;
        sel.rect.sides = SmallVec<double>(d);
        for (int i = 0; i < d; ++i)
            sel.rect.sides[i] = std::exp2(rules.profile[i] * cand->log2_radius + host.global_level);
        sel.rect.rotation = rules.rotation.at(d, cand->tag);
        sel.rect.base_radius = cand->radius;
        sel.rect.profile = rules.profile;
        Box lbox{L.center, L.center};
        for (int i = 0; i < d; ++i) {
            lbox.lo[i] -= L.radius;
            lbox.hi[i] += L.radius;
        }
        if (!rectangle_inside_box(sel.rect, lbox)) {
            ++st.rejected_lattice;
            continue;
        }
        if (rules.need_lattice) {
            bool ok = lattice_level_of(cand->log2_radius + host.global_level) <= rules.max_lattice_level;
            try {
                if (ok) {
                    const auto lat = admissible_lattice(sel.rect);
                    ok = !lat.empty() && lat.level <= rules.max_lattice_level;
                }
            } catch (const BudgetExceeded&) {
                ok = false;
            }
            if (!ok) {
                ++st.rejected_lattice;
                continue;
            }
        }
        const auto [ma, mb] = size_condition_margins(cand->log2_radius, host.global_level, rules);
        sel.size_ok = ma >= 0.0 && mb >= 0.0;
        if (rules.enforce_size && !sel.size_ok) {
            ++st.rejected_size;
            continue;
        }
        if (host.mu.kind == MeasureKind::Lebesgue) {
            sel.mass_lower = sel.mass_upper = ball_mass_upper(host.mu, L);
        } else {
            const int level = std::clamp(static_cast<int>(std::ceil(-std::log2(L.radius))) + rules.eset.refine, 0, 62);
            const auto b = ball_mass_bounds(host.mu, L, level);
            sel.mass_lower = b.lower;
            sel.mass_upper = b.upper;
        }
        st.retained_lower += sel.mass_lower;
        st.retained_upper += sel.mass_upper;
        grid.insert(sel.selection, out.rects.size());
        out.rects.push_back(std::move(sel));
        if (st.retained_lower >= rules.mass_target) break;
    }

    std::vector<Ball> chosen, pool;
    for (const auto& s : out.rects) chosen.push_back(s.selection);
    pool = chosen;
    pool.insert(pool.end(), rejected.begin(), rejected.end());
    st.check = verify_disjoint_cover(pool, chosen, 1000, rng.next());

    if (st.retained_lower < rules.mass_floor)
        throw MassFloorError("select_generation: retained mass fraction " + std::to_string(st.retained_lower) +
                                 " below floor " + std::to_string(rules.mass_floor),
                             st.retained_lower);
    return out;
}

// ---------------------------------------------------------------------------
// Ball streams restricted to a host cube

/// Iid sequence seen inside D: arrivals of the thinned index process n with
/// geometric gaps of parameter mu(D), starting where 4 r_n 2^P <= rho.
inline CandidateStream iid_cube_stream(const BallSequenceSpec& seq, double gamma, const HostCube& host, double rho,
                                       std::shared_ptr<Rng> rng)
{
    require(gamma > 0.0, "iid stream: gamma must be positive");
    require(host.log2_mass > -1000.0, "iid stream: host cube mass underflows");
    const double p = std::exp2(host.log2_mass);
    const double log2c = std::log2(seq.c);
    const double log2_start = gamma * (log2c + 2.0 + host.global_level - std::log2(rho));
    double n = std::exp2(log2_start);
    if (p >= 1.0) n = std::max(0.0, std::ceil(n) - 1.0);
    const double log1mp = p >= 1.0 ? 0.0 : std::log1p(-p);
    const int depth = 52 / host.mu.d;
    auto mu = host.mu;
    const int P = host.global_level;
    return [=]() mutable -> std::optional<Candidate> {
        const double gap = p >= 1.0 ? 1.0 : 1.0 + std::floor(std::log(rng->uniform_open0()) / log1mp);
        n += gap;
        Candidate c;
        c.log2_radius = log2c - std::log2(n) / gamma;
        c.radius = std::exp2(c.log2_radius + P);
        c.center = sample_point(mu, *rng, depth);
        c.tag = rng->next();
        return c;
    };
}

/// Balls of an enumerated sequence (explicit list or Jarnik) whose centers fall in D.
inline CandidateStream enumerated_cube_stream(const std::vector<Ball>& balls, const HostCube& host)
{
    require(host.global_level <= 50, "enumerated stream: host cube too deep for global coordinates");
    std::vector<std::size_t> order;
    const double side = std::ldexp(1.0, -host.global_level);
    for (std::size_t n = 0; n < balls.size(); ++n) {
        bool in = true;
        for (int i = 0; i < host.mu.d && in; ++i)
            in = balls[n].center[i] >= host.global_corner[i] && balls[n].center[i] < host.global_corner[i] + side;
        if (in && balls[n].radius > 0.0) order.push_back(n);
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return balls[a].radius > balls[b].radius; });
    std::size_t next = 0;
    const int P = host.global_level;
    const Point corner = host.global_corner;
    return [=, &balls]() mutable -> std::optional<Candidate> {
        if (next >= order.size()) return std::nullopt;
        const Ball& b = balls[order[next++]];
        Candidate c;
        c.center = b.center;
        for (int i = 0; i < c.center.size(); ++i) c.center[i] = std::ldexp(b.center[i] - corner[i], P);
        c.log2_radius = std::log2(b.radius);
        c.radius = std::ldexp(b.radius, P);
        c.tag = order[next - 1];
        return c;
    };
}

/// Reduced p/q inside a one-dimensional D, q ascending from the first q with 4 q^-2 2^P <= rho.
inline CandidateStream jarnik_cube_stream(const BallSequenceSpec& seq, const HostCube& host, double rho)
{
    require(host.mu.d == 1, "jarnik stream: only defined in dimension 1");
    require(host.global_level <= 50, "jarnik stream: host cube too deep for global coordinates");
    const double a = host.global_corner[0], side = std::ldexp(1.0, -host.global_level);
    const auto q0 = static_cast<std::int64_t>(std::ceil(std::sqrt(4.0 * std::ldexp(1.0, host.global_level) / rho)));
    std::int64_t q = std::max(seq.q_min, q0), p = -1, p_end = -2;
    const int P = host.global_level;
    return [=]() mutable -> std::optional<Candidate> {
        while (true) {
            if (p > p_end) {
                if (p_end != -2) ++q;
                if (q > seq.q_max) return std::nullopt;
                p = static_cast<std::int64_t>(std::ceil(a * static_cast<double>(q)));
                p_end = static_cast<std::int64_t>(std::ceil((a + side) * static_cast<double>(q))) - 1;
                if (p > p_end) {
                    p_end = p - 1;
                    continue;
                }
            }
            const std::int64_t pp = p++;
            if (std::gcd(pp, q) != 1) continue;
            Candidate c;
            c.center = Point{std::ldexp(static_cast<double>(pp) / static_cast<double>(q) - a, P)};
            c.log2_radius = -2.0 * std::log2(static_cast<double>(q));
            c.radius = std::exp2(c.log2_radius + P);
            c.tag = static_cast<std::uint64_t>(q) * 1000003u + static_cast<std::uint64_t>(pp);
            return c;
        }
    };
}

// ---------------------------------------------------------------------------
// The tree

struct CantorParams {
    int depth = 2;
    EpsilonSchedule schedule;
    double mass_floor = 0.1;
    double mass_target = 0.25;
    double mass_constant = 0.0;        // E-set constant K; <= 0 selects 2^alpha
    int probe_span = 8;                // E-set probes cover rho down to rho 2^-span
    int scale_gap = 5;                 // rho_q <= 2^-scale_gap: selection radii sit this many octaves below the host side
    int refine = 6;
    int rho_samples = 1000;
    double rho_acceptance = 0.5;
    std::int64_t max_draws = std::int64_t{1} << 24;  // per host cube
    std::int64_t max_tests = std::int64_t{1} << 22;  // E-set evaluations per host cube
    std::int64_t eager_lattice_limit = 64;
    std::int64_t eager_cube_budget = 1 << 16;
    std::int64_t cube_budget = 1 << 21;
    std::int64_t query_budget = 1 << 22;
    bool enforce_size = false;
    unsigned threads = 1;

    void validate() const
    {
        require(depth >= 1, "cantor: depth must be >= 1");
        require(mass_floor > 0.0 && mass_floor <= mass_target && mass_target <= 1.0,
                "cantor: need 0 < mass_floor <= mass_target <= 1");
        require(probe_span >= 0 && refine >= 0, "cantor: probe_span and refine must be >= 0");
        require(scale_gap >= 1 && scale_gap <= 40, "cantor: scale_gap must lie in [1, 40]");
        require(rho_samples > 0 && rho_acceptance > 0.0 && rho_acceptance <= 1.0, "cantor: bad rho calibration");
        require(max_draws > 0 && max_tests > 0 && cube_budget > 0 && query_budget > 0, "cantor: budgets must be positive");
    }
};

/// Rectangles of generation q live in host cubes of generation q-1; the unit
/// cube is the generation-0 host. Cubes of C(R) are created on demand and are
/// identified by a path hash, so the tree does not depend on creation order.
struct CantorCube {
    std::int64_t parent = -1;  // rect, -1 for the unit cube
    std::int64_t slot = 0;     // linear index in the parent's lattice
    DyadicCube relative;       // in the parent rectangle's host frame
    HostCube host;
    double eta = 1.0;
    int generation = 0;
    bool expanded = false;
    std::vector<std::int64_t> children;
    SelectionStats stats;
};

struct CantorRect {
    std::int64_t host = 0;
    int generation = 1;
    int ordinal = 0;
    std::uint64_t key = 0;
    SelectedRect data;
    double eta = 0.0;
    AdmissibleLattice lattice;  // empty for leaves
    std::unordered_map<std::int64_t, std::int64_t> cubes;
};

struct GenerationInfo {
    int generation = 0;
    double eps = 0.0;
    double rho = 0.0;
    int probe_depth = 0;
    double accepted_fraction = 0.0;
};

/// Ball in the frame of a host cube.
struct FramedBall {
    std::int64_t cube = 0;
    Point center;
    double radius = 0.0;
};

/// Per-generation count (capped at 2) of rectangles met by a query ball.
struct BallHits {
    std::vector<int> count;

    void add(int g, int n)
    {
        if (g < static_cast<int>(count.size())) count[g] = std::min(2, count[g] + n);
    }
    void add_below(int g, int n)
    {
        for (int q = g; q < static_cast<int>(count.size()); ++q) add(q, n);
    }
    /// Largest p such that every generation <= p is met by one rectangle only.
    int unique_depth() const
    {
        for (int q = 1; q < static_cast<int>(count.size()); ++q)
            if (count[q] >= 2) return q - 1;
        return static_cast<int>(count.size()) - 1;
    }
};

struct AuditReport {
    std::int64_t cubes = 0;
    std::int64_t rects = 0;
    double conservation_error = 0.0;
    std::int64_t separation_pairs = 0;
    std::int64_t separation_violations = 0;
    std::int64_t nesting_violations = 0;
    std::int64_t size_order_violations = 0;
    std::int64_t greedy_checks = 0;
    std::int64_t greedy_sampled = 0;
    std::int64_t greedy_violations = 0;
    // explicit-constant bounds (required)
    std::int64_t majorect_violations = 0;
    std::int64_t majomes_violations = 0;
    double majorect_margin = -kLog2Inf;  // max log2(lhs / rhs)
    double majomes_margin = -kLog2Inf;
    // absorbed-constant bounds (reported)
    std::int64_t majorect_strict_violations = 0;
    std::int64_t majomes_strict_violations = 0;
    double majorect_strict_margin = -kLog2Inf;
    double majomes_strict_margin = -kLog2Inf;
    std::int64_t size_condition_failures = 0;

    bool conservation_ok() const { return conservation_error <= 1e-12; }
    bool pass() const
    {
        return conservation_ok() && separation_violations == 0 && nesting_violations == 0 &&
               size_order_violations == 0 && greedy_violations == 0 && majorect_violations == 0 &&
               majomes_violations == 0;
    }
    bool strict_pass() const { return majorect_strict_violations == 0 && majomes_strict_violations == 0; }
};

class CantorTree {
public:
    CantorTree(MeasureSpec mu, BallSequenceSpec seq, ShrinkProfile profile, CantorParams params, std::uint64_t seed)
        : mu_(std::move(mu)), seq_(std::move(seq)), profile_(std::move(profile)), params_(params), seed_(seed)
    {
        params_.validate();
        seq_.validate();
        const int d = mu_.d;
        require(profile_.dim() == d, "cantor: profile dimension must match the measure");
        require(d <= 4, "cantor: supported for d <= 4 (measured admissible constant)");
        alpha_ = dimension(mu_);
        s_ = s_value(alpha_, profile_).s;
        require(s_ > 0.0, "cantor: s(mu, tau) must be positive");
        params_.schedule.validate(s_);
        K_ = params_.mass_constant > 0.0 ? params_.mass_constant : std::exp2(alpha_);
        kappa_ = admissible_count_constant(d);
        if (seq_.kind == SequenceKind::Iid) gamma_ = effective_gamma(seq_, mu_);
        if (seq_.kind == SequenceKind::Jarnik) require(d == 1, "cantor: jarnik sequence needs d = 1");

        for (int q = 0; q <= params_.depth + 1; ++q) {
            GenerationInfo g;
            g.generation = q;
            g.eps = params_.schedule.eps(q);
            if (q >= 1) {
                ESetParams e;
                e.alpha = alpha_;
                e.epsilon = std::min(g.eps, alpha_);
                e.mass_constant = K_;
                e.refine = params_.refine;
                Rng rng(mix_seed(seed_, 0x9e5e7000u + static_cast<std::uint64_t>(q)));
                const auto choice = adaptive_rho(mu_, e, params_.probe_span, params_.rho_samples, rng,
                                                 params_.rho_acceptance);
                g.rho = std::min(choice.rho, std::ldexp(1.0, -params_.scale_gap));
                e.rho = g.rho;
                g.probe_depth = std::max(choice.probe_depth, e.first_probe() + params_.probe_span);
                g.accepted_fraction = choice.accepted_fraction;
            }
            gens_.push_back(g);
        }

        CantorCube root;
        root.relative = DyadicCube::root(d);
        root.host.mu = mu_;
        root.host.global_corner = Point(d, 0.0);
        root.host.key = mix_seed(seed_, 0xc0be);
        cubes_.push_back(std::move(root));
    }

    const MeasureSpec& measure() const { return mu_; }
    const ShrinkProfile& profile() const { return profile_; }
    const CantorParams& params() const { return params_; }
    const BallSequenceSpec& sequence() const { return seq_; }
    std::uint64_t seed() const { return seed_; }
    int depth() const { return params_.depth; }
    int dim() const { return mu_.d; }
    double alpha() const { return alpha_; }
    double s() const { return s_; }
    double mass_constant() const { return K_; }
    double kappa() const { return kappa_; }
    const std::vector<GenerationInfo>& generations() const { return gens_; }
    const std::deque<CantorCube>& cubes() const { return cubes_; }
    const std::deque<CantorRect>& rects() const { return rects_; }

    SelectionRules rules_for(const CantorCube& cube) const
    {
        const int q = cube.generation + 1;
        SelectionRules r;
        r.profile = profile_;
        r.rotation = seq_.rotation;
        r.eset.alpha = alpha_;
        r.eset.epsilon = std::min(gens_[q].eps, alpha_);
        r.eset.rho = gens_[q].rho;
        r.eset.probe_depth = gens_[q].probe_depth;
        r.eset.mass_constant = K_;
        r.eset.refine = params_.refine;
        r.mass_floor = params_.mass_floor;
        r.mass_target = params_.mass_target;
        r.max_draws = params_.max_draws;
        r.max_tests = params_.max_tests;
        r.need_lattice = q < params_.depth;
        r.enforce_size = params_.enforce_size;
        r.host_eta = cube.eta;
        r.next_rho = gens_[q + 1].rho;
        return r;
    }

    /// Selection of the next generation inside a cube; pure in the cube's data.
    Selection compute_selection(std::int64_t id) const
    {
        const CantorCube& cube = cubes_[id];
        const auto rules = rules_for(cube);
        CandidateStream stream;
        switch (seq_.kind) {
        case SequenceKind::Iid:
            stream = iid_cube_stream(seq_, gamma_, cube.host, rules.eset.rho,
                                     std::make_shared<Rng>(mix_seed(cube.host.key, 2)));
            break;
        case SequenceKind::Jarnik: stream = jarnik_cube_stream(seq_, cube.host, rules.eset.rho); break;
        case SequenceKind::ExplicitList: stream = enumerated_cube_stream(seq_.balls, cube.host); break;
        }
        Rng rng(mix_seed(cube.host.key, 3));
        try {
            return select_generation(cube.host, rules, stream, rng);
        } catch (const MassFloorError& e) {
            throw MassFloorError(std::string(e.what()) + " (generation " + std::to_string(cube.generation + 1) +
                                     ", host level " + std::to_string(cube.host.global_level) + ")",
                                 e.achieved());
        }
    }

    void expand(std::int64_t id)
    {
        if (cubes_[id].expanded) return;
        commit(id, compute_selection(id));
    }

    /// Expands cubes in parallel; results are committed in input order.
    void expand_all(const std::vector<std::int64_t>& ids)
    {
        std::vector<std::int64_t> todo;
        for (auto id : ids)
            if (!cubes_[id].expanded) todo.push_back(id);
        const unsigned threads = std::max(1u, std::min<unsigned>(params_.threads == 0 ? default_threads() : params_.threads,
                                                                 static_cast<unsigned>(todo.size())));
        std::vector<std::optional<Selection>> out(todo.size());
        std::vector<std::exception_ptr> errors(todo.size());
        auto work = [&](unsigned w) {
            for (std::size_t i = w; i < todo.size(); i += threads) {
                try {
                    out[i] = compute_selection(todo[i]);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        };
        if (threads <= 1) {
            work(0);
        } else {
            std::vector<std::thread> pool;
            for (unsigned w = 0; w < threads; ++w) pool.emplace_back(work, w);
            for (auto& t : pool) t.join();
        }
        for (std::size_t i = 0; i < todo.size(); ++i) {
            if (errors[i]) std::rethrow_exception(errors[i]);
            commit(todo[i], std::move(*out[i]));
        }
    }

    /// Cube of C(R) at a linear lattice slot, created on first use.
    std::int64_t child_cube(std::int64_t rid, std::int64_t slot)
    {
        auto& R = rects_[rid];
        if (auto it = R.cubes.find(slot); it != R.cubes.end()) return it->second;
        require(!R.lattice.empty() && slot >= 0 && slot < R.lattice.size(), "cantor: bad lattice slot");
        if (static_cast<std::int64_t>(cubes_.size()) >= params_.cube_budget)
            throw BudgetExceeded("cantor: cube budget exceeded");
        const CantorCube& host = cubes_[R.host];
        IndexVec j(dim());
        std::int64_t rest = slot;
        for (int i = 0; i < dim(); ++i) {
            j[i] = rest % R.lattice.counts[i];
            rest /= R.lattice.counts[i];
        }
        CantorCube c;
        c.parent = rid;
        c.slot = slot;
        c.relative = R.lattice.cube(j);
        c.generation = R.generation;
        c.eta = R.eta / static_cast<double>(R.lattice.size());
        c.host.mu = rescale(host.host.mu, c.relative);
        c.host.global_level = host.host.global_level + c.relative.level;
        c.host.log2_mass = host.host.log2_mass + log2_cube_mass(host.host.mu, c.relative);
        c.host.global_corner = host.host.global_corner;
        for (int i = 0; i < dim(); ++i)
            c.host.global_corner[i] += std::ldexp(static_cast<double>(c.relative.index[i]), -c.host.global_level);
        c.host.key = mix_seed(R.key, static_cast<std::uint64_t>(slot) + 1);
        cubes_.push_back(std::move(c));
        const auto id = static_cast<std::int64_t>(cubes_.size()) - 1;
        R.cubes.emplace(slot, id);
        return id;
    }

    /// Eager part of the construction: the unit cube, then every cube of C(R)
    /// for rectangles with small lattices, generation by generation, within budget.
    void build_eager()
    {
        expand(0);
        std::int64_t eager = 0;
        std::vector<std::int64_t> frontier = cubes_[0].children;
        for (int q = 1; q < params_.depth; ++q) {
            std::vector<std::int64_t> todo;
            for (auto rid : frontier) {
                const auto n = rects_[rid].lattice.size();
                if (n > params_.eager_lattice_limit || eager + n > params_.eager_cube_budget) continue;
                eager += n;
                for (std::int64_t slot = 0; slot < n; ++slot) todo.push_back(child_cube(rid, slot));
            }
            expand_all(todo);
            std::vector<std::int64_t> next;
            for (auto id : todo)
                for (auto rid : cubes_[id].children) next.push_back(rid);
            frontier = std::move(next);
        }
    }

    /// eta of a ball given in the coordinates of [0,1]^d.
    double eta_of_ball(const Ball& c, BallHits* hits = nullptr) { return eta_of_ball(FramedBall{0, c.center, c.radius}, hits); }

    /// eta_P(C): rectangles inside C and cubes of C(R) inside C count whole;
    /// partial cubes are descended; partial leaves count their overlapped volume fraction.
    double eta_of_ball(const FramedBall& c, BallHits* hits = nullptr)
    {
        Query q;
        q.hits.count.assign(params_.depth + 1, 0);
        std::int64_t id = c.cube;
        Point x = c.center;
        double r = c.radius;
        while (true) {
            q.chain.push_back({id, x, r});
            const CantorCube& cube = cubes_[id];
            if (cube.parent < 0) break;
            const int p = cube.relative.level;
            for (int i = 0; i < dim(); ++i) x[i] = std::ldexp(static_cast<double>(cube.relative.index[i]) + x[i], -p);
            r = std::ldexp(r, -p);
            id = rects_[cube.parent].host;
        }
        const auto& top = q.chain.back();
        const double eta = visit_cube(top.cube, top.center, top.radius, q);
        if (hits) *hits = q.hits;
        return eta;
    }

    /// Point drawn from eta_P, in the frame of its leaf's host cube.
    FramedBall sample_point(Rng& rng, std::int64_t* leaf = nullptr)
    {
        std::int64_t id = 0;
        std::vector<double> w;
        while (true) {
            expand(id);
            const auto& kids = cubes_[id].children;
            w.clear();
            for (auto rid : kids) w.push_back(rects_[rid].eta);
            const std::int64_t rid = kids[static_cast<std::size_t>(rng.categorical(w))];
            const CantorRect& R = rects_[rid];
            if (R.generation == params_.depth) {
                Point u(dim());
                for (auto& t : u) t = rng.uniform();
                if (leaf) *leaf = rid;
                return {id, R.data.rect.map(u), 0.0};
            }
            const auto n = R.lattice.size();
            const auto slot = std::min<std::int64_t>(n - 1, static_cast<std::int64_t>(rng.uniform() * static_cast<double>(n)));
            id = child_cube(rid, slot);
        }
    }

    AuditReport audit() const;
    void write_jsonl(std::ostream& os) const;
    nlohmann::json summary() const;

private:
    struct ChainEntry {
        std::int64_t cube;
        Point center;
        double radius;
    };
    struct Query {
        std::vector<ChainEntry> chain;
        BallHits hits;
        std::int64_t visited = 0;
    };

    void commit(std::int64_t id, Selection sel)
    {
        CantorCube& cube = cubes_[id];
        if (cube.expanded) return;
        CompensatedSum total;
        for (const auto& s : sel.rects) total.add(s.mass_upper);
        const double F = total.value();
        const double eta = cube.eta;
        const int q = cube.generation + 1;
        const std::uint64_t key = cube.host.key;
        std::vector<std::int64_t> kids;
        for (std::size_t k = 0; k < sel.rects.size(); ++k) {
            CantorRect R;
            R.host = id;
            R.generation = q;
            R.ordinal = static_cast<int>(k);
            R.key = mix_seed(key, 0x7ec7000u + k);
            R.data = std::move(sel.rects[k]);
            R.eta = eta * (R.data.mass_upper / F);
            if (q < params_.depth) R.lattice = admissible_lattice(R.data.rect);
            rects_.push_back(std::move(R));
            kids.push_back(static_cast<std::int64_t>(rects_.size()) - 1);
        }
        CantorCube& c = cubes_[id];
        c.children = std::move(kids);
        c.stats = sel.stats;
        c.expanded = true;
    }

    const ChainEntry* on_chain(const Query& q, std::int64_t id) const
    {
        for (const auto& e : q.chain)
            if (e.cube == id) return &e;
        return nullptr;
    }

    double visit_cube(std::int64_t id, const Point& c, double rho, Query& q)
    {
        if (++q.visited > params_.query_budget) throw BudgetExceeded("cantor: query budget exceeded");
        bool contains = true;
        for (int i = 0; i < dim(); ++i) {
            const double lo = c[i] - rho, hi = c[i] + rho;
            if (hi <= 0.0 || lo >= 1.0) return 0.0;
            if (lo > 0.0 || hi < 1.0) contains = false;
        }
        if (contains) {
            const int g = cubes_[id].generation + 1;
            if (q.hits.count[g] < 2) {
                expand(id);
                const auto n = static_cast<int>(std::min<std::size_t>(2, cubes_[id].children.size()));
                q.hits.add(g, n);
                q.hits.add_below(g + 1, n);
            }
            return cubes_[id].eta;
        }
        expand(id);
        CompensatedSum sum;
        const std::vector<std::int64_t> kids = cubes_[id].children;
        for (auto rid : kids) sum.add(visit_rect(rid, c, rho, q));
        return sum.value();
    }

    double visit_rect(std::int64_t rid, const Point& c, double rho, Query& q)
    {
        const int d = dim();
        Box cb{c, c};
        for (int i = 0; i < d; ++i) {
            cb.lo[i] -= rho;
            cb.hi[i] += rho;
        }
        const CantorRect& R = rects_[rid];
        if (!box_meets_rectangle(cb, R.data.rect)) return 0.0;
        q.hits.add(R.generation, 1);
        if (rectangle_inside_box(R.data.rect, cb)) {
            if (R.generation < params_.depth) q.hits.add_below(R.generation + 1, R.lattice.size() >= 2 ? 2 : 1);
            return R.eta;
        }
        if (R.generation == params_.depth) return R.eta * overlap_fraction(R.data.rect, cb);

        const AdmissibleLattice lat = R.lattice;
        const double eta = R.eta;
        const double share = eta / static_cast<double>(lat.size());
        const int p = lat.level;
        const double n = std::ldexp(1.0, p);
        IndexVec meet_lo(d), meet_hi(d), in_lo(d), in_hi(d);
        double n_meet = 1.0, n_in = 1.0;
        auto to_slot_lo = [&](double k, int i) {
            return static_cast<std::int64_t>(std::ceil((k - static_cast<double>(lat.first[i])) / kAdmissibleSpacing));
        };
        auto to_slot_hi = [&](double k, int i) {
            return static_cast<std::int64_t>(std::floor((k - static_cast<double>(lat.first[i])) / kAdmissibleSpacing));
        };
        for (int i = 0; i < d; ++i) {
            const double a = std::clamp(std::ldexp(cb.lo[i], p), -2.0, n + 2.0);
            const double b = std::clamp(std::ldexp(cb.hi[i], p), -2.0, n + 2.0);
            // cell k has interior meeting (a, b) iff floor(a) <= k <= ceil(b) - 1
            meet_lo[i] = std::max<std::int64_t>(0, to_slot_lo(std::floor(a), i));
            meet_hi[i] = std::min<std::int64_t>(lat.counts[i] - 1, to_slot_hi(std::ceil(b) - 1.0, i));
            in_lo[i] = std::max<std::int64_t>(0, to_slot_lo(std::ceil(a), i));
            in_hi[i] = std::min<std::int64_t>(lat.counts[i] - 1, to_slot_hi(std::floor(b) - 1.0, i));
            n_meet *= static_cast<double>(std::max<std::int64_t>(0, meet_hi[i] - meet_lo[i] + 1));
            n_in *= static_cast<double>(std::max<std::int64_t>(0, in_hi[i] - in_lo[i] + 1));
        }
        if (n_meet == 0.0) return 0.0;
        CompensatedSum sum;
        if (n_in > 0.0) {
            sum.add(share * n_in);
            q.hits.add_below(R.generation + 1, n_in >= 2.0 ? 2 : 1);
        }
        if (n_meet - n_in > static_cast<double>(params_.query_budget))
            throw BudgetExceeded("cantor: query budget exceeded");

        // shell: lattice cells meeting C but not inside it
        IndexVec j(d);
        std::function<void(int, bool)> walk = [&](int i, bool inside_so_far) {
            auto visit = [&](std::int64_t v) {
                j[i] = v;
                if (i + 1 < d) {
                    walk(i + 1, inside_so_far && v >= in_lo[i] && v <= in_hi[i]);
                    return;
                }
                std::int64_t slot = 0, stride = 1;
                for (int a = 0; a < d; ++a) {
                    slot += j[a] * stride;
                    stride *= lat.counts[a];
                }
                const auto cid = child_cube(rid, slot);
                if (const ChainEntry* e = on_chain(q, cid)) {
                    sum.add(visit_cube(cid, e->center, e->radius, q));
                    return;
                }
                const DyadicCube& rel = cubes_[cid].relative;
                Point x(d);
                for (int a = 0; a < d; ++a) x[a] = std::ldexp(c[a], p) - static_cast<double>(rel.index[a]);
                sum.add(visit_cube(cid, x, std::ldexp(rho, p), q));
            };
            const bool last = i + 1 == d;
            if (last && inside_so_far && in_lo[i] <= in_hi[i]) {
                for (std::int64_t v = meet_lo[i]; v < in_lo[i]; ++v) visit(v);
                for (std::int64_t v = in_hi[i] + 1; v <= meet_hi[i]; ++v) visit(v);
            } else {
                for (std::int64_t v = meet_lo[i]; v <= meet_hi[i]; ++v) visit(v);
            }
        };
        walk(0, true);
        return sum.value();
    }

    MeasureSpec mu_;
    BallSequenceSpec seq_;
    ShrinkProfile profile_;
    CantorParams params_;
    std::uint64_t seed_;
    double alpha_ = 0.0, s_ = 0.0, K_ = 1.0, kappa_ = 1.0, gamma_ = 0.0;
    std::vector<GenerationInfo> gens_;
    std::deque<CantorCube> cubes_;
    std::deque<CantorRect> rects_;
};

namespace detail {

template <class V>
nlohmann::json to_array(const V& v)
{
    nlohmann::json a = nlohmann::json::array();
    for (const auto& x : v) a.push_back(x);
    return a;
}

}  // namespace detail

inline AuditReport CantorTree::audit() const
{
    AuditReport rep;
    const int d = dim();
    const double tau_d = profile_.back();
    double anis = 0.0;  // sum_i (tau_d - tau_i)
    for (int i = 0; i < d; ++i) anis += tau_d - profile_[i];
    rep.cubes = static_cast<std::int64_t>(cubes_.size());
    rep.rects = static_cast<std::int64_t>(rects_.size());
    const Box unit{Point(d, 0.0), Point(d, 1.0)};

    for (std::size_t id = 0; id < cubes_.size(); ++id) {
        const CantorCube& D = cubes_[id];
        if (D.parent >= 0 && !box_inside_rectangle(cube_box(D.relative), rects_[D.parent].data.rect))
            ++rep.nesting_violations;
        if (!D.expanded) continue;
        ++rep.greedy_checks;
        if (!D.stats.check.exhaustive) ++rep.greedy_sampled;
        if (!D.stats.check.ok()) ++rep.greedy_violations;

        CompensatedSum eta, mass;
        for (auto rid : D.children) {
            eta.add(rects_[rid].eta);
            mass.add(rects_[rid].data.mass_upper);
        }
        rep.conservation_error = std::max(rep.conservation_error, std::abs(eta.value() - D.eta));
        const double log2_F = std::log2(mass.value());
        const int q = D.generation + 1;
        const double e = std::min(gens_[q].eps, alpha_);

        for (std::size_t a = 0; a < D.children.size(); ++a) {
            const CantorRect& R = rects_[D.children[a]];
            const auto& sel = R.data;
            for (std::size_t b = a + 1; b < D.children.size(); ++b) {
                const auto& other = rects_[D.children[b]].data;
                ++rep.separation_pairs;
                if (balls_intersect(Ball(sel.selection.center, 3.0 * sel.rect.base_radius),
                                    Ball(other.selection.center, 3.0 * other.rect.base_radius)))
                    ++rep.separation_violations;
            }
            if (!rectangle_inside_box(sel.rect, unit)) ++rep.nesting_violations;
            if (4.0 * sel.rect.base_radius > gens_[q].rho * (1.0 + 1e-12)) ++rep.size_order_violations;
            if (!sel.size_ok) ++rep.size_condition_failures;

            const double log2_eta = std::log2(R.eta);
            const double rect_bound = std::log2(D.eta) + std::log2(K_) +
                                      (alpha_ - e) * std::log2(8.0 * sel.rect.base_radius) - log2_F;
            rep.majorect_margin = std::max(rep.majorect_margin, log2_eta - rect_bound);
            if (log2_eta > rect_bound + 1e-9) ++rep.majorect_violations;
            const double strict_rect = (alpha_ - 2.0 * e) * sel.log2_radius;
            rep.majorect_strict_margin = std::max(rep.majorect_strict_margin, log2_eta - strict_rect);
            if (log2_eta > strict_rect) ++rep.majorect_strict_violations;

            if (R.lattice.empty()) continue;
            double shape = 0.0;  // log2 prod_i (l_i / l_d)
            for (int i = 0; i < d; ++i) shape += std::log2(sel.rect.sides[i] / sel.rect.sides[d - 1]);
            const double log2_count = std::log2(static_cast<double>(R.lattice.size()));
            const double mes_margin = shape - std::log2(kappa_) - log2_count;
            rep.majomes_margin = std::max(rep.majomes_margin, mes_margin);
            if (mes_margin > 1e-9) ++rep.majomes_violations;
            const double strict_mes = std::log2(kappa_) + (alpha_ - 2.0 * e + anis) * sel.log2_radius;
            const double log2_cube_eta = log2_eta - log2_count;
            rep.majomes_strict_margin = std::max(rep.majomes_strict_margin, log2_cube_eta - strict_mes);
            if (log2_cube_eta > strict_mes) ++rep.majomes_strict_violations;
        }
    }

    // tripled base balls across the cubes of one rectangle, in that rectangle's host frame
    for (const CantorRect& R : rects_) {
        if (R.cubes.size() < 2) continue;
        std::vector<std::pair<Ball, std::int64_t>> balls;
        for (const auto& [slot, cid] : R.cubes) {
            const CantorCube& D = cubes_[cid];
            if (!D.expanded) continue;
            const double scale = std::ldexp(1.0, -D.relative.level);
            for (auto rid : D.children) {
                const auto& sel = rects_[rid].data;
                Point x(d);
                for (int i = 0; i < d; ++i)
                    x[i] = (static_cast<double>(D.relative.index[i]) + sel.selection.center[i]) * scale;
                balls.emplace_back(Ball(x, 3.0 * sel.rect.base_radius * scale), cid);
            }
        }
        auto left = [](const Ball& b) { return b.center[0] - b.radius; };
        std::sort(balls.begin(), balls.end(), [&](const auto& a, const auto& b) { return left(a.first) < left(b.first); });
        // sweep along the first axis; pairs inside one cube were checked above
        for (std::size_t a = 0; a < balls.size(); ++a)
            for (std::size_t b = a + 1; b < balls.size(); ++b) {
                if (left(balls[b].first) > balls[a].first.center[0] + balls[a].first.radius) break;
                if (balls[a].second == balls[b].second) continue;
                ++rep.separation_pairs;
                if (balls_intersect(balls[a].first, balls[b].first)) ++rep.separation_violations;
            }
    }
    rep.conservation_error = std::max(rep.conservation_error, std::abs(cubes_[0].eta - 1.0));
    return rep;
}

inline void CantorTree::write_jsonl(std::ostream& os) const
{
    for (std::size_t id = 0; id < rects_.size(); ++id) {
        const CantorRect& R = rects_[id];
        const CantorCube& D = cubes_[R.host];
        const auto& rect = R.data.rect;
        Point global(dim());
        for (int i = 0; i < dim(); ++i)
            global[i] = D.host.global_corner[i] + std::ldexp(rect.anchor[i], -D.host.global_level);
        nlohmann::json j;
        j["id"] = id;
        j["parent"] = D.parent;
        j["generation"] = R.generation;
        j["host_cube"] = {{"id", R.host},
                          {"level", D.host.global_level},
                          {"corner", detail::to_array(D.host.global_corner)},
                          {"log2_mass", D.host.log2_mass},
                          {"eta", D.eta}};
        j["anchor"] = detail::to_array(rect.anchor);
        j["anchor_global"] = detail::to_array(global);
        j["sides"] = detail::to_array(rect.sides);
        j["log2_radius"] = R.data.log2_radius;
        j["rotation"] = rect.rotation.row_major();
        j["eta"] = R.eta;
        j["mu_L"] = R.data.mass_upper;
        j["admissible_cubes"] = R.lattice.size();
        os << j.dump() << "\n";
    }
}

inline nlohmann::json CantorTree::summary() const
{
    nlohmann::json out;
    out["alpha"] = alpha_;
    out["s"] = s_;
    out["mass_constant"] = K_;
    out["kappa"] = kappa_;
    out["depth"] = params_.depth;
    out["cubes"] = cubes_.size();
    out["rects"] = rects_.size();
    nlohmann::json gens = nlohmann::json::array();
    for (int q = 1; q <= params_.depth; ++q) {
        std::int64_t n = 0, size_ok = 0, hosts = 0;
        double lo = kLog2Inf, hi = -kLog2Inf, min_ret = kLog2Inf, sum_ret = 0.0;
        for (const auto& R : rects_) {
            if (R.generation != q) continue;
            ++n;
            size_ok += R.data.size_ok ? 1 : 0;
            lo = std::min(lo, R.data.log2_radius);
            hi = std::max(hi, R.data.log2_radius);
        }
        for (const auto& D : cubes_) {
            if (D.generation != q - 1 || !D.expanded) continue;
            ++hosts;
            min_ret = std::min(min_ret, D.stats.retained_lower);
            sum_ret += D.stats.retained_lower;
        }
        nlohmann::json g;
        g["generation"] = q;
        g["eps"] = gens_[q].eps;
        g["rho"] = gens_[q].rho;
        g["probe_depth"] = gens_[q].probe_depth;
        g["rho_accepted_fraction"] = gens_[q].accepted_fraction;
        g["expanded_hosts"] = hosts;
        g["rects"] = n;
        g["size_conditions_met"] = size_ok;
        if (n > 0) g["log2_radius_range"] = {lo, hi};
        if (hosts > 0) {
            g["retained_min"] = min_ret;
            g["retained_mean"] = sum_ret / static_cast<double>(hosts);
        }
        gens.push_back(g);
    }
    out["generations"] = gens;
    return out;
}

/// Constructs the unit-cube selection and the eager generations; deeper cubes
/// are materialized on demand by queries and sampling.
inline CantorTree build_cantor(const MeasureSpec& mu, const BallSequenceSpec& seq, const ShrinkProfile& profile,
                               const CantorParams& params, std::uint64_t seed)
{
    CantorTree tree(mu, seq, profile, params, seed);
    tree.build_eager();
    return tree;
}


// ---------------------------------------------------------------------------
// Mass distribution certificate

struct CertificateParams {
    int samples = 10000;
    int octave_lo = -1;  // radii 2^-(j+1) < r <= 2^-j for octaves j in [lo, hi]; -1 selects automatically
    int octave_hi = -1;
    double slack = 0.1;
    int pilot = 64;      // sampled leaves used to locate the leaf scale
};

struct OctaveRow {
    int octave = 0;
    std::int64_t samples = 0;
    double min_exponent = kLog2Inf;
    double mean_exponent = 0.0;
    int p = 0;                      // min over samples of the single-rectangle depth
    double threshold = 0.0;         // s - 4 eps_p - slack
    double log2_constant = -kLog2Inf;  // max log2(eta(C) / r^(s - 4 eps_p))
    bool pass = false;
};

struct CertificateReport {
    double s = 0.0;
    double slack = 0.0;
    double claimed = 0.0;           // s - 4 eps_P
    int depth = 0;
    int octave_lo = 0, octave_hi = 0;
    std::int64_t samples = 0;
    std::vector<OctaveRow> rows;
    bool pass = false;
};

/// Samples balls centered at eta-distributed points with log-uniform radii in
/// each octave, round-robin over octaves, and records exponent log eta(C) / log r.
inline CertificateReport certify_holder(CantorTree& tree, const CertificateParams& params, Rng& rng)
{
    require(params.samples > 0 && params.slack >= 0.0, "certify_holder: bad parameters");
    const auto& gens = tree.generations();
    CertificateReport rep;
    rep.s = tree.s();
    rep.slack = params.slack;
    rep.depth = tree.depth();
    rep.claimed = tree.s() - 4.0 * gens[tree.depth()].eps;

    int lo = params.octave_lo, hi = params.octave_hi;
    if (lo < 0 || hi < 0) {
        Rng pilot(mix_seed(tree.seed(), 0x9170u));
        std::vector<double> leaf, first;
        for (int i = 0; i < params.pilot; ++i) {
            std::int64_t rid = -1;
            tree.sample_point(pilot, &rid);
            leaf.push_back(-tree.rects()[rid].data.log2_radius);
        }
        for (const auto& R : tree.rects())
            if (R.generation == 1) first.push_back(-R.data.log2_radius);
        auto median = [](std::vector<double> v) {
            std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
            return v[v.size() / 2];
        };
        if (hi < 0) hi = static_cast<int>(std::floor(median(leaf)));
        if (lo < 0) lo = std::max(1, static_cast<int>(std::floor(*std::min_element(first.begin(), first.end()))));
    }
    require(lo >= 0 && lo <= hi, "certify_holder: empty octave range");
    rep.octave_lo = lo;
    rep.octave_hi = hi;

    const int n_oct = hi - lo + 1;
    std::vector<OctaveRow> rows(n_oct);
    std::vector<std::vector<double>> log2eta(n_oct), log2r(n_oct);  // per sample, for the constant
    std::vector<std::int64_t> positive(n_oct, 0);
    for (int k = 0; k < n_oct; ++k) {
        rows[k].octave = lo + k;
        rows[k].p = tree.depth();
    }
    for (int i = 0; i < params.samples; ++i) {
        const int k = i % n_oct;
        FramedBall c = tree.sample_point(rng);
        const double log2_r = -(rows[k].octave + rng.uniform());
        const int P = tree.cubes()[c.cube].host.global_level;
        c.radius = std::exp2(log2_r + P);
        BallHits hits;
        const double eta = tree.eta_of_ball(c, &hits);
        const double log2_eta = std::log2(eta);
        auto& row = rows[k];
        const double e = log2_eta / log2_r;
        ++row.samples;
        row.min_exponent = std::min(row.min_exponent, e);
        if (eta > 0.0) {
            row.mean_exponent += e;
            ++positive[k];
        }
        row.p = std::min(row.p, std::max(0, hits.unique_depth()));
        log2eta[k].push_back(log2_eta);
        log2r[k].push_back(log2_r);
    }
    rep.pass = true;
    for (int k = 0; k < n_oct; ++k) {
        auto& row = rows[k];
        if (row.samples == 0) continue;
        // eta(C) = 0 gives exponent +inf; the mean is over the rest
        row.mean_exponent = positive[k] > 0 ? row.mean_exponent / static_cast<double>(positive[k]) : kLog2Inf;
        const double bound = rep.s - 4.0 * gens[row.p].eps;
        row.threshold = bound - params.slack;
        for (std::size_t n = 0; n < log2eta[k].size(); ++n)
            row.log2_constant = std::max(row.log2_constant, log2eta[k][n] - bound * log2r[k][n]);
        row.pass = row.min_exponent >= row.threshold;
        rep.pass = rep.pass && row.pass;
        rep.samples += row.samples;
    }
    rep.rows = std::move(rows);
    return rep;
}

inline nlohmann::json to_json(const CertificateReport& r)
{
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"octave", row.octave},
                        {"samples", row.samples},
                        {"min_exponent", row.min_exponent},
                        {"mean_exponent", row.mean_exponent},
                        {"p", row.p},
                        {"threshold", row.threshold},
                        {"log2_constant", row.log2_constant},
                        {"pass", row.pass}});
    return {{"s", r.s},       {"slack", r.slack},         {"claimed_lower_bound", r.claimed},
            {"depth", r.depth}, {"octave_lo", r.octave_lo}, {"octave_hi", r.octave_hi},
            {"samples", r.samples}, {"pass", r.pass},     {"octaves", rows},
            {"note", "certifies the exponent at the sampled scales of the depth-P measure, not the asymptotic dimension"}};
}

inline void write_certificate_csv(std::ostream& os, const CertificateReport& r)
{
    os << "octave,samples,min_exponent,mean_exponent,p,threshold,log2_constant,pass\n";
    char buf[256];
    for (const auto& row : r.rows) {
        std::snprintf(buf, sizeof buf, "%d,%lld,%.6f,%.6f,%d,%.6f,%.6f,%d\n", row.octave,
                      static_cast<long long>(row.samples), row.min_exponent, row.mean_exponent, row.p, row.threshold,
                      row.log2_constant, row.pass ? 1 : 0);
        os << buf;
    }
}

}  // namespace ubiquity
