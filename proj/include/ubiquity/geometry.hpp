#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "core.hpp"
#include "formula.hpp"

namespace ubiquity {

using Point = SmallVec<double>;
using IndexVec = SmallVec<std::int64_t>;

inline double linf_distance(const Point& a, const Point& b)
{
    require(a.size() == b.size(), "linf_distance: dimension mismatch");
    double m = 0.0;
    for (int i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

/// Closed sup-norm ball, i.e. the cube [x - r, x + r]^d.
struct Ball {
    Point center;
    double radius = 0.0;

    Ball() = default;
    Ball(Point c, double r) : center(c), radius(r)
    {
        require(r >= 0.0 && std::isfinite(r), "ball radius must be finite and >= 0");
    }
    int dim() const { return center.size(); }

    friend bool operator==(const Ball&, const Ball&) = default;
};

inline bool balls_intersect(const Ball& a, const Ball& b)
{
    return linf_distance(a.center, b.center) <= a.radius + b.radius;
}

/// True when b is a subset of a.
inline bool ball_contains(const Ball& a, const Ball& b)
{
    return linf_distance(a.center, b.center) + b.radius <= a.radius;
}

inline Ball scale_ball(const Ball& b, double t)
{
    require(t >= 0.0, "scale_ball: factor must be >= 0");
    return Ball(b.center, t * b.radius);
}

/// Axis-aligned closed box [lo, hi].
struct Box {
    Point lo;
    Point hi;
    int dim() const { return lo.size(); }
};

/// prod_i [k_i 2^-p, (k_i + 1) 2^-p]
struct DyadicCube {
    int level = 0;
    IndexVec index;

    DyadicCube() = default;
    DyadicCube(int p, IndexVec k) : level(p), index(k)
    {
        require(p >= 0 && p <= 62, "dyadic level must be in [0, 62]");
        const std::int64_t n = std::int64_t{1} << p;
        for (int i = 0; i < k.size(); ++i) require(k[i] >= 0 && k[i] < n, "dyadic index out of range");
    }

    static DyadicCube root(int d) { return DyadicCube(0, IndexVec(d, 0)); }

    int dim() const { return index.size(); }
    double side() const { return std::ldexp(1.0, -level); }

    /// Child number (bit i = digit of coordinate i) of the ancestor chain at depth j in 1..level.
    int digit(int j) const
    {
        int c = 0;
        for (int i = 0; i < dim(); ++i) c |= static_cast<int>((index[i] >> (level - j)) & 1) << i;
        return c;
    }

    friend bool operator==(const DyadicCube&, const DyadicCube&) = default;
};

struct CubeGeometry {
    Point corner;
    double side;
};

inline CubeGeometry cube_geometry(const DyadicCube& cube)
{
    Point corner(cube.dim());
    const double s = cube.side();
    for (int i = 0; i < cube.dim(); ++i) corner[i] = static_cast<double>(cube.index[i]) * s;
    return {corner, s};
}

inline Box cube_box(const DyadicCube& cube)
{
    auto [corner, s] = cube_geometry(cube);
    Point hi = corner;
    for (double& x : hi) x += s;
    return {corner, hi};
}

inline DyadicCube cube_child(const DyadicCube& cube, int child)
{
    IndexVec k(cube.dim());
    for (int i = 0; i < cube.dim(); ++i) k[i] = 2 * cube.index[i] + ((child >> i) & 1);
    return DyadicCube(cube.level + 1, k);
}

/// The 2^d children in child-number order.
inline std::vector<DyadicCube> cube_children(const DyadicCube& cube)
{
    std::vector<DyadicCube> out;
    const int n = 1 << cube.dim();
    out.reserve(n);
    for (int c = 0; c < n; ++c) out.push_back(cube_child(cube, c));
    return out;
}

/// Cube extended by a digit path: the image of `inner` under the inverse of T_outer.
inline DyadicCube cube_concat(const DyadicCube& outer, const DyadicCube& inner)
{
    require(outer.dim() == inner.dim(), "cube_concat: dimension mismatch");
    IndexVec k(outer.dim());
    for (int i = 0; i < outer.dim(); ++i) k[i] = (outer.index[i] << inner.level) + inner.index[i];
    return DyadicCube(outer.level + inner.level, k);
}

/// Orthogonal matrix, row-major.
class Rotation {
public:
    Rotation() = default;

    static Rotation identity(int d)
    {
        Rotation r;
        r.dim_ = d;
        r.identity_ = true;
        for (int i = 0; i < d; ++i) r.m_[i * kMaxDim + i] = 1.0;
        return r;
    }

    /// Validates orthonormal columns within `tol`.
    static Rotation from_rows(int d, std::span<const double> row_major, double tol = 1e-12)
    {
        require(d >= 1 && d <= kMaxDim, "rotation dimension out of range");
        require(static_cast<int>(row_major.size()) == d * d, "rotation must have d*d entries");
        Rotation r;
        r.dim_ = d;
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) r.m_[i * kMaxDim + j] = row_major[i * d + j];
        require(r.orthonormality_error() <= tol, "rotation matrix is not orthogonal");
        r.identity_ = true;
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                if (r(i, j) != (i == j ? 1.0 : 0.0)) r.identity_ = false;
        return r;
    }

    /// Rotation by `angle` in the plane of the first two axes.
    static Rotation planar(int d, double angle)
    {
        require(d >= 2, "planar rotation needs d >= 2");
        Rotation r = identity(d);
        const double c = std::cos(angle), s = std::sin(angle);
        r.m_[0] = c;
        r.m_[1] = -s;
        r.m_[kMaxDim] = s;
        r.m_[kMaxDim + 1] = c;
        r.identity_ = (angle == 0.0);
        return r;
    }

    int dim() const { return dim_; }
    bool is_identity() const { return identity_; }
    double operator()(int i, int j) const { return m_[i * kMaxDim + j]; }

    double orthonormality_error() const
    {
        double err = 0.0;
        for (int a = 0; a < dim_; ++a)
            for (int b = 0; b < dim_; ++b) {
                double dot = 0.0;
                for (int i = 0; i < dim_; ++i) dot += (*this)(i, a) * (*this)(i, b);
                err = std::max(err, std::abs(dot - (a == b ? 1.0 : 0.0)));
            }
        return err;
    }

    std::vector<double> row_major() const
    {
        std::vector<double> out;
        for (int i = 0; i < dim_; ++i)
            for (int j = 0; j < dim_; ++j) out.push_back((*this)(i, j));
        return out;
    }

    friend bool operator==(const Rotation& a, const Rotation& b) { return a.row_major() == b.row_major(); }

private:
    int dim_ = 0;
    bool identity_ = true;
    std::array<double, kMaxDim * kMaxDim> m_{};
};

/// x + O diag(sides) [0,1]^d. Built by shrink_ball from a ball and a profile; the
/// Cantor construction also builds them directly in rescaled local frames.
struct AnisotropicRectangle {
    Point anchor;
    SmallVec<double> sides;
    Rotation rotation;
    double base_radius = 0.0;
    ShrinkProfile profile;

    int dim() const { return anchor.size(); }
    double shortest_side() const { return *std::min_element(sides.begin(), sides.end()); }
    double volume() const
    {
        double v = 1.0;
        for (double s : sides) v *= s;
        return v;
    }

    /// Image of u in [0,1]^d.
    Point map(const Point& u) const
    {
        Point y = anchor;
        for (int i = 0; i < dim(); ++i)
            for (int j = 0; j < dim(); ++j) y[i] += rotation(i, j) * sides[j] * u[j];
        return y;
    }

    Box bounding_box() const
    {
        Box b{anchor, anchor};
        for (int i = 0; i < dim(); ++i)
            for (int j = 0; j < dim(); ++j) {
                const double e = rotation(i, j) * sides[j];
                if (e < 0) b.lo[i] += e;
                else b.hi[i] += e;
            }
        return b;
    }
};

inline AnisotropicRectangle axis_rectangle(const Point& anchor, const SmallVec<double>& sides)
{
    require(anchor.size() == sides.size(), "axis_rectangle: dimension mismatch");
    AnisotropicRectangle r;
    r.anchor = anchor;
    r.sides = sides;
    r.rotation = Rotation::identity(anchor.size());
    r.base_radius = *std::max_element(sides.begin(), sides.end());
    r.profile = ShrinkProfile::isotropic(anchor.size(), 1.0);
    return r;
}

inline AnisotropicRectangle shrink_ball(const Ball& ball, const ShrinkProfile& profile, const Rotation& rotation)
{
    require(ball.radius > 0.0 && ball.radius < 1.0, "shrink_ball: radius must lie in (0, 1)");
    require(profile.dim() == ball.dim(), "shrink_ball: profile dimension mismatch");
    require(rotation.dim() == ball.dim(), "shrink_ball: rotation dimension mismatch");
    AnisotropicRectangle r;
    r.anchor = ball.center;
    r.sides = SmallVec<double>(ball.dim());
    for (int i = 0; i < ball.dim(); ++i) r.sides[i] = std::pow(ball.radius, profile[i]);
    r.rotation = rotation;
    r.base_radius = ball.radius;
    r.profile = profile;
    return r;
}

/// Axis-aligned box inside R. Exact for axis-aligned R; for rotated R the box
/// is centred at the centroid with half-widths lambda * g_i, g_i the bounding
/// half-extent along axis i, lambda the largest factor keeping it inside R.
inline Box inscribed_box(const AnisotropicRectangle& rect)
{
    const int d = rect.dim();
    if (rect.rotation.is_identity()) {
        Box b{rect.anchor, rect.anchor};
        for (int i = 0; i < d; ++i) b.hi[i] += rect.sides[i];
        return b;
    }
    Point half(d), centre(d);
    Point mid(d, 0.5);
    centre = rect.map(mid);
    for (int i = 0; i < d; ++i) {
        half[i] = 0.0;
        for (int j = 0; j < d; ++j) half[i] += std::abs(rect.rotation(i, j)) * rect.sides[j] / 2.0;
    }
    double lambda = std::numeric_limits<double>::infinity();
    for (int j = 0; j < d; ++j) {
        double load = 0.0;
        for (int i = 0; i < d; ++i) load += std::abs(rect.rotation(i, j)) * half[i];
        if (load > 0) lambda = std::min(lambda, rect.sides[j] / 2.0 / load);
    }
    Box b{centre, centre};
    for (int i = 0; i < d; ++i) {
        b.lo[i] -= lambda * half[i];
        b.hi[i] += lambda * half[i];
    }
    return b;
}

/// Admissible subcubes of a rectangle as a lattice: level p, first index k0 per
/// axis, and count per axis (indices k0_i + 8 j, 0 <= j < counts_i).
struct AdmissibleLattice {
    int level = 0;
    IndexVec first;
    IndexVec counts;

    std::int64_t size() const
    {
        if (counts.size() == 0) return 0;
        std::int64_t n = 1;
        for (auto c : counts) n *= c;
        return n;
    }
    bool empty() const { return size() == 0; }
    int dim() const { return first.size(); }

    DyadicCube cube(const IndexVec& lattice_index) const
    {
        IndexVec k(dim());
        for (int i = 0; i < dim(); ++i) k[i] = first[i] + 8 * lattice_index[i];
        return DyadicCube(level, k);
    }
};

inline constexpr int kAdmissibleSpacing = 8;

/// Generation p(R) = -floor(log2(l_min / (8 sqrt d))) from the shortest side.
inline int admissible_level(double shortest_side, int d)
{
    require(shortest_side > 0.0, "admissible_level: side must be positive");
    return -static_cast<int>(std::floor(std::log2(shortest_side / (8.0 * std::sqrt(static_cast<double>(d))))));
}

inline AdmissibleLattice admissible_lattice(const AnisotropicRectangle& rect)
{
    const int d = rect.dim();
    const Box box = inscribed_box(rect);
    double shortest = std::numeric_limits<double>::infinity();
    for (int i = 0; i < d; ++i) shortest = std::min(shortest, box.hi[i] - box.lo[i]);
    AdmissibleLattice lat;
    lat.level = std::max(0, admissible_level(shortest, d));
    if (lat.level > 62) throw BudgetExceeded("admissible_subcubes: rectangle finer than dyadic level 62");
    lat.first = IndexVec(d);
    lat.counts = IndexVec(d);
    const std::int64_t n = std::int64_t{1} << lat.level;
    for (int i = 0; i < d; ++i) {
        // full cells [k, k+1] inside [lo, hi] after scaling by 2^p, restricted to the unit cube
        const double lo = std::ldexp(box.lo[i], lat.level);
        const double hi = std::ldexp(box.hi[i], lat.level);
        std::int64_t kmin = static_cast<std::int64_t>(std::max(0.0, std::ceil(lo)));
        std::int64_t kmax = static_cast<std::int64_t>(std::min(static_cast<double>(n), std::floor(hi))) - 1;
        kmin = (kmin + kAdmissibleSpacing - 1) / kAdmissibleSpacing * kAdmissibleSpacing;
        lat.first[i] = kmin;
        lat.counts[i] = kmax >= kmin ? (kmax - kmin) / kAdmissibleSpacing + 1 : 0;
    }
    return lat;
}

template<typename Fn>
void for_each_lattice_index(const IndexVec& counts, Fn&& fn)
{
    const int d = counts.size();
    for (auto c : counts)
        if (c <= 0) return;
    IndexVec j(d, 0);
    while (true) {
        fn(static_cast<const IndexVec&>(j));
        int i = 0;
        for (; i < d; ++i) {
            if (++j[i] < counts[i]) break;
            j[i] = 0;
        }
        if (i == d) return;
    }
}

/// C(R): level-p dyadic cubes inside R with every index divisible by 8.
/// Empty when R is too small or too close to the boundary of [0,1]^d.
inline std::vector<DyadicCube> admissible_subcubes(const AnisotropicRectangle& rect,
                                                   std::int64_t budget = std::int64_t{1} << 24)
{
    const auto lat = admissible_lattice(rect);
    if (lat.size() > budget) throw BudgetExceeded("admissible_subcubes: too many cubes");
    std::vector<DyadicCube> out;
    out.reserve(static_cast<std::size_t>(lat.size()));
    for_each_lattice_index(lat.counts, [&](const IndexVec& j) { out.push_back(lat.cube(j)); });
    return out;
}

/// kappa_d with kappa^-1 <= #C(R) / prod_i(l_i / l_min) <= kappa for axis-aligned R,
/// measured over random rectangles of aspect ratio up to 2^12 and frozen.
inline double admissible_count_constant(int d)
{
    static constexpr double kappa[] = {0.0, 2.0, 12.0, 64.0, 320.0};
    require(d >= 1 && d <= 4, "admissible_count_constant: measured for d <= 4 only");
    return kappa[d];
}

/// Closed intersection test between an axis-aligned box and a rectangle.
/// Separating axes are the coordinate axes and the rectangle's edge directions;
/// exact in d <= 2, conservative (may report touching) in higher dimension.
inline bool box_meets_rectangle(const Box& box, const AnisotropicRectangle& rect)
{
    const int d = rect.dim();
    const Box bb = rect.bounding_box();
    for (int i = 0; i < d; ++i)
        if (box.hi[i] < bb.lo[i] || box.lo[i] > bb.hi[i]) return false;
    if (rect.rotation.is_identity()) return true;
    for (int j = 0; j < d; ++j) {
        double centre = 0.0, reach = 0.0, base = 0.0;
        for (int i = 0; i < d; ++i) {
            const double u = rect.rotation(i, j);
            centre += u * (box.lo[i] + box.hi[i]) / 2.0;
            reach += std::abs(u) * (box.hi[i] - box.lo[i]) / 2.0;
            base += u * rect.anchor[i];
        }
        if (centre + reach < base || centre - reach > base + rect.sides[j]) return false;
    }
    return true;
}

inline bool box_inside_rectangle(const Box& box, const AnisotropicRectangle& rect)
{
    const int d = rect.dim();
    for (int j = 0; j < d; ++j) {
        double lo = 0.0, hi = 0.0;
        for (int i = 0; i < d; ++i) {
            const double u = rect.rotation(i, j);
            lo += u * (u >= 0 ? box.lo[i] : box.hi[i]);
            hi += u * (u >= 0 ? box.hi[i] : box.lo[i]);
        }
        double base = 0.0;
        for (int i = 0; i < d; ++i) base += rect.rotation(i, j) * rect.anchor[i];
        if (lo < base || hi > base + rect.sides[j]) return false;
    }
    return true;
}

inline bool rectangle_inside_box(const AnisotropicRectangle& rect, const Box& box)
{
    const Box bb = rect.bounding_box();
    for (int i = 0; i < rect.dim(); ++i)
        if (bb.lo[i] < box.lo[i] || bb.hi[i] > box.hi[i]) return false;
    return true;
}

namespace detail {

/// Area of a convex polygon clipped to an axis-aligned box (Sutherland-Hodgman).
inline double clipped_polygon_area(std::vector<std::array<double, 2>> poly, const Box& box)
{
    auto clip = [&](int axis, double bound, bool keep_below) {
        std::vector<std::array<double, 2>> out;
        const std::size_t n = poly.size();
        for (std::size_t i = 0; i < n; ++i) {
            const auto& a = poly[i];
            const auto& b = poly[(i + 1) % n];
            const bool ina = keep_below ? a[axis] <= bound : a[axis] >= bound;
            const bool inb = keep_below ? b[axis] <= bound : b[axis] >= bound;
            if (ina) out.push_back(a);
            if (ina != inb) {
                const double t = (bound - a[axis]) / (b[axis] - a[axis]);
                out.push_back({a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])});
            }
        }
        poly.swap(out);
    };
    for (int axis = 0; axis < 2 && !poly.empty(); ++axis) {
        clip(axis, box.lo[axis], false);
        if (!poly.empty()) clip(axis, box.hi[axis], true);
    }
    double area = 0.0;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        const auto& a = poly[i];
        const auto& b = poly[(i + 1) % poly.size()];
        area += a[0] * b[1] - a[1] * b[0];
    }
    return std::abs(area) / 2.0;
}

}  // namespace detail

/// vol(R n box) / vol(R). Exact for axis-aligned R and in d = 2; a midpoint rule
/// with about 2^15 nodes otherwise.
inline double overlap_fraction(const AnisotropicRectangle& rect, const Box& box)
{
    const int d = rect.dim();
    if (rect.rotation.is_identity()) {
        double f = 1.0;
        for (int i = 0; i < d; ++i) {
            const double lo = std::max(box.lo[i], rect.anchor[i]);
            const double hi = std::min(box.hi[i], rect.anchor[i] + rect.sides[i]);
            if (hi <= lo) return 0.0;
            f *= (hi - lo) / rect.sides[i];
        }
        return std::min(f, 1.0);
    }
    if (d == 2) {
        std::vector<std::array<double, 2>> poly;
        for (const auto& u : {Point{0, 0}, Point{1, 0}, Point{1, 1}, Point{0, 1}}) {
            const Point y = rect.map(u);
            poly.push_back({y[0], y[1]});
        }
        return std::min(1.0, detail::clipped_polygon_area(poly, box) / rect.volume());
    }
    const int n = std::max(2, static_cast<int>(std::floor(std::exp2(15.0 / d))));
    IndexVec counts(d, n);
    std::int64_t hit = 0, total = 0;
    Point u(d);
    for_each_lattice_index(counts, [&](const IndexVec& j) {
        for (int i = 0; i < d; ++i) u[i] = (static_cast<double>(j[i]) + 0.5) / n;
        const Point y = rect.map(u);
        bool in = true;
        for (int i = 0; i < d && in; ++i) in = y[i] >= box.lo[i] && y[i] <= box.hi[i];
        hit += in ? 1 : 0;
        ++total;
    });
    return static_cast<double>(hit) / static_cast<double>(total);
}

/// Per-axis range of level-p cell indices whose closed cell meets [lo, hi].
inline std::pair<std::int64_t, std::int64_t> closed_cell_range(double lo, double hi, int level)
{
    const std::int64_t n = std::int64_t{1} << level;
    const double a = std::ldexp(lo, level), b = std::ldexp(hi, level);
    const std::int64_t kmin = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(a)) - 1);
    const std::int64_t kmax = std::min<std::int64_t>(n - 1, static_cast<std::int64_t>(std::floor(b)));
    return {kmin, kmax};
}

/// Visits every level-p cell whose closed body meets R (boundary contact counts).
template<typename Fn>
void for_each_cell(const AnisotropicRectangle& rect, int level, std::int64_t budget, Fn&& fn)
{
    require(level >= 0 && level <= 62, "rasterize: level must be in [0, 62]");
    const int d = rect.dim();
    const Box bb = rect.bounding_box();
    IndexVec lo(d), counts(d);
    double total = 1.0;
    for (int i = 0; i < d; ++i) {
        auto [a, b] = closed_cell_range(bb.lo[i], bb.hi[i], level);
        lo[i] = a;
        counts[i] = b >= a ? b - a + 1 : 0;
        total *= static_cast<double>(counts[i]);
    }
    if (total > static_cast<double>(budget)) throw BudgetExceeded("rasterize: cell budget exceeded");
    const double s = std::ldexp(1.0, -level);
    const bool aligned = rect.rotation.is_identity();
    IndexVec k(d);
    for_each_lattice_index(counts, [&](const IndexVec& j) {
        for (int i = 0; i < d; ++i) k[i] = lo[i] + j[i];
        if (!aligned) {
            Box cell{Point(d), Point(d)};
            for (int i = 0; i < d; ++i) {
                cell.lo[i] = static_cast<double>(k[i]) * s;
                cell.hi[i] = cell.lo[i] + s;
            }
            if (!box_meets_rectangle(cell, rect)) return;
        }
        fn(static_cast<const IndexVec&>(k));
    });
}

inline std::vector<DyadicCube> rasterize_rectangle(const AnisotropicRectangle& rect, int level,
                                                   std::int64_t budget = std::int64_t{1} << 27)
{
    std::vector<DyadicCube> out;
    for_each_cell(rect, level, budget, [&](const IndexVec& k) { out.emplace_back(level, k); });
    return out;
}

/// Bit-interleaved cell key: bit b of coordinate i goes to position b*d + i.
inline std::uint64_t morton_encode(const IndexVec& k, int level)
{
    const int d = k.size();
    std::uint64_t code = 0;
    for (int b = 0; b < level; ++b)
        for (int i = 0; i < d; ++i) code |= static_cast<std::uint64_t>((k[i] >> b) & 1) << (b * d + i);
    return code;
}

inline IndexVec morton_decode(std::uint64_t code, int d, int level)
{
    IndexVec k(d, 0);
    for (int b = 0; b < level; ++b)
        for (int i = 0; i < d; ++i) k[i] |= static_cast<std::int64_t>((code >> (b * d + i)) & 1) << b;
    return k;
}

}  // namespace ubiquity
