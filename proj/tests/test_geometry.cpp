#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "ubiquity/geometry.hpp"

using namespace ubiquity;

namespace {

Point random_point(Rng& rng, int d)
{
    Point p(d);
    for (auto& x : p) x = rng.uniform();
    return p;
}

// Brute-force oracle: cells of the level-p grid whose closed body meets an
// axis-aligned rectangle, by scanning the whole grid.
std::set<std::vector<std::int64_t>> brute_cells(const Box& r, int level)
{
    std::set<std::vector<std::int64_t>> out;
    const std::int64_t n = std::int64_t{1} << level;
    const double s = std::ldexp(1.0, -level);
    for (std::int64_t a = 0; a < n; ++a)
        for (std::int64_t b = 0; b < n; ++b)
            if (a * s <= r.hi[0] && (a + 1) * s >= r.lo[0] && b * s <= r.hi[1] && (b + 1) * s >= r.lo[1])
                out.insert({a, b});
    return out;
}

}  // namespace

TEST(Distance, Examples)
{
    EXPECT_EQ(linf_distance({0.3, 0.4}, {0.3, 0.4}), 0.0);
    EXPECT_EQ(linf_distance({0.0, 0.0}, {0.5, 0.25}), 0.5);
    EXPECT_NEAR(linf_distance({0.1, 0.9}, {0.9, 0.1}), 0.8, 1e-15);
    EXPECT_THROW(linf_distance({0.1}, {0.1, 0.2}), InvalidArgument);
}

TEST(Balls, Predicates)
{
    const Ball a({0.0, 0.0}, 1.0);
    EXPECT_TRUE(balls_intersect(a, a));
    EXPECT_TRUE(ball_contains(a, a));
    EXPECT_FALSE(balls_intersect(a, Ball({3.0, 0.0}, 1.0)));
    EXPECT_TRUE(ball_contains(a, Ball({0.5, 0.0}, 0.25)));
    EXPECT_THROW(Ball({0.0}, -1.0), InvalidArgument);
}

TEST(Balls, Scale)
{
    const Ball b({0.4, 0.6}, 0.2);
    EXPECT_EQ(scale_ball(b, 1.0).radius, 0.2);
    EXPECT_NEAR(scale_ball(b, 5.0).radius, 1.0, 1e-15);
    EXPECT_NEAR(scale_ball(Ball({0.4}, 0.3), 3.0).radius, 0.9, 1e-15);
    EXPECT_EQ(scale_ball(b, 5.0).center, b.center);
    EXPECT_THROW(scale_ball(b, -1.0), InvalidArgument);
}

// qB is engulfed by 5A whenever A meets B and A is not inside qB.
TEST(Balls, EngulfingProperty)
{
    Rng rng(99);
    int checked = 0;
    while (checked < 20000) {
        const int d = 1 + static_cast<int>(rng.next() % 4);
        const Ball a(random_point(rng, d), 0.3 * rng.uniform());
        const Ball b(random_point(rng, d), 0.3 * rng.uniform());
        const double q = 3.0 + static_cast<double>(rng.next() % 3);
        if (!balls_intersect(a, b) || ball_contains(scale_ball(b, q), a)) continue;
        ++checked;
        ASSERT_LE(b.radius, a.radius);
        ASSERT_TRUE(ball_contains(scale_ball(a, 5.0), scale_ball(b, q)));
    }
}

TEST(Cubes, GeometryAndChildren)
{
    const auto g = cube_geometry(DyadicCube(1, {1, 0}));
    EXPECT_EQ(g.corner, (Point{0.5, 0.0}));
    EXPECT_EQ(g.side, 0.5);

    const auto kids = cube_children(DyadicCube::root(1));
    ASSERT_EQ(kids.size(), 2u);
    EXPECT_EQ(kids[0].index[0], 0);
    EXPECT_EQ(kids[1].index[0], 1);
    EXPECT_EQ(kids[1].level, 1);

    for (int d = 1; d <= 4; ++d) EXPECT_EQ(cube_children(DyadicCube::root(d)).size(), std::size_t{1} << d);
    EXPECT_THROW(DyadicCube(2, {4}), InvalidArgument);
}

TEST(Cubes, ChildrenPartitionParentExactly)
{
    Rng rng(5);
    for (int t = 0; t < 200; ++t) {
        const int d = 1 + static_cast<int>(rng.next() % 3);
        const int p = static_cast<int>(rng.next() % 50);
        IndexVec k(d);
        for (auto& x : k) x = static_cast<std::int64_t>(rng.next() % (std::uint64_t{1} << p));
        const DyadicCube parent(p, k);
        double volume = 0.0;
        for (const auto& c : cube_children(parent)) {
            EXPECT_EQ(c.side(), parent.side() / 2);
            const Box cb = cube_box(c), pb = cube_box(parent);
            for (int i = 0; i < d; ++i) {
                EXPECT_GE(cb.lo[i], pb.lo[i]);
                EXPECT_LE(cb.hi[i], pb.hi[i]);
            }
            volume += std::pow(c.side(), d);
        }
        EXPECT_DOUBLE_EQ(volume, std::pow(parent.side(), d));
    }
}

TEST(Cubes, DigitsAndConcatenation)
{
    const DyadicCube c(2, {3, 1});  // x digits 1,1; y digits 0,1
    EXPECT_EQ(c.digit(1), 1);
    EXPECT_EQ(c.digit(2), 3);
    const auto cc = cube_concat(DyadicCube(1, {1, 0}), DyadicCube(1, {0, 1}));
    EXPECT_EQ(cc, DyadicCube(2, {2, 1}));
}

TEST(Rotation, ValidationAndPlanar)
{
    EXPECT_TRUE(Rotation::identity(3).is_identity());
    const auto r = Rotation::planar(2, 0.7);
    EXPECT_LE(r.orthonormality_error(), 1e-15);
    EXPECT_FALSE(r.is_identity());
    const double bad[] = {1.0, 0.1, 0.0, 1.0};
    EXPECT_THROW(Rotation::from_rows(2, bad), InvalidArgument);
}

TEST(Shrink, Examples)
{
    const auto cube = shrink_ball(Ball({0.2, 0.3}, 0.1), ShrinkProfile::isotropic(2, 1.0), Rotation::identity(2));
    const Box b = cube.bounding_box();
    EXPECT_EQ(b.lo, (Point{0.2, 0.3}));
    EXPECT_NEAR(b.hi[0], 0.3, 1e-15);
    EXPECT_NEAR(b.hi[1], 0.4, 1e-15);

    const auto r = shrink_ball(Ball({0.0, 0.0}, 0.25), ShrinkProfile({1.0, 2.0}), Rotation::identity(2));
    EXPECT_EQ(r.sides[0], 0.25);
    EXPECT_EQ(r.sides[1], 0.0625);

    const auto s = shrink_ball(Ball({0.5, 0.5}, 0.1), ShrinkProfile({1.5, 3.0}), Rotation::identity(2));
    EXPECT_NEAR(s.sides[0], std::pow(10.0, -1.5), 1e-15);
    EXPECT_NEAR(s.sides[1], 1e-3, 1e-17);

    EXPECT_THROW(shrink_ball(Ball({0.5}, 1.0), ShrinkProfile({1.0}), Rotation::identity(1)), InvalidArgument);
}

TEST(Admissible, UnitCube)
{
    for (int d = 1; d <= 3; ++d) {
        const auto cubes = admissible_subcubes(axis_rectangle(Point(d, 0.0), SmallVec<double>(d, 1.0)));
        ASSERT_FALSE(cubes.empty());
        for (const auto& c : cubes)
            for (auto k : c.index) EXPECT_EQ(k % 8, 0);
    }
}

TEST(Admissible, PlaneExampleLevelNine)
{
    const auto r = axis_rectangle({0.0, 0.0}, {0.5, 1.0 / 32});
    const auto lat = admissible_lattice(r);
    EXPECT_EQ(lat.level, 9);
    // enumeration at level 9: x cells 0..255, y cells 0..15, multiples of 8
    EXPECT_EQ(lat.counts[0], 32);
    EXPECT_EQ(lat.counts[1], 2);
    const double ratio = static_cast<double>(lat.size()) / 16.0;
    EXPECT_GE(ratio, 1.0 / 12);
    EXPECT_LE(ratio, 12.0);
}

TEST(Admissible, LineExample)
{
    // l = 2^-3: p = -floor(log2(2^-3 / 8)) = 6, cells of side 2^-6, only k = 0 fits
    const auto cubes = admissible_subcubes(axis_rectangle({0.0}, {0.125}));
    ASSERT_EQ(cubes.size(), 1u);
    EXPECT_EQ(cubes[0], DyadicCube(6, {0}));
}

// Measured over random axis-aligned rectangles (aspect <= 2^12) and frozen.
TEST(Admissible, CountWithinFrozenKappa)
{
    Rng rng(1);
    for (int d = 1; d <= 4; ++d) {
        int tested = 0;
        for (int t = 0; t < 3000; ++t) {
            SmallVec<double> sides(d);
            for (auto& s : sides) s = std::pow(2.0, -1 - 8 * rng.uniform());
            std::sort(sides.begin(), sides.end(), std::greater<>());
            if (sides[0] / sides[d - 1] > std::pow(2.0, 12.0 / d)) continue;
            Point a(d);
            for (int i = 0; i < d; ++i) a[i] = rng.uniform() * (1 - sides[i]);
            const auto lat = admissible_lattice(axis_rectangle(a, sides));
            if (d == 1 && lat.empty()) continue;  // a side of 8..9 cells may miss every multiple of 8
            double prod = 1.0;
            for (int i = 0; i < d; ++i) prod *= sides[i] / sides[d - 1];
            const double ratio = static_cast<double>(lat.size()) / prod;
            EXPECT_GE(ratio, 1.0 / admissible_count_constant(d));
            EXPECT_LE(ratio, admissible_count_constant(d));
            ++tested;
        }
        EXPECT_GT(tested, 100);
    }
}

TEST(Admissible, InsideAndSpaced)
{
    Rng rng(17);
    for (int t = 0; t < 300; ++t) {
        const Ball ball(random_point(rng, 2), 0.05 + 0.3 * rng.uniform());
        const auto rot = (t % 2) ? Rotation::planar(2, 6.28 * rng.uniform()) : Rotation::identity(2);
        const auto rect = shrink_ball(ball, ShrinkProfile({1.0, 1.0 + rng.uniform()}), rot);
        const auto cubes = admissible_subcubes(rect);
        for (std::size_t i = 0; i < cubes.size(); ++i) {
            EXPECT_TRUE(box_inside_rectangle(cube_box(cubes[i]), rect));
            for (std::size_t j = i + 1; j < cubes.size() && j < i + 40; ++j) {
                const auto g1 = cube_geometry(cubes[i]), g2 = cube_geometry(cubes[j]);
                double gap = 0.0;
                for (int k = 0; k < 2; ++k)
                    gap = std::max(gap, std::abs(g1.corner[k] - g2.corner[k]) - g1.side);
                EXPECT_GE(gap, 7 * g1.side);
            }
        }
    }
}

TEST(Rasterize, PlaneExample)
{
    const auto rect = axis_rectangle({0.0, 0.0}, {0.5, 0.25});
    const auto cells = rasterize_rectangle(rect, 2);
    // closed cells: x in {0,1,2}, y in {0,1}
    EXPECT_EQ(cells.size(), 6u);
    int interior = 0;
    for (const auto& c : cells) interior += box_inside_rectangle(cube_box(c), rect) ? 1 : 0;
    EXPECT_EQ(interior, 2);
}

TEST(Rasterize, UnitCubeAndPointLike)
{
    for (int p = 0; p <= 4; ++p)
        EXPECT_EQ(rasterize_rectangle(axis_rectangle({0.0, 0.0}, {1.0, 1.0}), p).size(), std::size_t{1} << (2 * p));
    Rng rng(3);
    for (int t = 0; t < 100; ++t) {
        const auto rect = axis_rectangle(random_point(rng, 2), {1e-9, 1e-9});
        const auto n = rasterize_rectangle(rect, 10).size();
        EXPECT_GE(n, 1u);
        EXPECT_LE(n, 4u);
    }
}

TEST(Rasterize, MatchesBruteForceAxisAligned)
{
    Rng rng(8);
    for (int t = 0; t < 200; ++t) {
        const Point a = random_point(rng, 2);
        const auto rect = axis_rectangle(a, {0.3 * rng.uniform(), 0.3 * rng.uniform()});
        std::set<std::vector<std::int64_t>> got;
        for (const auto& c : rasterize_rectangle(rect, 5)) got.insert({c.index[0], c.index[1]});
        Box clip = rect.bounding_box();
        EXPECT_EQ(got, brute_cells(clip, 5));
    }
}

TEST(Rasterize, RotatedMatchesPointSampling)
{
    Rng rng(21);
    for (int t = 0; t < 50; ++t) {
        const auto rect = shrink_ball(Ball(random_point(rng, 2), 0.1 + 0.2 * rng.uniform()), ShrinkProfile({1.0, 1.5}),
                                      Rotation::planar(2, 6.28 * rng.uniform()));
        std::set<std::vector<std::int64_t>> got;
        for (const auto& c : rasterize_rectangle(rect, 6)) got.insert({c.index[0], c.index[1]});
        // every sampled point of R lies in a returned cell
        for (int s = 0; s < 2000; ++s) {
            const Point y = rect.map({rng.uniform(), rng.uniform()});
            if (y[0] < 0 || y[0] >= 1 || y[1] < 0 || y[1] >= 1) continue;
            const std::vector<std::int64_t> k{static_cast<std::int64_t>(std::ldexp(y[0], 6)),
                                              static_cast<std::int64_t>(std::ldexp(y[1], 6))};
            EXPECT_TRUE(got.count(k)) << "sample outside rasterization";
        }
    }
}

TEST(Rasterize, RefinesAcrossLevels)
{
    Rng rng(4);
    for (int t = 0; t < 50; ++t) {
        const auto rect = shrink_ball(Ball(random_point(rng, 2), 0.05 + 0.3 * rng.uniform()), ShrinkProfile({1.0, 2.0}),
                                      (t % 2) ? Rotation::planar(2, rng.uniform() * 6.28) : Rotation::identity(2));
        std::set<std::vector<std::int64_t>> coarse;
        for (const auto& c : rasterize_rectangle(rect, 5)) coarse.insert({c.index[0], c.index[1]});
        for (const auto& c : rasterize_rectangle(rect, 6)) EXPECT_TRUE(coarse.count({c.index[0] / 2, c.index[1] / 2}));
    }
}

TEST(Rasterize, BudgetEnforced)
{
    EXPECT_THROW(rasterize_rectangle(axis_rectangle({0.0, 0.0}, {1.0, 1.0}), 12, 1000), BudgetExceeded);
}

TEST(Morton, RoundTrip)
{
    Rng rng(12);
    for (int t = 0; t < 1000; ++t) {
        const int d = 1 + static_cast<int>(rng.next() % 4);
        const int level = static_cast<int>(rng.next() % (60 / d + 1));
        IndexVec k(d);
        for (auto& x : k) x = level == 0 ? 0 : static_cast<std::int64_t>(rng.next() % (std::uint64_t{1} << level));
        EXPECT_EQ(morton_decode(morton_encode(k, level), d, level), k);
    }
}
