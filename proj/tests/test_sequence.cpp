#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "ubiquity/sequence.hpp"

using namespace ubiquity;

TEST(Jarnik, SmallDenominators)
{
    BallSequenceSpec spec;
    spec.kind = SequenceKind::Jarnik;
    spec.q_min = 1;
    spec.q_max = 3;
    Rng rng(0);
    const auto balls = generate_balls(spec, MeasureSpec::lebesgue(1), 100, rng);
    const std::vector<double> centers{0.0, 1.0, 0.5, 1.0 / 3, 2.0 / 3};
    const std::vector<double> radii{1.0, 1.0, 0.25, 1.0 / 9, 1.0 / 9};
    ASSERT_EQ(balls.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(balls[i].center[0], centers[i]);
        EXPECT_EQ(balls[i].radius, radii[i]);
    }
}

TEST(Jarnik, EachReducedFractionOnce)
{
    const auto balls = jarnik_balls(1, 60, 1 << 20);
    std::set<std::pair<std::int64_t, std::int64_t>> seen;
    double prev = 2.0;
    for (const auto& b : balls) {
        const auto q = static_cast<std::int64_t>(std::llround(1.0 / std::sqrt(b.radius)));
        const auto p = static_cast<std::int64_t>(std::llround(b.center[0] * q));
        EXPECT_EQ(std::gcd(p, q), 1);
        EXPECT_TRUE(seen.insert({p, q}).second);
        EXPECT_LE(b.radius, prev);
        prev = b.radius;
    }
    // 2 + sum_{q=2}^{60} phi(q)
    std::int64_t expected = 2;
    for (std::int64_t q = 2; q <= 60; ++q)
        for (std::int64_t p = 1; p < q; ++p) expected += std::gcd(p, q) == 1 ? 1 : 0;
    EXPECT_EQ(static_cast<std::int64_t>(balls.size()), expected);
}

TEST(Jarnik, ShrinkToFourthPower)
{
    const auto balls = jarnik_balls(2, 20, 1000);
    const auto rects = shrink_sequence(balls, ShrinkProfile({2.0}), RotationPolicy{});
    for (std::size_t i = 0; i < balls.size(); ++i) {
        const double q = 1.0 / std::sqrt(balls[i].radius);
        EXPECT_EQ(rects[i].anchor, balls[i].center);
        EXPECT_NEAR(rects[i].sides[0], std::pow(q, -4.0), 1e-15);
    }
}

TEST(Iid, RadiusLawAndDeterminism)
{
    BallSequenceSpec spec;
    spec.c = 0.4;
    spec.gamma = 2.0;
    const auto mu = MeasureSpec::lebesgue(2);
    Rng a(42), b(42);
    const auto x = generate_balls(spec, mu, 500, a);
    const auto y = generate_balls(spec, mu, 500, b);
    std::ostringstream sx, sy;
    write_balls_csv(sx, x);
    write_balls_csv(sy, y);
    EXPECT_EQ(sx.str(), sy.str());
    for (std::size_t n = 0; n < x.size(); ++n) {
        EXPECT_DOUBLE_EQ(x[n].radius, 0.4 / std::sqrt(static_cast<double>(n + 1)));
        for (double c : x[n].center) {
            EXPECT_GE(c, 0.0);
            EXPECT_LE(c, 1.0);
        }
    }
}

TEST(Iid, DefaultGammaIsMeasureDimension)
{
    BallSequenceSpec spec;
    const auto mu = MeasureSpec::bernoulli({0.25, 0.75});
    EXPECT_DOUBLE_EQ(effective_gamma(spec, mu), dimension(mu));
    // expected lebesgue mass sum grows like the harmonic series when gamma = d
    spec.gamma = 2.0;
    spec.c = 0.5;
    double partial = 0.0;
    for (int n = 1; n <= 10000; ++n) partial += std::pow(2 * spec.c * std::pow(n, -0.5), 2);
    EXPECT_GT(partial, 9.0);
}

TEST(ExplicitList, Passthrough)
{
    BallSequenceSpec spec;
    spec.kind = SequenceKind::ExplicitList;
    spec.balls = {Ball({0.1, 0.2}, 0.05), Ball({0.7, 0.7}, 0.01)};
    Rng rng(1);
    const auto out = generate_balls(spec, MeasureSpec::lebesgue(2), 10, rng);
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out[0].center, spec.balls[0].center);
    EXPECT_EQ(out[1].radius, spec.balls[1].radius);
}

TEST(Shrink, IdentityProfileGivesCornerCubes)
{
    Rng rng(3);
    BallSequenceSpec spec;
    spec.c = 0.3;
    spec.gamma = 2;
    const auto balls = generate_balls(spec, MeasureSpec::lebesgue(2), 200, rng);
    const auto rects = shrink_sequence(balls, ShrinkProfile::isotropic(2, 1.0), RotationPolicy{});
    ASSERT_EQ(rects.size(), balls.size());
    for (std::size_t n = 0; n < rects.size(); ++n) {
        const Box b = rects[n].bounding_box();
        for (int i = 0; i < 2; ++i) {
            EXPECT_EQ(b.lo[i], balls[n].center[i]);
            EXPECT_NEAR(b.hi[i] - b.lo[i], balls[n].radius, 1e-15);
        }
        // body inside B_n when O = I and tau >= 1 (corner convention)
        EXPECT_TRUE(ball_contains(balls[n], Ball(rects[n].map({0.5, 0.5}), balls[n].radius * (0.5 - 1e-12))));
    }
}

TEST(Shrink, RotatedBodiesStayNearAnchor)
{
    Rng rng(4);
    BallSequenceSpec spec;
    spec.c = 0.3;
    spec.gamma = 2;
    RotationPolicy policy{RotationKind::SeededRandomOrthogonal, {}, 77};
    for (int d = 2; d <= 4; ++d) {
        const auto balls = generate_balls(spec, MeasureSpec::lebesgue(d), 100, rng);
        std::vector<double> tau(d);
        for (int i = 0; i < d; ++i) tau[i] = 1.0 + 0.5 * i;
        const auto rects = shrink_sequence(balls, ShrinkProfile(tau), policy);
        for (std::size_t n = 0; n < rects.size(); ++n) {
            EXPECT_LE(rects[n].rotation.orthonormality_error(), 1e-12);
            const Box b = rects[n].bounding_box();
            for (int i = 0; i < d; ++i) {
                EXPECT_LE(b.hi[i] - balls[n].center[i], 2 * d * balls[n].radius);
                EXPECT_LE(balls[n].center[i] - b.lo[i], 2 * d * balls[n].radius);
            }
        }
        // same policy, same index: same matrix
        EXPECT_EQ(policy.at(d, 5), policy.at(d, 5));
    }
}

TEST(Shrink, FixedAnglesCycle)
{
    RotationPolicy policy{RotationKind::FixedAngleSet, {0.0, 0.5}, 0};
    EXPECT_TRUE(policy.at(2, 0).is_identity());
    EXPECT_EQ(policy.at(2, 1), Rotation::planar(2, 0.5));
    EXPECT_EQ(policy.at(2, 3), Rotation::planar(2, 0.5));
}

TEST(Shrink, RejectsLargeRadius)
{
    EXPECT_THROW(shrink_sequence({Ball({0.5}, 1.0)}, ShrinkProfile({1.0}), RotationPolicy{}), InvalidArgument);
}

TEST(Coverage, AllCubesAsBalls)
{
    const int p = 4;
    std::vector<Ball> balls;
    for (int a = 0; a < 16; ++a)
        for (int b = 0; b < 16; ++b) balls.emplace_back(Point{(a + 0.5) / 16, (b + 0.5) / 16}, 1.0 / 32);
    const auto rep = coverage_diagnostics(MeasureSpec::bernoulli({0.4, 0.1, 0.1, 0.4}), balls, p);
    EXPECT_NEAR(rep.rows.front().covered_mass, 1.0, 1e-12);
}

TEST(Coverage, EmptyTail)
{
    const auto rep = coverage_diagnostics(MeasureSpec::lebesgue(2), {}, 6);
    ASSERT_EQ(rep.rows.size(), 1u);
    EXPECT_EQ(rep.rows[0].covered_mass, 0.0);
}

TEST(Coverage, DivergentIidCoversAlmostEverything)
{
    BallSequenceSpec spec;
    spec.c = 0.5;
    spec.gamma = 2.0;
    Rng rng(2024);
    const auto mu = MeasureSpec::lebesgue(2);
    const auto balls = generate_balls(spec, mu, 10000, rng);
    const auto rep = coverage_diagnostics(mu, balls, 8);
    EXPECT_GE(rep.rows.front().covered_mass, 0.99);
    for (std::size_t i = 1; i < rep.rows.size(); ++i) {
        EXPECT_LE(rep.rows[i].covered_mass, rep.rows[i - 1].covered_mass);
        EXPECT_LE(rep.rows[i].ball_mass_sum, rep.rows[i - 1].ball_mass_sum);
    }
}

TEST(Json, SpecRoundTrip)
{
    BallSequenceSpec spec;
    spec.kind = SequenceKind::Jarnik;
    spec.q_max = 40;
    spec.rotation = {RotationKind::SeededRandomOrthogonal, {}, 9};
    const nlohmann::json j = spec;
    const auto back = j.get<BallSequenceSpec>();
    EXPECT_EQ(back.q_max, 40);
    EXPECT_EQ(back.rotation.seed, 9u);
    EXPECT_THROW((nlohmann::json{{"kind", "iid"}, {"c", 2.0}}.get<BallSequenceSpec>()), InvalidArgument);
}
