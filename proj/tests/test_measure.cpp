#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "ubiquity/measure.hpp"

using namespace ubiquity;

namespace {

const MeasureSpec kSkewed = MeasureSpec::bernoulli({0.25, 0.75});
const MeasureSpec kChain = MeasureSpec::markov({0.5, 0.5}, {0.3, 0.7, 0.6, 0.4});

DyadicCube random_cube(Rng& rng, int d, int level)
{
    IndexVec k(d);
    for (auto& x : k) x = level == 0 ? 0 : static_cast<std::int64_t>(rng.next() % (std::uint64_t{1} << level));
    return DyadicCube(level, k);
}

}  // namespace

TEST(MeasureSpec, Validation)
{
    EXPECT_THROW(MeasureSpec::bernoulli({0.5, 0.6}), InvalidArgument);
    EXPECT_THROW(MeasureSpec::bernoulli({1.0, 0.0}), InvalidArgument);
    EXPECT_THROW(MeasureSpec::bernoulli({0.2, 0.3, 0.5}), InvalidArgument);
    EXPECT_THROW(MeasureSpec::markov({0.5, 0.5}, {0.5, 0.5, 1.0, 0.0}), InvalidArgument);
    EXPECT_THROW(MeasureSpec::lebesgue(0), InvalidArgument);
}

TEST(MeasureSpec, JsonRoundTrip)
{
    for (const auto& mu : {MeasureSpec::lebesgue(3), kSkewed, kChain}) {
        const nlohmann::json j = mu;
        EXPECT_EQ(j.get<MeasureSpec>(), mu);
    }
    EXPECT_THROW((nlohmann::json{{"kind", "gibbs"}}.get<MeasureSpec>()), InvalidArgument);
}

TEST(CubeMass, Examples)
{
    EXPECT_EQ(cube_mass(MeasureSpec::lebesgue(2), DyadicCube(3, {1, 5})), std::ldexp(1.0, -6));
    EXPECT_EQ(cube_mass(kSkewed, DyadicCube(2, {3})), 0.5625);
    EXPECT_EQ(cube_mass(kChain, DyadicCube::root(1)), 1.0);
    EXPECT_NEAR(log2_cube_mass(kSkewed, DyadicCube(2, {3})), std::log2(0.5625), 1e-15);
}

TEST(CubeMass, ChildrenConserveParent)
{
    Rng rng(1);
    const auto plane = MeasureSpec::bernoulli({0.4, 0.1, 0.1, 0.4});
    const auto leb = MeasureSpec::lebesgue(3);
    for (int t = 0; t < 500; ++t) {
        const int level = static_cast<int>(rng.next() % 21);
        for (const auto* mu : {&kSkewed, &kChain, &plane, &leb}) {
            const auto cube = random_cube(rng, mu->d, level);
            CompensatedSum s;
            for (const auto& c : cube_children(cube)) s.add(cube_mass(*mu, c));
            const double parent = cube_mass(*mu, cube);
            if (mu == &kSkewed || mu == &leb) EXPECT_EQ(s.value(), parent);  // dyadic weights: exact in binary
            else if (mu == &plane) EXPECT_NEAR(s.value(), parent, 4 * std::ldexp(parent, -52));
            else EXPECT_NEAR(s.value(), parent, 1e-12);
        }
    }
}

TEST(CubeMass, FullSupport)
{
    Rng rng(2);
    for (int t = 0; t < 1000; ++t) EXPECT_GT(cube_mass(kChain, random_cube(rng, 1, 30)), 0.0);
}

TEST(BallMass, LebesgueExamples)
{
    const auto leb1 = MeasureSpec::lebesgue(1);
    const auto b = ball_mass_bounds(leb1, Ball({0.5}, 0.25), 4);
    EXPECT_EQ(b.lower, 0.5);
    EXPECT_EQ(b.upper, 0.5);
    const auto full = ball_mass_bounds(MeasureSpec::lebesgue(2), Ball({0.5, 0.5}, 0.5), 3);
    EXPECT_EQ(full.lower, 1.0);
    EXPECT_EQ(full.upper, 1.0);
}

TEST(BallMass, NestedAcrossLevels)
{
    Rng rng(3);
    const auto plane = MeasureSpec::bernoulli({0.4, 0.1, 0.1, 0.4});
    for (int t = 0; t < 100; ++t) {
        const double r = 0.02 + 0.2 * rng.uniform();
        const Ball ball({r + (1 - 2 * r) * rng.uniform(), r + (1 - 2 * r) * rng.uniform()}, r);
        MassBounds prev{0.0, 1.0};
        for (int p = 1; p <= 9; ++p) {
            const auto b = ball_mass_bounds(plane, ball, p);
            EXPECT_LE(b.lower, b.upper);
            EXPECT_GE(b.lower, prev.lower - 1e-15);
            EXPECT_LE(b.upper, prev.upper + 1e-15);
            prev = b;
        }
    }
}

TEST(BallMass, BracketsMonteCarlo)
{
    Rng rng(4);
    const int n = 100000;
    std::vector<Point> pts;
    for (int i = 0; i < n; ++i) pts.push_back(sample_point(kSkewed, rng, 40));
    for (int t = 0; t < 100; ++t) {
        const double r = 0.01 + 0.2 * rng.uniform();
        const Ball ball({r + (1 - 2 * r) * rng.uniform()}, r);
        int hit = 0;
        for (const auto& x : pts) hit += linf_distance(x, ball.center) <= r ? 1 : 0;
        const double p = static_cast<double>(hit) / n;
        const auto b = ball_mass_bounds(kSkewed, ball, 12);
        const double sigma = std::sqrt(std::max(b.upper * (1 - b.upper), b.lower * (1 - b.lower)) / n) + 1e-6;
        EXPECT_GE(p, b.lower - 4 * sigma);
        EXPECT_LE(p, b.upper + 4 * sigma);
    }
}

TEST(BallMass, BudgetEnforced)
{
    const auto plane = MeasureSpec::bernoulli({0.4, 0.1, 0.1, 0.4});
    EXPECT_THROW(ball_mass_bounds(plane, Ball({0.5, 0.5}, 0.3), 20, 1000), BudgetExceeded);
}

TEST(Dimension, Values)
{
    EXPECT_EQ(dimension(MeasureSpec::lebesgue(2)), 2.0);
    EXPECT_NEAR(dimension(kSkewed), 0.8112781244591328, 1e-12);
    EXPECT_NEAR(dimension(MeasureSpec::bernoulli({0.25, 0.25, 0.25, 0.25})), 2.0, 1e-12);
    const double h = dimension(kChain);
    EXPECT_GT(h, 0.0);
    EXPECT_LT(h, 1.0);
    // stationary vector of (0.3,0.7;0.6,0.4) is (6/13, 7/13)
    const auto pi = stationary_distribution(kChain);
    EXPECT_NEAR(pi[0], 6.0 / 13, 1e-12);
}

TEST(Dimension, BoundedByAmbient)
{
    Rng rng(6);
    for (int t = 0; t < 200; ++t) {
        const int d = 1 + static_cast<int>(rng.next() % 3);
        std::vector<double> w(1u << d);
        double total = 0.0;
        for (auto& x : w) total += (x = 0.05 + rng.uniform());
        for (auto& x : w) x /= total;
        double drift = 0.0;
        for (std::size_t i = 1; i < w.size(); ++i) drift += std::abs(w[i] - w[0]);
        w.back() = 1.0 - std::accumulate(w.begin(), w.end() - 1, 0.0);
        const double h = dimension(MeasureSpec::bernoulli(w));
        EXPECT_GE(h, 0.0);
        EXPECT_LE(h, d + 1e-12);
        if (drift > 1e-6) EXPECT_LT(h, d - 1e-12);
    }
}

TEST(Dimension, LocalDimensionMonteCarlo)
{
    Rng rng(7);
    const int depth = 20, n = 4000;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += -log2_cube_mass(kSkewed, sample_cube(kSkewed, rng, depth)) / depth;
    EXPECT_NEAR(acc / n, dimension(kSkewed), 0.02);
}

TEST(Rescale, BernoulliAndLebesgueUnchanged)
{
    Rng rng(8);
    for (int t = 0; t < 50; ++t) {
        const auto cube = random_cube(rng, 1, static_cast<int>(rng.next() % 20));
        EXPECT_EQ(rescale(kSkewed, cube), kSkewed);
        EXPECT_EQ(rescale(MeasureSpec::lebesgue(1), cube), MeasureSpec::lebesgue(1));
    }
}

TEST(Rescale, MarkovConditionsOnLastDigit)
{
    const auto r = rescale(kChain, DyadicCube(1, {1}));
    EXPECT_EQ(r.initial, (std::vector<double>{0.6, 0.4}));
    // oracle: mu^D(D') = mu(DD') / mu(D) at depth 10
    Rng rng(9);
    for (int t = 0; t < 100; ++t) {
        const auto outer = random_cube(rng, 1, 1 + static_cast<int>(rng.next() % 5));
        const auto inner = random_cube(rng, 1, 10);
        const double direct = cube_mass(kChain, cube_concat(outer, inner)) / cube_mass(kChain, outer);
        EXPECT_NEAR(cube_mass(rescale(kChain, outer), inner), direct, 1e-14);
    }
}

TEST(QuasiBernoulli, Constants)
{
    EXPECT_EQ(quasi_bernoulli_constant(kSkewed, 8), 1.0);
    EXPECT_EQ(quasi_bernoulli_constant(MeasureSpec::lebesgue(2), 8), 1.0);
    const double c8 = quasi_bernoulli_constant(kChain, 8);
    const double c12 = quasi_bernoulli_constant(kChain, 12);
    EXPECT_GT(c8, 1.0);
    EXPECT_GE(c12, c8);
    EXPECT_NEAR(c8, c12, 1e-3 * c8);
}

TEST(QuasiBernoulli, BernoulliConcatenationRatio)
{
    Rng rng(10);
    const auto plane = MeasureSpec::bernoulli({0.4, 0.1, 0.1, 0.4});
    for (int t = 0; t < 200; ++t) {
        const auto a = random_cube(rng, 2, static_cast<int>(rng.next() % 12));
        const auto b = random_cube(rng, 2, static_cast<int>(rng.next() % 12));
        EXPECT_NEAR(cube_mass(plane, cube_concat(a, b)) / cube_mass(plane, a) / cube_mass(plane, b), 1.0, 1e-12);
    }
}

TEST(Sampling, FrequenciesMatchWeights)
{
    Rng rng(11);
    const int n = 100000;
    int right = 0;
    for (int i = 0; i < n; ++i) right += sample_point(kSkewed, rng, 30)[0] >= 0.5 ? 1 : 0;
    EXPECT_NEAR(static_cast<double>(right) / n, 0.75, 0.005);

    const auto plane = MeasureSpec::bernoulli({0.4, 0.1, 0.1, 0.4});
    std::array<int, 4> hits{};
    for (int i = 0; i < n; ++i) {
        const auto c = sample_cube(plane, rng, 1);
        ++hits[c.digit(1)];
    }
    for (int c = 0; c < 4; ++c) {
        const double w = plane.weights[c], sigma = std::sqrt(n * w * (1 - w));
        EXPECT_NEAR(hits[c], n * w, 4 * sigma);
    }
}

TEST(Sampling, Deterministic)
{
    Rng a(5), b(5);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_point(kChain, a, 20), sample_point(kChain, b, 20));
}

TEST(ESet, LebesgueInteriorAndBoundary)
{
    const auto leb = MeasureSpec::lebesgue(2);
    ESetParams p{2.0, 0.5, 1.0 / 16, 12};
    EXPECT_TRUE(e_set_member(leb, {0.5, 0.5}, p));
    EXPECT_TRUE(e_set_member(leb, {0.3, 0.71}, p));
    EXPECT_FALSE(e_set_member(leb, {0.0, 0.5}, p));
    EXPECT_FALSE(e_set_member(leb, {0.5, 1.0}, p));
    EXPECT_THROW(e_set_member(leb, {0.5, 0.5}, ESetParams{2.0, 0.5, 1.0 / 16, 2}), InvalidArgument);
    EXPECT_THROW(e_set_member(leb, {0.5, 0.5}, ESetParams{0.1, 0.5, 1.0 / 16, 12}), InvalidArgument);
}

TEST(ESet, MonotoneInEpsilonAndRho)
{
    Rng rng(12);
    const ESetParams base{dimension(kSkewed), 0.1, 1.0 / 64, 14};
    for (int t = 0; t < 300; ++t) {
        const Point x = sample_point(kSkewed, rng, 40);
        if (!e_set_member(kSkewed, x, base)) continue;
        ESetParams wider = base;
        wider.epsilon = 0.2;
        wider.rho = 1.0 / 128;
        EXPECT_TRUE(e_set_member(kSkewed, x, wider));
    }
}

TEST(ESet, AdaptiveRhoReachesHalf)
{
    Rng rng(13);
    ESetParams params{dimension(kSkewed), 0.1, 0.5, 1};
    const auto choice = adaptive_rho(kSkewed, params, 8, 2000, rng);
    EXPECT_GE(choice.accepted_fraction, 0.5);
    params.rho = choice.rho;
    params.probe_depth = choice.probe_depth;
    Rng fresh(14);
    int ok = 0;
    for (int i = 0; i < 10000; ++i) ok += e_set_member(kSkewed, sample_point(kSkewed, fresh, 40), params) ? 1 : 0;
    EXPECT_GE(ok, 4700);
}
