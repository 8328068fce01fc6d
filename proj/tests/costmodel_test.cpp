#include <gtest/gtest.h>

#include <random>

#include "refqual/costmodel.hpp"
#include "test_support.hpp"

using namespace refqual;
using refqual::testing::make_article;

namespace {

struct Toy {
    std::vector<Article> articles;
    ScoreMap gold;
    RunScores a, b;
};

// Two UoAs of 15 articles; model runs are gold plus independent noise.
Toy make_toy(int runs, std::uint64_t seed, double noise_a = 0.6, double noise_b = 0.9) {
    Toy t;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0, 1);
    for (int i = 0; i < 30; ++i) {
        const auto id = "a" + std::to_string(100 + i);
        t.articles.push_back(make_article(id, i < 15 ? 4 : 22, "x"));
        const double g = 1.0 + (i * 11 % 15) / 5.0;
        t.gold[id] = g;
        for (int k = 0; k < runs; ++k) {
            t.a[id].push_back(std::round(2 * std::clamp(g + noise_a * n(rng), 1.0, 4.0)) / 2);
            t.b[id].push_back(std::round(2 * std::clamp(g + noise_b * n(rng), 1.0, 4.0)) / 2);
        }
    }
    return t;
}

ScoreMap run_means(const RunScores& r) {
    ScoreMap m;
    for (const auto& [id, v] : r) {
        std::vector<double> x;
        for (const auto& s : v) x.push_back(*s);
        std::sort(x.begin(), x.end());
        double s = 0;
        for (double y : x) s += y;
        m[id] = s / static_cast<double>(x.size());
    }
    return m;
}

const ComboPoint& at(const CostCurve& c, int i, int j) {
    for (const auto& p : c.points)
        if (p.runs_a == i && p.runs_b == j) return p;
    throw std::out_of_range("no such point");
}

}  // namespace

TEST(Subsets, CountsAndBinomial) {
    EXPECT_EQ(binomial(5, 2), 10u);
    EXPECT_EQ(binomial(12, 6), 924u);
    EXPECT_EQ(binomial(3, 4), 0u);
    for (int k = 0; k <= 5; ++k) {
        const auto s = subsets_of_size(5, k);
        EXPECT_EQ(s.size(), binomial(5, k));
        for (auto m : s) EXPECT_EQ(std::popcount(m), k);
    }
}

TEST(CostCurve, UnitCostsAndSubsetCounts) {
    const auto t = make_toy(5, 1);
    const auto c = cost_curve(t.a, t.b, t.gold, t.articles);
    EXPECT_EQ(c.nominal_runs, 5);
    EXPECT_EQ(c.points.size(), 35u);
    EXPECT_DOUBLE_EQ(at(c, 1, 0).unit_cost, 10.0);
    EXPECT_DOUBLE_EQ(at(c, 0, 2).unit_cost, 2.0);
    EXPECT_DOUBLE_EQ(at(c, 2, 3).unit_cost, 23.0);
    std::uint64_t total = 0;
    for (const auto& p : c.points) {
        EXPECT_EQ(p.subset_count, binomial(5, p.runs_a) * binomial(5, p.runs_b));
        total += p.subset_count;
        EXPECT_FALSE(p.fallback);
    }
    EXPECT_EQ(total, 1023u);
}

TEST(CostCurve, FullMixEqualsCombinedWeightedCorrelation) {
    const auto t = make_toy(5, 2);
    const auto c = cost_curve(t.a, t.b, t.gold, t.articles);
    const auto combined = combine_models(run_means(t.a), run_means(t.b)).combined;
    CorrelationOptions no_ci;
    no_ci.with_ci = false;
    const double expected = weighted_mean_correlation(per_uoa_correlations("c", combined, t.gold, t.articles, no_ci).results);
    EXPECT_NEAR(at(c, 5, 5).mean_rho, expected, 1e-12);
    const double single_a =
        weighted_mean_correlation(per_uoa_correlations("a", run_means(t.a), t.gold, t.articles, no_ci).results);
    EXPECT_NEAR(at(c, 5, 0).mean_rho, single_a, 1e-12);
}

TEST(CostCurve, SingleRunPointIsMeanOverRuns) {
    const auto t = make_toy(3, 3);
    const auto c = cost_curve(t.a, t.b, t.gold, t.articles);
    CorrelationOptions no_ci;
    no_ci.with_ci = false;
    double sum = 0;
    for (int k = 0; k < 3; ++k) {
        ScoreMap m;
        for (const auto& [id, v] : t.b) m[id] = *v[static_cast<std::size_t>(k)];
        sum += weighted_mean_correlation(per_uoa_correlations("b", m, t.gold, t.articles, no_ci).results);
    }
    EXPECT_NEAR(at(c, 0, 1).mean_rho, sum / 3, 1e-12);
}

TEST(CostCurve, InvariantUnderRunRelabelling) {
    auto t = make_toy(4, 4);
    const auto before = cost_curve(t.a, t.b, t.gold, t.articles);
    for (auto& [id, v] : t.a) std::rotate(v.begin(), v.begin() + 1, v.end());
    for (auto& [id, v] : t.b) std::reverse(v.begin(), v.end());
    const auto after = cost_curve(t.a, t.b, t.gold, t.articles);
    ASSERT_EQ(before.points.size(), after.points.size());
    for (std::size_t k = 0; k < before.points.size(); ++k)
        EXPECT_NEAR(before.points[k].mean_rho, after.points[k].mean_rho, 1e-12);
}

TEST(CostCurve, RefusesTooManyRuns) {
    const auto t = make_toy(13, 5);
    EXPECT_THROW(cost_curve(t.a, t.b, t.gold, t.articles), DomainError);
    CostOptions o;
    o.max_runs = 2;
    const auto small = make_toy(3, 5);
    EXPECT_THROW(cost_curve(small.a, small.b, small.gold, small.articles, o), DomainError);
}

TEST(CostCurve, MissingRunUsesArticleMeanAndFlagsIt) {
    auto t = make_toy(3, 6);
    t.a.begin()->second[1].reset();
    const auto c = cost_curve(t.a, t.b, t.gold, t.articles);
    EXPECT_TRUE(at(c, 1, 0).fallback);
    EXPECT_FALSE(at(c, 0, 3).fallback);
}

TEST(CostCurve, InvalidCosts) {
    const auto t = make_toy(2, 7);
    CostOptions o;
    o.cost_b = 0;
    EXPECT_THROW(cost_curve(t.a, t.b, t.gold, t.articles, o), DomainError);
}

TEST(Pareto, SinglePointAndTies) {
    ComboPoint p{1, 0, 10, 0.4, 1, false};
    EXPECT_EQ(pareto_front({p}).size(), 1u);
    ComboPoint q{0, 10, 10, 0.5, 1, false};
    const auto f = pareto_front({p, q});
    ASSERT_EQ(f.size(), 1u);
    EXPECT_EQ(f[0].runs_b, 10);
}

TEST(Pareto, FrontIsMonotone) {
    const auto t = make_toy(5, 8);
    const auto f = pareto_front(cost_curve(t.a, t.b, t.gold, t.articles).points);
    ASSERT_FALSE(f.empty());
    for (std::size_t k = 1; k < f.size(); ++k) {
        EXPECT_GT(f[k].unit_cost, f[k - 1].unit_cost);
        EXPECT_GT(f[k].mean_rho, f[k - 1].mean_rho);
    }
}
