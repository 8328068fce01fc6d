#pragma once

// Correlation attainable by averaging i runs of model A with j runs of model B,
// against the cost of those i + j queries.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "refqual/analysis.hpp"
#include "refqual/corpus.hpp"
#include "refqual/error.hpp"
#include "refqual/report_parser.hpp"
#include "refqual/table.hpp"

namespace refqual {

/// article_id -> score of run k at index k-1 (nullopt when that run produced no score).
using RunScores = std::map<std::string, std::vector<std::optional<double>>>;

inline RunScores run_scores_for(const std::vector<ParsedScore>& scores, const std::string& model_id, int nominal_runs) {
    RunScores out;
    for (const auto& s : scores) {
        if (s.key.model_id != model_id) continue;
        if (s.key.run_index < 1 || s.key.run_index > nominal_runs)
            throw DataError("run index " + std::to_string(s.key.run_index) + " outside 1.." + std::to_string(nominal_runs));
        auto& v = out[s.key.article_id];
        v.resize(static_cast<std::size_t>(nominal_runs));
        v[static_cast<std::size_t>(s.key.run_index - 1)] = s.resolved;
    }
    return out;
}

struct ComboPoint {
    int runs_a = 0;
    int runs_b = 0;
    double unit_cost = 0;
    double mean_rho = 0;
    std::uint64_t subset_count = 0;
    bool fallback = false;  // some subset used an article's available-run mean for a missing run
};

struct CostOptions {
    double cost_a = 10.0;
    double cost_b = 1.0;
    int max_runs = 12;  // combinatorial guard on N
};

struct CostCurve {
    int nominal_runs = 0;
    std::vector<ComboPoint> points;  // (i, j) in lexicographic order, (0,0) omitted
    std::vector<std::string> warnings;
};

inline std::uint64_t binomial(int n, int k) {
    if (k < 0 || k > n) return 0;
    std::uint64_t r = 1;
    for (int i = 1; i <= k; ++i) r = r * static_cast<std::uint64_t>(n - k + i) / static_cast<std::uint64_t>(i);
    return r;
}

/// All k-element subsets of {0..n-1} as bitmasks, in lexicographic order of members.
inline std::vector<std::uint32_t> subsets_of_size(int n, int k) {
    std::vector<std::uint32_t> out;
    std::vector<int> idx(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) idx[static_cast<std::size_t>(i)] = i;
    while (true) {
        std::uint32_t mask = 0;
        for (int i : idx) mask |= 1u << i;
        out.push_back(mask);
        int p = k - 1;
        while (p >= 0 && idx[static_cast<std::size_t>(p)] == n - k + p) --p;
        if (p < 0) break;
        ++idx[static_cast<std::size_t>(p)];
        for (int q = p + 1; q < k; ++q) idx[static_cast<std::size_t>(q)] = idx[static_cast<std::size_t>(q - 1)] + 1;
    }
    return out;
}

/// Pairwise summation; the result depends only on the values' order, not on how they were produced.
inline double pairwise_sum(std::span<const double> v) {
    if (v.size() <= 8) {
        double s = 0;
        for (double x : v) s += x;
        return s;
    }
    const auto h = v.size() / 2;
    return pairwise_sum(v.subspan(0, h)) + pairwise_sum(v.subspan(h));
}

namespace detail {

struct CostArticle {
    std::vector<std::optional<double>> a, b;
    double mean_a = 0, mean_b = 0;
    bool complete_a = true, complete_b = true;
};

struct CostUoa {
    int uoa = 0;
    std::vector<CostArticle> articles;
    std::vector<double> gold_ranks;
};

inline double model_sum(const std::vector<std::optional<double>>& runs, std::uint32_t mask, int count, double fallback_mean,
                        bool& used_fallback) {
    double s = 0;
    for (std::size_t k = 0; k < runs.size(); ++k) {
        if (!(mask & (1u << k))) continue;
        if (!runs[k]) {
            used_fallback = true;
            return count * fallback_mean;
        }
        s += *runs[k];
    }
    return s;
}

}  // namespace detail

/// For every (i, j) with 0 <= i, j <= N and i + j >= 1, averages every size-i subset of
/// model A's runs with every size-j subset of model B's runs, computes the article-weighted
/// mean of per-UoA Spearman correlations against gold for each subset pair, and reports
/// the mean over subset pairs. Subsets stand in for run orderings: a mean does not depend
/// on order. Only articles with at least one run from each model and a gold score count.
inline CostCurve cost_curve(const RunScores& runs_a, const RunScores& runs_b, const ScoreMap& gold,
                            const std::vector<Article>& articles, const CostOptions& options = {}) {
    if (!(options.cost_a > 0 && options.cost_b > 0)) throw DomainError("unit costs must be positive");
    CostCurve out;
    std::size_t n_runs = 0;
    for (const auto& [id, v] : runs_a) n_runs = std::max(n_runs, v.size());
    for (const auto& [id, v] : runs_b) {
        if (!runs_a.empty() && !v.empty() && n_runs && v.size() != n_runs)
            throw DomainError("both models need the same nominal number of runs");
        n_runs = std::max(n_runs, v.size());
    }
    const int N = static_cast<int>(n_runs);
    if (N < 1) throw DomainError("no runs to analyse");
    if (N > options.max_runs)
        throw DomainError("N = " + std::to_string(N) + " runs exceeds the combinatorial limit of " +
                          std::to_string(options.max_runs));
    out.nominal_runs = N;

    std::map<int, std::vector<const Article*>> by_uoa;
    for (const auto& a : articles) by_uoa[a.uoa].push_back(&a);
    std::vector<detail::CostUoa> uoas;
    for (auto& [uoa, list] : by_uoa) {
        std::sort(list.begin(), list.end(), [](const Article* x, const Article* y) { return x->article_id < y->article_id; });
        detail::CostUoa cu;
        cu.uoa = uoa;
        std::vector<double> g;
        for (const auto* art : list) {
            auto ia = runs_a.find(art->article_id);
            auto ib = runs_b.find(art->article_id);
            auto ig = gold.find(art->article_id);
            if (ia == runs_a.end() || ib == runs_b.end() || ig == gold.end()) continue;
            detail::CostArticle ca{ia->second, ib->second};
            ca.a.resize(n_runs);
            ca.b.resize(n_runs);
            auto mean_of = [](const std::vector<std::optional<double>>& v, bool& complete) {
                std::vector<double> vals;
                for (const auto& x : v) {
                    if (x)
                        vals.push_back(*x);
                    else
                        complete = false;
                }
                std::sort(vals.begin(), vals.end());
                double s = 0;
                for (double x : vals) s += x;
                return vals.empty() ? std::optional<double>{} : std::optional<double>{s / static_cast<double>(vals.size())};
            };
            const auto ma = mean_of(ca.a, ca.complete_a);
            const auto mb = mean_of(ca.b, ca.complete_b);
            if (!ma || !mb) continue;
            ca.mean_a = *ma;
            ca.mean_b = *mb;
            cu.articles.push_back(std::move(ca));
            g.push_back(ig->second);
        }
        if (cu.articles.size() < 2) {
            out.warnings.push_back("UoA " + std::to_string(uoa) + ": fewer than two articles with runs from both models");
            continue;
        }
        cu.gold_ranks = average_ranks(g);
        if (all_tied(cu.gold_ranks)) {
            out.warnings.push_back("UoA " + std::to_string(uoa) + ": constant gold scores, skipped");
            continue;
        }
        uoas.push_back(std::move(cu));
    }
    if (uoas.empty()) throw DegenerateInput("cost curve: no UoA has usable data");

    std::size_t degenerate_slices = 0;
    std::vector<double> values, rhos, weights;
    for (int i = 0; i <= N; ++i) {
        const auto subsets_a = subsets_of_size(N, i);
        for (int j = 0; j <= N; ++j) {
            if (i + j == 0) continue;
            const auto subsets_b = subsets_of_size(N, j);
            ComboPoint p;
            p.runs_a = i;
            p.runs_b = j;
            p.unit_cost = i * options.cost_a + j * options.cost_b;
            std::vector<double> subset_rhos;
            subset_rhos.reserve(subsets_a.size() * subsets_b.size());
            for (auto sa : subsets_a) {
                for (auto sb : subsets_b) {
                    rhos.clear();
                    weights.clear();
                    for (const auto& cu : uoas) {
                        values.resize(cu.articles.size());
                        for (std::size_t k = 0; k < cu.articles.size(); ++k) {
                            const auto& ca = cu.articles[k];
                            bool fb = false;
                            const double s = (i ? detail::model_sum(ca.a, sa, i, ca.mean_a, fb) : 0.0) +
                                             (j ? detail::model_sum(ca.b, sb, j, ca.mean_b, fb) : 0.0);
                            p.fallback = p.fallback || fb;
                            values[k] = s / static_cast<double>(i + j);
                        }
                        const auto ranks = average_ranks(values);
                        if (all_tied(ranks)) {
                            ++degenerate_slices;
                            continue;
                        }
                        rhos.push_back(pearson(ranks, cu.gold_ranks));
                        weights.push_back(static_cast<double>(cu.articles.size()));
                    }
                    if (rhos.empty()) {
                        ++degenerate_slices;
                        continue;
                    }
                    subset_rhos.push_back(weighted_mean_correlation(rhos, weights));
                }
            }
            p.subset_count = subsets_a.size() * subsets_b.size();
            if (subset_rhos.empty()) {
                out.warnings.push_back("(" + std::to_string(i) + "," + std::to_string(j) + "): every subset was degenerate");
                continue;
            }
            p.mean_rho = pairwise_sum(subset_rhos) / static_cast<double>(subset_rhos.size());
            out.points.push_back(p);
        }
    }
    if (degenerate_slices)
        out.warnings.push_back(std::to_string(degenerate_slices) + " constant-score UoA slice(s) skipped across subsets");
    return out;
}

/// Points not dominated in (lower cost, higher mean_rho), sorted by cost then rho descending.
inline std::vector<ComboPoint> pareto_front(const std::vector<ComboPoint>& points) {
    std::vector<ComboPoint> front;
    for (const auto& p : points) {
        const bool dominated = std::any_of(points.begin(), points.end(), [&](const ComboPoint& q) {
            return q.unit_cost <= p.unit_cost && q.mean_rho >= p.mean_rho &&
                   (q.unit_cost < p.unit_cost || q.mean_rho > p.mean_rho);
        });
        if (!dominated) front.push_back(p);
    }
    std::stable_sort(front.begin(), front.end(), [](const ComboPoint& a, const ComboPoint& b) {
        return a.unit_cost != b.unit_cost ? a.unit_cost < b.unit_cost : a.mean_rho > b.mean_rho;
    });
    return front;
}

inline Table cost_curve_table(const CostCurve& curve) {
    const auto front = pareto_front(curve.points);
    auto on_front = [&](const ComboPoint& p) {
        return std::any_of(front.begin(), front.end(),
                           [&](const ComboPoint& f) { return f.runs_a == p.runs_a && f.runs_b == p.runs_b; });
    };
    Table t;
    t.header = {"runs_a", "runs_b", "unit_cost", "subset_count", "mean_rho", "pareto_flag", "fallback"};
    for (const auto& p : curve.points)
        t.rows.push_back({std::to_string(p.runs_a), std::to_string(p.runs_b), fmt_num(p.unit_cost),
                          std::to_string(p.subset_count), fmt_num(p.mean_rho), on_front(p) ? "1" : "0",
                          p.fallback ? "1" : "0"});
    return t;
}

}  // namespace refqual
