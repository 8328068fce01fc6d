#pragma once

// Rank correlation of indicators against gold-standard scores: Spearman with average
// ranks, percentile bootstrap intervals, theoretical-maximum scaling, article-weighted
// cross-UoA means, per-year trends and mean-score summaries.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "refqual/checksum.hpp"
#include "refqual/corpus.hpp"
#include "refqual/error.hpp"
#include "refqual/table.hpp"

namespace refqual {

using ScoreMap = std::map<std::string, double>;

/// Values closer than this (relative to max(1,|v|)) share a rank. Averaged scores
/// reached by different summation orders differ only by rounding, and must still tie.
inline constexpr double kTieTolerance = 1e-9;

/// Fractional (average) ranks, 1-based.
inline std::vector<double> average_ranks(std::span<const double> v, double tie_tolerance = kTieTolerance) {
    const std::size_t n = v.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        const double base = v[idx[i]];
        const double tol = tie_tolerance * std::max(1.0, std::abs(base));
        std::size_t j = i + 1;
        while (j < n && v[idx[j]] - base <= tol) ++j;
        const double r = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) ranks[idx[k]] = r;
        i = j;
    }
    return ranks;
}

/// Pearson product-moment correlation (two-pass). Throws DegenerateInput if either side is constant.
inline double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DomainError("pearson: length mismatch");
    const std::size_t n = a.size();
    if (n < 2) throw DegenerateInput("correlation needs at least two pairs");
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0 || sbb == 0) throw DegenerateInput("correlation undefined: constant vector");
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

inline bool all_tied(std::span<const double> ranks) {
    return std::all_of(ranks.begin(), ranks.end(), [&](double r) { return r == ranks.front(); });
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw DomainError("spearman: vectors differ in length");
    if (x.size() < 2) throw DegenerateInput("spearman needs at least two pairs");
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    if (all_tied(rx) || all_tied(ry)) throw DegenerateInput("spearman undefined: a vector is constant");
    return pearson(rx, ry);
}

// ---------------------------------------------------------------------------
// Bootstrap

struct BootstrapOptions {
    double level = 0.95;
    int resamples = 1000;
    std::uint64_t seed = 0;
    int max_redraws = -1;  // total degenerate redraws allowed; -1 means `resamples`
    unsigned threads = 1;
};

struct BootstrapInterval {
    double low = 0;
    double high = 0;
    int redraws = 0;
};

/// Type-7 (linear interpolation) sample quantile of sorted data.
inline double sorted_quantile(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw DomainError("quantile of empty sample");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Percentile interval of Spearman's rho over article-pair resamples drawn with
/// replacement. Resample b uses its own generator seeded from (seed, b), so the result
/// does not depend on thread count. Resamples with a constant side are redrawn.
inline BootstrapInterval bootstrap_ci(std::span<const double> x, std::span<const double> y,
                                      const BootstrapOptions& opt = {}) {
    if (x.size() != y.size()) throw DomainError("bootstrap_ci: vectors differ in length");
    if (x.size() < 2) throw DegenerateInput("bootstrap needs at least two pairs");
    if (!(opt.level > 0 && opt.level < 1)) throw DomainError("confidence level must be in (0,1)");
    if (opt.resamples < 1) throw DomainError("resamples must be positive");
    const std::size_t n = x.size();
    const auto B = static_cast<std::size_t>(opt.resamples);
    const int budget = opt.max_redraws < 0 ? opt.resamples : opt.max_redraws;

    std::vector<double> stats(B);
    std::vector<int> redraws(B, 0);

    auto run_range = [&](std::size_t begin, std::size_t end) {
        std::vector<double> bx(n), by(n);
        for (std::size_t b = begin; b < end; ++b) {
            std::mt19937_64 rng(splitmix64(opt.seed ^ splitmix64(0xb0075 + b)));
            std::uniform_int_distribution<std::size_t> pick(0, n - 1);
            for (int attempt = 0;; ++attempt) {
                for (std::size_t i = 0; i < n; ++i) {
                    const auto k = pick(rng);
                    bx[i] = x[k];
                    by[i] = y[k];
                }
                const auto rx = average_ranks(bx);
                const auto ry = average_ranks(by);
                if (!all_tied(rx) && !all_tied(ry)) {
                    stats[b] = pearson(rx, ry);
                    break;
                }
                redraws[b] = attempt + 1;
                if (attempt + 1 > budget) {
                    stats[b] = std::numeric_limits<double>::quiet_NaN();
                    break;
                }
            }
        }
    };

    const unsigned threads = std::max(1u, std::min<unsigned>(opt.threads, static_cast<unsigned>(B)));
    if (threads == 1) {
        run_range(0, B);
    } else {
        std::vector<std::jthread> pool;
        const std::size_t chunk = (B + threads - 1) / threads;
        for (unsigned t = 0; t < threads; ++t) {
            const std::size_t b0 = t * chunk, b1 = std::min(B, b0 + chunk);
            if (b0 < b1) pool.emplace_back(run_range, b0, b1);
        }
    }

    const int total_redraws = std::accumulate(redraws.begin(), redraws.end(), 0);
    if (total_redraws > budget || std::any_of(stats.begin(), stats.end(), [](double s) { return std::isnan(s); }))
        throw DegenerateInput("bootstrap: degenerate-resample budget of " + std::to_string(budget) +
                              " redraws exhausted (near-constant data)");
    std::sort(stats.begin(), stats.end());
    const double alpha = 1.0 - opt.level;
    return {sorted_quantile(stats, alpha / 2.0), sorted_quantile(stats, 1.0 - alpha / 2.0), total_redraws};
}

// ---------------------------------------------------------------------------
// Per-UoA correlation tables

struct CorrelationResult {
    std::string indicator_id;
    std::optional<int> uoa;  // nullopt is the pooled "ALL" row
    double rho = 0;
    double ci_low = std::numeric_limits<double>::quiet_NaN();
    double ci_high = std::numeric_limits<double>::quiet_NaN();
    std::size_t n = 0;
    std::optional<double> scaled_rho;

    std::string uoa_label() const { return uoa ? std::to_string(*uoa) : "ALL"; }
};

struct CorrelationOptions {
    bool with_ci = true;
    BootstrapOptions bootstrap;
};

struct CorrelationSet {
    std::vector<CorrelationResult> results;  // ascending UoA, then ALL
    std::vector<std::string> warnings;
};

/// Paired (indicator, gold) vectors per UoA over articles present in both maps,
/// in ascending article_id order.
struct PairedSlice {
    int uoa = 0;
    std::vector<std::string> ids;
    std::vector<double> indicator;
    std::vector<double> gold;
};

inline std::vector<PairedSlice> paired_by_uoa(const ScoreMap& indicator, const ScoreMap& gold,
                                              const std::vector<Article>& articles) {
    std::map<int, std::vector<const Article*>> by_uoa;
    for (const auto& a : articles) by_uoa[a.uoa].push_back(&a);
    std::vector<PairedSlice> out;
    for (auto& [uoa, list] : by_uoa) {
        std::sort(list.begin(), list.end(), [](const Article* a, const Article* b) { return a->article_id < b->article_id; });
        PairedSlice s;
        s.uoa = uoa;
        for (const auto* a : list) {
            auto i = indicator.find(a->article_id);
            auto g = gold.find(a->article_id);
            if (i == indicator.end() || g == gold.end()) continue;
            s.ids.push_back(a->article_id);
            s.indicator.push_back(i->second);
            s.gold.push_back(g->second);
        }
        out.push_back(std::move(s));
    }
    return out;
}

inline std::uint64_t uoa_seed(std::uint64_t seed, std::optional<int> uoa) {
    return splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(uoa ? *uoa : 0) + 0x5eed));
}

/// One row per UoA with at least two usable pairs, plus a pooled ALL row when two or
/// more UoAs contribute. Degenerate UoAs are skipped with a warning.
inline CorrelationSet per_uoa_correlations(const std::string& indicator_id, const ScoreMap& indicator,
                                           const ScoreMap& gold, const std::vector<Article>& articles,
                                           const CorrelationOptions& options = {}) {
    CorrelationSet out;
    std::vector<double> all_ind, all_gold;
    int contributing = 0;

    auto evaluate = [&](std::optional<int> uoa, std::span<const double> ind, std::span<const double> g) {
        CorrelationResult r;
        r.indicator_id = indicator_id;
        r.uoa = uoa;
        r.n = ind.size();
        const std::string where = indicator_id + " UoA " + r.uoa_label();
        if (r.n < 2) {
            out.warnings.push_back(where + ": skipped, n=" + std::to_string(r.n) + " < 2");
            return false;
        }
        try {
            r.rho = spearman(ind, g);
        } catch (const DegenerateInput& e) {
            out.warnings.push_back(where + ": skipped, " + e.what());
            return false;
        }
        if (options.with_ci) {
            auto bo = options.bootstrap;
            bo.seed = uoa_seed(options.bootstrap.seed, uoa);
            try {
                const auto ci = bootstrap_ci(ind, g, bo);
                r.ci_low = ci.low;
                r.ci_high = ci.high;
                if (ci.redraws > 0)
                    out.warnings.push_back(where + ": " + std::to_string(ci.redraws) + " degenerate resample(s) redrawn");
            } catch (const DegenerateInput& e) {
                out.warnings.push_back(where + ": no confidence interval, " + e.what());
            }
        }
        out.results.push_back(std::move(r));
        return true;
    };

    for (const auto& s : paired_by_uoa(indicator, gold, articles)) {
        if (evaluate(s.uoa, s.indicator, s.gold)) {
            ++contributing;
            all_ind.insert(all_ind.end(), s.indicator.begin(), s.indicator.end());
            all_gold.insert(all_gold.end(), s.gold.begin(), s.gold.end());
        }
    }
    if (contributing >= 2) evaluate(std::nullopt, all_ind, all_gold);
    return out;
}

inline CorrelationResult scale_to_max(CorrelationResult r, double rho_max) {
    if (!(rho_max > 0)) throw DomainError("theoretical maximum correlation must be positive");
    r.scaled_rho = r.rho / rho_max;
    return r;
}

/// Scales each per-UoA result by its UoA's theoretical maximum. Results without a
/// maximum (including ALL unless key 0 is present) stay unscaled, with a warning.
inline void apply_theoretical_max(CorrelationSet& set, const std::map<int, double>& maxima) {
    for (auto& r : set.results) {
        const int key = r.uoa.value_or(0);
        auto it = maxima.find(key);
        if (it == maxima.end()) {
            set.warnings.push_back(r.indicator_id + " UoA " + r.uoa_label() + ": no theoretical maximum, left unscaled");
            continue;
        }
        r = scale_to_max(std::move(r), it->second);
    }
}

/// Sum of w_i * rho_i over sum of w_i.
inline double weighted_mean_correlation(std::span<const double> rhos, std::span<const double> weights) {
    if (rhos.size() != weights.size()) throw DomainError("every correlation needs a weight");
    double num = 0, den = 0;
    for (std::size_t i = 0; i < rhos.size(); ++i) {
        if (weights[i] < 0) throw DomainError("negative weight");
        num += weights[i] * rhos[i];
        den += weights[i];
    }
    if (den == 0) throw DomainError("weighted mean correlation: all weights are zero");
    return num / den;
}

/// Article-count weighted mean over the per-UoA rows (the ALL row is ignored).
inline double weighted_mean_correlation(const std::vector<CorrelationResult>& results) {
    std::vector<double> rhos, weights;
    for (const auto& r : results) {
        if (!r.uoa) continue;
        rhos.push_back(r.rho);
        weights.push_back(static_cast<double>(r.n));
    }
    return weighted_mean_correlation(rhos, weights);
}

inline Table correlations_table(const std::vector<CorrelationResult>& results) {
    Table t;
    t.header = {"indicator_id", "uoa", "n", "rho", "ci_low", "ci_high", "scaled_rho"};
    for (const auto& r : results)
        t.rows.push_back({r.indicator_id, r.uoa_label(), std::to_string(r.n), fmt_num(r.rho), fmt_num(r.ci_low),
                          fmt_num(r.ci_high), fmt_opt(r.scaled_rho)});
    return t;
}

/// For each UoA and pair of indicators with intervals: do the 95% intervals overlap?
inline Table ci_overlap_table(const std::vector<CorrelationResult>& results) {
    Table t;
    t.header = {"uoa", "indicator_a", "indicator_b", "rho_a", "rho_b", "overlap"};
    std::map<std::string, std::vector<const CorrelationResult*>> by_uoa;
    std::vector<std::string> order;
    for (const auto& r : results) {
        if (std::isnan(r.ci_low)) continue;
        auto& v = by_uoa[r.uoa_label()];
        if (v.empty()) order.push_back(r.uoa_label());
        v.push_back(&r);
    }
    for (const auto& u : order) {
        const auto& v = by_uoa[u];
        for (std::size_t i = 0; i < v.size(); ++i)
            for (std::size_t j = i + 1; j < v.size(); ++j) {
                const bool overlap = v[i]->ci_low <= v[j]->ci_high && v[j]->ci_low <= v[i]->ci_high;
                t.rows.push_back({u, v[i]->indicator_id, v[j]->indicator_id, fmt_num(v[i]->rho), fmt_num(v[j]->rho),
                                  overlap ? "1" : "0"});
            }
    }
    return t;
}

// ---------------------------------------------------------------------------
// Year trend

struct YearTrendRow {
    int year = 0;
    std::string indicator_id;
    double weighted_rho = 0;
    std::size_t n_articles = 0;
    std::size_t n_uoas = 0;
};

struct YearTrend {
    std::vector<YearTrendRow> rows;  // ascending year, then indicator order as given
    std::vector<std::string> warnings;
};

inline YearTrend per_year_trend(const std::vector<std::pair<std::string, ScoreMap>>& indicators, const ScoreMap& gold,
                                const std::vector<Article>& articles) {
    std::map<int, std::vector<Article>> by_year;
    for (const auto& a : articles) by_year[a.pub_year].push_back(a);
    YearTrend out;
    CorrelationOptions no_ci;
    no_ci.with_ci = false;
    for (const auto& [year, slice] : by_year) {
        for (const auto& [id, values] : indicators) {
            auto set = per_uoa_correlations(id, values, gold, slice, no_ci);
            for (auto& w : set.warnings) out.warnings.push_back(std::to_string(year) + ": " + w);
            std::size_t n = 0, uoas = 0;
            for (const auto& r : set.results)
                if (r.uoa) {
                    n += r.n;
                    ++uoas;
                }
            if (uoas == 0) {
                out.warnings.push_back(std::to_string(year) + ": " + id + " has no usable UoA slice");
                continue;
            }
            out.rows.push_back({year, id, weighted_mean_correlation(set.results), n, uoas});
        }
    }
    return out;
}

inline Table year_trend_table(const YearTrend& trend) {
    Table t;
    t.header = {"year", "indicator_id", "weighted_rho", "n_articles", "n_uoas"};
    for (const auto& r : trend.rows)
        t.rows.push_back({std::to_string(r.year), r.indicator_id, fmt_num(r.weighted_rho), std::to_string(r.n_articles),
                          std::to_string(r.n_uoas)});
    return t;
}

// ---------------------------------------------------------------------------
// Mean scores

struct MeanScoreRow {
    std::string source;
    std::size_t n = 0;
    double mean = 0;
};

struct MeanSummary {
    std::vector<MeanScoreRow> rows;
    std::vector<std::string> warnings;
};

/// Mean of each score source. When `restrict_to` is non-empty only those articles count.
inline MeanSummary mean_score_summary(const std::vector<std::pair<std::string, ScoreMap>>& sources,
                                      const std::vector<std::string>& restrict_to = {}) {
    MeanSummary out;
    for (const auto& [name, values] : sources) {
        double sum = 0;
        std::size_t n = 0;
        if (restrict_to.empty()) {
            for (const auto& [id, v] : values) {
                sum += v;
                ++n;
            }
        } else {
            for (const auto& id : restrict_to)
                if (auto it = values.find(id); it != values.end()) {
                    sum += it->second;
                    ++n;
                }
        }
        if (n == 0) {
            out.warnings.push_back("score source " + name + " is empty; omitted");
            continue;
        }
        out.rows.push_back({name, n, sum / static_cast<double>(n)});
    }
    return out;
}

inline Table mean_summary_table(const MeanSummary& s) {
    Table t;
    t.header = {"source", "n", "mean"};
    for (const auto& r : s.rows) t.rows.push_back({r.source, std::to_string(r.n), fmt_num(r.mean)});
    return t;
}

inline std::map<int, double> theoretical_max_from(const Table& t) {
    const auto c_u = t.require_column("uoa");
    const auto c_r = t.require_column("rho_max");
    std::map<int, double> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const auto v = parse_double(row[c_r]);
        if (!v || !(*v > 0) || *v > 1)
            throw ParseError(t.source, t.row_lines[r], c_r + 1, "rho_max must be in (0,1]");
        int key = 0;
        if (trim(row[c_u]) != "ALL") {
            const auto u = parse_int(row[c_u]);
            if (!u || !valid_uoa(*u)) throw ParseError(t.source, t.row_lines[r], c_u + 1, "uoa must be 1..34 or ALL");
            key = static_cast<int>(*u);
        }
        if (!out.emplace(key, *v).second) throw ParseError(t.source, t.row_lines[r], c_u + 1, "duplicate uoa");
    }
    return out;
}

}  // namespace refqual
