#pragma once

// Synthetic corpora with known latent article quality, for demos and tests.
// Departments have a quality centre; articles scatter around it; published profiles
// are the star histogram of the rounded article scores; citations grow with quality
// and with years since publication.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "refqual/analysis.hpp"
#include "refqual/corpus.hpp"
#include "refqual/indicators.hpp"

namespace refqual {

struct SyntheticSpec {
    std::uint64_t seed = 2021;
    std::size_t n_articles = 2000;
    std::vector<int> uoas{3, 11, 17, 32};  // one per prompt group
    int departments_per_uoa = 10;
    double within_department_sd = 0.55;
    double short_abstract_rate = 0.07;
    double multiline_abstract_rate = 0.05;
    std::size_t background_records = 1500;  // non-corpus articles in the citation universe
    double missing_late_snapshot_rate = 0.02;
    int first_year = 2014;
    int last_year = 2020;
};

struct SyntheticCorpus {
    Corpus corpus;
    std::map<std::string, double> latent;        // article_id -> latent quality in [1,4]
    std::map<std::string, int> expert_star;      // article_id -> simulated expert grade
    std::map<std::string, std::vector<CitationRecord>> citations;  // snapshot -> records
    std::map<int, double> theoretical_max;       // uoa (0 = pooled) -> Spearman(expert grade, departmental mean)
};

namespace detail {

inline const std::vector<std::string>& synth_words() {
    static const std::vector<std::string> w{
        "analysis",  "framework", "evidence",   "model",     "population", "intervention", "structure", "dynamics",
        "policy",    "network",   "signal",     "protocol",  "cohort",     "material",     "theory",    "practice",
        "design",    "method",    "outcome",    "variation", "archive",    "narrative",    "system",    "process",
        "response",  "measure",   "community",  "resource",  "interface",  "transition",   "boundary",  "estimate",
        "mechanism", "pattern",   "assessment", "context",   "sample",     "experiment",   "survey",    "field"};
    return w;
}

inline const std::vector<std::string>& synth_adjectives() {
    static const std::vector<std::string> w{"novel",     "robust",  "comparative", "longitudinal", "empirical",
                                            "critical",  "scalable", "integrated", "historical",   "spatial",
                                            "adaptive",  "regional", "structural", "qualitative",  "computational"};
    return w;
}

inline std::string synth_sentence(std::mt19937_64& rng) {
    const auto& w = synth_words();
    const auto& a = synth_adjectives();
    std::uniform_int_distribution<std::size_t> pw(0, w.size() - 1), pa(0, a.size() - 1);
    std::uniform_int_distribution<int> len(6, 14);
    std::string s = "We examine the " + a[pa(rng)] + " " + w[pw(rng)];
    const int n = len(rng);
    static const std::vector<std::string> joins{" of ", " and ", " in ", " across ", " for ", " with "};
    std::uniform_int_distribution<std::size_t> pj(0, joins.size() - 1);
    for (int i = 0; i < n; i += 2) s += joins[pj(rng)] + a[pa(rng)] + " " + w[pw(rng)];
    return s + ".";
}

}  // namespace detail

inline SyntheticCorpus make_synthetic_corpus(const SyntheticSpec& spec = {}) {
    std::mt19937_64 rng(splitmix64(spec.seed));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    SyntheticCorpus out;

    const int n_uoa = static_cast<int>(spec.uoas.size());
    std::size_t serial = 0;

    for (int u = 0; u < n_uoa; ++u) {
        const int uoa = spec.uoas[static_cast<std::size_t>(u)];
        const std::size_t n_here = spec.n_articles / static_cast<std::size_t>(n_uoa) +
                                   (static_cast<std::size_t>(u) < spec.n_articles % static_cast<std::size_t>(n_uoa) ? 1 : 0);
        std::vector<double> centre(static_cast<std::size_t>(spec.departments_per_uoa));
        std::vector<double> size_weight(centre.size());
        for (std::size_t d = 0; d < centre.size(); ++d) {
            centre[d] = 2.3 + 1.2 * unif(rng);
            size_weight[d] = 0.5 + unif(rng);
        }
        std::discrete_distribution<std::size_t> pick_dept(size_weight.begin(), size_weight.end());
        for (std::size_t k = 0; k < n_here; ++k) {
            const auto d = pick_dept(rng);
            char inst[16];
            std::snprintf(inst, sizeof inst, "INST%02zu", (d + static_cast<std::size_t>(u) * 3) % 24 + 1);
            Article a;
            char id[32];
            std::snprintf(id, sizeof id, "A%05zu", ++serial);
            a.article_id = id;
            a.uoa = uoa;
            a.institution_id = inst;
            a.pub_year = spec.first_year + static_cast<int>(unif(rng) * (spec.last_year - spec.first_year + 1));
            a.pub_year = std::min(a.pub_year, spec.last_year);
            const auto& w = detail::synth_words();
            const auto& adj = detail::synth_adjectives();
            a.title = "The " + adj[serial % adj.size()] + " " + w[(serial * 7) % w.size()] + " of " +
                      w[(serial * 13 + 5) % w.size()] + " in " + w[(serial * 3 + 11) % w.size()] + " research";
            if (unif(rng) < spec.short_abstract_rate) {
                static const std::vector<std::string> stubs{"", "No abstract.", "See full text.", "Editorial note",
                                                            "Abstract not available."};
                a.abstract = stubs[static_cast<std::size_t>(unif(rng) * stubs.size()) % stubs.size()];
            } else {
                const int sentences = 3 + static_cast<int>(unif(rng) * 5);
                const bool multiline = unif(rng) < spec.multiline_abstract_rate;
                for (int s = 0; s < sentences; ++s) {
                    if (s) a.abstract += multiline && s == 1 ? "\n" : " ";
                    a.abstract += detail::synth_sentence(rng);
                }
            }
            if (unif(rng) > 0.1) a.doi = "10.5555/synth." + std::string(id);

            const double q = std::clamp(centre[d] + spec.within_department_sd * normal(rng), 1.0, 4.0);
            const int star = static_cast<int>(std::clamp(std::round(q), 1.0, 4.0));
            out.latent[a.article_id] = q;
            out.expert_star[a.article_id] = star;
            out.corpus.articles.push_back(std::move(a));
        }
    }

    // Published profiles: histogram of expert grades, percentages to one decimal place.
    std::map<DepartmentKey, std::array<int, 4>> hist;
    for (const auto& a : out.corpus.articles) hist[{a.institution_id, a.uoa}][out.expert_star[a.article_id] - 1]++;
    for (const auto& [key, h] : hist) {
        const double n = h[0] + h[1] + h[2] + h[3];
        DepartmentProfile p;
        p.institution_id = key.institution_id;
        p.uoa = key.uoa;
        for (int s = 0; s < 4; ++s) p.star_pct[static_cast<std::size_t>(s)] = std::round(1000.0 * h[static_cast<std::size_t>(s)] / n) / 10.0;
        p.star0_pct = 0.0;
        out.corpus.profiles.push_back(p);
    }
    out.corpus.provenance = "synthetic seed=" + std::to_string(spec.seed);

    // Theoretical maxima from the simulated expert grades.
    const auto gold = attach_gold_scores(out.corpus).scores;
    std::map<int, std::pair<std::vector<double>, std::vector<double>>> per_uoa;
    for (const auto& a : out.corpus.articles) {
        per_uoa[a.uoa].first.push_back(out.expert_star[a.article_id]);
        per_uoa[a.uoa].second.push_back(gold.at(a.article_id));
    }
    std::pair<std::vector<double>, std::vector<double>> pooled;
    for (auto& [uoa, v] : per_uoa) {
        pooled.first.insert(pooled.first.end(), v.first.begin(), v.first.end());
        pooled.second.insert(pooled.second.end(), v.second.begin(), v.second.end());
        try {
            out.theoretical_max[uoa] = spearman(v.first, v.second);
        } catch (const DegenerateInput&) {
        }
    }
    // Key 0 holds the pooled maximum used for the ALL row.
    if (per_uoa.size() >= 2) out.theoretical_max[0] = spearman(pooled.first, pooled.second);

    // Citations: two snapshots, corpus articles plus a background universe.
    struct Cited {
        std::string id;
        std::vector<FieldYear> cells;
        double q;
    };
    std::vector<Cited> universe;
    std::map<std::string, double> field_level;
    for (int uoa : spec.uoas)
        for (const char* suffix : {"A", "B"}) field_level["F" + std::to_string(uoa) + suffix] = 0.3 + 1.2 * unif(rng);
    std::vector<std::string> fields;
    for (const auto& [f, lvl] : field_level) fields.push_back(f);
    for (const auto& a : out.corpus.articles) {
        Cited c{a.article_id, {}, out.latent[a.article_id]};
        const std::string base = "F" + std::to_string(a.uoa);
        const double r = unif(rng);
        if (r < 0.15) {
            c.cells = {{base + "A", a.pub_year}, {base + "B", a.pub_year}};
        } else {
            c.cells = {{base + (r < 0.575 ? "A" : "B"), a.pub_year}};
        }
        universe.push_back(std::move(c));
    }
    for (std::size_t k = 0; k < spec.background_records; ++k) {
        char id[32];
        std::snprintf(id, sizeof id, "BG%05zu", k + 1);
        const int year = spec.first_year + static_cast<int>(unif(rng) * (spec.last_year - spec.first_year + 1));
        universe.push_back({id,
                            {{fields[static_cast<std::size_t>(unif(rng) * fields.size()) % fields.size()],
                              std::min(year, spec.last_year)}},
                            std::clamp(2.6 + 0.6 * normal(rng), 1.0, 4.0)});
    }
    auto neg_binomial = [&](double mean) {
        std::gamma_distribution<double> gamma(1.5, mean / 1.5);
        std::poisson_distribution<long long> pois(std::max(gamma(rng), 1e-9));
        return pois(rng);
    };
    auto& early = out.citations["2021"];
    auto& late = out.citations["2024"];
    for (const auto& c : universe) {
        double level = 0;
        for (const auto& cell : c.cells) level += field_level[cell.field_id];
        level /= static_cast<double>(c.cells.size());
        const double rate = level * std::exp(0.45 * (c.q - 2.5));
        const int year = c.cells.front().year;
        const long long c2021 = neg_binomial(rate * (2021.2 - year) * 1.5);
        const long long c2024 = c2021 + neg_binomial(rate * 3.0 * 2.5);
        early.push_back({c.id, "2021", c2021, c.cells});
        if (c.id[0] == 'B' || unif(rng) >= spec.missing_late_snapshot_rate) late.push_back({c.id, "2024", c2024, c.cells});
    }
    return out;
}

/// Writes articles.csv, profiles.csv, latent.csv, theoretical_max.csv and one
/// citations_<snapshot>.csv per snapshot into dir.
inline void write_synthetic_corpus(const SyntheticCorpus& s, const std::filesystem::path& dir) {
    write_table(dir / "articles.csv", articles_table(s.corpus.articles));
    write_table(dir / "profiles.csv", profiles_table(s.corpus.profiles));
    Table latent;
    latent.header = {"article_id", "latent_quality"};
    for (const auto& [id, q] : s.latent) latent.rows.push_back({id, fmt_num(q)});
    write_table(dir / "latent.csv", latent);
    Table maxima;
    maxima.header = {"uoa", "rho_max"};
    for (const auto& [uoa, r] : s.theoretical_max) maxima.rows.push_back({uoa ? std::to_string(uoa) : "ALL", fmt_num(r)});
    write_table(dir / "theoretical_max.csv", maxima);
    for (const auto& [snap, records] : s.citations) write_table(dir / ("citations_" + snap + ".csv"), citations_table(records));
}

}  // namespace refqual
