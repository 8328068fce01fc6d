#pragma once

// Article and department data model, corpus ingestion, the short-abstract filter
// and departmental gold-standard means.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "refqual/error.hpp"
#include "refqual/table.hpp"

namespace refqual {

inline constexpr int kMinUoa = 1;
inline constexpr int kMaxUoa = 34;

inline bool valid_uoa(long long uoa) { return uoa >= kMinUoa && uoa <= kMaxUoa; }

/// A REF quality grade. Level 0 ("unclassified") exists only in department profiles.
class StarLevel {
public:
    explicit StarLevel(int value) : value_(value) {
        if (value < 1 || value > 4) throw DomainError("star level must be 1..4, got " + std::to_string(value));
    }
    int value() const noexcept { return value_; }
    friend auto operator<=>(const StarLevel&, const StarLevel&) = default;

private:
    int value_;
};

struct Article {
    std::string article_id;
    std::string title;
    std::string abstract;
    int uoa = 0;
    std::string institution_id;
    int pub_year = 0;
    std::optional<std::string> doi;

    friend bool operator==(const Article&, const Article&) = default;
};

/// Key of one submission: a department's outputs in one UoA.
struct DepartmentKey {
    std::string institution_id;
    int uoa = 0;

    friend auto operator<=>(const DepartmentKey&, const DepartmentKey&) = default;
    std::string str() const { return institution_id + "/UoA" + std::to_string(uoa); }
};

struct DepartmentProfile {
    std::string institution_id;
    int uoa = 0;
    std::array<double, 4> star_pct{};  // index s-1 holds the percentage at s*
    std::optional<double> star0_pct;   // unclassified bucket, if published

    DepartmentKey key() const { return {institution_id, uoa}; }
    double pct(int star) const { return star_pct.at(static_cast<std::size_t>(star - 1)); }

    friend bool operator==(const DepartmentProfile&, const DepartmentProfile&) = default;
};

inline constexpr double kProfileSumTolerance = 0.5;

struct RejectedRow {
    std::string source;
    std::size_t line = 0;
    std::string key;
    std::string reason;
};

struct Corpus {
    std::vector<Article> articles;
    std::vector<DepartmentProfile> profiles;
    std::string provenance;

    const DepartmentProfile* find_profile(const DepartmentKey& key) const {
        for (const auto& p : profiles)
            if (p.institution_id == key.institution_id && p.uoa == key.uoa) return &p;
        return nullptr;
    }

    const Article* find_article(std::string_view id) const {
        for (const auto& a : articles)
            if (a.article_id == id) return &a;
        return nullptr;
    }

    friend bool operator==(const Corpus& a, const Corpus& b) {
        return a.articles == b.articles && a.profiles == b.profiles;
    }
};

struct LoadResult {
    Corpus corpus;
    std::vector<RejectedRow> rejects;
};

// ---------------------------------------------------------------------------
// Text helpers

inline std::string trim(std::string_view s) {
    constexpr std::string_view ws = " \t\r\n\f\v";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(ws);
    return std::string(s.substr(b, e - b + 1));
}

/// Collapses every run of whitespace to one space and trims the ends.
inline std::string normalize_whitespace(std::string_view s) {
    std::string out;
    bool pending = false;
    for (char c : s) {
        const bool ws = c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
        if (ws) {
            pending = !out.empty();
            continue;
        }
        if (pending) out.push_back(' ');
        pending = false;
        out.push_back(c);
    }
    return out;
}

/// Number of UTF-8 code points (continuation bytes are not counted).
inline std::size_t utf8_length(std::string_view s) {
    return static_cast<std::size_t>(
        std::count_if(s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

inline std::size_t word_count(std::string_view s) {
    std::size_t n = 0;
    bool in_word = false;
    for (char c : s) {
        const bool ws = c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
        if (!ws && !in_word) ++n;
        in_word = !ws;
    }
    return n;
}

// ---------------------------------------------------------------------------
// Departmental means

/// Weighted mean star level of a profile. With include_level0 the unclassified bucket
/// contributes level0_value; otherwise it is dropped and the rest renormalized.
inline double departmental_mean(const DepartmentProfile& profile, bool include_level0 = false,
                                double level0_value = 0.0) {
    double num = 0, den = 0;
    for (int s = 1; s <= 4; ++s) {
        const double p = profile.pct(s);
        if (p < 0) throw DomainError("negative percentage in profile " + profile.key().str());
        num += s * p;
        den += p;
    }
    if (include_level0 && profile.star0_pct) {
        if (*profile.star0_pct < 0) throw DomainError("negative percentage in profile " + profile.key().str());
        num += level0_value * *profile.star0_pct;
        den += *profile.star0_pct;
    }
    if (den <= 0) throw DomainError("undefined mean: all included percentages are zero for " + profile.key().str());
    return num / den;
}

/// Empty when the profile satisfies its invariants, else the reason.
inline std::optional<std::string> validate_profile(const DepartmentProfile& p) {
    if (!valid_uoa(p.uoa)) return "uoa out of range";
    if (trim(p.institution_id).empty()) return "empty institution_id";
    double sum = p.star0_pct.value_or(0.0);
    if (p.star0_pct && *p.star0_pct < 0) return "negative percentage";
    for (double v : p.star_pct) {
        if (!(v >= 0)) return "negative percentage";
        sum += v;
    }
    if (std::abs(sum - 100.0) > kProfileSumTolerance) return "percentages sum to " + fmt_num(sum) + ", not 100";
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Loading and serialization

namespace detail {

inline std::string cell(const Table& t, std::size_t r, std::size_t c) { return t.rows[r][c]; }

}  // namespace detail

inline LoadResult load_corpus_tables(const Table& articles, const Table& profiles) {
    LoadResult out;
    const auto c_id = articles.require_column("article_id");
    const auto c_title = articles.require_column("title");
    const auto c_abs = articles.require_column("abstract");
    const auto c_uoa = articles.require_column("uoa");
    const auto c_inst = articles.require_column("institution_id");
    const auto c_year = articles.require_column("pub_year");
    const auto c_doi = articles.require_column("doi");

    std::set<std::string> seen;
    for (std::size_t r = 0; r < articles.rows.size(); ++r) {
        const auto line = articles.row_lines[r];
        Article a;
        a.article_id = trim(detail::cell(articles, r, c_id));
        a.title = detail::cell(articles, r, c_title);
        a.abstract = detail::cell(articles, r, c_abs);
        a.institution_id = trim(detail::cell(articles, r, c_inst));
        const auto doi = trim(detail::cell(articles, r, c_doi));
        if (!doi.empty()) a.doi = doi;

        if (a.article_id.empty()) throw ParseError(articles.source, line, c_id + 1, "empty article_id");
        if (!seen.insert(a.article_id).second)
            throw ParseError(articles.source, line, c_id + 1, "duplicate article_id '" + a.article_id + "'");

        auto reject = [&](std::string reason) {
            out.rejects.push_back({articles.source, line, a.article_id, std::move(reason)});
        };
        const auto uoa = parse_int(detail::cell(articles, r, c_uoa));
        if (!uoa) {
            reject("uoa not an integer");
            continue;
        }
        if (!valid_uoa(*uoa)) {
            reject("uoa out of range");
            continue;
        }
        a.uoa = static_cast<int>(*uoa);
        const auto year = parse_int(detail::cell(articles, r, c_year));
        if (!year) {
            reject("pub_year not an integer");
            continue;
        }
        a.pub_year = static_cast<int>(*year);
        if (trim(a.title).empty()) {
            reject("empty title");
            continue;
        }
        if (a.institution_id.empty()) {
            reject("empty institution_id");
            continue;
        }
        out.corpus.articles.push_back(std::move(a));
    }

    const auto p_inst = profiles.require_column("institution_id");
    const auto p_uoa = profiles.require_column("uoa");
    std::array<std::size_t, 4> p_star{};
    for (int s = 1; s <= 4; ++s) p_star[s - 1] = profiles.require_column("pct_star" + std::to_string(s));
    const auto p_star0 = profiles.column("pct_star0");

    std::set<DepartmentKey> seen_keys;
    for (std::size_t r = 0; r < profiles.rows.size(); ++r) {
        const auto line = profiles.row_lines[r];
        DepartmentProfile p;
        p.institution_id = trim(detail::cell(profiles, r, p_inst));
        const std::string key = p.institution_id + "/" + trim(detail::cell(profiles, r, p_uoa));
        auto reject = [&](std::string reason) {
            out.rejects.push_back({profiles.source, line, key, std::move(reason)});
        };
        const auto uoa = parse_int(detail::cell(profiles, r, p_uoa));
        if (!uoa) {
            reject("uoa not an integer");
            continue;
        }
        p.uoa = static_cast<int>(*uoa);
        bool bad = false;
        for (int s = 0; s < 4; ++s) {
            const auto v = parse_double(detail::cell(profiles, r, p_star[s]));
            if (!v) {
                reject("pct_star" + std::to_string(s + 1) + " not a number");
                bad = true;
                break;
            }
            p.star_pct[s] = *v;
        }
        if (bad) continue;
        if (p_star0) {
            const auto raw = trim(detail::cell(profiles, r, *p_star0));
            if (!raw.empty()) {
                const auto v = parse_double(raw);
                if (!v) {
                    reject("pct_star0 not a number");
                    continue;
                }
                p.star0_pct = *v;
            }
        }
        if (auto why = validate_profile(p)) {
            reject(*why);
            continue;
        }
        if (!seen_keys.insert(p.key()).second)
            throw ParseError(profiles.source, line, p_inst + 1, "duplicate profile " + p.key().str());
        out.corpus.profiles.push_back(std::move(p));
    }
    return out;
}

/// Reads and validates the article and profile files. Structural problems are fatal
/// ParseErrors; bad rows are returned as rejects.
inline LoadResult load_corpus(const std::filesystem::path& articles_path, const std::filesystem::path& profiles_path) {
    auto result = load_corpus_tables(read_table(articles_path), read_table(profiles_path));
    result.corpus.provenance = "articles=" + articles_path.string() + " sha256=" + sha256_file(articles_path) +
                               "; profiles=" + profiles_path.string() + " sha256=" + sha256_file(profiles_path);
    return result;
}

inline Table articles_table(const std::vector<Article>& articles) {
    Table t;
    t.header = {"article_id", "title", "abstract", "uoa", "institution_id", "pub_year", "doi"};
    for (const auto& a : articles)
        t.rows.push_back({a.article_id, a.title, a.abstract, std::to_string(a.uoa), a.institution_id,
                          std::to_string(a.pub_year), a.doi.value_or("")});
    return t;
}

inline Table profiles_table(const std::vector<DepartmentProfile>& profiles) {
    const bool any0 = std::any_of(profiles.begin(), profiles.end(), [](const auto& p) { return p.star0_pct.has_value(); });
    Table t;
    t.header = {"institution_id", "uoa", "pct_star1", "pct_star2", "pct_star3", "pct_star4"};
    if (any0) t.header.push_back("pct_star0");
    for (const auto& p : profiles) {
        std::vector<std::string> row{p.institution_id, std::to_string(p.uoa)};
        for (double v : p.star_pct) row.push_back(fmt_num(v));
        if (any0) row.push_back(fmt_opt(p.star0_pct));
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline Table rejects_table(const std::vector<RejectedRow>& rejects) {
    Table t;
    t.header = {"source", "line", "key", "reason"};
    for (const auto& r : rejects) t.rows.push_back({r.source, std::to_string(r.line), r.key, r.reason});
    return t;
}

// ---------------------------------------------------------------------------
// Short-abstract filter

enum class LengthMetric { Chars, Words };

inline std::size_t abstract_length(const Article& a, LengthMetric metric) {
    const auto norm = normalize_whitespace(a.abstract);
    return metric == LengthMetric::Chars ? utf8_length(norm) : word_count(norm);
}

struct UoaFilterStats {
    int uoa = 0;
    std::size_t n = 0;
    std::size_t removed = 0;
    std::optional<std::size_t> threshold;  // none when nothing had to be removed
};

struct RemovalReport {
    std::vector<std::string> removed_ids;  // in corpus order
    std::vector<UoaFilterStats> per_uoa;   // ascending uoa
};

/// Drops the shortest `fraction` of abstracts within each UoA. The threshold is the
/// length of the floor(fraction*n)-th shortest abstract; everything shorter goes, then
/// articles at exactly the threshold go in ascending article_id order until the quota is met.
inline std::pair<Corpus, RemovalReport> filter_short_abstracts(const Corpus& corpus, double fraction = 0.10,
                                                               LengthMetric metric = LengthMetric::Chars) {
    if (!(fraction >= 0.0 && fraction < 1.0)) throw DomainError("filter fraction must be in [0, 1)");

    std::map<int, std::vector<std::size_t>> by_uoa;
    for (std::size_t i = 0; i < corpus.articles.size(); ++i) by_uoa[corpus.articles[i].uoa].push_back(i);

    std::vector<bool> drop(corpus.articles.size(), false);
    RemovalReport report;
    for (auto& [uoa, idx] : by_uoa) {
        UoaFilterStats stats{uoa, idx.size(), 0, std::nullopt};
        const auto quota = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(idx.size())));
        if (quota > 0) {
            std::vector<std::pair<std::size_t, std::size_t>> len;  // (length, index)
            len.reserve(idx.size());
            for (auto i : idx) len.emplace_back(abstract_length(corpus.articles[i], metric), i);
            std::vector<std::size_t> sorted_len;
            for (auto& [l, i] : len) sorted_len.push_back(l);
            std::sort(sorted_len.begin(), sorted_len.end());
            const std::size_t threshold = sorted_len[quota - 1];
            stats.threshold = threshold;

            std::vector<std::size_t> tied;
            for (auto& [l, i] : len) {
                if (l < threshold) {
                    drop[i] = true;
                    ++stats.removed;
                } else if (l == threshold) {
                    tied.push_back(i);
                }
            }
            std::sort(tied.begin(), tied.end(), [&](std::size_t a, std::size_t b) {
                return corpus.articles[a].article_id < corpus.articles[b].article_id;
            });
            for (auto i : tied) {
                if (stats.removed >= quota) break;
                drop[i] = true;
                ++stats.removed;
            }
        }
        report.per_uoa.push_back(stats);
    }

    Corpus out;
    out.profiles = corpus.profiles;
    out.provenance = corpus.provenance;
    for (std::size_t i = 0; i < corpus.articles.size(); ++i) {
        if (drop[i])
            report.removed_ids.push_back(corpus.articles[i].article_id);
        else
            out.articles.push_back(corpus.articles[i]);
    }
    return {std::move(out), std::move(report)};
}

// ---------------------------------------------------------------------------
// Gold standard

struct GoldScores {
    std::map<std::string, double> scores;          // article_id -> departmental mean
    std::vector<std::pair<std::string, std::string>> unmatched;  // (article_id, department key)
};

/// Assigns each article its department's mean score. Articles without a matching
/// profile are listed in `unmatched`; use require_gold_scores() to make that fatal.
inline GoldScores attach_gold_scores(const Corpus& corpus) {
    std::map<DepartmentKey, double> means;
    for (const auto& p : corpus.profiles) means.emplace(p.key(), departmental_mean(p));
    GoldScores out;
    for (const auto& a : corpus.articles) {
        const DepartmentKey key{a.institution_id, a.uoa};
        if (auto it = means.find(key); it != means.end())
            out.scores.emplace(a.article_id, it->second);
        else
            out.unmatched.emplace_back(a.article_id, key.str());
    }
    return out;
}

inline std::map<std::string, double> require_gold_scores(const Corpus& corpus) {
    auto g = attach_gold_scores(corpus);
    if (!g.unmatched.empty()) {
        std::string msg = "no department profile for " + std::to_string(g.unmatched.size()) + " article(s):";
        for (std::size_t i = 0; i < g.unmatched.size() && i < 5; ++i)
            msg += " " + g.unmatched[i].first + " (" + g.unmatched[i].second + ")";
        throw DataError(msg);
    }
    return std::move(g.scores);
}

}  // namespace refqual
