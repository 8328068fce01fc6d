#pragma once

// Star-score extraction from narrative evaluation reports.
//
// Grammar (case-insensitive):
//   overall-label   := "overall" | "final" | line-initial "score"
//   dimension-label := "originality" | "significance" | "rigour" | "rigor"
//   filler          := score | scores | rating | grade | quality | level | star | assessment
//                      | evaluation | is | of | a | an | i | would | give | given | award | awarded
//                      | it | this | paper | article | as | be | at | for       (at most four)
//   separator       := whitespace | ':' | ',' | '-' | '=' | '*' | '(' | '[' | '|' | en/em dash
//   value           := number suffix | number-word suffix | bare-number
//   suffix          := '*' | "star" | "stars" | "/4" | "out of 4"
//   bare-number     := number in [1,4] followed by end of line, end of text or . , ; ) ] | (
// A label matches when it is followed, after separators and fillers, by a value.
// Starred values outside [1,4] are clamped; the last match of each label wins.
// Precedence: a stated overall score, else the mean of all three dimensions, else unresolved.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "refqual/error.hpp"
#include "refqual/gateway.hpp"
#include "refqual/table.hpp"

namespace refqual {

enum class ScoreMethod { OverallStated, DimensionMean, Manual };

inline std::string_view to_string(ScoreMethod m) {
    switch (m) {
        case ScoreMethod::OverallStated: return "overall";
        case ScoreMethod::DimensionMean: return "dimension_mean";
        case ScoreMethod::Manual: return "manual";
    }
    return "unknown";
}

inline ScoreMethod score_method_from(std::string_view s) {
    for (auto m : {ScoreMethod::OverallStated, ScoreMethod::DimensionMean, ScoreMethod::Manual})
        if (to_string(m) == s) return m;
    throw DataError("unknown score method '" + std::string(s) + "'");
}

struct Dimensions {
    double originality = 0;
    double significance = 0;
    double rigour = 0;

    double mean() const { return (originality + significance + rigour) / 3.0; }
    friend bool operator==(const Dimensions&, const Dimensions&) = default;
};

struct ParsedScore {
    RequestKey key;
    std::optional<double> overall;
    std::optional<Dimensions> dims;
    double resolved = 0;
    ScoreMethod method = ScoreMethod::OverallStated;

    friend bool operator==(const ParsedScore&, const ParsedScore&) = default;
};

struct Unresolved {
    RequestKey key;
    std::string report_text;
    std::string reason;
};

using ParseResult = std::variant<ParsedScore, Unresolved>;

namespace detail {

inline char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }
inline bool is_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }
inline bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

inline bool word_at(std::string_view s, std::size_t pos, std::string_view word) {
    if (pos + word.size() > s.size() || s.substr(pos, word.size()) != word) return false;
    const auto end = pos + word.size();
    return end == s.size() || !is_alpha(s[end]);
}

inline bool is_filler(std::string_view w) {
    static const std::set<std::string_view> fillers{
        "score", "scores", "rating", "grade", "quality", "level", "star",  "assessment", "evaluation",
        "is",    "of",     "a",      "an",    "i",       "would", "give",  "given",      "award",
        "awarded", "it",   "this",   "paper", "article", "as",    "be",    "at",         "for"};
    return fillers.count(w) > 0;
}

inline std::optional<double> number_word(std::string_view w) {
    if (w == "one") return 1.0;
    if (w == "two") return 2.0;
    if (w == "three") return 3.0;
    if (w == "four") return 4.0;
    return std::nullopt;
}

// Skips separator characters (including UTF-8 en and em dashes); returns new position.
inline std::size_t skip_separators(std::string_view s, std::size_t p) {
    while (p < s.size()) {
        const char c = s[p];
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == ':' || c == ',' || c == '-' || c == '=' || c == '*' ||
            c == '(' || c == '[' || c == '|') {
            ++p;
        } else if (s.substr(p, 3) == "\xE2\x80\x93" || s.substr(p, 3) == "\xE2\x80\x94") {
            p += 3;
        } else {
            break;
        }
    }
    return p;
}

inline std::size_t skip_blanks(std::string_view s, std::size_t p) {
    while (p < s.size() && (s[p] == ' ' || s[p] == '\t')) ++p;
    return p;
}

enum class Suffix { None, Starred, Rejected };

// Classifies what follows a number at position p.
inline Suffix read_suffix(std::string_view s, std::size_t p) {
    std::size_t q = skip_blanks(s, p);
    if (q < s.size() && s[q] == '*') return Suffix::Starred;
    std::size_t r = q;
    if (r < s.size() && s[r] == '-') r = skip_blanks(s, r + 1);
    if (word_at(s, r, "star") || word_at(s, r, "stars")) return Suffix::Starred;
    if (q < s.size() && s[q] == '/') {
        const auto d = skip_blanks(s, q + 1);
        if (d < s.size() && s[d] == '4' && (d + 1 == s.size() || !is_digit(s[d + 1]))) return Suffix::Starred;
        return Suffix::Rejected;
    }
    if (word_at(s, q, "out")) {
        auto o = skip_blanks(s, q + 3);
        if (word_at(s, o, "of")) {
            o = skip_blanks(s, o + 2);
            if (o < s.size() && s[o] == '4' && (o + 1 == s.size() || !is_digit(s[o + 1]))) return Suffix::Starred;
        }
        return Suffix::Rejected;
    }
    if (p < s.size() && (is_alpha(s[p]) || s[p] == '%')) return Suffix::Rejected;
    if (q == s.size()) return Suffix::None;
    const char c = s[q];
    if (c == '\n' || c == '\r' || c == '.' || c == ',' || c == ';' || c == ')' || c == ']' || c == '|' || c == '(')
        return Suffix::None;
    return Suffix::Rejected;
}

// Looks for a value after a label ending at `p` in lowercased text `s`.
inline std::optional<double> scan_value(std::string_view s, std::size_t p) {
    constexpr int kMaxFillers = 4;
    constexpr std::size_t kMaxSpan = 80;
    const std::size_t start = p;
    int fillers = 0;
    while (p < s.size() && p - start <= kMaxSpan) {
        p = skip_separators(s, p);
        if (p >= s.size()) return std::nullopt;
        if (is_digit(s[p])) {
            std::size_t e = p;
            while (e < s.size() && is_digit(s[e])) ++e;
            if (e + 1 < s.size() && s[e] == '.' && is_digit(s[e + 1])) {
                ++e;
                while (e < s.size() && is_digit(s[e])) ++e;
            }
            const auto v = parse_double(s.substr(p, e - p));
            if (!v) return std::nullopt;
            switch (read_suffix(s, e)) {
                case Suffix::Starred: return std::clamp(*v, 1.0, 4.0);
                case Suffix::None:
                    if (*v >= 1.0 && *v <= 4.0) return *v;
                    return std::nullopt;
                case Suffix::Rejected: return std::nullopt;
            }
        }
        if (!is_alpha(s[p])) return std::nullopt;
        std::size_t e = p;
        while (e < s.size() && is_alpha(s[e])) ++e;
        const auto word = s.substr(p, e - p);
        if (auto nw = number_word(word)) {
            if (read_suffix(s, e) == Suffix::Starred) return *nw;
            return std::nullopt;
        }
        if (!is_filler(word) || ++fillers > kMaxFillers) return std::nullopt;
        p = e;
    }
    return std::nullopt;
}

inline bool at_line_start(std::string_view s, std::size_t pos) {
    while (pos > 0) {
        const char c = s[pos - 1];
        if (c == '\n') return true;
        if (c != ' ' && c != '\t' && c != '#' && c != '*' && c != '-' && c != '>') return false;
        --pos;
    }
    return true;
}

}  // namespace detail

struct ExtractedScores {
    std::optional<double> overall;
    std::optional<double> originality;
    std::optional<double> significance;
    std::optional<double> rigour;
};

/// Applies the label grammar to a report, without precedence.
inline ExtractedScores extract_scores(std::string_view report_text) {
    std::string s(report_text);
    std::transform(s.begin(), s.end(), s.begin(), detail::lower);
    ExtractedScores out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!detail::is_alpha(s[i]) || (i > 0 && detail::is_alpha(s[i - 1]))) continue;
        auto try_label = [&](std::string_view label, std::optional<double>& slot) {
            if (!detail::word_at(s, i, label)) return false;
            if (auto v = detail::scan_value(s, i + label.size())) slot = v;
            return true;
        };
        if (try_label("overall", out.overall) || try_label("final", out.overall) ||
            try_label("originality", out.originality) || try_label("significance", out.significance) ||
            try_label("rigour", out.rigour) || try_label("rigor", out.rigour))
            continue;
        if (detail::word_at(s, i, "score") && detail::at_line_start(s, i)) {
            if (auto v = detail::scan_value(s, i + 5)) out.overall = v;
        }
    }
    return out;
}

/// Stated overall wins; otherwise the mean of the three dimension scores; otherwise unresolved.
inline ParseResult parse_report(const RawReport& report) {
    const auto x = extract_scores(report.report_text);
    ParsedScore p;
    p.key = report.key;
    if (x.originality && x.significance && x.rigour) p.dims = Dimensions{*x.originality, *x.significance, *x.rigour};
    if (x.overall) {
        p.overall = x.overall;
        p.resolved = *x.overall;
        p.method = ScoreMethod::OverallStated;
        return p;
    }
    if (p.dims) {
        p.resolved = p.dims->mean();
        p.method = ScoreMethod::DimensionMean;
        return p;
    }
    std::string reason = "no overall score and ";
    const int found = int(x.originality.has_value()) + int(x.significance.has_value()) + int(x.rigour.has_value());
    reason += found == 0 ? "no dimension scores" : "only " + std::to_string(found) + " of 3 dimension scores";
    return Unresolved{report.key, report.report_text, reason};
}

// ---------------------------------------------------------------------------
// Manual resolution

struct ScorelessRun {
    RequestKey key;
    std::string note;
};

struct Reprompt {
    std::string message;
};

using ManualOutcome = std::variant<ParsedScore, ScorelessRun, Reprompt>;

/// Interprets one human answer for an unresolved report: a number in [1,4], or
/// "no score" / "none" / "n" to mark the run scoreless. Anything else asks again.
inline ManualOutcome resolve_manually(const Unresolved& item, std::string_view answer) {
    std::string a = trim(answer);
    std::transform(a.begin(), a.end(), a.begin(), detail::lower);
    if (a == "no score" || a == "none" || a == "n" || a == "noscore")
        return ScorelessRun{item.key, "flagged by reviewer: no score given"};
    std::string_view num = a;
    if (!num.empty() && num.back() == '*') num.remove_suffix(1);
    const auto v = parse_double(num);
    if (!v) return Reprompt{"enter a score between 1 and 4, or 'no score'"};
    if (!(*v >= 1.0 && *v <= 4.0)) return Reprompt{"score " + a + " is outside 1..4"};
    ParsedScore p;
    p.key = item.key;
    p.resolved = *v;
    p.method = ScoreMethod::Manual;
    return p;
}

// ---------------------------------------------------------------------------
// Stores

inline Table parsed_scores_table(const std::vector<ParsedScore>& scores) {
    Table t;
    t.header = {"article_id", "model_id", "run_index", "overall", "orig", "sig", "rig", "resolved", "method"};
    for (const auto& s : scores) {
        t.rows.push_back({s.key.article_id, s.key.model_id, std::to_string(s.key.run_index), fmt_opt(s.overall),
                          s.dims ? fmt_num(s.dims->originality) : "", s.dims ? fmt_num(s.dims->significance) : "",
                          s.dims ? fmt_num(s.dims->rigour) : "", fmt_num(s.resolved), std::string(to_string(s.method))});
    }
    return t;
}

inline std::vector<ParsedScore> parsed_scores_from(const Table& t) {
    const auto c_a = t.require_column("article_id"), c_m = t.require_column("model_id"),
               c_r = t.require_column("run_index"), c_o = t.require_column("overall"), c_1 = t.require_column("orig"),
               c_2 = t.require_column("sig"), c_3 = t.require_column("rig"), c_v = t.require_column("resolved"),
               c_k = t.require_column("method");
    std::vector<ParsedScore> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        auto bad = [&](std::size_t col) { return ParseError(t.source, t.row_lines[r], col + 1, "invalid value"); };
        ParsedScore p;
        p.key.article_id = row[c_a];
        p.key.model_id = row[c_m];
        const auto run = parse_int(row[c_r]);
        if (!run) throw bad(c_r);
        p.key.run_index = static_cast<int>(*run);
        p.overall = parse_double(row[c_o]);
        const auto o = parse_double(row[c_1]), s = parse_double(row[c_2]), g = parse_double(row[c_3]);
        if (o && s && g) p.dims = Dimensions{*o, *s, *g};
        const auto v = parse_double(row[c_v]);
        if (!v) throw bad(c_v);
        p.resolved = *v;
        p.method = score_method_from(row[c_k]);
        out.push_back(std::move(p));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Run averaging

struct RunMean {
    std::string article_id;
    std::string model_id;
    double mean = 0;
    int runs = 0;
    bool short_count = false;  // fewer runs than the campaign's nominal repetitions
};

struct Exclusion {
    std::string article_id;
    std::string model_id;
    std::string reason;
};

struct AverageResult {
    std::vector<RunMean> means;  // sorted by (model_id, article_id)
    std::vector<Exclusion> excluded;

    std::map<std::string, double> for_model(const std::string& model_id) const {
        std::map<std::string, double> m;
        for (const auto& r : means)
            if (r.model_id == model_id) m.emplace(r.article_id, r.mean);
        return m;
    }
};

/// Arithmetic mean of resolved scores per (article, model). Values are summed in
/// ascending order so the result does not depend on run order. Articles listed in
/// `expected_articles` with no score for a model present in `scores` are excluded with a reason.
inline AverageResult average_runs(const std::vector<ParsedScore>& scores, int nominal_runs,
                                  const std::vector<std::string>& expected_articles = {}) {
    std::map<std::pair<std::string, std::string>, std::vector<double>> groups;  // (model, article)
    std::set<std::string> models;
    for (const auto& s : scores) {
        groups[{s.key.model_id, s.key.article_id}].push_back(s.resolved);
        models.insert(s.key.model_id);
    }
    AverageResult out;
    for (auto& [k, v] : groups) {
        std::sort(v.begin(), v.end());
        double sum = 0;
        for (double x : v) sum += x;
        const int n = static_cast<int>(v.size());
        out.means.push_back({k.second, k.first, sum / n, n, n < nominal_runs});
    }
    for (const auto& m : models)
        for (const auto& a : expected_articles)
            if (!groups.count({m, a})) out.excluded.push_back({a, m, "no scored runs"});
    return out;
}

struct CombineResult {
    std::map<std::string, double> combined;
    std::vector<std::string> warnings;
};

/// Per-article midpoint of two models' mean scores over the articles both cover.
inline CombineResult combine_models(const std::map<std::string, double>& a, const std::map<std::string, double>& b) {
    CombineResult out;
    std::size_t only_a = 0, only_b = 0;
    for (const auto& [id, va] : a) {
        if (auto it = b.find(id); it != b.end())
            out.combined.emplace(id, (va + it->second) / 2.0);
        else
            ++only_a;
    }
    for (const auto& [id, vb] : b)
        if (!a.count(id)) ++only_b;
    if (out.combined.empty() && (!a.empty() || !b.empty()))
        throw DataError("cannot combine models: no article has scores from both");
    if (only_a || only_b)
        out.warnings.push_back("combined over the common articles only; dropped " + std::to_string(only_a) +
                               " scored only by the first model and " + std::to_string(only_b) +
                               " scored only by the second");
    return out;
}

}  // namespace refqual
