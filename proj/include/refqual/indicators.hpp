#pragma once

// Normalised Log-transformed Citation Score: ln(1+c) divided by the mean ln(1+c) of the
// article's field/year cells, with the cell means averaged first when an article sits
// in several cells.

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "refqual/corpus.hpp"
#include "refqual/error.hpp"
#include "refqual/table.hpp"

namespace refqual {

struct FieldYear {
    std::string field_id;
    int year = 0;

    friend auto operator<=>(const FieldYear&, const FieldYear&) = default;
    std::string str() const { return field_id + ":" + std::to_string(year); }
};

struct CitationRecord {
    std::string article_id;
    std::string snapshot_id;
    long long raw_count = 0;
    std::vector<FieldYear> cells;
};

struct FieldYearReference {
    std::string snapshot_id;
    std::map<FieldYear, double> means;
    std::map<FieldYear, std::size_t> counts;
};

struct NlcsValue {
    std::string article_id;
    std::string snapshot_id;
    double value = 0;
    bool zero_limit = false;  // zero-cited article in an all-zero cell, set to 1 by convention
};

class UnknownCellError : public DataError {
public:
    using DataError::DataError;
};

class InconsistentReferenceError : public DataError {
public:
    using DataError::DataError;
};

inline double log_citations(long long c) { return std::log1p(static_cast<double>(c)); }

/// Per-cell mean of ln(1+c). An article in k cells contributes to all k of them.
inline FieldYearReference build_reference(const std::vector<CitationRecord>& records) {
    FieldYearReference ref;
    if (!records.empty()) ref.snapshot_id = records.front().snapshot_id;
    std::map<FieldYear, double> sums;
    for (const auto& r : records) {
        if (r.raw_count < 0) throw DataError("negative citation count for " + r.article_id);
        if (r.cells.empty()) throw DataError("citation record " + r.article_id + " has no field/year cell");
        const double l = log_citations(r.raw_count);
        // A cell listed twice for one article still counts the article once.
        const std::set<FieldYear> unique(r.cells.begin(), r.cells.end());
        for (const auto& c : unique) {
            sums[c] += l;
            ++ref.counts[c];
        }
    }
    for (const auto& [c, s] : sums) ref.means[c] = s / static_cast<double>(ref.counts[c]);
    return ref;
}

inline NlcsValue nlcs(const CitationRecord& record, const FieldYearReference& reference) {
    if (record.cells.empty()) throw DataError("citation record " + record.article_id + " has no field/year cell");
    const std::set<FieldYear> unique(record.cells.begin(), record.cells.end());
    double expected = 0;
    for (const auto& c : unique) {
        auto it = reference.means.find(c);
        if (it == reference.means.end())
            throw UnknownCellError("article " + record.article_id + ": cell " + c.str() + " is not in the reference set");
        expected += it->second;
    }
    expected /= static_cast<double>(unique.size());
    const double l = log_citations(record.raw_count);
    NlcsValue v{record.article_id, record.snapshot_id, 0.0, false};
    if (expected == 0.0) {
        if (l != 0.0)
            throw InconsistentReferenceError("article " + record.article_id +
                                             " is cited but its cells have a zero mean");
        v.value = 1.0;
        v.zero_limit = true;
        return v;
    }
    v.value = l / expected;
    return v;
}

struct SnapshotNlcs {
    std::string snapshot_id;
    std::map<std::string, NlcsValue> values;  // article_id -> value
    std::vector<std::string> missing;         // corpus articles with no record in this snapshot
    std::vector<std::string> warnings;
};

/// NLCS for every corpus article present in each snapshot. References are built
/// from each snapshot's full record set, not only the corpus articles.
inline std::vector<SnapshotNlcs> batch_nlcs(const std::vector<Article>& articles,
                                            const std::map<std::string, std::vector<CitationRecord>>& snapshots) {
    std::vector<SnapshotNlcs> out;
    for (const auto& [snap, records] : snapshots) {
        SnapshotNlcs s;
        s.snapshot_id = snap;
        if (records.empty()) {
            s.warnings.push_back("snapshot " + snap + " is empty");
            for (const auto& a : articles) s.missing.push_back(a.article_id);
            out.push_back(std::move(s));
            continue;
        }
        const auto ref = build_reference(records);
        std::map<std::string, const CitationRecord*> by_id;
        for (const auto& r : records)
            if (!by_id.emplace(r.article_id, &r).second)
                throw DataError("snapshot " + snap + ": duplicate citation record for " + r.article_id);
        std::size_t zero_limit = 0;
        for (const auto& a : articles) {
            auto it = by_id.find(a.article_id);
            if (it == by_id.end()) {
                s.missing.push_back(a.article_id);
                continue;
            }
            auto v = nlcs(*it->second, ref);
            v.snapshot_id = snap;
            zero_limit += v.zero_limit;
            s.values.emplace(a.article_id, v);
        }
        if (zero_limit)
            s.warnings.push_back(std::to_string(zero_limit) +
                                 " uncited article(s) in all-zero cells were assigned NLCS 1");
        if (!s.missing.empty())
            s.warnings.push_back(std::to_string(s.missing.size()) + " article(s) have no record in snapshot " + snap);
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// File format: article_id, raw_count, cells ("field:year;field:year")

inline std::vector<FieldYear> parse_cells(std::string_view text) {
    std::vector<FieldYear> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto end = text.find(';', pos);
        if (end == std::string_view::npos) end = text.size();
        const auto item = trim(text.substr(pos, end - pos));
        if (!item.empty()) {
            const auto colon = item.rfind(':');
            if (colon == std::string::npos || colon == 0) throw DataError("malformed cell '" + item + "'");
            const auto year = parse_int(std::string_view(item).substr(colon + 1));
            if (!year) throw DataError("malformed year in cell '" + item + "'");
            out.push_back({item.substr(0, colon), static_cast<int>(*year)});
        }
        pos = end + 1;
    }
    return out;
}

inline std::vector<CitationRecord> citation_records_from(const Table& t, const std::string& snapshot_id) {
    const auto c_id = t.require_column("article_id");
    const auto c_n = t.require_column("raw_count");
    const auto c_cells = t.require_column("cells");
    std::vector<CitationRecord> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        CitationRecord rec;
        rec.article_id = trim(row[c_id]);
        rec.snapshot_id = snapshot_id;
        const auto n = parse_int(row[c_n]);
        if (!n || *n < 0) throw ParseError(t.source, t.row_lines[r], c_n + 1, "raw_count must be a non-negative integer");
        rec.raw_count = *n;
        try {
            rec.cells = parse_cells(row[c_cells]);
        } catch (const DataError& e) {
            throw ParseError(t.source, t.row_lines[r], c_cells + 1, e.what());
        }
        if (rec.cells.empty()) throw ParseError(t.source, t.row_lines[r], c_cells + 1, "no field/year cell");
        out.push_back(std::move(rec));
    }
    return out;
}

inline std::string format_cells(const std::vector<FieldYear>& cells) {
    std::string s;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) s += ';';
        s += cells[i].str();
    }
    return s;
}

inline Table citations_table(const std::vector<CitationRecord>& records) {
    Table t;
    t.header = {"article_id", "raw_count", "cells"};
    for (const auto& r : records) t.rows.push_back({r.article_id, std::to_string(r.raw_count), format_cells(r.cells)});
    return t;
}

inline Table nlcs_table(const std::vector<SnapshotNlcs>& snapshots) {
    Table t;
    t.header = {"article_id", "snapshot_id", "nlcs"};
    for (const auto& s : snapshots)
        for (const auto& [id, v] : s.values) t.rows.push_back({id, s.snapshot_id, fmt_num(v.value)});
    return t;
}

}  // namespace refqual
