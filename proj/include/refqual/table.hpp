#pragma once

// Delimited-text tables (RFC 4180 quoting, comma or tab separated, header row).

#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <system_error>
#include <unordered_map>
#include <vector>

#include "refqual/checksum.hpp"
#include "refqual/error.hpp"

namespace refqual {

struct Table {
    std::string source;
    char delimiter = ',';
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> row_lines;  // 1-based physical line where each row starts

    std::optional<std::size_t> column(std::string_view name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        return std::nullopt;
    }

    std::size_t require_column(std::string_view name) const {
        if (auto c = column(name)) return *c;
        throw ParseError(source, 1, 1, "missing required column '" + std::string(name) + "'");
    }
};

namespace detail {

inline char sniff_delimiter(std::string_view text) {
    const auto eol = text.find('\n');
    const auto first = text.substr(0, eol);
    return first.find('\t') != std::string_view::npos ? '\t' : ',';
}

}  // namespace detail

/// Parses delimited text. The delimiter is taken from the header line (tab if present, else comma).
/// Every record must have as many fields as the header; violations are fatal with line and column.
inline Table parse_table(std::string_view text, std::string source = "<memory>") {
    Table table;
    table.source = std::move(source);
    if (text.size() >= 3 && text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
    table.delimiter = detail::sniff_delimiter(text);
    const char delim = table.delimiter;

    std::vector<std::vector<std::string>> records;
    std::vector<std::size_t> lines;
    std::vector<std::string> record;
    std::string field;
    std::size_t line = 1, col = 1;
    std::size_t record_line = 1;
    bool in_quotes = false, was_quoted = false, after_quote = false;
    std::size_t quote_line = 0, quote_col = 0;

    auto end_field = [&] {
        record.push_back(std::move(field));
        field.clear();
        was_quoted = after_quote = false;
    };
    auto end_record = [&] {
        end_field();
        // Blank lines between records carry no data.
        if (!(record.size() == 1 && record[0].empty())) {
            records.push_back(std::move(record));
            lines.push_back(record_line);
        }
        record.clear();
    };

    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                    col += 2;
                    continue;
                }
                in_quotes = false;
                after_quote = true;
            } else {
                field.push_back(c);
                if (c == '\n') {
                    ++line;
                    col = 0;
                }
            }
            ++col;
            continue;
        }
        if (c == '"') {
            if (!field.empty() || was_quoted)
                throw ParseError(table.source, line, col, "quote inside unquoted field");
            in_quotes = was_quoted = true;
            quote_line = line;
            quote_col = col;
            ++col;
            continue;
        }
        if (c == delim) {
            end_field();
            ++col;
            continue;
        }
        if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') continue;
        if (c == '\n') {
            end_record();
            ++line;
            col = 1;
            record_line = line;
            continue;
        }
        if (after_quote) throw ParseError(table.source, line, col, "characters after closing quote");
        field.push_back(c);
        ++col;
    }
    if (in_quotes) throw ParseError(table.source, quote_line, quote_col, "unterminated quoted field");
    if (!field.empty() || !record.empty() || was_quoted) end_record();

    if (records.empty()) throw ParseError(table.source, 1, 1, "empty file (no header row)");
    table.header = std::move(records.front());
    for (std::size_t r = 1; r < records.size(); ++r) {
        if (records[r].size() != table.header.size()) {
            throw ParseError(table.source, lines[r], std::min(records[r].size(), table.header.size()) + 1,
                             "expected " + std::to_string(table.header.size()) + " fields, found " +
                                 std::to_string(records[r].size()));
        }
        table.rows.push_back(std::move(records[r]));
        table.row_lines.push_back(lines[r]);
    }
    return table;
}

inline Table read_table(const std::filesystem::path& path) {
    return parse_table(read_file(path), path.string());
}

inline std::string quote_field(std::string_view v, char delim = ',') {
    const bool needs = v.find_first_of(std::string{delim, '"', '\n', '\r'}) != std::string_view::npos;
    if (!needs) return std::string(v);
    std::string out = "\"";
    for (char c : v) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

inline std::string format_row(const std::vector<std::string>& fields, char delim = ',') {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out.push_back(delim);
        out += quote_field(fields[i], delim);
    }
    out.push_back('\n');
    return out;
}

inline std::string format_table(const Table& t) {
    std::string out = format_row(t.header, t.delimiter);
    for (const auto& r : t.rows) out += format_row(r, t.delimiter);
    return out;
}

inline void write_text(const std::filesystem::path& path, std::string_view text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

inline void write_table(const std::filesystem::path& path, const Table& t) { write_text(path, format_table(t)); }

/// Shortest round-trip representation; NaN is written as an empty field.
inline std::string fmt_num(double v) {
    if (std::isnan(v)) return {};
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

inline std::string fmt_opt(const std::optional<double>& v) { return v ? fmt_num(*v) : std::string{}; }

inline std::optional<double> parse_double(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    if (s.empty()) return std::nullopt;
    if (s.front() == '+') s.remove_prefix(1);
    double v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
    return v;
}

inline std::optional<long long> parse_int(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    if (s.empty()) return std::nullopt;
    if (s.front() == '+') s.remove_prefix(1);
    long long v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
    return v;
}

}  // namespace refqual
