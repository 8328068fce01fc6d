#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace refqual {

// Root of every exception the library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Input data is structurally unusable (bad file, duplicate key, inconsistent reference).
class DataError : public Error {
public:
    using Error::Error;
};

class ParseError : public DataError {
public:
    ParseError(std::string source, std::size_t line, std::size_t column, const std::string& what)
        : DataError(source + ":" + std::to_string(line) + ":" + std::to_string(column) + ": " + what),
          source_(std::move(source)),
          line_(line),
          column_(column) {}

    const std::string& source() const noexcept { return source_; }
    std::size_t line() const noexcept { return line_; }
    std::size_t column() const noexcept { return column_; }

private:
    std::string source_;
    std::size_t line_;
    std::size_t column_;
};

// An argument is outside the operation's domain (uoa 35, fraction 1.2, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

// A statistic is undefined for the given input, e.g. Spearman with a constant side.
class DegenerateInput : public Error {
public:
    using Error::Error;
};

// A pipeline stage needs a file that an earlier stage produces.
class MissingArtifact : public Error {
public:
    MissingArtifact(const std::string& path, const std::string& producer)
        : Error("missing " + path + " (run `refqual " + producer + "` first)"), producer_(producer) {}

    const std::string& producer() const noexcept { return producer_; }

private:
    std::string producer_;
};

}  // namespace refqual
