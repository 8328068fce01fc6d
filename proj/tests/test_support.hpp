#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "refqual/corpus.hpp"

namespace refqual::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("refqual-" + tag + "-" + std::to_string(rd()));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

inline Article make_article(std::string id, int uoa, std::string abstract, std::string inst = "I1", int year = 2018) {
    Article a;
    a.article_id = std::move(id);
    a.title = "Title of " + a.article_id;
    a.abstract = std::move(abstract);
    a.uoa = uoa;
    a.institution_id = std::move(inst);
    a.pub_year = year;
    return a;
}

}  // namespace refqual::testing
