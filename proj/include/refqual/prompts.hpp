#pragma once

// REF-derived system prompts (stored as checksummed resource files) and the
// per-article user prompt layout.

#include <array>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "refqual/checksum.hpp"
#include "refqual/corpus.hpp"
#include "refqual/error.hpp"

#ifndef REFQUAL_DEFAULT_PROMPT_DIR
#define REFQUAL_DEFAULT_PROMPT_DIR "resources/prompts"
#endif

namespace refqual {

enum class UoaGroup { LifeSciences, PhysicalSciences, SocialSciences, ArtsHumanities };

struct UoaRange {
    int first;
    int last;
    bool contains(int uoa) const { return uoa >= first && uoa <= last; }
};

inline constexpr std::array<UoaGroup, 4> kAllGroups{UoaGroup::LifeSciences, UoaGroup::PhysicalSciences,
                                                    UoaGroup::SocialSciences, UoaGroup::ArtsHumanities};

inline constexpr UoaRange uoa_range(UoaGroup g) {
    switch (g) {
        case UoaGroup::LifeSciences: return {1, 6};
        case UoaGroup::PhysicalSciences: return {7, 12};
        case UoaGroup::SocialSciences: return {13, 24};
        case UoaGroup::ArtsHumanities: return {25, 34};
    }
    return {0, -1};
}

inline std::string_view group_name(UoaGroup g) {
    switch (g) {
        case UoaGroup::LifeSciences: return "life_sciences";
        case UoaGroup::PhysicalSciences: return "physical_sciences";
        case UoaGroup::SocialSciences: return "social_sciences";
        case UoaGroup::ArtsHumanities: return "arts_humanities";
    }
    return "unknown";
}

inline UoaGroup group_for_uoa(int uoa) {
    for (auto g : kAllGroups)
        if (uoa_range(g).contains(uoa)) return g;
    throw DomainError("uoa " + std::to_string(uoa) + " is outside 1..34");
}

struct PromptPair {
    std::string system_text;
    std::string user_text;

    friend bool operator==(const PromptPair&, const PromptPair&) = default;
};

inline constexpr std::string_view kUserPromptLead = "Score this article:";
inline constexpr std::string_view kAbstractSeparator = "Abstract";

/// Replaces each run of line-break characters with a single space; other whitespace is kept.
inline std::string single_line(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool in_break = false;
    for (char c : s) {
        if (c == '\n' || c == '\r') {
            if (!in_break) out.push_back(' ');
            in_break = true;
            continue;
        }
        in_break = false;
        out.push_back(c);
    }
    return out;
}

/// The four system prompts, loaded from a directory holding one text file per
/// group plus a MANIFEST of SHA-256 sums. Loading fails if any file drifted.
class PromptLibrary {
public:
    static constexpr std::string_view kManifestName = "MANIFEST";

    static PromptLibrary load(const std::filesystem::path& dir = REFQUAL_DEFAULT_PROMPT_DIR) {
        const auto manifest_path = dir / kManifestName;
        if (!std::filesystem::exists(manifest_path)) throw DataError("prompt manifest not found: " + manifest_path.string());
        std::istringstream manifest(read_file(manifest_path));
        std::map<std::string, std::string> expected;
        std::string line, version;
        while (std::getline(manifest, line)) {
            if (line.empty()) continue;
            if (line[0] == '#') {
                if (version.empty()) version = trim(line.substr(1));
                continue;
            }
            const auto sp = line.find("  ");
            if (sp == std::string::npos || sp != 64)
                throw DataError("malformed manifest line in " + manifest_path.string() + ": " + line);
            expected[line.substr(sp + 2)] = line.substr(0, sp);
        }

        PromptLibrary lib;
        lib.dir_ = dir;
        lib.version_ = version;
        for (auto g : kAllGroups) {
            const std::string file = std::string(group_name(g)) + ".txt";
            auto it = expected.find(file);
            if (it == expected.end()) throw DataError("manifest has no entry for " + file);
            auto text = read_file(dir / file);
            const auto sum = sha256_hex(text);
            if (sum != it->second)
                throw DataError("prompt " + file + " does not match its manifest checksum (" + sum + " != " + it->second + ")");
            lib.texts_[static_cast<std::size_t>(g)] = std::move(text);
            lib.sums_[static_cast<std::size_t>(g)] = sum;
        }
        return lib;
    }

    const std::string& system_text(UoaGroup g) const { return texts_[static_cast<std::size_t>(g)]; }
    const std::string& checksum(UoaGroup g) const { return sums_[static_cast<std::size_t>(g)]; }
    const std::string& version() const { return version_; }
    const std::filesystem::path& directory() const { return dir_; }

    /// Combined checksum over all four prompts, for provenance records.
    std::string fingerprint() const {
        std::string all;
        for (const auto& s : sums_) all += s;
        return sha256_hex(all);
    }

    /// "Score this article:", the title, "Abstract", then the abstract, one per line.
    PromptPair build_prompt(const Article& article) const {
        const auto title = single_line(article.title);
        const auto abstract = single_line(article.abstract);
        if (trim(title).empty()) throw DomainError("article " + article.article_id + " has an empty title");
        if (trim(abstract).empty())
            throw DomainError("article " + article.article_id + " has an empty abstract; filter it before scoring");
        PromptPair p;
        p.system_text = system_text(group_for_uoa(article.uoa));
        p.user_text.reserve(kUserPromptLead.size() + title.size() + abstract.size() + 16);
        p.user_text.append(kUserPromptLead).append("\n").append(title).append("\n");
        p.user_text.append(kAbstractSeparator).append("\n").append(abstract);
        return p;
    }

private:
    std::filesystem::path dir_;
    std::string version_;
    std::array<std::string, 4> texts_;
    std::array<std::string, 4> sums_;
};

}  // namespace refqual
