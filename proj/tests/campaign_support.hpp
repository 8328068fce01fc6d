#pragma once

#include <filesystem>
#include <string>

#include "refqual/pipeline.hpp"
#include "refqual/synthetic.hpp"

namespace refqual::testing {

/// Writes a synthetic corpus plus a two-model mock config into `dir` and returns the config path.
inline std::filesystem::path write_small_campaign(const std::filesystem::path& dir, std::size_t n_articles = 240,
                                                  std::uint64_t seed = 11, int repetitions = 3) {
    SyntheticSpec spec;
    spec.seed = seed;
    spec.n_articles = n_articles;
    spec.departments_per_uoa = 4;
    spec.background_records = 200;
    write_synthetic_corpus(make_synthetic_corpus(spec), dir);
    const json config{
        {"articles", "articles.csv"},
        {"profiles", "profiles.csv"},
        {"latent", "latent.csv"},
        {"models",
         {{{"model_id", "big"}, {"unit_cost", 10.0}, {"mock", {{"bias", 0.3}, {"noise", 0.7}}}},
          {{"model_id", "small"}, {"unit_cost", 1.0}, {"mock", {{"noise", 0.9}}}}}},
        {"repetitions", repetitions},
        {"bootstrap", {{"resamples", 200}, {"seed", 3}}},
        {"seed", 5},
        {"snapshots", {{{"id", "2021"}, {"path", "citations_2021.csv"}}, {{"id", "2024"}, {"path", "citations_2024.csv"}}}},
        {"theoretical_max", "theoretical_max.csv"},
        {"output_dir", "out"},
        {"gateway", {{"backend", "mock"}, {"max_in_flight", 4}, {"base_backoff_ms", 1}}}};
    const auto path = dir / "config.json";
    write_text(path, config.dump(2) + "\n");
    return path;
}

}  // namespace refqual::testing
