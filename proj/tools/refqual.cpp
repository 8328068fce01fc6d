// refqual command-line driver. Every stage reads and writes files under the
// configured output directory; see README.md for the artifact layout.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "refqual/pipeline.hpp"
#include "refqual/synthetic.hpp"

namespace fs = std::filesystem;
using namespace refqual;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kBackend = 3 };

struct Overrides {
    std::string config = "refqual.json";
    std::string output;
    std::string backend;
    std::optional<std::uint64_t> seed;
    std::optional<int> repetitions;
    std::optional<int> max_in_flight;
    std::optional<int> max_attempts;
    std::string endpoint;
    std::string cache_dir;
};

CampaignConfig effective_config(const Overrides& o) {
    auto c = load_config(o.config);
    if (!o.output.empty()) c.output_dir = o.output;
    if (!o.backend.empty()) c.backend = o.backend;
    if (o.seed) c.seed = *o.seed;
    if (o.repetitions) c.repetitions = *o.repetitions;
    if (o.max_in_flight) c.max_in_flight = *o.max_in_flight;
    if (o.max_attempts) c.max_attempts = *o.max_attempts;
    if (!o.endpoint.empty()) c.endpoint = o.endpoint;
    if (!o.cache_dir.empty()) c.cache_dir = o.cache_dir;
    c.validate();
    return c;
}

json sample_config() {
    return {{"articles", "articles.csv"},
            {"profiles", "profiles.csv"},
            {"latent", "latent.csv"},
            {"models",
             {{{"model_id", "gpt-4o"},
               {"unit_cost", 10.0},
               {"params", json::object()},
               {"mock", {{"bias", 0.35}, {"noise", 0.7}, {"article_noise", 0.35}}}},
              {{"model_id", "gpt-4o-mini"},
               {"unit_cost", 1.0},
               {"params", json::object()},
               {"mock", {{"bias", 0.1}, {"noise", 0.8}, {"article_noise", 0.35}}}}}},
            {"repetitions", 5},
            {"filter", {{"fraction", 0.10}, {"metric", "chars"}}},
            {"bootstrap", {{"level", 0.95}, {"resamples", 1000}, {"seed", 1}}},
            {"seed", 7},
            {"snapshots",
             {{{"id", "2021"}, {"path", "citations_2021.csv"}}, {{"id", "2024"}, {"path", "citations_2024.csv"}}}},
            {"theoretical_max", "theoretical_max.csv"},
            {"output_dir", "../../out"},
            {"gateway", {{"backend", "mock"}, {"max_in_flight", 4}, {"max_attempts", 5}, {"base_backoff_ms", 250}}}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"refqual: score research articles with LLM reports and compare them with expert and citation indicators"};
    app.require_subcommand(1);
    Overrides o;

    auto with_config = [&](CLI::App* sub) {
        sub->add_option("-c,--config", o.config, "campaign config (JSON)")->capture_default_str();
        sub->add_option("-o,--output", o.output, "output directory (overrides config)");
        return sub;
    };
    auto with_gateway = [&](CLI::App* sub) {
        sub->add_option("--backend", o.backend, "gateway adapter")->check(CLI::IsMember({"live", "mock"}));
        sub->add_option("--seed", o.seed, "mock backend seed");
        sub->add_option("--repetitions", o.repetitions, "runs per article and model")->check(CLI::PositiveNumber);
        sub->add_option("--max-in-flight", o.max_in_flight, "concurrent requests")->check(CLI::PositiveNumber);
        sub->add_option("--max-attempts", o.max_attempts, "attempts per request")->check(CLI::PositiveNumber);
        sub->add_option("--endpoint", o.endpoint, "chat-completion endpoint URL for --backend live");
        sub->add_option("--cache-dir", o.cache_dir, "response cache directory");
        return sub;
    };

    auto* ingest = with_config(app.add_subcommand("ingest", "load corpus, filter short abstracts, attach gold scores"));
    auto* preview = app.add_subcommand("prompt-preview", "print the system and user prompt for a UoA or an article");
    std::optional<int> preview_uoa;
    std::string preview_article, prompt_dir = REFQUAL_DEFAULT_PROMPT_DIR;
    preview->add_option("--uoa", preview_uoa, "print the system prompt used for this UoA")->check(CLI::Range(1, 34));
    preview->add_option("--article-id", preview_article, "print both prompts for this ingested article");
    preview->add_option("-c,--config", o.config, "campaign config (needed with --article-id)");
    preview->add_option("-o,--output", o.output, "output directory (overrides config)");
    preview->add_option("--prompts", prompt_dir, "prompt resource directory (with --uoa)");
    auto* score = with_gateway(with_config(app.add_subcommand("score", "schedule and submit scoring requests")));
    auto* parse = with_config(app.add_subcommand("parse", "extract scores from reports"));
    auto* resolve = with_config(app.add_subcommand("resolve", "manually resolve reports the parser could not score"));
    auto* aggregate = with_config(app.add_subcommand("aggregate", "per-article run means and model combination"));
    auto* nlcs = with_config(app.add_subcommand("nlcs", "field-normalised citation scores per snapshot"));
    auto* correlate = with_config(app.add_subcommand("correlate", "per-UoA Spearman correlations with bootstrap CIs"));
    auto* trend = with_config(app.add_subcommand("year-trend", "correlations by publication year"));
    auto* summary = with_config(app.add_subcommand("mean-summary", "mean score per source and UoA"));
    auto* cost = with_config(app.add_subcommand("cost-curve", "correlation against query cost for run mixes"));
    auto* report = with_config(app.add_subcommand("report", "bundle tables and a provenance manifest"));
    auto* run = with_gateway(with_config(app.add_subcommand("run", "every stage in order")));

    auto* synth = app.add_subcommand("synth", "write a synthetic corpus with latent qualities and a config");
    std::string synth_dir = "data/sample";
    SyntheticSpec spec;
    synth->add_option("-d,--dir", synth_dir, "destination directory")->capture_default_str();
    synth->add_option("--seed", spec.seed, "generator seed")->capture_default_str();
    synth->add_option("--articles", spec.n_articles, "number of articles")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (synth->parsed()) {
            const auto s = make_synthetic_corpus(spec);
            write_synthetic_corpus(s, synth_dir);
            write_text(fs::path(synth_dir) / "config.json", sample_config().dump(2) + "\n");
            std::cerr << "[refqual] synth: " << s.corpus.articles.size() << " articles written to " << synth_dir << "\n";
            return kOk;
        }
        if (preview->parsed()) {
            if (preview_uoa.has_value() == !preview_article.empty()) {
                std::cerr << "prompt-preview: give exactly one of --uoa or --article-id\n";
                return kUsage;
            }
            if (preview_uoa) {
                const auto lib = PromptLibrary::load(prompt_dir);
                const auto g = group_for_uoa(*preview_uoa);
                std::cout << "# " << group_name(g) << " sha256=" << lib.checksum(g) << "\n" << lib.system_text(g) << "\n";
                return kOk;
            }
            const auto config = effective_config(o);
            Pipeline p(config);
            const auto articles = p.load_articles();
            const auto it = std::find_if(articles.begin(), articles.end(),
                                         [&](const Article& a) { return a.article_id == preview_article; });
            if (it == articles.end()) throw DataError("article " + preview_article + " is not in the ingested corpus");
            const auto lib = PromptLibrary::load(config.prompts);
            const auto prompt = lib.build_prompt(*it);
            std::cout << "=== system (" << group_name(group_for_uoa(it->uoa)) << ") ===\n"
                      << prompt.system_text << "\n=== user ===\n" << prompt.user_text << "\n";
            return kOk;
        }

        Pipeline p(effective_config(o));
        if (ingest->parsed()) p.ingest();
        if (score->parsed()) return p.score() ? kBackend : kOk;
        if (parse->parsed()) p.parse();
        if (resolve->parsed()) p.resolve(std::cin, std::cout);
        if (aggregate->parsed()) p.aggregate();
        if (nlcs->parsed()) p.nlcs();
        if (correlate->parsed()) p.correlate();
        if (trend->parsed()) p.year_trend();
        if (summary->parsed()) p.mean_summary();
        if (cost->parsed()) p.cost_curve_stage();
        if (report->parsed()) p.report();
        if (run->parsed()) p.run_all();
        return kOk;
    } catch (const FatalBackendError& e) {
        std::cerr << "refqual: backend failure: " << e.what() << "\n";
        return kBackend;
    } catch (const MissingArtifact& e) {
        std::cerr << "refqual: " << e.what() << "\n";
        return kData;
    } catch (const DomainError& e) {
        std::cerr << "refqual: invalid configuration or argument: " << e.what() << "\n";
        return kUsage;
    } catch (const Error& e) {
        std::cerr << "refqual: " << e.what() << "\n";
        return kData;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "refqual: " << e.what() << "\n";
        return kData;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "refqual: malformed JSON: " << e.what() << "\n";
        return kData;
    }
}
