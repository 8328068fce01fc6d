#pragma once

// File-based pipeline stages. Each stage reads the artifacts of earlier stages from the
// output directory, writes its own tables, and leaves a provenance sidecar
// (<table>.manifest.json) next to every table it writes.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <functional>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "refqual/analysis.hpp"
#include "refqual/checksum.hpp"
#include "refqual/corpus.hpp"
#include "refqual/costmodel.hpp"
#include "refqual/gateway.hpp"
#include "refqual/indicators.hpp"
#include "refqual/prompts.hpp"
#include "refqual/report_parser.hpp"
#include "refqual/table.hpp"

namespace refqual {

namespace fs = std::filesystem;

struct ModelConfig {
    ModelSpec spec;
    MockModelParams mock;
};

struct SnapshotConfig {
    std::string id;
    fs::path path;
};

struct CampaignConfig {
    fs::path articles;
    fs::path profiles;
    fs::path prompts = REFQUAL_DEFAULT_PROMPT_DIR;
    std::optional<fs::path> latent;  // latent qualities for the mock backend
    std::vector<ModelConfig> models;
    int repetitions = 5;
    double filter_fraction = 0.10;
    LengthMetric filter_metric = LengthMetric::Chars;
    double ci_level = 0.95;
    int ci_resamples = 1000;
    std::uint64_t ci_seed = 1;
    std::uint64_t seed = 7;  // mock backend seed
    std::vector<SnapshotConfig> snapshots;
    std::optional<fs::path> theoretical_max;
    fs::path output_dir = "out";
    std::optional<fs::path> cache_dir;
    std::string backend = "mock";
    std::string endpoint = "https://api.openai.com/v1/chat/completions";
    std::string api_key_env = "OPENAI_API_KEY";
    int max_in_flight = 4;
    int max_attempts = 5;
    int base_backoff_ms = 250;
    std::string cost_model_a;  // defaults to the first model
    std::string cost_model_b;  // defaults to the second model
    int cost_max_runs = 12;

    fs::path cache() const { return cache_dir.value_or(output_dir / "cache"); }

    const ModelConfig& model(const std::string& id) const {
        for (const auto& m : models)
            if (m.spec.model_id == id) return m;
        throw DomainError("unknown model '" + id + "'");
    }

    std::pair<std::string, std::string> cost_pair() const {
        if (models.size() < 2 && (cost_model_a.empty() || cost_model_b.empty()))
            throw DomainError("model comparison needs two models in the config");
        return {cost_model_a.empty() ? models[0].spec.model_id : cost_model_a,
                cost_model_b.empty() ? models[1].spec.model_id : cost_model_b};
    }

    /// Canonical JSON form; its checksum identifies the effective configuration.
    json to_json() const {
        json models_j = json::array();
        for (const auto& m : models)
            models_j.push_back({{"model_id", m.spec.model_id},
                                {"unit_cost", m.spec.unit_cost},
                                {"params", m.spec.params},
                                {"mock",
                                 {{"bias", m.mock.bias},
                                  {"noise", m.mock.noise},
                                  {"article_noise", m.mock.article_noise},
                                  {"dims_rate", m.mock.dims_rate},
                                  {"no_score_rate", m.mock.no_score_rate},
                                  {"half_star_rate", m.mock.half_star_rate},
                                  {"overall_with_dims_rate", m.mock.overall_with_dims_rate}}}});
        json snaps = json::array();
        for (const auto& s : snapshots) snaps.push_back({{"id", s.id}, {"path", s.path.string()}});
        return {{"format", "refqual-config/1"},
                {"articles", articles.string()},
                {"profiles", profiles.string()},
                {"prompts", prompts.string()},
                {"latent", latent ? latent->string() : ""},
                {"models", models_j},
                {"repetitions", repetitions},
                {"filter", {{"fraction", filter_fraction}, {"metric", filter_metric == LengthMetric::Chars ? "chars" : "words"}}},
                {"bootstrap", {{"level", ci_level}, {"resamples", ci_resamples}, {"seed", ci_seed}}},
                {"seed", seed},
                {"snapshots", snaps},
                {"theoretical_max", theoretical_max ? theoretical_max->string() : ""},
                {"output_dir", output_dir.string()},
                {"cache_dir", cache().string()},
                {"gateway",
                 {{"backend", backend},
                  {"endpoint", endpoint},
                  {"api_key_env", api_key_env},
                  {"max_in_flight", max_in_flight},
                  {"max_attempts", max_attempts},
                  {"base_backoff_ms", base_backoff_ms}}},
                {"cost", {{"model_a", cost_model_a}, {"model_b", cost_model_b}, {"max_runs", cost_max_runs}}}};
    }

    std::string checksum() const { return sha256_hex(to_json().dump()); }

    void validate() const {
        if (models.empty()) throw DomainError("config lists no models");
        std::set<std::string> ids;
        for (const auto& m : models) {
            m.spec.validate();
            if (!ids.insert(m.spec.model_id).second) throw DomainError("duplicate model " + m.spec.model_id);
        }
        if (repetitions < 1) throw DomainError("repetitions must be at least 1");
        if (!(filter_fraction >= 0 && filter_fraction < 1)) throw DomainError("filter fraction must be in [0,1)");
        if (!(ci_level > 0 && ci_level < 1)) throw DomainError("bootstrap level must be in (0,1)");
        if (ci_resamples < 1) throw DomainError("bootstrap resamples must be positive");
        if (backend != "mock" && backend != "live") throw DomainError("backend must be 'mock' or 'live'");
        if (max_in_flight < 1 || max_attempts < 1) throw DomainError("gateway bounds must be positive");
    }
};

/// Reads a JSON config. Relative paths are resolved against the config file's directory.
inline CampaignConfig load_config(const fs::path& file) {
    const auto j = json::parse(read_file(file), nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw DataError("config " + file.string() + " is not a JSON object");
    const auto base = file.has_parent_path() ? file.parent_path() : fs::path(".");
    auto path_of = [&](const std::string& p) { return (fs::path(p).is_absolute() ? fs::path(p) : base / p).lexically_normal(); };

    CampaignConfig c;
    try {
        c.articles = path_of(j.at("articles").get<std::string>());
        c.profiles = path_of(j.at("profiles").get<std::string>());
        if (j.contains("prompts") && !j["prompts"].get<std::string>().empty()) c.prompts = path_of(j["prompts"]);
        if (j.contains("latent") && !j["latent"].get<std::string>().empty()) c.latent = path_of(j["latent"]);
        for (const auto& m : j.at("models")) {
            ModelConfig mc;
            mc.spec = ModelSpec(m.at("model_id").get<std::string>(), m.at("unit_cost").get<double>(),
                                m.value("params", json::object()));
            if (m.contains("mock")) {
                const auto& k = m["mock"];
                mc.mock.bias = k.value("bias", mc.mock.bias);
                mc.mock.noise = k.value("noise", mc.mock.noise);
                mc.mock.article_noise = k.value("article_noise", mc.mock.article_noise);
                mc.mock.dims_rate = k.value("dims_rate", mc.mock.dims_rate);
                mc.mock.no_score_rate = k.value("no_score_rate", mc.mock.no_score_rate);
                mc.mock.half_star_rate = k.value("half_star_rate", mc.mock.half_star_rate);
                mc.mock.overall_with_dims_rate = k.value("overall_with_dims_rate", mc.mock.overall_with_dims_rate);
            }
            c.models.push_back(std::move(mc));
        }
        c.repetitions = j.value("repetitions", c.repetitions);
        if (j.contains("filter")) {
            c.filter_fraction = j["filter"].value("fraction", c.filter_fraction);
            const auto metric = j["filter"].value("metric", std::string("chars"));
            if (metric != "chars" && metric != "words") throw DomainError("filter.metric must be chars or words");
            c.filter_metric = metric == "chars" ? LengthMetric::Chars : LengthMetric::Words;
        }
        if (j.contains("bootstrap")) {
            c.ci_level = j["bootstrap"].value("level", c.ci_level);
            c.ci_resamples = j["bootstrap"].value("resamples", c.ci_resamples);
            c.ci_seed = j["bootstrap"].value("seed", c.ci_seed);
        }
        c.seed = j.value("seed", c.seed);
        if (j.contains("snapshots"))
            for (const auto& s : j["snapshots"]) c.snapshots.push_back({s.at("id"), path_of(s.at("path"))});
        if (j.contains("theoretical_max") && !j["theoretical_max"].get<std::string>().empty())
            c.theoretical_max = path_of(j["theoretical_max"]);
        c.output_dir = path_of(j.value("output_dir", std::string("out")));
        if (j.contains("cache_dir") && !j["cache_dir"].get<std::string>().empty()) c.cache_dir = path_of(j["cache_dir"]);
        if (j.contains("gateway")) {
            const auto& g = j["gateway"];
            c.backend = g.value("backend", c.backend);
            c.endpoint = g.value("endpoint", c.endpoint);
            c.api_key_env = g.value("api_key_env", c.api_key_env);
            c.max_in_flight = g.value("max_in_flight", c.max_in_flight);
            c.max_attempts = g.value("max_attempts", c.max_attempts);
            c.base_backoff_ms = g.value("base_backoff_ms", c.base_backoff_ms);
        }
        if (j.contains("cost")) {
            c.cost_model_a = j["cost"].value("model_a", std::string());
            c.cost_model_b = j["cost"].value("model_b", std::string());
            c.cost_max_runs = j["cost"].value("max_runs", c.cost_max_runs);
        }
    } catch (const json::exception& e) {
        throw DataError("config " + file.string() + ": " + e.what());
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------

/// Backend factory hook so tests can inject fault-injecting or counting backends.
using BackendFactory = std::function<std::unique_ptr<ScoringBackend>(const CampaignConfig&)>;

class Pipeline {
public:
    explicit Pipeline(CampaignConfig config, std::ostream& log = std::cerr)
        : config_(std::move(config)), log_(&log) {
        config_.validate();
    }

    const CampaignConfig& config() const { return config_; }
    void set_backend_factory(BackendFactory f) { backend_factory_ = std::move(f); }
    void set_sleep(std::function<void(std::chrono::milliseconds)> s) { sleep_ = std::move(s); }

    // Artifact locations ------------------------------------------------------
    fs::path out(const std::string& rel) const { return config_.output_dir / rel; }
    fs::path articles_path() const { return out("ingest/articles.csv"); }
    fs::path profiles_path() const { return out("ingest/profiles.csv"); }
    fs::path gold_path() const { return out("ingest/gold.csv"); }
    fs::path reports_path() const { return out("scores/reports.jsonl"); }
    fs::path ledger_path() const { return out("scores/ledger.jsonl"); }
    fs::path parsed_path() const { return out("parsed/parsed.csv"); }
    fs::path unresolved_path() const { return out("parsed/unresolved.jsonl"); }
    fs::path resolutions_path() const { return out("parsed/resolutions.csv"); }
    fs::path run_means_path() const { return out("aggregate/run_means.csv"); }
    fs::path combined_path() const { return out("aggregate/combined.csv"); }
    fs::path nlcs_path() const { return out("nlcs/nlcs.csv"); }
    fs::path correlations_path() const { return out("tables/correlations.csv"); }
    fs::path year_trend_path() const { return out("tables/year_trend.csv"); }
    fs::path mean_summary_path() const { return out("tables/mean_summary.csv"); }
    fs::path cost_curve_path() const { return out("tables/cost_curve.csv"); }
    fs::path report_dir() const { return out("report"); }

    // Stages -----------------------------------------------------------------

    /// Load, filter short abstracts, attach gold scores.
    void ingest() {
        auto loaded = load_corpus(config_.articles, config_.profiles);
        for (const auto& r : loaded.rejects) warn("rejected " + r.source + ":" + std::to_string(r.line) + " (" + r.key + "): " + r.reason);
        auto [filtered, report] = filter_short_abstracts(loaded.corpus, config_.filter_fraction, config_.filter_metric);

        auto gold = attach_gold_scores(filtered);
        Table unmatched;
        unmatched.header = {"article_id", "department"};
        if (!gold.unmatched.empty()) {
            std::set<std::string> drop;
            for (const auto& [id, key] : gold.unmatched) {
                unmatched.rows.push_back({id, key});
                drop.insert(id);
            }
            warn(std::to_string(drop.size()) + " article(s) have no department profile and were dropped");
            std::erase_if(filtered.articles, [&](const Article& a) { return drop.count(a.article_id) > 0; });
        }

        const std::vector<fs::path> inputs{config_.articles, config_.profiles};
        emit("ingest/articles.csv", articles_table(filtered.articles), "ingest", inputs);
        emit("ingest/profiles.csv", profiles_table(filtered.profiles), "ingest", inputs);
        emit("ingest/rejects.csv", rejects_table(loaded.rejects), "ingest", inputs);
        emit("ingest/unmatched_profiles.csv", unmatched, "ingest", inputs);

        Table removed;
        removed.header = {"article_id", "uoa", "length"};
        std::set<std::string> removed_ids(report.removed_ids.begin(), report.removed_ids.end());
        for (const auto& a : loaded.corpus.articles)
            if (removed_ids.count(a.article_id))
                removed.rows.push_back({a.article_id, std::to_string(a.uoa), std::to_string(abstract_length(a, config_.filter_metric))});
        emit("ingest/removed.csv", removed, "ingest", inputs);
        Table thresholds;
        thresholds.header = {"uoa", "n", "removed", "threshold"};
        for (const auto& s : report.per_uoa)
            thresholds.rows.push_back({std::to_string(s.uoa), std::to_string(s.n), std::to_string(s.removed),
                                       s.threshold ? std::to_string(*s.threshold) : ""});
        emit("ingest/filter_thresholds.csv", thresholds, "ingest", inputs);

        Table g;
        g.header = {"article_id", "uoa", "institution_id", "gold"};
        for (const auto& a : filtered.articles)
            g.rows.push_back({a.article_id, std::to_string(a.uoa), a.institution_id, fmt_num(gold.scores.at(a.article_id))});
        emit("ingest/gold.csv", g, "ingest", inputs);
        info("ingest: " + std::to_string(filtered.articles.size()) + " articles kept, " +
             std::to_string(report.removed_ids.size()) + " short abstracts removed, " +
             std::to_string(loaded.rejects.size()) + " rows rejected");
    }

    /// Schedule and submit every model's runs. Returns the number of failed requests.
    std::size_t score() {
        const auto articles = load_articles();
        const auto prompts = PromptLibrary::load(config_.prompts);
        auto backend = make_backend();
        ScoreCache cache(config_.cache());
        fs::create_directories(ledger_path().parent_path());
        fs::remove(ledger_path());
        RunLedger ledger(ledger_path());

        std::map<std::string, ModelSpec> specs;
        std::vector<ScoreRequest> requests;
        for (const auto& m : config_.models) {
            specs[m.spec.model_id] = m.spec;
            auto r = schedule_runs(articles, m.spec, config_.repetitions, prompts);
            requests.insert(requests.end(), std::make_move_iterator(r.begin()), std::make_move_iterator(r.end()));
        }
        SubmitOptions opts;
        opts.max_in_flight = config_.max_in_flight;
        opts.max_attempts = config_.max_attempts;
        opts.base_backoff = std::chrono::milliseconds(config_.base_backoff_ms);
        if (sleep_) opts.sleep = sleep_;
        const auto result = submit(requests, *backend, &cache, ledger, specs, opts);
        ledger.canonicalize();

        std::string lines;
        for (const auto& r : result.reports) {
            lines += json{{"article_id", r.key.article_id},
                          {"model_id", r.key.model_id},
                          {"run_index", r.key.run_index},
                          {"report_text", r.report_text}}
                         .dump() +
                     '\n';
        }
        std::vector<fs::path> inputs{articles_path(), config_.prompts / PromptLibrary::kManifestName};
        if (config_.latent && config_.backend == "mock") inputs.push_back(*config_.latent);
        emit_text("scores/reports.jsonl", lines, "score", inputs);
        Table failures;
        failures.header = {"article_id", "model_id", "run_index", "attempts", "reason"};
        for (const auto& f : result.failures)
            failures.rows.push_back({f.key.article_id, f.key.model_id, std::to_string(f.key.run_index),
                                     std::to_string(f.attempts), f.reason});
        emit("scores/failures.csv", failures, "score", inputs);
        info("score: " + std::to_string(result.reports.size()) + " reports (" +
             std::to_string(ledger.count(AttemptOutcome::CacheHit)) + " from cache, " +
             std::to_string(result.backend_calls) + " backend calls, cost " + fmt_num(ledger.total_cost()) + "), " +
             std::to_string(result.failures.size()) + " failed");
        return result.failures.size();
    }

    /// Parse every report, applying stored manual resolutions. Returns the number still unresolved.
    std::size_t parse() {
        const auto reports = load_reports();
        const auto resolutions = load_resolutions();
        std::vector<ParsedScore> parsed;
        std::vector<Unresolved> pending;
        Table scoreless;
        scoreless.header = {"article_id", "model_id", "run_index", "note"};
        for (const auto& r : reports) {
            auto res = parse_report(r);
            if (auto* p = std::get_if<ParsedScore>(&res)) {
                parsed.push_back(std::move(*p));
                continue;
            }
            auto& u = std::get<Unresolved>(res);
            auto it = resolutions.find(u.key);
            if (it == resolutions.end()) {
                pending.push_back(std::move(u));
                continue;
            }
            auto outcome = resolve_manually(u, it->second);
            if (auto* p = std::get_if<ParsedScore>(&outcome))
                parsed.push_back(std::move(*p));
            else if (auto* s = std::get_if<ScorelessRun>(&outcome))
                scoreless.rows.push_back({s->key.article_id, s->key.model_id, std::to_string(s->key.run_index), s->note});
            else
                pending.push_back(std::move(u));
        }
        std::sort(parsed.begin(), parsed.end(), [](const ParsedScore& a, const ParsedScore& b) {
            return std::tie(a.key.model_id, a.key.article_id, a.key.run_index) <
                   std::tie(b.key.model_id, b.key.article_id, b.key.run_index);
        });
        const std::vector<fs::path> inputs{reports_path()};
        emit("parsed/parsed.csv", parsed_scores_table(parsed), "parse", inputs);
        emit("parsed/scoreless.csv", scoreless, "parse", inputs);
        std::string q;
        for (const auto& u : pending)
            q += json{{"article_id", u.key.article_id},
                      {"model_id", u.key.model_id},
                      {"run_index", u.key.run_index},
                      {"reason", u.reason},
                      {"report_text", u.report_text}}
                     .dump() +
                 '\n';
        emit_text("parsed/unresolved.jsonl", q, "parse", inputs);
        info("parse: " + std::to_string(parsed.size()) + " scores, " + std::to_string(pending.size()) +
             " awaiting manual resolution, " + std::to_string(scoreless.rows.size()) + " flagged scoreless");
        return pending.size();
    }

    /// Interactive pass over the unresolved queue. Answers are appended to the
    /// resolutions file as they are given, then the parse stage is rerun.
    std::size_t resolve(std::istream& in, std::ostream& out) {
        require(unresolved_path(), "parse");
        std::vector<Unresolved> queue;
        {
            std::ifstream f(unresolved_path());
            std::string line;
            while (std::getline(f, line)) {
                if (line.empty()) continue;
                const auto j = json::parse(line);
                queue.push_back({{j.at("article_id"), j.at("model_id"), j.at("run_index")}, j.at("report_text"), j.value("reason", "")});
            }
        }
        auto known = load_resolutions();
        const bool fresh = !fs::exists(resolutions_path());
        std::ofstream store(resolutions_path(), std::ios::app | std::ios::binary);
        if (fresh) store << format_row({"article_id", "model_id", "run_index", "answer"});
        std::size_t answered = 0;
        for (const auto& item : queue) {
            if (known.count(item.key)) continue;
            out << "----- " << item.key.str() << " (" << item.reason << ")\n" << item.report_text << "\n";
            std::string answer;
            while (true) {
                out << "score 1-4 or 'no score' (blank to stop): " << std::flush;
                if (!std::getline(in, answer) || trim(answer).empty()) {
                    store.close();
                    parse();
                    return answered;
                }
                const auto outcome = resolve_manually(item, answer);
                if (const auto* r = std::get_if<Reprompt>(&outcome)) {
                    out << r->message << "\n";
                    continue;
                }
                break;
            }
            store << format_row({item.key.article_id, item.key.model_id, std::to_string(item.key.run_index), trim(answer)});
            store.flush();
            known[item.key] = trim(answer);
            ++answered;
        }
        store.close();
        parse();
        return answered;
    }

    void aggregate() {
        const auto parsed = load_parsed();
        const auto articles = load_articles();
        std::vector<std::string> ids;
        for (const auto& a : articles) ids.push_back(a.article_id);
        const auto avg = average_runs(parsed, config_.repetitions, ids);

        Table means;
        means.header = {"article_id", "model_id", "mean", "runs", "short_count"};
        std::size_t short_count = 0;
        for (const auto& m : avg.means) {
            means.rows.push_back({m.article_id, m.model_id, fmt_num(m.mean), std::to_string(m.runs), m.short_count ? "1" : "0"});
            short_count += m.short_count;
        }
        const std::vector<fs::path> inputs{parsed_path(), articles_path()};
        emit("aggregate/run_means.csv", means, "aggregate", inputs);
        Table excluded;
        excluded.header = {"article_id", "model_id", "reason"};
        for (const auto& e : avg.excluded) excluded.rows.push_back({e.article_id, e.model_id, e.reason});
        emit("aggregate/excluded.csv", excluded, "aggregate", inputs);
        if (short_count) warn(std::to_string(short_count) + " article/model mean(s) use fewer than " + std::to_string(config_.repetitions) + " runs");

        if (config_.models.size() >= 2) {
            const auto [a, b] = config_.cost_pair();
            const auto comb = combine_models(avg.for_model(a), avg.for_model(b));
            for (const auto& w : comb.warnings) warn(w);
            Table c;
            c.header = {"article_id", "combined"};
            for (const auto& [id, v] : comb.combined) c.rows.push_back({id, fmt_num(v)});
            emit("aggregate/combined.csv", c, "aggregate", inputs);
        }
        info("aggregate: " + std::to_string(avg.means.size()) + " article/model means");
    }

    void nlcs() {
        const auto articles = load_articles();
        std::map<std::string, std::vector<CitationRecord>> snaps;
        std::vector<fs::path> inputs{articles_path()};
        for (const auto& s : config_.snapshots) {
            snaps[s.id] = citation_records_from(read_table(s.path), s.id);
            inputs.push_back(s.path);
        }
        const auto values = batch_nlcs(articles, snaps);
        Table missing;
        missing.header = {"article_id", "snapshot_id"};
        for (const auto& s : values) {
            for (const auto& w : s.warnings) warn("nlcs: " + w);
            for (const auto& id : s.missing) missing.rows.push_back({id, s.snapshot_id});
        }
        emit("nlcs/nlcs.csv", nlcs_table(values), "nlcs", inputs);
        emit("nlcs/missing.csv", missing, "nlcs", inputs);
        info("nlcs: " + std::to_string(values.size()) + " snapshot(s)");
    }

    void correlate() {
        const auto articles = load_articles();
        const auto gold = load_gold();
        CorrelationOptions opt;
        opt.bootstrap.level = config_.ci_level;
        opt.bootstrap.resamples = config_.ci_resamples;
        opt.bootstrap.seed = config_.ci_seed;
        std::map<int, double> maxima;
        std::vector<fs::path> inputs{articles_path(), gold_path()};
        if (config_.theoretical_max) {
            maxima = theoretical_max_from(read_table(*config_.theoretical_max));
            inputs.push_back(*config_.theoretical_max);
        }
        std::vector<CorrelationResult> all;
        for (auto& [id, values] : indicators(inputs)) {
            auto set = per_uoa_correlations(id, values, gold, articles, opt);
            if (config_.theoretical_max) apply_theoretical_max(set, maxima);
            for (const auto& w : set.warnings) warn("correlate: " + w);
            all.insert(all.end(), set.results.begin(), set.results.end());
        }
        emit("tables/correlations.csv", correlations_table(all), "correlate", inputs);
        emit("tables/ci_overlap.csv", ci_overlap_table(all), "correlate", inputs);
        info("correlate: " + std::to_string(all.size()) + " correlation rows");
    }

    void year_trend() {
        const auto articles = load_articles();
        const auto gold = load_gold();
        std::vector<fs::path> inputs{articles_path(), gold_path()};
        const auto trend = per_year_trend(indicators(inputs), gold, articles);
        for (const auto& w : trend.warnings) warn("year-trend: " + w);
        emit("tables/year_trend.csv", year_trend_table(trend), "year-trend", inputs);
        info("year-trend: " + std::to_string(trend.rows.size()) + " rows");
    }

    void mean_summary() {
        const auto gold = load_gold();
        require(run_means_path(), "aggregate");
        std::vector<fs::path> inputs{gold_path(), run_means_path()};
        std::vector<std::pair<std::string, ScoreMap>> sources{{"gold", gold}};
        const auto means = load_run_means();
        for (const auto& m : config_.models) {
            auto it = means.find(m.spec.model_id);
            sources.emplace_back(m.spec.model_id, it == means.end() ? ScoreMap{} : it->second);
        }
        const auto summary = mean_score_summary(sources);
        for (const auto& w : summary.warnings) warn("mean-summary: " + w);
        emit("tables/mean_summary.csv", mean_summary_table(summary), "mean-summary", inputs);
    }

    void cost_curve_stage() {
        const auto parsed = load_parsed();
        const auto articles = load_articles();
        const auto gold = load_gold();
        const auto [a, b] = config_.cost_pair();
        CostOptions opt;
        opt.cost_a = config_.model(a).spec.unit_cost;
        opt.cost_b = config_.model(b).spec.unit_cost;
        opt.max_runs = config_.cost_max_runs;
        const auto curve = cost_curve(run_scores_for(parsed, a, config_.repetitions),
                                      run_scores_for(parsed, b, config_.repetitions), gold, articles, opt);
        for (const auto& w : curve.warnings) warn("cost-curve: " + w);
        emit("tables/cost_curve.csv", cost_curve_table(curve), "cost-curve", {parsed_path(), articles_path(), gold_path()},
             {{"model_a", a}, {"model_b", b}, {"subsets", "run subsets stand in for run permutations (means are order-free)"}});
        info("cost-curve: " + std::to_string(curve.points.size()) + " points");
    }

    /// Copies every table into report/ and writes report/manifest.json with checksums.
    void report() {
        const std::vector<std::pair<fs::path, std::string>> needed{
            {articles_path(), "ingest"},        {gold_path(), "ingest"},
            {out("ingest/removed.csv"), "ingest"}, {parsed_path(), "parse"},
            {run_means_path(), "aggregate"},     {correlations_path(), "correlate"},
            {year_trend_path(), "year-trend"},   {mean_summary_path(), "mean-summary"},
            {cost_curve_path(), "cost-curve"}};
        for (const auto& [p, producer] : needed) require(p, producer);
        std::vector<fs::path> tables{articles_path(), gold_path(), out("ingest/removed.csv"),
                                     out("ingest/filter_thresholds.csv"), out("ingest/rejects.csv"), parsed_path(),
                                     run_means_path(), correlations_path(), out("tables/ci_overlap.csv"),
                                     year_trend_path(), mean_summary_path(), cost_curve_path()};
        for (const auto& opt : {combined_path(), nlcs_path(), out("nlcs/missing.csv"), out("scores/failures.csv")})
            if (fs::exists(opt)) tables.push_back(opt);
        fs::create_directories(report_dir());
        json files = json::object();
        for (const auto& t : tables) {
            const auto name = fs::relative(t, config_.output_dir).generic_string();
            auto dest = report_dir() / fs::path(name).filename();
            if (fs::exists(dest) && dest.filename() != t.filename()) dest = report_dir() / (fs::path(name).parent_path().filename().string() + "_" + t.filename().string());
            fs::copy_file(t, dest, fs::copy_options::overwrite_existing);
            files[dest.filename().string()] = {{"source", name}, {"sha256", sha256_file(dest)}};
        }
        const auto prompts = PromptLibrary::load(config_.prompts);
        json manifest{{"format", "refqual-report/1"},
                      {"config", config_.to_json()},
                      {"config_sha256", config_.checksum()},
                      {"prompt_set", prompts.version()},
                      {"prompt_sha256", prompt_checksums(prompts)},
                      {"seed", config_.seed},
                      {"bootstrap_seed", config_.ci_seed},
                      {"inputs", input_checksums()},
                      {"files", files},
                      {"generated_at", utc_timestamp()}};
        write_text(report_dir() / "manifest.json", manifest.dump(2) + "\n");
        info("report: " + std::to_string(tables.size()) + " tables bundled in " + report_dir().string());
    }

    /// Every stage in order; the manual-resolution queue is left for `resolve`.
    void run_all() {
        ingest();
        score();
        parse();
        aggregate();
        if (!config_.snapshots.empty()) nlcs();
        correlate();
        year_trend();
        mean_summary();
        if (config_.models.size() >= 2) cost_curve_stage();
        report();
    }

    // Loaders ---------------------------------------------------------------

    std::vector<Article> load_articles() const {
        require(articles_path(), "ingest");
        const auto t = read_table(articles_path());
        Table empty_profiles;
        empty_profiles.header = {"institution_id", "uoa", "pct_star1", "pct_star2", "pct_star3", "pct_star4"};
        return load_corpus_tables(t, empty_profiles).corpus.articles;
    }

    ScoreMap load_gold() const {
        require(gold_path(), "ingest");
        return score_column(read_table(gold_path()), "gold");
    }

    std::vector<RawReport> load_reports() const {
        require(reports_path(), "score");
        std::vector<RawReport> out;
        std::ifstream f(reports_path());
        std::string line;
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            const auto j = json::parse(line);
            out.push_back({{j.at("article_id"), j.at("model_id"), j.at("run_index")}, j.at("report_text"), "", {}, false});
        }
        return out;
    }

    std::vector<ParsedScore> load_parsed() const {
        require(parsed_path(), "parse");
        return parsed_scores_from(read_table(parsed_path()));
    }

    std::map<std::string, ScoreMap> load_run_means() const {
        require(run_means_path(), "aggregate");
        const auto t = read_table(run_means_path());
        const auto c_a = t.require_column("article_id"), c_m = t.require_column("model_id"), c_v = t.require_column("mean");
        std::map<std::string, ScoreMap> out;
        for (const auto& row : t.rows) out[row[c_m]][row[c_a]] = parse_double(row[c_v]).value();
        return out;
    }

private:
    static ScoreMap score_column(const Table& t, const std::string& column) {
        const auto c_id = t.require_column("article_id");
        const auto c_v = t.require_column(column);
        ScoreMap out;
        for (std::size_t r = 0; r < t.rows.size(); ++r) {
            const auto v = parse_double(t.rows[r][c_v]);
            if (!v) throw ParseError(t.source, t.row_lines[r], c_v + 1, "not a number");
            out[t.rows[r][c_id]] = *v;
        }
        return out;
    }

    /// Indicators compared against gold: each model's mean, the combination, each NLCS snapshot.
    std::vector<std::pair<std::string, ScoreMap>> indicators(std::vector<fs::path>& inputs) const {
        std::vector<std::pair<std::string, ScoreMap>> out;
        require(run_means_path(), "aggregate");
        inputs.push_back(run_means_path());
        const auto means = load_run_means();
        for (const auto& m : config_.models) {
            auto it = means.find(m.spec.model_id);
            if (it != means.end()) out.emplace_back(m.spec.model_id, it->second);
        }
        if (fs::exists(combined_path())) {
            inputs.push_back(combined_path());
            out.emplace_back("combined", score_column(read_table(combined_path()), "combined"));
        }
        if (!config_.snapshots.empty()) {
            require(nlcs_path(), "nlcs");
            inputs.push_back(nlcs_path());
            const auto t = read_table(nlcs_path());
            const auto c_a = t.require_column("article_id"), c_s = t.require_column("snapshot_id"), c_v = t.require_column("nlcs");
            std::map<std::string, ScoreMap> by_snap;
            for (const auto& row : t.rows) by_snap[row[c_s]][row[c_a]] = parse_double(row[c_v]).value();
            for (const auto& s : config_.snapshots) out.emplace_back("nlcs_" + s.id, by_snap[s.id]);
        }
        return out;
    }

    std::map<RequestKey, std::string> load_resolutions() const {
        std::map<RequestKey, std::string> out;
        if (!fs::exists(resolutions_path())) return out;
        const auto t = read_table(resolutions_path());
        const auto c_a = t.require_column("article_id"), c_m = t.require_column("model_id"),
                   c_r = t.require_column("run_index"), c_x = t.require_column("answer");
        for (const auto& row : t.rows)
            out[{row[c_a], row[c_m], static_cast<int>(parse_int(row[c_r]).value_or(0))}] = row[c_x];
        return out;
    }

    std::unique_ptr<ScoringBackend> make_backend() const;

    static void require(const fs::path& p, const std::string& producer) {
        if (!fs::exists(p)) throw MissingArtifact(p.string(), producer);
    }

    json prompt_checksums(const PromptLibrary& lib) const {
        json j = json::object();
        for (auto g : kAllGroups) j[std::string(group_name(g))] = lib.checksum(g);
        return j;
    }

    json input_checksums() const {
        json j = json::object();
        auto add = [&](const fs::path& p) {
            if (fs::exists(p)) j[p.string()] = sha256_file(p);
        };
        add(config_.articles);
        add(config_.profiles);
        if (config_.latent) add(*config_.latent);
        if (config_.theoretical_max) add(*config_.theoretical_max);
        for (const auto& s : config_.snapshots) add(s.path);
        return j;
    }

    void emit(const std::string& rel, const Table& t, const std::string& stage, const std::vector<fs::path>& inputs,
              const std::map<std::string, std::string>& extra = {}) {
        emit_text(rel, format_table(t), stage, inputs, extra);
    }

    void emit_text(const std::string& rel, const std::string& text, const std::string& stage,
                   const std::vector<fs::path>& inputs, const std::map<std::string, std::string>& extra = {}) {
        const auto path = out(rel);
        write_text(path, text);
        json in = json::object();
        for (const auto& p : inputs)
            if (fs::exists(p)) in[p.string()] = sha256_file(p);
        std::string prompt_fp;
        try {
            prompt_fp = PromptLibrary::load(config_.prompts).fingerprint();
        } catch (const Error&) {
            prompt_fp = "unavailable";
        }
        json m{{"format", "refqual-manifest/1"},
               {"file", path.filename().string()},
               {"sha256", sha256_hex(text)},
               {"stage", stage},
               {"config_sha256", config_.checksum()},
               {"prompt_sha256", prompt_fp},
               {"seed", config_.seed},
               {"bootstrap_seed", config_.ci_seed},
               {"inputs", in},
               {"generated_at", utc_timestamp()}};
        for (const auto& [k, v] : extra) m[k] = v;
        write_text(path.string() + ".manifest.json", m.dump(2) + "\n");
    }

    void info(const std::string& msg) const { *log_ << "[refqual] " << msg << "\n"; }
    void warn(const std::string& msg) const { *log_ << "[refqual] warning: " << msg << "\n"; }

    CampaignConfig config_;
    std::ostream* log_;
    BackendFactory backend_factory_;
    std::function<void(std::chrono::milliseconds)> sleep_;
};

}  // namespace refqual

#include "refqual/http_backend.hpp"

namespace refqual {

inline std::map<std::string, double> read_latent(const fs::path& path) {
    const auto t = read_table(path);
    const auto c_id = t.require_column("article_id");
    const auto c_q = t.require_column("latent_quality");
    std::map<std::string, double> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto v = parse_double(t.rows[r][c_q]);
        if (!v || *v < 1 || *v > 4) throw ParseError(t.source, t.row_lines[r], c_q + 1, "latent_quality must be in [1,4]");
        out[t.rows[r][c_id]] = *v;
    }
    return out;
}

inline std::unique_ptr<ScoringBackend> Pipeline::make_backend() const {
    if (backend_factory_) return backend_factory_(config_);
    if (config_.backend == "live") {
        HttpBackendConfig h;
        h.endpoint_url = config_.endpoint;
        h.api_key_env = config_.api_key_env;
        return std::make_unique<HttpChatBackend>(h);
    }
    if (!config_.latent) throw DataError("the mock backend needs a 'latent' quality file in the config");
    std::map<std::string, MockModelParams> params;
    for (const auto& m : config_.models) params[m.spec.model_id] = m.mock;
    return std::make_unique<MockBackend>(config_.seed, read_latent(*config_.latent), params);
}

}  // namespace refqual
