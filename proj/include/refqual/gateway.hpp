#pragma once

// Scoring backends, the repetition schedule, the response cache, the run ledger
// and bounded-concurrency submission with retries.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "refqual/checksum.hpp"
#include "refqual/corpus.hpp"
#include "refqual/error.hpp"
#include "refqual/prompts.hpp"

namespace refqual {

using json = nlohmann::json;

struct ModelSpec {
    std::string model_id;
    double unit_cost = 1.0;
    json params = json::object();  // generation settings; empty means backend defaults

    ModelSpec() = default;
    ModelSpec(std::string id, double cost, json p = json::object())
        : model_id(std::move(id)), unit_cost(cost), params(std::move(p)) {
        validate();
    }

    void validate() const {
        if (model_id.empty()) throw DomainError("model_id must not be empty");
        if (!(unit_cost > 0)) throw DomainError("unit_cost of " + model_id + " must be positive");
    }
};

struct RequestKey {
    std::string article_id;
    std::string model_id;
    int run_index = 0;

    friend auto operator<=>(const RequestKey&, const RequestKey&) = default;
    std::string str() const { return article_id + "/" + model_id + "/" + std::to_string(run_index); }
};

struct ScoreRequest {
    RequestKey key;
    PromptPair prompt;
};

struct RawReport {
    RequestKey key;
    std::string report_text;
    std::string received_at;
    std::map<std::string, std::string> backend_meta;
    bool from_cache = false;
};

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// ---------------------------------------------------------------------------
// Schedule

/// Whole-corpus round-robin passes: every article's run 1, then every article's run 2, ...
inline std::vector<ScoreRequest> schedule_runs(const std::vector<Article>& articles, const ModelSpec& model,
                                               int repetitions, const PromptLibrary& prompts) {
    if (repetitions < 1) throw DomainError("repetitions must be at least 1");
    std::vector<PromptPair> built;
    built.reserve(articles.size());
    for (const auto& a : articles) built.push_back(prompts.build_prompt(a));
    std::vector<ScoreRequest> out;
    out.reserve(articles.size() * static_cast<std::size_t>(repetitions));
    for (int run = 1; run <= repetitions; ++run)
        for (std::size_t i = 0; i < articles.size(); ++i)
            out.push_back({{articles[i].article_id, model.model_id, run}, built[i]});
    return out;
}

// ---------------------------------------------------------------------------
// Backends

class TransientBackendError : public Error {
public:
    using Error::Error;
};
class PermanentBackendError : public Error {
public:
    using Error::Error;
};
/// Authentication or configuration problem; aborts the whole campaign.
class FatalBackendError : public Error {
public:
    using Error::Error;
};

struct BackendReply {
    std::string text;
    std::map<std::string, std::string> meta;
};

class ScoringBackend {
public:
    virtual ~ScoringBackend() = default;
    virtual std::string name() const = 0;
    /// Must be safe to call concurrently.
    virtual BackendReply send(const ScoreRequest& request, const ModelSpec& model) = 0;
};

// ---------------------------------------------------------------------------
// Mock backend

struct MockModelParams {
    double bias = 0.0;           // added to latent quality
    double noise = 0.8;          // per-run standard deviation
    double article_noise = 0.0;  // per-(article, model) persistent deviation
    double dims_rate = 0.3;      // share of reports giving only the three dimension scores
    double no_score_rate = 0.02;
    double half_star_rate = 0.05;
    double overall_with_dims_rate = 0.3;  // share of overall-shape reports also listing dimensions
};

namespace detail {

inline std::string star_text(double v) {
    if (v == std::floor(v)) return std::to_string(static_cast<int>(v));
    std::ostringstream os;
    os << v;
    return os.str();
}

inline double clamp_star(double v) { return std::clamp(v, 1.0, 4.0); }

inline const std::vector<std::string>& mock_openers() {
    static const std::vector<std::string> v{
        "This article addresses a clearly defined research problem and situates it within the existing literature.",
        "The study presents a focused contribution, drawing on established approaches in its area.",
        "The submission tackles a question of evident interest to researchers and practitioners in the field.",
        "The work reports an empirical investigation with a transparent description of its design.",
        "The article offers a conceptual argument supported by a careful reading of prior scholarship.",
    };
    return v;
}

inline const std::vector<std::string>& mock_middles() {
    static const std::vector<std::string> v{
        "Its methodology appears appropriate, although some choices could be justified more fully.",
        "The analysis is coherent and the conclusions follow reasonably from the evidence presented.",
        "The novelty lies mainly in the combination of existing ideas rather than in a new paradigm.",
        "The findings are likely to interest specialists, with some potential for wider influence.",
        "Limitations are acknowledged, though the discussion of generalisability is brief.",
        "The framing is clear and the contribution to knowledge is identifiable.",
    };
    return v;
}

inline const std::vector<std::string>& mock_closers() {
    static const std::vector<std::string> v{
        "Taken together, the article makes a credible contribution to its field.",
        "On balance, the strengths of the work outweigh its weaknesses.",
        "In summary, this is a competent piece of research with a clear focus.",
    };
    return v;
}

}  // namespace detail

/// Deterministic synthetic evaluation report. Scores are centred on the article's latent
/// quality plus the model's bias; the text is a function of (request key, seed) only.
inline RawReport mock_generate(const ScoreRequest& request, std::uint64_t seed,
                               const std::map<std::string, double>& latent_quality,
                               const MockModelParams& params = {}) {
    const auto it = latent_quality.find(request.key.article_id);
    if (it == latent_quality.end()) throw PermanentBackendError("no latent quality for " + request.key.article_id);
    const double q = it->second;
    if (!(q >= 1.0 && q <= 4.0)) throw DomainError("latent quality must lie in [1,4]");

    const auto article_model = fnv1a64(request.key.model_id, fnv1a64(request.key.article_id + '\x1f'));
    std::mt19937_64 article_rng(splitmix64(article_model ^ splitmix64(seed)));
    std::mt19937_64 rng(splitmix64(fnv1a64(std::to_string(request.key.run_index) + '\x1f', article_model) ^
                                   splitmix64(seed + 0x632be59bd9b4e019ULL)));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    // Separate distribution objects: normal_distribution caches the second value of each
    // generated pair, which would otherwise leak the article draw into the run draw.
    const double persistent = params.article_noise * std::normal_distribution<double>(0.0, 1.0)(article_rng);
    const double x = q + params.bias + persistent + params.noise * normal(rng);
    auto pick = [&](const std::vector<std::string>& v) { return v[static_cast<std::size_t>(unif(rng) * v.size()) % v.size()]; };
    auto star = [&](double v) {
        const bool half = unif(rng) < params.half_star_rate;
        return detail::clamp_star(half ? std::round(v * 2.0) / 2.0 : std::round(v));
    };

    const double shape_draw = unif(rng);
    std::string text = pick(detail::mock_openers()) + " " + pick(detail::mock_middles()) + "\n\n" +
                       pick(detail::mock_middles()) + " " + pick(detail::mock_closers());
    std::string shape;
    if (shape_draw < params.no_score_rate) {
        shape = "no_score";
    } else {
        const double o = star(x);
        const double d1 = star(x + 0.5 * params.noise * normal(rng));
        const double d2 = star(x + 0.5 * params.noise * normal(rng));
        const double d3 = star(x + 0.5 * params.noise * normal(rng));
        const int dim_style = static_cast<int>(unif(rng) * 3);
        std::string dims;
        switch (dim_style) {
            case 0:
                dims = "Originality: " + detail::star_text(d1) + "*\nSignificance: " + detail::star_text(d2) +
                       "*\nRigour: " + detail::star_text(d3) + "*";
                break;
            case 1:
                dims = "- **Originality**: " + detail::star_text(d1) + "*\n- **Significance**: " + detail::star_text(d2) +
                       "*\n- **Rigour**: " + detail::star_text(d3) + "*";
                break;
            default:
                dims = "Originality (" + detail::star_text(d1) + " stars)\nSignificance (" + detail::star_text(d2) +
                       " stars)\nRigour (" + detail::star_text(d3) + " stars)";
                break;
        }
        if (shape_draw < params.no_score_rate + params.dims_rate) {
            shape = "dimensions";
            text += "\n\n" + dims;
        } else {
            shape = "overall";
            static const std::vector<std::string> lead{"Overall score: ", "**Overall Score:** ", "Final score: ",
                                                       "Overall: ", "Overall rating: "};
            static const std::vector<std::string> tail{"*", " stars", "*", "*", "/4"};
            const auto k = static_cast<std::size_t>(unif(rng) * lead.size()) % lead.size();
            if (unif(rng) < params.overall_with_dims_rate) text += "\n\n" + dims;
            text += "\n\n" + lead[k] + detail::star_text(o) + tail[k];
        }
    }
    RawReport r;
    r.key = request.key;
    r.report_text = std::move(text);
    r.received_at = utc_timestamp();
    r.backend_meta = {{"backend", "mock"}, {"shape", shape}};
    return r;
}

class MockBackend : public ScoringBackend {
public:
    MockBackend(std::uint64_t seed, std::map<std::string, double> latent, std::map<std::string, MockModelParams> per_model = {})
        : seed_(seed), latent_(std::move(latent)), per_model_(std::move(per_model)) {}

    std::string name() const override { return "mock"; }

    BackendReply send(const ScoreRequest& request, const ModelSpec&) override {
        const auto it = per_model_.find(request.key.model_id);
        auto r = mock_generate(request, seed_, latent_, it == per_model_.end() ? MockModelParams{} : it->second);
        return {std::move(r.report_text), std::move(r.backend_meta)};
    }

private:
    std::uint64_t seed_;
    std::map<std::string, double> latent_;
    std::map<std::string, MockModelParams> per_model_;
};

// ---------------------------------------------------------------------------
// Cache

/// Cache key: model, checksum of the prompt text and run index.
inline std::string cache_key(const std::string& model_id, const PromptPair& prompt, int run_index) {
    const auto prompt_sum = sha256_hex(prompt.system_text + '\x1e' + prompt.user_text);
    return sha256_hex(model_id + '\n' + prompt_sum + '\n' + std::to_string(run_index));
}

/// Append-only JSON-lines store of successful reports, one file per cache directory.
/// Layout: <dir>/reports-v1.jsonl; each line {"key","article_id","model_id","run_index",
/// "report_text","received_at","meta"}.
class ScoreCache {
public:
    static constexpr const char* kFileName = "reports-v1.jsonl";

    explicit ScoreCache(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
        std::ifstream in(path());
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto j = json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.contains("key")) {
                ++skipped_lines_;  // torn write from an interrupted run
                continue;
            }
            Entry e{j.at("report_text").get<std::string>(), j.value("received_at", ""),
                    j.value("meta", std::map<std::string, std::string>{})};
            entries_[j.at("key").get<std::string>()] = std::move(e);
        }
    }

    std::filesystem::path path() const { return dir_ / kFileName; }
    std::size_t size() const {
        std::lock_guard lock(mu_);
        return entries_.size();
    }
    std::size_t skipped_lines() const { return skipped_lines_; }

    std::optional<RawReport> lookup(const ScoreRequest& request) const {
        const auto key = cache_key(request.key.model_id, request.prompt, request.key.run_index);
        std::lock_guard lock(mu_);
        auto it = entries_.find(key);
        if (it == entries_.end()) return std::nullopt;
        return RawReport{request.key, it->second.text, it->second.received_at, it->second.meta, true};
    }

    std::optional<RawReport> lookup_key(const std::string& key, const RequestKey& request_key) const {
        std::lock_guard lock(mu_);
        auto it = entries_.find(key);
        if (it == entries_.end()) return std::nullopt;
        return RawReport{request_key, it->second.text, it->second.received_at, it->second.meta, true};
    }

    void store(const ScoreRequest& request, const RawReport& report) {
        const auto key = cache_key(request.key.model_id, request.prompt, request.key.run_index);
        json j{{"key", key},
               {"article_id", request.key.article_id},
               {"model_id", request.key.model_id},
               {"run_index", request.key.run_index},
               {"report_text", report.report_text},
               {"received_at", report.received_at},
               {"meta", report.backend_meta}};
        std::lock_guard lock(mu_);
        std::ofstream out(path(), std::ios::app | std::ios::binary);
        if (!out) throw DataError("cannot append to cache " + path().string());
        out << j.dump() << '\n';
        out.flush();
        entries_[key] = Entry{report.report_text, report.received_at, report.backend_meta};
    }

private:
    struct Entry {
        std::string text;
        std::string received_at;
        std::map<std::string, std::string> meta;
    };
    std::filesystem::path dir_;
    mutable std::mutex mu_;
    std::map<std::string, Entry> entries_;
    std::size_t skipped_lines_ = 0;
};

// ---------------------------------------------------------------------------
// Ledger

enum class AttemptOutcome { CacheHit, Success, Transient, Permanent, Exhausted };

inline std::string_view to_string(AttemptOutcome o) {
    switch (o) {
        case AttemptOutcome::CacheHit: return "cache_hit";
        case AttemptOutcome::Success: return "success";
        case AttemptOutcome::Transient: return "transient_failure";
        case AttemptOutcome::Permanent: return "permanent_failure";
        case AttemptOutcome::Exhausted: return "retries_exhausted";
    }
    return "unknown";
}

inline AttemptOutcome attempt_outcome_from(std::string_view s) {
    for (auto o : {AttemptOutcome::CacheHit, AttemptOutcome::Success, AttemptOutcome::Transient,
                   AttemptOutcome::Permanent, AttemptOutcome::Exhausted})
        if (to_string(o) == s) return o;
    throw DataError("unknown ledger outcome '" + std::string(s) + "'");
}

struct LedgerEntry {
    RequestKey key;
    std::string cache_key;
    int attempt = 0;
    AttemptOutcome outcome = AttemptOutcome::Success;
    double cost = 0.0;
    std::string reason;
    std::string timestamp;
};

/// Append-only record of every attempt in a campaign. Optionally mirrored to a
/// JSON-lines file (format "refqual-ledger/1").
class RunLedger {
public:
    RunLedger() = default;
    explicit RunLedger(std::filesystem::path file) : file_(std::move(file)) {
        if (file_->has_parent_path()) std::filesystem::create_directories(file_->parent_path());
    }

    void record(LedgerEntry e) {
        std::lock_guard lock(mu_);
        if (e.timestamp.empty()) e.timestamp = utc_timestamp();
        if (file_) {
            std::ofstream out(*file_, std::ios::app | std::ios::binary);
            if (!out) throw DataError("cannot append to ledger " + file_->string());
            out << to_json(e).dump() << '\n';
        }
        entries_.push_back(std::move(e));
    }

    std::vector<LedgerEntry> entries() const {
        std::lock_guard lock(mu_);
        return entries_;
    }

    double total_cost() const {
        std::lock_guard lock(mu_);
        double c = 0;
        for (const auto& e : entries_) c += e.cost;
        return c;
    }

    std::size_t count(AttemptOutcome o) const {
        std::lock_guard lock(mu_);
        return static_cast<std::size_t>(
            std::count_if(entries_.begin(), entries_.end(), [o](const auto& e) { return e.outcome == o; }));
    }

    /// Rewrites the mirror file with entries ordered by (request key, attempt), so a
    /// finished campaign's ledger does not depend on completion order across workers.
    void canonicalize() {
        std::lock_guard lock(mu_);
        std::stable_sort(entries_.begin(), entries_.end(), [](const LedgerEntry& a, const LedgerEntry& b) {
            return std::tie(a.key, a.attempt) < std::tie(b.key, b.attempt);
        });
        if (!file_) return;
        std::string text;
        for (const auto& e : entries_) text += to_json(e).dump() + '\n';
        const auto tmp = file_->string() + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw DataError("cannot rewrite ledger " + file_->string());
            out << text;
        }
        std::filesystem::rename(tmp, *file_);
    }

    static json to_json(const LedgerEntry& e) {
        return {{"format", "refqual-ledger/1"},
                {"article_id", e.key.article_id},
                {"model_id", e.key.model_id},
                {"run_index", e.key.run_index},
                {"cache_key", e.cache_key},
                {"attempt", e.attempt},
                {"outcome", to_string(e.outcome)},
                {"cost", e.cost},
                {"reason", e.reason},
                {"timestamp", e.timestamp}};
    }

    static std::vector<LedgerEntry> read(const std::filesystem::path& file) {
        std::vector<LedgerEntry> out;
        std::ifstream in(file);
        if (!in) throw DataError("cannot read ledger " + file.string());
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto j = json::parse(line);
            out.push_back({{j.at("article_id"), j.at("model_id"), j.at("run_index")},
                           j.at("cache_key"),
                           j.at("attempt"),
                           attempt_outcome_from(j.at("outcome").get<std::string>()),
                           j.at("cost"),
                           j.value("reason", ""),
                           j.value("timestamp", "")});
        }
        return out;
    }

private:
    std::optional<std::filesystem::path> file_;
    mutable std::mutex mu_;
    std::vector<LedgerEntry> entries_;
};

/// Rebuilds the report set of a campaign from its ledger and the cache.
inline std::vector<RawReport> replay_ledger(const std::vector<LedgerEntry>& entries, const ScoreCache& cache) {
    std::map<RequestKey, RawReport> out;
    for (const auto& e : entries) {
        if (e.outcome != AttemptOutcome::Success && e.outcome != AttemptOutcome::CacheHit) continue;
        auto r = cache.lookup_key(e.cache_key, e.key);
        if (!r) throw DataError("ledger entry " + e.key.str() + " has no cached report");
        out[e.key] = std::move(*r);
    }
    std::vector<RawReport> v;
    for (auto& [k, r] : out) v.push_back(std::move(r));
    return v;
}

// ---------------------------------------------------------------------------
// Submission

struct SubmitOptions {
    int max_in_flight = 4;
    int max_attempts = 5;  // per request, including the first try
    std::chrono::milliseconds base_backoff{250};
    std::chrono::milliseconds max_backoff{8000};
    std::function<void(std::chrono::milliseconds)> sleep = [](std::chrono::milliseconds d) {
        std::this_thread::sleep_for(d);
    };
};

struct RequestFailure {
    RequestKey key;
    std::string reason;
    int attempts = 0;
};

struct SubmitResult {
    std::vector<RawReport> reports;  // request order, successes only
    std::vector<RequestFailure> failures;
    std::size_t backend_calls = 0;
};

inline std::chrono::milliseconds backoff_delay(const SubmitOptions& o, int failed_attempt) {
    const double ms = static_cast<double>(o.base_backoff.count()) * std::pow(2.0, failed_attempt - 1);
    return std::chrono::milliseconds(static_cast<long long>(std::min(ms, static_cast<double>(o.max_backoff.count()))));
}

/// Serves cache hits directly and sends misses to the backend with at most
/// `max_in_flight` concurrent requests. Transient failures are retried with exponential
/// backoff up to `max_attempts`; permanent failures and exhausted budgets become
/// failure entries. A FatalBackendError stops the campaign and is rethrown.
inline SubmitResult submit(const std::vector<ScoreRequest>& requests, ScoringBackend& backend, ScoreCache* cache,
                           RunLedger& ledger, const std::map<std::string, ModelSpec>& models,
                           const SubmitOptions& options = {}) {
    if (options.max_in_flight < 1) throw DomainError("max_in_flight must be at least 1");
    if (options.max_attempts < 1) throw DomainError("max_attempts must be at least 1");
    for (const auto& r : requests)
        if (!models.count(r.key.model_id)) throw FatalBackendError("no model spec for " + r.key.model_id);

    std::vector<std::optional<RawReport>> slots(requests.size());
    std::vector<std::optional<RequestFailure>> failed(requests.size());
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> calls{0};
    std::atomic<bool> abort{false};
    std::exception_ptr fatal;
    std::mutex fatal_mu;

    auto work = [&] {
        while (!abort.load()) {
            const std::size_t i = next.fetch_add(1);
            if (i >= requests.size()) return;
            const auto& req = requests[i];
            const auto& model = models.at(req.key.model_id);
            const auto ckey = cache_key(req.key.model_id, req.prompt, req.key.run_index);
            if (cache) {
                if (auto hit = cache->lookup(req)) {
                    ledger.record({req.key, ckey, 0, AttemptOutcome::CacheHit, 0.0, {}, {}});
                    slots[i] = std::move(*hit);
                    continue;
                }
            }
            for (int attempt = 1;; ++attempt) {
                try {
                    ++calls;
                    auto reply = backend.send(req, model);
                    if (reply.text.empty()) throw TransientBackendError("empty report text");
                    RawReport r{req.key, std::move(reply.text), utc_timestamp(), std::move(reply.meta), false};
                    if (cache) cache->store(req, r);
                    ledger.record({req.key, ckey, attempt, AttemptOutcome::Success, model.unit_cost, {}, {}});
                    slots[i] = std::move(r);
                    break;
                } catch (const TransientBackendError& e) {
                    if (attempt >= options.max_attempts) {
                        ledger.record({req.key, ckey, attempt, AttemptOutcome::Exhausted, 0.0, e.what(), {}});
                        failed[i] = RequestFailure{req.key, std::string("retry budget exhausted: ") + e.what(), attempt};
                        break;
                    }
                    ledger.record({req.key, ckey, attempt, AttemptOutcome::Transient, 0.0, e.what(), {}});
                    options.sleep(backoff_delay(options, attempt));
                } catch (const PermanentBackendError& e) {
                    ledger.record({req.key, ckey, attempt, AttemptOutcome::Permanent, 0.0, e.what(), {}});
                    failed[i] = RequestFailure{req.key, e.what(), attempt};
                    break;
                } catch (...) {
                    std::lock_guard lock(fatal_mu);
                    if (!fatal) fatal = std::current_exception();
                    abort = true;
                    return;
                }
            }
        }
    };

    const auto n_workers = static_cast<std::size_t>(options.max_in_flight);
    if (n_workers == 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < std::min(n_workers, std::max<std::size_t>(requests.size(), 1)); ++w)
            pool.emplace_back(work);
    }
    if (fatal) std::rethrow_exception(fatal);

    SubmitResult out;
    out.backend_calls = calls.load();
    for (std::size_t i = 0; i < requests.size(); ++i) {
        if (slots[i]) out.reports.push_back(std::move(*slots[i]));
        if (failed[i]) out.failures.push_back(std::move(*failed[i]));
    }
    return out;
}

}  // namespace refqual
