// Acceptance checks. Prints one "criterion N: PASS|FAIL ..." line per criterion and
// exits nonzero if any fails.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

#include "parser_fixtures.hpp"
#include "refqual/costmodel.hpp"
#include "refqual/pipeline.hpp"
#include "test_support.hpp"

using namespace refqual;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

unsigned worker_count() { return std::max(1u, std::min(8u, std::thread::hardware_concurrency())); }

// Runs body(k) for k in [0, n) across worker threads.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < worker_count(); ++t)
        pool.emplace_back([&] {
            for (std::size_t k; (k = next++) < n;) body(k);
        });
}

// ---------------------------------------------------------------------------

std::vector<double> naive_ranks(const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        double less = 0, equal = 0;
        for (double w : v) {
            less += w < v[i];
            equal += w == v[i];
        }
        r[i] = less + (equal + 1) / 2;
    }
    return r;
}

double naive_pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

Outcome criterion1() {
    std::mt19937_64 rng(101);
    std::uniform_int_distribution<int> size(3, 20), small(0, 4);
    std::uniform_real_distribution<double> u(0, 1);
    double worst_closed = 0;
    int tied_mismatch = 0, tied_cases = 0;
    for (int t = 0; t < 1000; ++t) {
        const int n = size(rng);
        std::vector<double> x(static_cast<std::size_t>(n)), y(x.size());
        // Tie-free: random permutations of distinct reals.
        for (auto& v : x) v = u(rng);
        for (auto& v : y) v = u(rng);
        double d2 = 0;
        const auto rx = naive_ranks(x), ry = naive_ranks(y);
        for (std::size_t i = 0; i < x.size(); ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
        const double closed = 1.0 - 6.0 * d2 / (n * (static_cast<double>(n) * n - 1));
        worst_closed = std::max(worst_closed, std::abs(spearman(x, y) - closed));
    }
    for (int t = 0; t < 1000; ++t) {
        const int n = size(rng);
        std::vector<double> x(static_cast<std::size_t>(n)), y(x.size());
        for (auto& v : x) v = small(rng);
        for (auto& v : y) v = small(rng);
        const auto rx = naive_ranks(x), ry = naive_ranks(y);
        if (all_tied(rx) || all_tied(ry)) {
            --t;
            continue;
        }
        ++tied_cases;
        if (average_ranks(x) != rx || average_ranks(y) != ry || spearman(x, y) != naive_pearson(rx, ry)) ++tied_mismatch;
    }
    return {worst_closed <= 1e-12 && tied_mismatch == 0,
            fmt("tie-free max |diff| vs closed form %.2e over 1000; tied mismatches %d of %d", worst_closed,
                tied_mismatch, tied_cases)};
}

// ---------------------------------------------------------------------------

Outcome criterion2() {
    std::mt19937_64 rng(202);
    double worst = 0;
    std::size_t checked = 0, multi_cell = 0;
    for (int t = 0; t < 200; ++t) {
        const int n_cells = 1 + static_cast<int>(rng() % 4);
        std::vector<FieldYear> pool;
        for (int c = 0; c < n_cells; ++c) pool.push_back({"f" + std::to_string(c % 2), 2018 + c / 2});
        const int n_articles = 1 + static_cast<int>(rng() % 50);
        std::geometric_distribution<int> count(0.08);
        std::vector<CitationRecord> records;
        std::vector<Article> articles;
        for (int a = 0; a < n_articles; ++a) {
            CitationRecord r;
            r.article_id = "a" + std::to_string(a);
            r.snapshot_id = "s";
            r.raw_count = count(rng);
            const int k = 1 + static_cast<int>(rng() % std::min(3, n_cells));
            for (int j = 0; j < k; ++j) r.cells.push_back(pool[rng() % pool.size()]);
            records.push_back(r);
            // A few records stay outside the corpus but still shape the reference.
            if (rng() % 5) articles.push_back(refqual::testing::make_article(r.article_id, 3, "x"));
        }
        const auto got = batch_nlcs(articles, {{"s", records}}).at(0);
        for (const auto& art : articles) {
            const CitationRecord* me = nullptr;
            for (const auto& r : records)
                if (r.article_id == art.article_id) me = &r;
            const std::set<FieldYear> mine(me->cells.begin(), me->cells.end());
            double expected = 0;
            for (const auto& cell : mine) {
                double sum = 0;
                int members = 0;
                for (const auto& r : records) {
                    if (std::find(r.cells.begin(), r.cells.end(), cell) == r.cells.end()) continue;
                    sum += std::log(1.0 + static_cast<double>(r.raw_count));
                    ++members;
                }
                expected += sum / members;
            }
            expected /= static_cast<double>(mine.size());
            multi_cell += mine.size() > 1;
            const double l = std::log(1.0 + static_cast<double>(me->raw_count));
            const double want = expected == 0 ? 1.0 : l / expected;
            worst = std::max(worst, std::abs(got.values.at(art.article_id).value - want));
            ++checked;
        }
    }
    return {worst <= 1e-12 && multi_cell > 0,
            fmt("%zu articles (%zu multi-cell), max |diff| vs brute force %.2e", checked, multi_cell, worst)};
}

// ---------------------------------------------------------------------------

Outcome criterion3() {
    std::mt19937_64 rng(303);
    double worst = 0;
    for (int t = 0; t < 200; ++t) {
        std::vector<CitationRecord> records;
        const int n = 1 + static_cast<int>(rng() % 60);
        std::geometric_distribution<int> count(0.05);
        for (int a = 0; a < n; ++a) records.push_back({"a" + std::to_string(a), "s", count(rng), {{"f", 2020}}});
        records[0].raw_count += 1;  // the cell mean must be positive
        const auto ref = build_reference(records);
        double sum = 0;
        for (const auto& r : records) sum += nlcs(r, ref).value;
        worst = std::max(worst, std::abs(sum / n - 1.0));
    }
    return {worst <= 1e-12, fmt("200 single-cell corpora, max |mean NLCS - 1| = %.2e", worst)};
}

// ---------------------------------------------------------------------------

Outcome criterion4() {
    const auto reports = refqual::testing::load_labelled_reports(REFQUAL_TEST_FIXTURES "/parser_reports.txt");
    std::set<std::string> shapes;
    int agree = 0, overall_differs = 0;
    for (const auto& r : reports) {
        shapes.insert(r.shape);
        const auto res = parse_report(RawReport{{"x", "m", 1}, r.text, "", {}, false});
        if (!r.expected) {
            agree += std::holds_alternative<Unresolved>(res);
            continue;
        }
        const auto* p = std::get_if<ParsedScore>(&res);
        if (!p) continue;
        agree += std::abs(p->resolved - *r.expected) < 1e-12 && to_string(p->method) == r.method;
        if (p->overall && p->dims && std::abs(*p->overall - p->dims->mean()) > 1e-9) ++overall_differs;
    }
    const bool shapes_ok = shapes == std::set<std::string>{"overall", "dimensions", "fractional", "no_score"};
    return {reports.size() >= 30 && agree == static_cast<int>(reports.size()) && shapes_ok && overall_differs >= 1,
            fmt("%d/%zu labelled reports agree, %zu shapes, %d with overall != dimension mean", agree, reports.size(),
                shapes.size(), overall_differs)};
}

// ---------------------------------------------------------------------------

Outcome criterion5() {
    constexpr double target = 0.42;
    // For a bivariate normal, Spearman's rho is (6/pi) asin(r/2).
    const double r = 2.0 * std::sin(std::numbers::pi * target / 6.0);
    constexpr int trials = 500, n = 200;
    std::vector<int> covered(trials, 0);
    parallel_for(trials, [&](std::size_t t) {
        std::mt19937_64 rng(splitmix64(5000 + t));
        std::normal_distribution<double> z(0, 1);
        std::vector<double> x(n), y(n);
        for (int i = 0; i < n; ++i) {
            const double a = z(rng), b = z(rng);
            x[static_cast<std::size_t>(i)] = a;
            y[static_cast<std::size_t>(i)] = r * a + std::sqrt(1 - r * r) * b;
        }
        BootstrapOptions o;
        o.seed = t;
        o.resamples = 1000;
        const auto ci = bootstrap_ci(x, y, o);
        covered[t] = ci.low <= target && target <= ci.high;
    });
    const int hits = std::accumulate(covered.begin(), covered.end(), 0);
    const double rate = 100.0 * hits / trials;
    return {rate >= 93.0 && rate <= 97.0, fmt("coverage %.1f%% (%d/%d) of population rho %.2f", rate, hits, trials, target)};
}

// ---------------------------------------------------------------------------
// Shared setup for the bundled synthetic corpus.

struct Bundled {
    CampaignConfig config;
    std::vector<Article> articles;
    ScoreMap gold;
    std::map<std::string, double> latent;
    PromptLibrary prompts;
};

Bundled load_bundled() {
    auto config = load_config(fs::path(REFQUAL_SAMPLE_DIR) / "config.json");
    auto loaded = load_corpus(config.articles, config.profiles);
    auto filtered = filter_short_abstracts(loaded.corpus, config.filter_fraction, config.filter_metric).first;
    auto gold = require_gold_scores(filtered);
    return {config, filtered.articles, gold, read_latent(*config.latent), PromptLibrary::load(config.prompts)};
}

std::vector<ParsedScore> mock_campaign(const std::vector<ScoreRequest>& requests, std::uint64_t seed,
                                       const std::map<std::string, double>& latent, const MockModelParams& params) {
    std::vector<ParsedScore> out;
    out.reserve(requests.size());
    for (const auto& rq : requests) {
        const auto res = parse_report(mock_generate(rq, seed, latent, params));
        if (const auto* p = std::get_if<ParsedScore>(&res)) out.push_back(*p);
    }
    return out;
}

double weighted_rho(const ScoreMap& indicator, const ScoreMap& reference, const std::vector<Article>& articles) {
    CorrelationOptions o;
    o.with_ci = false;
    return weighted_mean_correlation(per_uoa_correlations("x", indicator, reference, articles, o).results);
}

Outcome criterion6(const Bundled& b) {
    const auto& ma = b.config.models.at(0);
    const auto& mb = b.config.models.at(1);
    const auto req_a = schedule_runs(b.articles, ma.spec, 5, b.prompts);
    const auto req_b = schedule_runs(b.articles, mb.spec, 5, b.prompts);
    constexpr int seeds = 100;
    std::vector<int> a_ok(seeds, 0), b_ok(seeds, 0);
    std::vector<double> gain(seeds, 0);
    parallel_for(seeds, [&](std::size_t k) {
        const std::uint64_t seed = 1000 + k;
        const auto pa = mock_campaign(req_a, seed, b.latent, ma.mock);
        const auto pb = mock_campaign(req_b, seed, b.latent, mb.mock);
        bool averaging_helps = true;
        double min_gain = 1;
        for (const auto* parsed : {&pa, &pb}) {
            ScoreMap single;
            for (const auto& p : *parsed)
                if (p.key.run_index == 1) single[p.key.article_id] = p.resolved;
            const auto means = average_runs(*parsed, 5).means;
            ScoreMap mean5;
            for (const auto& m : means) mean5[m.article_id] = m.mean;
            const double d = weighted_rho(mean5, b.latent, b.articles) - weighted_rho(single, b.latent, b.articles);
            averaging_helps = averaging_helps && d > 0;
            min_gain = std::min(min_gain, d);
        }
        a_ok[k] = averaging_helps;
        gain[k] = min_gain;
        const auto mean_a = average_runs(pa, 5).for_model(ma.spec.model_id);
        const auto mean_b = average_runs(pb, 5).for_model(mb.spec.model_id);
        const auto combined = combine_models(mean_a, mean_b).combined;
        const double rc = weighted_rho(combined, b.gold, b.articles);
        b_ok[k] = rc >= weighted_rho(mean_a, b.gold, b.articles) && rc >= weighted_rho(mean_b, b.gold, b.articles);
    });
    const int na = std::accumulate(a_ok.begin(), a_ok.end(), 0);
    const int nb = std::accumulate(b_ok.begin(), b_ok.end(), 0);
    return {na >= 99 && nb >= 95,
            fmt("(a) mean-of-5 beats one run for both models in %d/100 seeds (smallest gain %.3f); "
                "(b) combined >= each model in %d/100 seeds",
                na, *std::min_element(gain.begin(), gain.end()), nb)};
}

// ---------------------------------------------------------------------------

Outcome criterion7(const Bundled& b) {
    constexpr int N = 5;
    // (N, N) against the analysis module, and subset counts, on the bundled corpus.
    const auto& ma = b.config.models.at(0);
    const auto& mb = b.config.models.at(1);
    auto parsed = mock_campaign(schedule_runs(b.articles, ma.spec, N, b.prompts), b.config.seed, b.latent, ma.mock);
    const auto pb = mock_campaign(schedule_runs(b.articles, mb.spec, N, b.prompts), b.config.seed, b.latent, mb.mock);
    parsed.insert(parsed.end(), pb.begin(), pb.end());
    CostOptions co;
    co.cost_a = ma.spec.unit_cost;
    co.cost_b = mb.spec.unit_cost;
    const auto curve = cost_curve(run_scores_for(parsed, ma.spec.model_id, N), run_scores_for(parsed, mb.spec.model_id, N),
                                  b.gold, b.articles, co);
    const auto avg = average_runs(parsed, N);
    const auto combined = combine_models(avg.for_model(ma.spec.model_id), avg.for_model(mb.spec.model_id)).combined;
    const double analysis_rho = weighted_rho(combined, b.gold, b.articles);
    double nn = std::nan("");
    std::uint64_t total = 0;
    bool counts_ok = curve.points.size() == 35;
    for (const auto& p : curve.points) {
        if (p.runs_a == N && p.runs_b == N) nn = p.mean_rho;
        counts_ok = counts_ok && p.subset_count == binomial(N, p.runs_a) * binomial(N, p.runs_b);
        total += p.subset_count;
    }
    const double nn_diff = std::abs(nn - analysis_rho);
    counts_ok = counts_ok && total == 1023;

    // Model B is a noisier clone of model A at a tenth of the cost.
    MockModelParams clone_a;
    clone_a.bias = 0.2;
    clone_a.noise = 0.6;
    clone_a.article_noise = 0.0;
    MockModelParams clone_b = clone_a;
    clone_b.noise = 0.72;
    const ModelSpec sa("clone-a", 10.0), sb("clone-b", 1.0);
    auto cp = mock_campaign(schedule_runs(b.articles, sa, N, b.prompts), 99, b.latent, clone_a);
    const auto cpb = mock_campaign(schedule_runs(b.articles, sb, N, b.prompts), 99, b.latent, clone_b);
    cp.insert(cp.end(), cpb.begin(), cpb.end());
    CostOptions cc;
    cc.cost_a = 10.0;
    cc.cost_b = 1.0;
    const auto clone_curve =
        cost_curve(run_scores_for(cp, "clone-a", N), run_scores_for(cp, "clone-b", N), b.gold, b.articles, cc);
    double best_b_only = -1, rho_10 = 0;
    for (const auto& p : clone_curve.points) {
        if (p.runs_a == 0) best_b_only = std::max(best_b_only, p.mean_rho);
        if (p.runs_a == 1 && p.runs_b == 0) rho_10 = p.mean_rho;
    }
    const auto front = pareto_front(clone_curve.points);
    int mixed_within_reach = 0, mixed_total = 0;
    for (const auto& p : front) {
        if (p.runs_a == 0) continue;
        ++mixed_total;
        if (p.mean_rho <= best_b_only) ++mixed_within_reach;
    }
    bool cheap_beats_one_expensive = true;
    for (const auto& p : clone_curve.points)
        if (p.runs_a == 0 && p.runs_b >= 2) cheap_beats_one_expensive = cheap_beats_one_expensive && p.mean_rho > rho_10;

    const bool pass = nn_diff <= 1e-12 && counts_ok && mixed_within_reach == 0 && cheap_beats_one_expensive;
    return {pass, fmt("|(N,N) - combined| = %.2e; subset counts %s (total %llu); noisy clone: front below the "
                      "best (0,j) rho %.3f holds only (0,j) points, (0,j>=2) beat (1,0) = %.3f: %s; "
                      "literal reading (no mixed point anywhere on the front) fails with %d mixed point(s) above it",
                      nn_diff, counts_ok ? "match" : "MISMATCH", static_cast<unsigned long long>(total), best_b_only,
                      rho_10, cheap_beats_one_expensive ? "yes" : "no", mixed_total)};
}

// ---------------------------------------------------------------------------

std::map<std::string, std::string> snapshot_outputs(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), root).generic_string();
        if (rel.rfind("cache/", 0) == 0) continue;
        auto text = read_file(e.path());
        if (rel.ends_with("manifest.json")) {
            auto j = json::parse(text);
            j.erase("generated_at");
            text = j.dump();
        } else if (rel.ends_with("ledger.jsonl")) {
            std::string stripped;
            std::istringstream in(text);
            for (std::string line; std::getline(in, line);) {
                auto j = json::parse(line);
                j.erase("at");
                j.erase("timestamp");
                stripped += j.dump() + "\n";
            }
            text = stripped;
        }
        out[rel] = std::move(text);
    }
    return out;
}

Outcome criterion8() {
    refqual::testing::TempDir dir("acceptance-determinism");
    auto config = load_config(fs::path(REFQUAL_SAMPLE_DIR) / "config.json");
    config.output_dir = dir.path() / "out";
    config.cache_dir = dir.path() / "out" / "cache";
    std::ostringstream log;
    Pipeline(config, log).run_all();  // warms the cache
    Pipeline(config, log).run_all();
    const auto first = snapshot_outputs(config.output_dir);
    Pipeline(config, log).run_all();
    const auto second = snapshot_outputs(config.output_dir);
    std::size_t differing = 0, tables = 0;
    std::string example;
    for (const auto& [rel, text] : first) {
        tables += rel.ends_with(".csv");
        auto it = second.find(rel);
        if (it == second.end() || it->second != text) {
            ++differing;
            if (example.empty()) example = rel;
        }
    }
    differing += second.size() > first.size() ? second.size() - first.size() : 0;
    return {differing == 0 && tables > 10 && first.size() == second.size(),
            fmt("%zu files (%zu csv tables) compared across two warm-cache runs, %zu differ%s%s", first.size(), tables,
                differing, example.empty() ? "" : ", first: ", example.c_str())};
}

// ---------------------------------------------------------------------------

Outcome criterion9() {
    // A perfect indicator against gold, scored against a ceiling below its own correlation.
    std::vector<Article> arts;
    ScoreMap gold, indicator;
    const std::vector<double> g{1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0};
    const std::vector<double> x{1.0, 3.0, 2.0, 4.0, 5.0, 7.0, 6.0, 8.0};
    for (std::size_t i = 0; i < g.size(); ++i) {
        const auto id = "a" + std::to_string(i);
        arts.push_back(refqual::testing::make_article(id, 3, "x"));
        gold[id] = g[i];
        indicator[id] = x[i];
    }
    CorrelationOptions o;
    o.with_ci = false;
    auto set = per_uoa_correlations("x", indicator, gold, arts, o);
    apply_theoretical_max(set, {{3, 0.85}});
    const auto& r = set.results.at(0);
    return {r.scaled_rho && *r.scaled_rho > 1.0,
            fmt("rho %.4f against a ceiling of 0.85 scales to %.4f", r.rho, r.scaled_rho.value_or(0))};
}

}  // namespace

int main() {
    int failures = 0;
    auto report = [&](int id, double limit_s, const std::function<Outcome()>& check) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = limit_s <= 0 || secs < limit_s;
        const bool pass = o.pass && in_time;
        failures += !pass;
        std::cout << "criterion " << id << ": " << (pass ? "PASS" : "FAIL") << " " << o.detail
                  << fmt(" [%.2fs%s]", secs, limit_s > 0 ? fmt(" of %.0fs", limit_s).c_str() : "") << std::endl;
    };

    report(1, 10, criterion1);
    report(2, 5, criterion2);
    report(3, 0, criterion3);
    report(4, 0, criterion4);
    report(5, 120, criterion5);
    std::optional<Bundled> bundled;
    try {
        bundled = load_bundled();
    } catch (const std::exception& e) {
        std::cout << "bundled corpus unavailable: " << e.what() << std::endl;
    }
    auto needs_bundle = [&](auto fn) {
        return [&, fn]() -> Outcome {
            if (!bundled) return {false, "bundled corpus unavailable"};
            return fn(*bundled);
        };
    };
    report(6, 0, needs_bundle(criterion6));
    report(7, 300, needs_bundle(criterion7));
    report(8, 0, criterion8);
    report(9, 0, criterion9);
    return failures == 0 ? 0 : 1;
}
