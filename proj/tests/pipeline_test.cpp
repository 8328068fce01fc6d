#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <sstream>

#include "campaign_support.hpp"
#include "test_support.hpp"

using namespace refqual;
using refqual::testing::TempDir;
using refqual::testing::write_small_campaign;

namespace {

class CountingBackend : public ScoringBackend {
public:
    CountingBackend(std::unique_ptr<ScoringBackend> inner, std::atomic<int>& calls) : inner_(std::move(inner)), calls_(calls) {}
    std::string name() const override { return inner_->name(); }
    BackendReply send(const ScoreRequest& r, const ModelSpec& m) override {
        ++calls_;
        return inner_->send(r, m);
    }

private:
    std::unique_ptr<ScoringBackend> inner_;
    std::atomic<int>& calls_;
};

void count_calls(Pipeline& p, std::atomic<int>& calls) {
    p.set_backend_factory([&calls](const CampaignConfig& c) -> std::unique_ptr<ScoringBackend> {
        std::map<std::string, MockModelParams> params;
        for (const auto& m : c.models) params[m.spec.model_id] = m.mock;
        return std::make_unique<CountingBackend>(std::make_unique<MockBackend>(c.seed, read_latent(*c.latent), params), calls);
    });
}

class PipelineTest : public ::testing::Test {
protected:
    TempDir dir{"pipeline"};
    std::ostringstream log;
    CampaignConfig config() { return load_config(write_small_campaign(dir.path())); }
};

}  // namespace

TEST_F(PipelineTest, ConfigPathsResolveAgainstConfigDirectory) {
    const auto c = config();
    EXPECT_EQ(c.articles, (dir.path() / "articles.csv").lexically_normal());
    EXPECT_EQ(c.output_dir, (dir.path() / "out").lexically_normal());
    EXPECT_EQ(c.models.size(), 2u);
    EXPECT_EQ(c.repetitions, 3);
    EXPECT_DOUBLE_EQ(c.models[0].mock.bias, 0.3);
    EXPECT_EQ(c.checksum(), config().checksum());
}

TEST_F(PipelineTest, MissingArtifactNamesProducingStage) {
    Pipeline p(config(), log);
    try {
        p.parse();
        FAIL() << "expected MissingArtifact";
    } catch (const MissingArtifact& e) {
        EXPECT_EQ(e.producer(), "score");
        EXPECT_NE(std::string(e.what()).find("reports.jsonl"), std::string::npos);
    }
    EXPECT_THROW(p.score(), MissingArtifact);
    EXPECT_THROW(p.correlate(), MissingArtifact);
}

TEST_F(PipelineTest, ScoringIsRepeatableAndCached) {
    Pipeline p(config(), log);
    std::atomic<int> calls{0};
    count_calls(p, calls);
    p.ingest();
    const auto n_articles = p.load_articles().size();
    EXPECT_EQ(p.score(), 0u);
    EXPECT_EQ(static_cast<std::size_t>(calls.load()), n_articles * 2 * 3);
    const auto first = read_file(p.reports_path());
    calls = 0;
    EXPECT_EQ(p.score(), 0u);
    EXPECT_EQ(calls.load(), 0);
    EXPECT_EQ(read_file(p.reports_path()), first);
}

TEST_F(PipelineTest, FreshCacheReproducesReports) {
    auto c = config();
    Pipeline p(c, log);
    p.ingest();
    p.score();
    const auto first = read_file(p.reports_path());
    fs::remove_all(c.cache());
    p.score();
    EXPECT_EQ(read_file(p.reports_path()), first);
}

TEST_F(PipelineTest, FullRunWritesEveryTableWithManifest) {
    Pipeline p(config(), log);
    p.run_all();
    for (const auto& path : {p.articles_path(), p.gold_path(), p.parsed_path(), p.run_means_path(), p.combined_path(),
                             p.nlcs_path(), p.correlations_path(), p.year_trend_path(), p.mean_summary_path(),
                             p.cost_curve_path()}) {
        ASSERT_TRUE(fs::exists(path)) << path;
        const fs::path sidecar = path.string() + ".manifest.json";
        ASSERT_TRUE(fs::exists(sidecar)) << sidecar;
        const auto m = json::parse(read_file(sidecar));
        for (const char* field : {"sha256", "stage", "config_sha256", "prompt_sha256", "seed", "bootstrap_seed", "inputs",
                                  "generated_at"})
            EXPECT_TRUE(m.contains(field)) << sidecar << " lacks " << field;
        EXPECT_EQ(m["sha256"], sha256_file(path));
    }
    const auto manifest = json::parse(read_file(p.report_dir() / "manifest.json"));
    EXPECT_EQ(manifest["config_sha256"], p.config().checksum());
    EXPECT_EQ(manifest["prompt_sha256"].size(), 4u);

    const auto corr = read_table(p.correlations_path());
    const auto c_id = corr.require_column("indicator_id"), c_u = corr.require_column("uoa");
    std::set<std::string> indicators;
    bool has_all = false;
    for (const auto& row : corr.rows) {
        indicators.insert(row[c_id]);
        has_all = has_all || row[c_u] == "ALL";
    }
    EXPECT_EQ(indicators, (std::set<std::string>{"big", "small", "combined", "nlcs_2021", "nlcs_2024"}));
    EXPECT_TRUE(has_all);
    EXPECT_EQ(read_table(p.cost_curve_path()).rows.size(), 15u);
}

TEST_F(PipelineTest, ManualResolutionFeedsBackIntoParse) {
    Pipeline p(config(), log);
    p.ingest();
    p.score();
    const auto unresolved = p.parse();
    ASSERT_GT(unresolved, 1u) << "the sample needs at least two unresolved reports";
    const auto parsed_before = p.load_parsed().size();

    std::istringstream answers("7\n3\nno score\n\n");
    std::ostringstream prompts;
    EXPECT_EQ(p.resolve(answers, prompts), 2u);
    EXPECT_NE(prompts.str().find("score 1-4"), std::string::npos);
    EXPECT_EQ(p.load_parsed().size(), parsed_before + 1);
    const auto scoreless = read_table(p.out("parsed/scoreless.csv"));
    EXPECT_EQ(scoreless.rows.size(), 1u);
}

namespace {

int run_cli(const std::string& args) {
    const std::string cmd = std::string(REFQUAL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_F(PipelineTest, CliExitCodes) {
    const auto cfg = write_small_campaign(dir.path()).string();
    EXPECT_EQ(run_cli(""), 1);
    EXPECT_EQ(run_cli("--help"), 0);
    EXPECT_EQ(run_cli("frobnicate"), 1);
    EXPECT_EQ(run_cli("parse -c " + cfg), 2);
    EXPECT_EQ(run_cli("ingest -c " + (dir / "nope.json").string()), 2);
    EXPECT_EQ(run_cli("ingest -c " + cfg), 0);
    EXPECT_EQ(run_cli("score -c " + cfg + " --repetitions 0"), 1);
    EXPECT_EQ(run_cli("prompt-preview --uoa 35"), 1);
    EXPECT_EQ(run_cli("prompt-preview --uoa 3"), 0);
    EXPECT_EQ(run_cli("score -c " + cfg + " --repetitions 1"), 0);
    const auto live = "score -c " + cfg + " --backend live --endpoint http://127.0.0.1:1/v1 --max-attempts 1 --cache-dir " + (dir / "empty-cache").string();
    EXPECT_EQ(run_cli(live), 3);
}
