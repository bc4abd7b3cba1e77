#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace hypothetica;

namespace {

StudyConfig small_study(std::vector<std::string> estimators, std::size_t replicates = 4) {
    StudyConfig c;
    c.dgp.n = 200;
    c.dgp.K = 3;
    c.replicates = replicates;
    c.estimators = std::move(estimators);
    c.seed = 17;
    return c;
}

std::string csv_of(const StudyResult& r, void (*writer)(const StudyResult&, std::ostream&)) {
    std::ostringstream out;
    writer(r, out);
    return out.str();
}

}  // namespace

TEST(Registry, ElevenStudyEstimatorsPlusTrueWeights) {
    const auto names = study_estimators();
    EXPECT_EQ(names.size(), 11u);
    EXPECT_EQ(std::count(names.begin(), names.end(), "ipw-true"), 0);
    EXPECT_EQ(find_estimator("ipmw-perarm").name, "ipw-icefree-perarm");
    EXPECT_EQ(find_estimator("ipw-true").family, EstimatorFamily::ipw_true);
    try {
        find_estimator("gformula");
        FAIL() << "expected a config error";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("mi-perarm"), std::string::npos);
    }
}

TEST(Registry, RunsEveryEstimator) {
    DgpParams p;
    p.n = 2000;
    const auto d = simulate(p, 1);
    const auto probs = true_ice_free_probabilities(p, d);
    const EstimatorContext ctx{5, 5, &probs};
    for (const auto& info : estimator_registry()) {
        const auto r = run_estimator(info, d, ctx);
        EXPECT_TRUE(std::isfinite(r.contrast)) << info.name;
    }
    EXPECT_THROW(run_estimator("ipw-true", d, EstimatorContext{}), ConfigError);
}

TEST(Study, TwoReplicatesHandAverage) {
    auto c = small_study({"naive"}, 2);
    const auto r = run_study(c);
    double manual = 0.0;
    for (std::uint64_t rep = 0; rep < 2; ++rep) manual += naive_estimate(simulate(c.dgp, derive_seed(c.seed, {rep}))).contrast;
    EXPECT_NEAR(r.at("naive").contrast.mean, manual / 2.0, 1e-15);
    EXPECT_EQ(r.records.size(), 2u);
    EXPECT_EQ(r.truth_source, "analytic");
    EXPECT_NEAR(r.truth.contrast, true_contrast(c.dgp), 0.0);
}

TEST(Study, ReproducibleAcrossThreadCounts) {
    auto c = small_study(study_estimators(), 6);
    const auto a = run_study(c, 1);
    const auto b = run_study(c, 3);
    EXPECT_EQ(csv_of(a, write_long_csv), csv_of(b, write_long_csv));
    EXPECT_EQ(csv_of(a, write_summary_csv), csv_of(b, write_summary_csv));
}

TEST(Study, DeterministicRegimeExcludesFittedIpw) {
    auto c = small_study({"naive", "ipw-all-pooled", "ipw-true", "gformula-icefree-pooled"}, 3);
    c.dgp.regime = DgpRegime::deterministic;
    const auto r = run_study(c);
    EXPECT_FALSE(r.at("ipw-all-pooled").usable);
    EXPECT_NE(r.at("ipw-all-pooled").note.find("separated"), std::string::npos);
    EXPECT_TRUE(r.at("ipw-true").usable);
    EXPECT_EQ(r.at("ipw-true").contrast.mean, r.at("naive").contrast.mean);
    EXPECT_TRUE(r.at("gformula-icefree-pooled").usable);
    EXPECT_FALSE(r.all_usable());
}

TEST(Study, MisspecifiedRegimeUsesOracle) {
    auto c = small_study({"naive"}, 2);
    set_regime(c.dgp, "miss:outcome");
    c.oracle_draws = 100000;
    const auto r = run_study(c);
    EXPECT_EQ(r.truth_source, "monte_carlo_oracle(100000)");
    DgpParams linear = c.dgp;
    linear.regime = DgpRegime::probabilistic;
    EXPECT_NEAR(r.truth.contrast, true_contrast(linear) + 2.5, 0.05);
}

TEST(Study, FailedReplicatesAreRecorded) {
    auto c = small_study({"gformula-icefree-perarm"}, 2);
    c.dgp.n = 4;
    const auto r = run_study(c);
    const auto& s = r.at("gformula-icefree-perarm");
    EXPECT_FALSE(s.usable);
    EXPECT_EQ(s.n_failed, 2u);
    EXPECT_NE(s.note.find("all replicates failed"), std::string::npos);
    EXPECT_TRUE(std::isnan(s.contrast.mean));
}

TEST(Study, OutputsWritten) {
    const auto dir = std::filesystem::temp_directory_path() / ("hypothetica_study_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()));
    const auto r = run_study(small_study({"naive", "mi-pooled"}, 3));
    write_study_outputs(r, dir);
    for (const char* name : {"long.csv", "summary.csv", "boxplot.csv"}) EXPECT_TRUE(std::filesystem::exists(dir / name));
    std::ifstream in(dir / "summary.csv");
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header.rfind("estimator,quantity,truth,n_ok", 0), 0u);
    std::filesystem::remove_all(dir);
}

TEST(StudyConfig, JsonRoundTrip) {
    auto c = small_study({"naive", "ipmw-perarm"});
    set_regime(c.dgp, "miss:l");
    c.dgp.misspec_visits = MisspecVisits::last;
    c.truth_mode = TruthMode::monte_carlo_oracle;
    const auto back = study_config_from_json(to_json(c));
    EXPECT_EQ(to_json(back), to_json(c));
    EXPECT_EQ(back.dgp.misspec_visits, MisspecVisits::last);
}

TEST(StudyConfig, JsonErrors) {
    using nlohmann::json;
    EXPECT_THROW(study_config_from_json(json{{"replicate", 3}}), ConfigError);
    EXPECT_THROW(study_config_from_json(json{{"dgp", {{"sigma", 1}}}}), ConfigError);
    EXPECT_THROW(study_config_from_json(json{{"estimators", {"bogus"}}}), ConfigError);
    EXPECT_THROW(study_config_from_json(json{{"replicates", "many"}}), ConfigError);
    EXPECT_THROW(study_config_from_json(json{{"replicates", 1}}), ConfigError);
    EXPECT_THROW(study_config_from_json(json::array()), ConfigError);
    EXPECT_EQ(study_config_from_json(json{{"estimators", "all"}}).estimators.size(), 11u);
}

TEST(StudyConfig, SampleConfigsParse) {
    for (const auto& entry : std::filesystem::directory_iterator(std::string(HYPOTHETICA_SAMPLES_DIR) + "/studies"))
        EXPECT_NO_THROW(read_study_config(entry.path().string())) << entry.path();
}

TEST(BoxStats, SymmetricSample) {
    const auto b = box_stats({9, 1, 8, 2, 7, 3, 6, 4, 5});
    EXPECT_EQ(b.q1, 3.0);
    EXPECT_EQ(b.median, 5.0);
    EXPECT_EQ(b.q3, 7.0);
    EXPECT_EQ(b.whisker_low, -3.0);
    EXPECT_EQ(b.whisker_high, 13.0);
    EXPECT_EQ(b.n_outside, 0u);
}

TEST(BoxStats, ZeroIqr) {
    const auto b = box_stats({2, 2, 2, 2, 10});
    EXPECT_EQ(b.q1, 2.0);
    EXPECT_EQ(b.q3, 2.0);
    EXPECT_EQ(b.whisker_low, 2.0);
    EXPECT_EQ(b.whisker_high, 2.0);
    EXPECT_EQ(b.n_outside, 1u);
}

TEST(BoxStats, MatchesSortOracle) {
    CounterRng rng(21);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> v(1 + rng() % 40);
        for (auto& x : v) x = rng.normal();
        const auto b = box_stats(v);
        EXPECT_NEAR(b.q1, oracle::quantile(v, 0.25), 1e-12);
        EXPECT_NEAR(b.median, oracle::quantile(v, 0.5), 1e-12);
        EXPECT_NEAR(b.q3, oracle::quantile(v, 0.75), 1e-12);
    }
}

TEST(Summary, BiasAndMonteCarloError) {
    const auto q = summarize_values({1.0, 2.0, 3.0, 6.0}, 2.0);
    EXPECT_DOUBLE_EQ(q.mean, 3.0);
    EXPECT_DOUBLE_EQ(q.bias, 1.0);
    EXPECT_DOUBLE_EQ(q.sd, std::sqrt(14.0 / 3.0));
    EXPECT_DOUBLE_EQ(q.mc_se, std::sqrt(14.0 / 3.0) / 2.0);
    EXPECT_DOUBLE_EQ(q.mse, 18.0 / 4.0);
}

TEST(Bootstrap, ConstantOutcomeHasZeroSpread) {
    DgpParams p;
    const auto base = simulate(p, 30);
    std::vector<SubjectRecord> subjects(base.begin(), base.end());
    for (auto& s : subjects) s.y = 1.5;
    const TrialDataset d(base.schema(), subjects);
    const auto r = bootstrap(d, "gformula-icefree-pooled", {100, 3, 1, 0.2}, {});
    EXPECT_NEAR(*r.se, 0.0, 1e-12);
    EXPECT_NEAR(*r.ci_upper - *r.ci_lower, 0.0, 1e-12);
    EXPECT_EQ(r.bootstrap_used, 100u);
}

TEST(Bootstrap, NaiveMatchesTwoSampleStandardError) {
    DgpParams p;
    p.n = 4000;
    p.ice_intercept = -50.0;
    const auto d = simulate(p, 31);
    double sum[2] = {0, 0}, sum2[2] = {0, 0};
    double n[2] = {0, 0};
    for (const auto& s : d) {
        sum[s.arm()] += *s.y;
        sum2[s.arm()] += *s.y * *s.y;
        ++n[s.arm()];
    }
    double var = 0.0;
    for (int a : {0, 1}) var += (sum2[a] - sum[a] * sum[a] / n[a]) / (n[a] - 1) / n[a];
    const auto r = bootstrap(d, "naive", {400, 4, 2, 0.2}, {});
    EXPECT_NEAR(*r.se / std::sqrt(var), 1.0, 0.15);
    EXPECT_LT(*r.ci_lower, r.contrast);
    EXPECT_GT(*r.ci_upper, r.contrast);
}

TEST(Bootstrap, ReproducibleAndThreadIndependent) {
    DgpParams p;
    const auto d = simulate(p, 32);
    const auto a = bootstrap(d, "mi-pooled", {100, 9, 1, 0.2}, {1, 3, nullptr});
    const auto b = bootstrap(d, "mi-pooled", {100, 9, 3, 0.2}, {1, 3, nullptr});
    EXPECT_EQ(*a.se, *b.se);
    EXPECT_EQ(*a.ci_lower, *b.ci_lower);
}

TEST(Bootstrap, RejectsFewResamplesAndUnstableRuns) {
    DgpParams p;
    const auto d = simulate(p, 33);
    EXPECT_THROW(bootstrap(d, "naive", {50, 1, 1, 0.2}, {}), ConfigError);
    p.regime = DgpRegime::deterministic;
    const auto det = simulate(p, 33);
    EXPECT_THROW(bootstrap(det, "ipw-all-pooled", {100, 1, 1, 0.2}, {}), Error);
}
