#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace hypothetica;

namespace {

const GFormulaSpec kSpecs[] = {{Population::all_data, ArmPooling::pooled},
                               {Population::all_data, ArmPooling::per_arm},
                               {Population::ice_free, ArmPooling::pooled},
                               {Population::ice_free, ArmPooling::per_arm}};

TrialDataset no_ice_data(int K, std::uint64_t seed) {
    DgpParams p;
    p.K = K;
    p.n = 300;
    p.ice_intercept = -50.0;
    return simulate(p, seed);
}

TrialDataset shifted(const TrialDataset& d, double c) {
    std::vector<SubjectRecord> out(d.begin(), d.end());
    for (auto& s : out)
        if (s.y) *s.y += c;
    return TrialDataset(d.schema(), std::move(out));
}

std::pair<double, double> arm_means(const TrialDataset& d) {
    double sum[2] = {0, 0};
    int n[2] = {0, 0};
    for (const auto& s : d) {
        sum[s.arm()] += *s.y;
        ++n[s.arm()];
    }
    return {sum[1] / n[1], sum[0] / n[0]};
}

// 14 subjects, K = 1; arm 1 first. Two ICEs per arm.
constexpr const char* kHand =
    "a0,l0_1,l1_1,a1,y\n"
    "1,0.2,0.5,0,1.1\n1,-1.0,-0.4,0,0.3\n1,1.5,2.0,1,2.9\n1,0.7,0.1,0,1.4\n1,-0.3,0.9,0,0.8\n"
    "1,2.1,1.7,1,3.3\n1,-1.4,-1.1,0,-0.2\n"
    "0,0.4,0.3,0,0.1\n0,-0.8,-1.2,0,-0.9\n0,1.1,0.6,1,1.0\n0,0.0,0.2,0,0.4\n0,-1.6,-0.7,0,-1.1\n"
    "0,0.9,1.8,1,1.2\n0,0.5,-0.1,0,0.0\n";

}  // namespace

TEST(GFormulaSingle, HandDatasetMatchesPlugIn) {
    std::istringstream in(kHand);
    const auto d = read_csv(in);
    const auto est = gformula_single(d, {Population::ice_free, ArmPooling::per_arm});
    for (int arm : {0, 1}) {
        std::vector<std::vector<double>> rows;
        std::vector<double> y;
        for (const auto& s : d)
            if (s.arm() == arm && *s.a[1] == 0) {
                rows.push_back({(*s.l[0])[0], (*s.l[1])[0]});
                y.push_back(*s.y);
            }
        const auto beta = oracle::ols(rows, y);
        long double sum = 0.0L;
        int n = 0;
        for (const auto& s : d)
            if (s.arm() == arm) {
                sum += oracle::predict(beta, {(*s.l[0])[0], (*s.l[1])[0]});
                ++n;
            }
        EXPECT_NEAR(est.arm_mean(arm), static_cast<double>(sum / n), 1e-12) << "arm " << arm;
    }
    EXPECT_EQ(est.n_treated, 7u);
    EXPECT_EQ(est.n_control, 7u);
}

TEST(GFormulaSingle, EqualsTwoRegressionMle) {
    DgpParams p;
    p.K = 1;
    p.n = 400;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto d = simulate(p, seed);
        const auto est = gformula_single(d, {Population::ice_free, ArmPooling::per_arm});
        for (int arm : {0, 1}) {
            const double mle = static_cast<double>(oracle::mle_k1(d, arm));
            EXPECT_NEAR(est.arm_mean(arm), mle, 1e-8 * std::max(1.0, std::fabs(mle)));
        }
    }
}

TEST(GFormulaSingle, NoIceGivesArmMeans) {
    const auto d = no_ice_data(1, 5);
    const auto [treated, control] = arm_means(d);
    for (const auto& spec : kSpecs) {
        const auto est = gformula_single(d, spec);
        EXPECT_NEAR(est.mean_treated, treated, 1e-12);
        EXPECT_NEAR(est.mean_control, control, 1e-12);
    }
}

TEST(GFormulaSingle, RequiresKEqualsOne) { EXPECT_THROW(gformula_single(no_ice_data(2, 1), {}), DimensionError); }

TEST(GFormulaSequential, ReducesToSingleAtKOne) {
    DgpParams p;
    p.K = 1;
    const auto d = simulate(p, 8);
    for (const auto& spec : kSpecs) {
        const auto a = gformula_single(d, spec);
        const auto b = gformula_sequential(d, spec);
        EXPECT_NEAR(a.mean_treated, b.mean_treated, 1e-12);
        EXPECT_NEAR(a.mean_control, b.mean_control, 1e-12);
    }
}

TEST(GFormulaSequential, MeanPreservationWithoutIce) {
    const auto d = no_ice_data(4, 6);
    const auto [treated, control] = arm_means(d);
    for (const auto& spec : kSpecs) {
        const auto est = gformula_sequential(d, spec);
        EXPECT_NEAR(est.mean_treated, treated, 1e-12);
        EXPECT_NEAR(est.mean_control, control, 1e-12);
    }
}

TEST(GFormulaSequential, LocationShiftEquivariance) {
    DgpParams p;
    const auto d = simulate(p, 9);
    const auto moved = shifted(d, 3.25);
    for (const auto& spec : kSpecs) {
        const auto a = gformula_sequential(d, spec);
        const auto b = gformula_sequential(moved, spec);
        EXPECT_NEAR(b.mean_treated - a.mean_treated, 3.25, 1e-10);
        EXPECT_NEAR(b.mean_control - a.mean_control, 3.25, 1e-10);
        EXPECT_NEAR(b.contrast, a.contrast, 1e-10);
    }
}

TEST(GFormulaSequential, DeterministicIceStillExtrapolates) {
    DgpParams p;
    p.regime = DgpRegime::deterministic;
    const auto d = simulate(p, 10);
    for (const auto& spec : kSpecs) {
        const auto est = gformula_sequential(d, spec);
        EXPECT_TRUE(std::isfinite(est.contrast));
    }
}

TEST(GFormulaSequential, ApproximatelyUnbiased) {
    DgpParams p;
    double sum = 0.0, sum2 = 0.0;
    constexpr int reps = 100;
    for (int r = 0; r < reps; ++r) {
        const double c = gformula_sequential(simulate(p, derive_seed(77, {static_cast<std::uint64_t>(r)})),
                                             {Population::ice_free, ArmPooling::pooled})
                             .contrast;
        sum += c;
        sum2 += c * c;
    }
    const double mean = sum / reps;
    const double se = std::sqrt((sum2 / reps - mean * mean) / (reps - 1));
    EXPECT_LT(std::fabs(mean - true_contrast(p)), 3.0 * se);
}

TEST(GFormulaSequential, EmptyStratumNamesVisit) {
    // every subject in arm 1 has an ICE at visit 1
    const auto base = no_ice_data(2, 12);
    std::vector<SubjectRecord> subjects(base.begin(), base.end());
    for (auto& s : subjects)
        if (s.arm() == 1) s.a[1] = 1;
    const TrialDataset d(base.schema(), subjects);
    try {
        gformula_sequential(d, {Population::ice_free, ArmPooling::per_arm});
        FAIL() << "expected an estimation error";
    } catch (const EstimationError& e) {
        EXPECT_NE(std::string(e.what()).find("k=2"), std::string::npos) << e.what();
    }
}

TEST(GFormulaSequential, MissingArmIsError) {
    std::istringstream in("a0,l0_1,l1_1,a1,y\n1,0,1,0,1\n1,1,1,0,2\n1,2,0,0,1\n");
    EXPECT_THROW(gformula_sequential(read_csv(in), {}), EstimationError);
}

TEST(GFormulaClosedForm, ConstantResponse) {
    auto d = no_ice_data(2, 11);
    std::vector<SubjectRecord> subjects(d.begin(), d.end());
    DgpParams p;
    p.K = 2;
    const auto with_ice = simulate(p, 11);
    subjects.assign(with_ice.begin(), with_ice.end());
    for (auto& s : subjects) s.y = 4.0;
    const auto est = gformula_two_timepoint_closed_form(TrialDataset(with_ice.schema(), subjects));
    EXPECT_NEAR(est.mean_treated, 4.0, 1e-12);
    EXPECT_NEAR(est.mean_control, 4.0, 1e-12);
    EXPECT_NEAR(est.contrast, 0.0, 1e-12);
}

TEST(GFormulaClosedForm, MatchesSequentialAndMle) {
    DgpParams p;
    p.K = 2;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto d = simulate(p, seed);
        const auto closed = gformula_two_timepoint_closed_form(d);
        const auto seq = gformula_sequential(d, {Population::ice_free, ArmPooling::per_arm});
        for (int arm : {0, 1}) {
            EXPECT_NEAR(closed.arm_mean(arm), seq.arm_mean(arm), 1e-10);
            EXPECT_NEAR(closed.arm_mean(arm), static_cast<double>(oracle::mle_k2(d, arm)), 1e-8);
        }
    }
}

TEST(GFormulaClosedForm, RequiresKEqualsTwo) {
    EXPECT_THROW(gformula_two_timepoint_closed_form(no_ice_data(3, 1)), DimensionError);
}
