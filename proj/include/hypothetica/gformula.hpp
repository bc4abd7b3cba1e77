#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hypothetica/design.hpp"
#include "hypothetica/error.hpp"
#include "hypothetica/glm.hpp"
#include "hypothetica/trial_data.hpp"

namespace hypothetica {

/// Which subjects the outcome and covariate models are fitted to, and
/// whether the two arms share a model (with A0 as a covariate) or not.
/// Model form is always main effects of every history component.
struct GFormulaSpec {
    Population population = Population::all_data;
    ArmPooling pooling = ArmPooling::pooled;
};

namespace gformula_detail {

struct Stratum {
    std::vector<const History*> rows;
    std::vector<double> response;
};

inline FittedLinearModel fit(const Stratum& s, const FeatureSet& fs, const std::string& what) {
    const std::size_t need = min_rows(fs.size() + 1);
    if (s.rows.size() < need)
        throw EstimationError(what + ": " + std::to_string(s.rows.size()) + " usable subjects, need at least " +
                              std::to_string(need));
    const Eigen::Map<const Eigen::VectorXd> y(s.response.data(), static_cast<Eigen::Index>(s.response.size()));
    const Eigen::MatrixXd x = fs.design(s.rows);
    // An ICE column that is zero throughout the stratum carries no
    // information; it gets coefficient 0 and predictions are made at A = 0.
    std::vector<Eigen::Index> keep{0};
    for (std::size_t j = 0; j < fs.size(); ++j) {
        const auto col = static_cast<Eigen::Index>(j) + 1;
        if (fs.features()[j].kind != Feature::ice || x.col(col).any()) keep.push_back(col);
    }
    try {
        if (keep.size() == static_cast<std::size_t>(x.cols())) return ols_fit(x, y, fs.names());
        auto m = ols_fit(x(Eigen::all, keep), y, fs.names());
        Eigen::VectorXd full = Eigen::VectorXd::Zero(x.cols());
        for (std::size_t j = 0; j < keep.size(); ++j) full[keep[j]] = m.coefficients[static_cast<Eigen::Index>(j)];
        m.coefficients = std::move(full);
        return m;
    } catch (const SingularDesignError& e) {
        throw SingularDesignError(what + ": " + e.what());
    }
}

inline std::size_t model_index(ArmPooling pooling, int arm) { return pooling == ArmPooling::pooled ? 0 : static_cast<std::size_t>(arm); }

inline void require_both_arms(const TrialDataset& data) {
    for (int arm : {0, 1})
        if (data.arm_size(arm) == 0)
            throw EstimationError("no subjects randomised to arm a0=" + std::to_string(arm));
}

}  // namespace gformula_detail

/// G-formula for K = 1: fit E(Y | A0, A1, L0, L1) and average predictions at
/// A1 = 0 over each arm's observed (L0, L1).
inline EstimateResult gformula_single(const TrialDataset& data, const GFormulaSpec& spec) {
    using namespace gformula_detail;
    if (data.K() != 1) throw DimensionError("gformula_single requires K = 1, got K = " + std::to_string(data.K()));
    require_both_arms(data);
    const bool all = spec.population == Population::all_data;
    const auto fs = FeatureSet::history(data.schema(), 1, all ? 1 : 0, spec.pooling == ArmPooling::pooled);

    std::vector<History> hist;
    hist.reserve(data.size());
    for (const auto& s : data) hist.push_back(History::observed(s));

    std::vector<FittedLinearModel> models;
    for (int group : fitting_groups(spec.pooling)) {
        Stratum st;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const auto& s = data[i];
            if (!in_group(s, group) || !s.y || !fs.observed(hist[i])) continue;
            if (!all && !ice_free_through(s, 1)) continue;
            st.rows.push_back(&hist[i]);
            st.response.push_back(*s.y);
        }
        if (st.rows.empty())
            throw EstimationError("outcome model for " + group_label(group) + ": empty " +
                                  (all ? std::string("stratum") : std::string("ICE-free stratum")));
        models.push_back(fit(st, fs, "outcome model for " + group_label(group)));
    }

    double sum[2] = {0.0, 0.0};
    std::size_t count[2] = {0, 0};
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& s = data[i];
        if (!s.l[1])
            throw EstimationError("subject " + std::to_string(i + 1) +
                                  " has no observed l1; use the sequential G-formula");
        History h = hist[i];
        h.a[1] = 0.0;
        const int arm = s.arm();
        sum[arm] += predict(models[model_index(spec.pooling, arm)], fs, h);
        ++count[arm];
    }
    return EstimateResult::from_means(sum[1] / static_cast<double>(count[1]), sum[0] / static_cast<double>(count[0]),
                                      count[1], count[0]);
}

/// Sequential G-formula for general K: fit a linear model for every
/// component of L_k given the past, then for Y; predict L_1..L_K forward for
/// each subject with all ICE indicators set to 0, predict Y, average by arm.
inline EstimateResult gformula_sequential(const TrialDataset& data, const GFormulaSpec& spec) {
    using namespace gformula_detail;
    require_both_arms(data);
    const int K = data.K();
    const bool all = spec.population == Population::all_data;
    const bool pooled = spec.pooling == ArmPooling::pooled;

    std::vector<History> hist;
    hist.reserve(data.size());
    for (const auto& s : data) hist.push_back(History::observed(s));

    std::vector<FeatureSet> l_features;
    for (int k = 1; k <= K; ++k) l_features.push_back(FeatureSet::history(data.schema(), k - 1, all ? k - 1 : 0, pooled));
    const auto y_features = FeatureSet::history(data.schema(), K, all ? K : 0, pooled);

    const auto groups = fitting_groups(spec.pooling);
    // l_models[group][k-1][component]
    std::vector<std::vector<std::vector<FittedLinearModel>>> l_models(groups.size());
    std::vector<FittedLinearModel> y_models;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const int group = groups[g];
        for (int k = 1; k <= K; ++k) {
            const auto& fs = l_features[static_cast<std::size_t>(k - 1)];
            std::vector<FittedLinearModel> comps;
            for (int j = 0; j < data.schema().dim(k); ++j) {
                Stratum st;
                for (std::size_t i = 0; i < data.size(); ++i) {
                    const auto& s = data[i];
                    if (!in_group(s, group) || !s.l[static_cast<std::size_t>(k)] || !fs.observed(hist[i])) continue;
                    if (!all && !ice_free_through(s, k - 1)) continue;
                    st.rows.push_back(&hist[i]);
                    st.response.push_back((*s.l[static_cast<std::size_t>(k)])[static_cast<std::size_t>(j)]);
                }
                const std::string what = "model for l" + std::to_string(k) + "_" + std::to_string(j + 1) + " (" +
                                         group_label(group) + ", k=" + std::to_string(k) + ")";
                if (st.rows.empty()) throw EstimationError(what + ": empty fitting stratum");
                comps.push_back(fit(st, fs, what));
            }
            l_models[g].push_back(std::move(comps));
        }
        Stratum st;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const auto& s = data[i];
            if (!in_group(s, group) || !s.y || !y_features.observed(hist[i])) continue;
            if (!all && !ice_free_through(s, K)) continue;
            st.rows.push_back(&hist[i]);
            st.response.push_back(*s.y);
        }
        const std::string what = "outcome model (" + group_label(group) + ")";
        if (st.rows.empty()) throw EstimationError(what + ": empty fitting stratum");
        y_models.push_back(fit(st, y_features, what));
    }

    double sum[2] = {0.0, 0.0};
    std::size_t count[2] = {0, 0};
    for (std::size_t i = 0; i < data.size(); ++i) {
        const int arm = data[i].arm();
        const std::size_t g = model_index(spec.pooling, arm);
        History h;
        h.a.assign(static_cast<std::size_t>(K) + 1, 0.0);
        h.a[0] = static_cast<double>(arm);
        h.l.resize(static_cast<std::size_t>(K) + 1);
        h.l[0] = data[i].baseline();
        for (int k = 1; k <= K; ++k) {
            const auto& comps = l_models[g][static_cast<std::size_t>(k - 1)];
            std::vector<double> next(comps.size());
            for (std::size_t j = 0; j < comps.size(); ++j)
                next[j] = predict(comps[j], l_features[static_cast<std::size_t>(k - 1)], h);
            h.l[static_cast<std::size_t>(k)] = std::move(next);
        }
        sum[arm] += predict(y_models[g], y_features, h);
        ++count[arm];
    }
    return EstimateResult::from_means(sum[1] / static_cast<double>(count[1]), sum[0] / static_cast<double>(count[0]),
                                      count[1], count[0]);
}

/// Two-visit G-formula in closed form, per arm among the ICE-free:
/// Y | L0, L1, L2 fitted on A1 = A2 = 0, L2 | L0, L1 fitted on A1 = 0, with
/// the L2 model substituted into the outcome model and the result averaged
/// over the arm's empirical (L0, L1).
inline EstimateResult gformula_two_timepoint_closed_form(const TrialDataset& data) {
    using namespace gformula_detail;
    if (data.K() != 2) throw DimensionError("closed-form G-formula requires K = 2, got K = " + std::to_string(data.K()));
    require_both_arms(data);
    const auto& schema = data.schema();
    const auto y_features = FeatureSet::history(schema, 2, 0, false);
    const auto l2_features = FeatureSet::history(schema, 1, 0, false);
    const auto p01 = static_cast<Eigen::Index>(l2_features.size());  // |L0| + |L1|

    std::vector<History> hist;
    hist.reserve(data.size());
    for (const auto& s : data) hist.push_back(History::observed(s));

    double mean[2] = {0.0, 0.0};
    std::size_t count[2] = {0, 0};
    for (int arm : {0, 1}) {
        Stratum ys;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const auto& s = data[i];
            if (s.arm() != arm || !s.y || !ice_free_through(s, 2) || !y_features.observed(hist[i])) continue;
            ys.rows.push_back(&hist[i]);
            ys.response.push_back(*s.y);
        }
        if (ys.rows.empty()) throw EstimationError("outcome model (arm a0=" + std::to_string(arm) + "): empty ICE-free stratum");
        const auto y_model = fit(ys, y_features, "outcome model (arm a0=" + std::to_string(arm) + ")");

        // combined = coefficients on (1, L0, L1) after substituting E(L2 | L0, L1).
        Eigen::VectorXd combined = y_model.coefficients.head(p01 + 1);
        for (int j = 0; j < schema.dim(2); ++j) {
            Stratum ls;
            for (std::size_t i = 0; i < data.size(); ++i) {
                const auto& s = data[i];
                if (s.arm() != arm || !s.l[2] || !ice_free_through(s, 1) || !l2_features.observed(hist[i])) continue;
                ls.rows.push_back(&hist[i]);
                ls.response.push_back((*s.l[2])[static_cast<std::size_t>(j)]);
            }
            const std::string what = "model for l2_" + std::to_string(j + 1) + " (arm a0=" + std::to_string(arm) + ")";
            if (ls.rows.empty()) throw EstimationError(what + ": empty ICE-free stratum");
            const auto l2_model = fit(ls, l2_features, what);
            combined += y_model.coefficients[p01 + 1 + j] * l2_model.coefficients;
        }

        for (std::size_t i = 0; i < data.size(); ++i) {
            if (data[i].arm() != arm) continue;
            if (!data[i].l[1])
                throw EstimationError("subject " + std::to_string(i + 1) + " has no observed l1");
            double v = combined[0];
            const auto row = l2_features.row(hist[i]);
            for (Eigen::Index c = 0; c < p01; ++c) v += combined[c + 1] * row[static_cast<std::size_t>(c)];
            mean[arm] += v;
            ++count[arm];
        }
        mean[arm] /= static_cast<double>(count[arm]);
    }
    return EstimateResult::from_means(mean[1], mean[0], count[1], count[0]);
}

}  // namespace hypothetica
