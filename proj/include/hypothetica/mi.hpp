#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hypothetica/design.hpp"
#include "hypothetica/error.hpp"
#include "hypothetica/glm.hpp"
#include "hypothetica/random.hpp"
#include "hypothetica/trial_data.hpp"

namespace hypothetica {

struct MiSpec {
    int m = 10;
    ArmPooling pooling = ArmPooling::pooled;
    std::uint64_t seed = 0;

    void validate() const {
        if (m < 2) throw ConfigError("multiple imputation needs m >= 2 imputations");
    }
};

/// A dataset whose covariates and outcome are fully filled in. ICE
/// indicators keep their (possibly deleted) observed values.
struct CompletedDataset {
    TrialSchema schema;
    std::vector<History> rows;
    std::vector<double> y;
    std::vector<bool> imputed_y;

    int arm(std::size_t i) const { return static_cast<int>(rows[i].a[0]); }
};

/// Removes every covariate, ICE indicator and outcome recorded after each
/// subject's first ICE; the first ICE indicator itself is kept.
inline TrialDataset delete_post_ice(const TrialDataset& data) {
    std::vector<SubjectRecord> out(data.begin(), data.end());
    const auto K = static_cast<std::size_t>(data.K());
    for (auto& s : out) {
        std::size_t first = 0;
        for (std::size_t k = 1; k <= K; ++k)
            if (s.a[k] && *s.a[k] == 1) {
                first = k;
                break;
            }
        if (first == 0) continue;
        for (std::size_t j = first + 1; j <= K; ++j) {
            s.l[j].reset();
            s.a[j].reset();
        }
        s.y.reset();
    }
    return TrialDataset(data.schema(), std::move(out));
}

namespace mi_detail {

// One variable in imputation order: component `component` of L_time, or the
// outcome when time > K.
struct Target {
    int time;
    int component;
};

inline double& slot(History& h, std::vector<double>& y, std::size_t i, const Target& t, int K) {
    if (t.time > K) return y[i];
    return h.l[static_cast<std::size_t>(t.time)][static_cast<std::size_t>(t.component)];
}

inline FeatureSet regressors(const TrialSchema& schema, const Target& t, bool pooled) {
    FeatureSet fs = FeatureSet::history(schema, std::min(t.time, schema.K + 1) - 1, 0, pooled);
    if (t.time <= schema.K)
        for (int j = 0; j < t.component; ++j) fs.add({Feature::covariate, t.time, j});
    return fs;
}

}  // namespace mi_detail

/// Proper multiple imputation for monotone missingness by sequential normal
/// linear regression: L_1 (component by component), ..., L_K, then Y, each on
/// A0 (if pooled) and everything earlier. Every imputation draws the residual
/// variance from its scaled inverse chi-square posterior and the
/// coefficients from their conditional normal before drawing missing values.
/// Imputation t uses the stream derived from (seed, t).
inline std::vector<CompletedDataset> impute_sequential(const TrialDataset& data, const MiSpec& spec) {
    using namespace mi_detail;
    spec.validate();
    const auto& schema = data.schema();
    const int K = schema.K;
    const bool pooled = spec.pooling == ArmPooling::pooled;
    const auto n = data.size();

    std::vector<Target> targets;
    for (int k = 1; k <= K; ++k)
        for (int j = 0; j < schema.dim(k); ++j) targets.push_back({k, j});
    targets.push_back({K + 1, 0});

    CompletedDataset base;
    base.schema = schema;
    base.y.assign(n, std::numeric_limits<double>::quiet_NaN());
    base.imputed_y.assign(n, false);
    std::vector<std::vector<bool>> missing(targets.size(), std::vector<bool>(n, false));
    for (std::size_t i = 0; i < n; ++i) {
        const auto& s = data[i];
        History h = History::observed(s);
        for (int k = 1; k <= K; ++k)
            if (h.l[static_cast<std::size_t>(k)].empty())
                h.l[static_cast<std::size_t>(k)].assign(static_cast<std::size_t>(schema.dim(k)),
                                                        std::numeric_limits<double>::quiet_NaN());
        base.rows.push_back(std::move(h));
        if (s.y) base.y[i] = *s.y;
        base.imputed_y[i] = !s.y;
        for (std::size_t t = 0; t < targets.size(); ++t) {
            const auto& tg = targets[t];
            missing[t][i] = tg.time > K ? !s.y : !s.l[static_cast<std::size_t>(tg.time)];
        }
    }

    // Complete-case fits do not depend on imputed values under monotone missingness.
    const auto groups = fitting_groups(spec.pooling);
    std::vector<FeatureSet> feature_sets;
    std::vector<std::vector<std::optional<FittedLinearModel>>> fits(targets.size());
    for (std::size_t t = 0; t < targets.size(); ++t) {
        feature_sets.push_back(regressors(schema, targets[t], pooled));
        const auto& fs = feature_sets.back();
        for (int group : groups) {
            std::vector<const History*> rows;
            std::vector<double> response;
            bool needed = false;
            for (std::size_t i = 0; i < n; ++i) {
                if (!in_group(data[i], group)) continue;
                if (missing[t][i]) {
                    needed = true;
                    continue;
                }
                rows.push_back(&base.rows[i]);
                response.push_back(slot(base.rows[i], base.y, i, targets[t], K));
            }
            if (!needed) {
                fits[t].emplace_back();
                continue;
            }
            const std::string var = targets[t].time > K ? std::string("y")
                                                        : "l" + std::to_string(targets[t].time) + "_" +
                                                              std::to_string(targets[t].component + 1);
            const std::size_t need = min_rows(fs.size() + 1);
            if (rows.size() < need)
                throw EstimationError("imputation model for " + var + " (" + group_label(group) + "): " +
                                      std::to_string(rows.size()) + " complete cases, need at least " +
                                      std::to_string(need));
            const Eigen::Map<const Eigen::VectorXd> y(response.data(), static_cast<Eigen::Index>(response.size()));
            try {
                fits[t].push_back(ols_fit(fs.design(rows), y, fs.names()));
            } catch (const SingularDesignError& e) {
                throw SingularDesignError("imputation model for " + var + " (" + group_label(group) + "): " + e.what());
            }
        }
    }

    std::vector<CompletedDataset> out;
    out.reserve(static_cast<std::size_t>(spec.m));
    for (int imp = 0; imp < spec.m; ++imp) {
        CounterRng rng(derive_seed(spec.seed, {static_cast<std::uint64_t>(imp)}));
        CompletedDataset cd = base;
        for (std::size_t t = 0; t < targets.size(); ++t) {
            const auto& fs = feature_sets[t];
            for (std::size_t g = 0; g < groups.size(); ++g) {
                const auto& fit = fits[t][g];
                if (!fit) continue;
                const double sigma = fit->rss > 0.0 ? std::sqrt(fit->rss / rng.chi_square(fit->df)) : 0.0;
                const auto p = fit->coefficients.size();
                Eigen::VectorXd z(p);
                for (Eigen::Index c = 0; c < p; ++c) z[c] = rng.normal();
                const Eigen::VectorXd beta = fit->coefficients + sigma * (fit->covariance_factor * z);
                for (std::size_t i = 0; i < n; ++i) {
                    if (!missing[t][i] || !in_group(data[i], groups[g])) continue;
                    double v = beta[0];
                    for (std::size_t c = 0; c < fs.size(); ++c)
                        v += beta[static_cast<Eigen::Index>(c) + 1] * fs.value(cd.rows[i], fs.features()[c]);
                    slot(cd.rows[i], cd.y, i, targets[t], K) = v + sigma * rng.normal();
                }
            }
        }
        out.push_back(std::move(cd));
    }
    return out;
}

inline EstimateResult completed_arm_means(const CompletedDataset& cd) {
    double sum[2] = {0.0, 0.0};
    std::size_t count[2] = {0, 0};
    for (std::size_t i = 0; i < cd.rows.size(); ++i) {
        const int arm = cd.arm(i);
        sum[arm] += cd.y[i];
        ++count[arm];
    }
    for (int arm : {0, 1})
        if (count[arm] == 0) throw EstimationError("no subjects randomised to arm a0=" + std::to_string(arm));
    return EstimateResult::from_means(sum[1] / static_cast<double>(count[1]), sum[0] / static_cast<double>(count[0]),
                                      count[1], count[0]);
}

/// Delete post-ICE data, impute m times, and average the per-imputation arm means.
inline EstimateResult mi_estimate(const TrialDataset& data, const MiSpec& spec) {
    for (int arm : {0, 1})
        if (data.arm_size(arm) == 0) throw EstimationError("no subjects randomised to arm a0=" + std::to_string(arm));
    const auto completed = impute_sequential(delete_post_ice(data), spec);
    double treated = 0.0;
    double control = 0.0;
    EstimateResult last;
    for (const auto& cd : completed) {
        last = completed_arm_means(cd);
        treated += last.mean_treated;
        control += last.mean_control;
    }
    const auto m = static_cast<double>(completed.size());
    return EstimateResult::from_means(treated / m, control / m, last.n_treated, last.n_control);
}

/// Unadjusted arm means of Y among subjects ICE-free through K.
inline EstimateResult naive_estimate(const TrialDataset& data) {
    double sum[2] = {0.0, 0.0};
    std::size_t count[2] = {0, 0};
    for (const auto& s : data) {
        if (!s.y || !ice_free_through(s, data.K())) continue;
        sum[s.arm()] += *s.y;
        ++count[s.arm()];
    }
    for (int arm : {0, 1})
        if (count[arm] == 0) throw EstimationError("no ICE-free subject with observed outcome in arm a0=" + std::to_string(arm));
    return EstimateResult::from_means(sum[1] / static_cast<double>(count[1]), sum[0] / static_cast<double>(count[0]),
                                      count[1], count[0]);
}

}  // namespace hypothetica
