#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hypothetica/glm.hpp"
#include "hypothetica/trial_data.hpp"

namespace hypothetica {

enum class Population { all_data, ice_free };
enum class ArmPooling { pooled, per_arm };

inline const char* to_string(Population p) { return p == Population::all_data ? "all" : "icefree"; }
inline const char* to_string(ArmPooling p) { return p == ArmPooling::pooled ? "pooled" : "perarm"; }

/// One regressor drawn from a subject's history.
struct Feature {
    enum Kind { arm, ice, covariate } kind;
    int time = 0;
    int component = 0;

    std::string name() const {
        switch (kind) {
            case arm: return "a0";
            case ice: return "a" + std::to_string(time);
            case covariate: return "l" + std::to_string(time) + "_" + std::to_string(component + 1);
        }
        return {};
    }
};

/// Dense per-subject history that estimators can overwrite with predictions
/// (covariates) or regime values (ICE indicators). Unobserved cells are NaN.
struct History {
    std::vector<double> a;
    std::vector<std::vector<double>> l;

    static History observed(const SubjectRecord& s) {
        History h;
        h.a.resize(s.a.size());
        h.l.resize(s.l.size());
        for (std::size_t k = 0; k < s.a.size(); ++k) {
            h.a[k] = s.a[k] ? static_cast<double>(*s.a[k]) : std::numeric_limits<double>::quiet_NaN();
            if (s.l[k]) h.l[k] = *s.l[k];
        }
        return h;
    }
};

/// Main-effects regressor list over a history window.
class FeatureSet {
   public:
    /// L_0..L_{l_through} (every component), A_1..A_{a_through}, and A_0 when
    /// `include_arm` is set.
    static FeatureSet history(const TrialSchema& schema, int l_through, int a_through, bool include_arm) {
        FeatureSet fs;
        if (include_arm) fs.features_.push_back({Feature::arm, 0, 0});
        for (int k = 0; k <= l_through; ++k) {
            for (int j = 0; j < schema.dim(k); ++j) fs.features_.push_back({Feature::covariate, k, j});
            if (k >= 1 && k <= a_through) fs.features_.push_back({Feature::ice, k, 0});
        }
        for (int k = l_through + 1; k <= a_through; ++k) fs.features_.push_back({Feature::ice, k, 0});
        return fs;
    }

    void add(Feature f) { features_.push_back(f); }

    std::size_t size() const { return features_.size(); }
    const std::vector<Feature>& features() const { return features_; }

    double value(const History& h, const Feature& f) const {
        switch (f.kind) {
            case Feature::arm: return h.a[0];
            case Feature::ice: return h.a[static_cast<std::size_t>(f.time)];
            case Feature::covariate: {
                const auto& v = h.l[static_cast<std::size_t>(f.time)];
                return v.empty() ? std::numeric_limits<double>::quiet_NaN()
                                 : v[static_cast<std::size_t>(f.component)];
            }
        }
        return std::numeric_limits<double>::quiet_NaN();
    }

    void row(const History& h, std::span<double> out) const {
        for (std::size_t j = 0; j < features_.size(); ++j) out[j] = value(h, features_[j]);
    }

    std::vector<double> row(const History& h) const {
        std::vector<double> out(features_.size());
        row(h, out);
        return out;
    }

    bool observed(const History& h) const {
        for (const auto& f : features_)
            if (std::isnan(value(h, f))) return false;
        return true;
    }

    /// Design matrix with a leading intercept column.
    Eigen::MatrixXd design(const std::vector<const History*>& rows) const {
        Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(features_.size()) + 1);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            x(static_cast<Eigen::Index>(i), 0) = 1.0;
            for (std::size_t j = 0; j < features_.size(); ++j)
                x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j) + 1) = value(*rows[i], features_[j]);
        }
        return x;
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out{"(intercept)"};
        for (const auto& f : features_) out.push_back(f.name());
        return out;
    }

   private:
    std::vector<Feature> features_;
};

inline double predict(const FittedLinearModel& m, const FeatureSet& fs, const History& h) {
    double v = m.coefficients[0];
    for (std::size_t j = 0; j < fs.size(); ++j)
        v += m.coefficients[static_cast<Eigen::Index>(j) + 1] * fs.value(h, fs.features()[j]);
    return v;
}

inline double predict(const FittedLogisticModel& m, const FeatureSet& fs, const History& h) {
    double eta = m.coefficients[0];
    for (std::size_t j = 0; j < fs.size(); ++j)
        eta += m.coefficients[static_cast<Eigen::Index>(j) + 1] * fs.value(h, fs.features()[j]);
    return expit(eta);
}

/// Arms whose models are fitted: {-1} stands for both arms pooled.
inline std::vector<int> fitting_groups(ArmPooling pooling) {
    return pooling == ArmPooling::pooled ? std::vector<int>{-1} : std::vector<int>{0, 1};
}

inline bool in_group(const SubjectRecord& s, int group) { return group < 0 || s.arm() == group; }

/// Rows required before a model with `n_params` coefficients may be fitted.
inline std::size_t min_rows(std::size_t n_params) { return n_params + 2; }

inline std::string group_label(int group) {
    return group < 0 ? std::string("pooled arms") : "arm a0=" + std::to_string(group);
}

}  // namespace hypothetica
