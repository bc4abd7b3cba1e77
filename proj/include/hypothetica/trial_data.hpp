#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hypothetica/error.hpp"

namespace hypothetica {

/// Shape of a wide-format trial: K post-baseline visits and the covariate
/// dimension at each visit (dims[0] is the baseline dimension).
struct TrialSchema {
    int K = 0;
    std::vector<int> dims{1};

    static TrialSchema scalar(int K) { return TrialSchema{K, std::vector<int>(static_cast<std::size_t>(K) + 1, 1)}; }

    int dim(int k) const { return dims.at(static_cast<std::size_t>(k)); }

    void validate() const {
        if (K < 0) throw SchemaError("number of visits must be non-negative");
        if (dims.size() != static_cast<std::size_t>(K) + 1)
            throw SchemaError("covariate dimension list must have K + 1 entries");
        for (int d : dims)
            if (d < 1) throw SchemaError("every covariate block needs at least one component");
    }

    bool operator==(const TrialSchema&) const = default;
};

/// One subject. Index 0 of `l` and `a` holds the baseline covariates L0 and
/// the randomised arm A0; index k in 1..K holds L_k and the ICE indicator A_k.
struct SubjectRecord {
    std::vector<std::optional<std::vector<double>>> l;
    std::vector<std::optional<int>> a;
    std::optional<double> y;

    int arm() const { return *a[0]; }
    const std::vector<double>& baseline() const { return *l[0]; }
};

/// Longitudinal trial data with intercurrent events. Observation is
/// monotone: in the visit order L1, A1, L2, A2, ..., LK, AK, Y the observed
/// cells form a prefix. The ICE indicators themselves need not be monotone.
class TrialDataset {
   public:
    TrialDataset() = default;

    TrialDataset(TrialSchema schema, std::vector<SubjectRecord> subjects)
        : schema_(std::move(schema)), subjects_(std::move(subjects)) {
        schema_.validate();
        for (std::size_t i = 0; i < subjects_.size(); ++i) validate_subject(i);
    }

    const TrialSchema& schema() const { return schema_; }
    int K() const { return schema_.K; }
    std::size_t size() const { return subjects_.size(); }
    bool empty() const { return subjects_.empty(); }
    const SubjectRecord& operator[](std::size_t i) const { return subjects_[i]; }
    const std::vector<SubjectRecord>& subjects() const { return subjects_; }

    auto begin() const { return subjects_.begin(); }
    auto end() const { return subjects_.end(); }

    std::size_t arm_size(int arm) const {
        std::size_t n = 0;
        for (const auto& s : subjects_) n += s.arm() == arm;
        return n;
    }

   private:
    void validate_subject(std::size_t i) const {
        const auto& s = subjects_[i];
        const auto K = static_cast<std::size_t>(schema_.K);
        const std::string who = "subject " + std::to_string(i + 1);
        if (s.l.size() != K + 1 || s.a.size() != K + 1)
            throw ValidationError(who + ": expected " + std::to_string(K + 1) + " visit slots");
        if (!s.a[0]) throw ValidationError(who + ": randomised arm a0 is missing");
        if (*s.a[0] != 0 && *s.a[0] != 1) throw ValidationError(who + ": a0 must be 0 or 1");
        if (!s.l[0]) throw ValidationError(who + ": baseline covariates l0 are missing");
        for (std::size_t k = 0; k <= K; ++k) {
            if (s.l[k]) {
                if (s.l[k]->size() != static_cast<std::size_t>(schema_.dims[k]))
                    throw ValidationError(who + ": l" + std::to_string(k) + " has wrong dimension");
                for (double v : *s.l[k])
                    if (!std::isfinite(v)) throw ValidationError(who + ": non-finite covariate in l" + std::to_string(k));
            }
            if (k > 0 && s.a[k] && *s.a[k] != 0 && *s.a[k] != 1)
                throw ValidationError(who + ": a" + std::to_string(k) + " must be 0 or 1");
        }
        if (s.y && !std::isfinite(*s.y)) throw ValidationError(who + ": non-finite outcome");
        // Monotone observation over L1, A1, ..., LK, AK, Y.
        bool gone = false;
        std::string first_missing;
        auto visit = [&](bool observed, const std::string& name) {
            if (!observed) {
                if (!gone) first_missing = name;
                gone = true;
            } else if (gone) {
                throw ValidationError(who + ": " + name + " is observed after " + first_missing +
                                      " is missing (observation must be monotone)");
            }
        };
        for (std::size_t k = 1; k <= K; ++k) {
            visit(s.l[k].has_value(), "l" + std::to_string(k));
            visit(s.a[k].has_value(), "a" + std::to_string(k));
        }
        visit(s.y.has_value(), "y");
    }

    TrialSchema schema_;
    std::vector<SubjectRecord> subjects_;
};

/// A static regime: randomised arm plus the value of every ICE indicator.
struct Regime {
    int a0 = 0;
    std::vector<int> ice;

    static Regime hypothetical(int a0, int K) { return Regime{a0, std::vector<int>(static_cast<std::size_t>(K), 0)}; }

    bool prevents_all_ice() const {
        for (int v : ice)
            if (v != 0) return false;
        return true;
    }
};

/// Per-arm potential-outcome means under no ICE and their difference.
struct EstimateResult {
    double mean_treated = 0.0;
    double mean_control = 0.0;
    double contrast = 0.0;
    std::optional<double> se;
    std::optional<double> ci_lower;
    std::optional<double> ci_upper;
    std::size_t n_treated = 0;
    std::size_t n_control = 0;
    std::size_t bootstrap_used = 0;
    std::size_t bootstrap_failed = 0;

    static EstimateResult from_means(double treated, double control, std::size_t n_treated,
                                     std::size_t n_control) {
        EstimateResult r;
        r.mean_treated = treated;
        r.mean_control = control;
        r.contrast = treated - control;
        r.n_treated = n_treated;
        r.n_control = n_control;
        return r;
    }

    double arm_mean(int arm) const { return arm == 1 ? mean_treated : mean_control; }
};

/// True iff A_1..A_k are all observed and equal to zero. k = 0 is vacuous.
inline bool ice_free_through(const SubjectRecord& s, int k) {
    for (int j = 1; j <= k; ++j) {
        const auto& a = s.a[static_cast<std::size_t>(j)];
        if (!a || *a != 0) return false;
    }
    return true;
}

inline std::vector<bool> ice_free_mask(const TrialDataset& data, int through_k) {
    if (through_k < 0 || through_k > data.K())
        throw DimensionError("ice_free_mask: through_k must lie in [0, K]");
    std::vector<bool> mask(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) mask[i] = ice_free_through(data[i], through_k);
    return mask;
}

}  // namespace hypothetica
