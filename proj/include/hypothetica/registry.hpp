#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "hypothetica/error.hpp"
#include "hypothetica/gformula.hpp"
#include "hypothetica/ipw.hpp"
#include "hypothetica/mi.hpp"
#include "hypothetica/trial_data.hpp"

namespace hypothetica {

enum class EstimatorFamily { naive, gformula, ipw, ipw_true, mi };

struct EstimatorInfo {
    std::string name;
    EstimatorFamily family;
    Population population = Population::all_data;
    ArmPooling pooling = ArmPooling::pooled;
};

/// Everything an estimator may need beyond the data.
struct EstimatorContext {
    std::uint64_t seed = 0;  // MI draws
    int mi_m = 10;
    const IceFreeProbabilities* true_probabilities = nullptr;  // ipw-true
};

/// Stable estimator names, in reporting order.
inline const std::vector<EstimatorInfo>& estimator_registry() {
    static const std::vector<EstimatorInfo> registry = [] {
        std::vector<EstimatorInfo> r{{"naive", EstimatorFamily::naive}};
        for (auto family : {EstimatorFamily::gformula, EstimatorFamily::ipw})
            for (auto pop : {Population::all_data, Population::ice_free})
                for (auto pool : {ArmPooling::pooled, ArmPooling::per_arm})
                    r.push_back({std::string(family == EstimatorFamily::gformula ? "gformula-" : "ipw-") + to_string(pop) +
                                     "-" + to_string(pool),
                                 family, pop, pool});
        r.push_back({"ipw-true", EstimatorFamily::ipw_true, Population::ice_free, ArmPooling::pooled});
        for (auto pool : {ArmPooling::pooled, ArmPooling::per_arm})
            r.push_back({std::string("mi-") + to_string(pool), EstimatorFamily::mi, Population::ice_free, pool});
        return r;
    }();
    return registry;
}

inline std::string estimator_names_joined() {
    std::string out;
    for (const auto& e : estimator_registry()) out += (out.empty() ? "" : ", ") + e.name;
    return out + " (alias: ipmw-perarm)";
}

inline const EstimatorInfo& find_estimator(const std::string& name) {
    const std::string canonical = name == "ipmw-perarm" ? "ipw-icefree-perarm" : name;
    const auto& reg = estimator_registry();
    const auto it = std::find_if(reg.begin(), reg.end(), [&](const auto& e) { return e.name == canonical; });
    if (it == reg.end()) throw ConfigError("unknown estimator '" + name + "'; valid: " + estimator_names_joined());
    return *it;
}

/// The eleven methods compared in the simulation study (no true-weight IPW).
inline std::vector<std::string> study_estimators() {
    std::vector<std::string> out;
    for (const auto& e : estimator_registry())
        if (e.family != EstimatorFamily::ipw_true) out.push_back(e.name);
    return out;
}

inline EstimateResult run_estimator(const EstimatorInfo& e, const TrialDataset& data, const EstimatorContext& ctx) {
    switch (e.family) {
        case EstimatorFamily::naive: return naive_estimate(data);
        case EstimatorFamily::gformula: return gformula_sequential(data, {e.population, e.pooling});
        case EstimatorFamily::ipw: return ipw_estimate(data, {e.population, e.pooling, WeightSource::fitted_logistic, std::nullopt});
        case EstimatorFamily::ipw_true: {
            if (!ctx.true_probabilities) throw ConfigError("ipw-true needs the true ICE-free probabilities");
            IpwSpec spec{e.population, e.pooling, WeightSource::supplied_true_probabilities, std::nullopt};
            return ipw_estimate(data, spec, ctx.true_probabilities);
        }
        case EstimatorFamily::mi: return mi_estimate(data, {ctx.mi_m, e.pooling, ctx.seed});
    }
    throw ConfigError("unhandled estimator family");
}

inline EstimateResult run_estimator(const std::string& name, const TrialDataset& data, const EstimatorContext& ctx) {
    return run_estimator(find_estimator(name), data, ctx);
}

}  // namespace hypothetica
