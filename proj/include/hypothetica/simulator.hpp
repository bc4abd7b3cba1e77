#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "hypothetica/error.hpp"
#include "hypothetica/glm.hpp"
#include "hypothetica/ipw.hpp"
#include "hypothetica/parallel.hpp"
#include "hypothetica/random.hpp"
#include "hypothetica/trial_data.hpp"

namespace hypothetica {

enum class DgpRegime { probabilistic, deterministic, misspecified };
enum class MisspecTarget { outcome, l_model, ice_model, all };
// Visits at which a misspecified L or ICE model carries the quadratic term.
enum class MisspecVisits { all, last };

/// Data-generating process for the longitudinal trial:
///   A0 ~ Bernoulli(p_treat), L0 ~ N(0, sd^2),
///   L_k ~ N(0.3 * sum(L_0..L_{k-1}) + 0.2 * sum(A_0..A_{k-1}), sd^2),
///   A_k ~ Bernoulli(expit(-3 + 0.2 * sum(L_0..L_k) + 0.4 * sum(A_0..A_{k-1})))
///         or A_k = 1{L_k >= threshold} in the deterministic regime,
///   Y   ~ N(0.2 * sum(L_0..L_K) + 0.5 * A0 + 0.3 * sum(A_1..A_K), sd^2).
/// The misspecified regime adds q = 2 L0^2 A0 - 0.5 L0^2 (1 - A0) to the
/// mean (or linear predictor) of the targeted model(s): at every visit by
/// default, or only at visit K with `misspec_visits = last`.
struct DgpParams {
    std::size_t n = 500;
    int K = 5;
    double coef_l_on_past_l = 0.3;
    double coef_l_on_past_a = 0.2;
    double ice_intercept = -3.0;
    double coef_ice_on_l = 0.2;
    double coef_ice_on_past_a = 0.4;
    double coef_y_on_l = 0.2;
    double coef_y_on_a0 = 0.5;
    double coef_y_on_ice = 0.3;
    double noise_sd = 1.0;
    double p_treat = 0.5;
    DgpRegime regime = DgpRegime::probabilistic;
    double threshold = 1.5;
    MisspecTarget target = MisspecTarget::outcome;
    double quad_treated = 2.0;
    double quad_control = -0.5;
    MisspecVisits misspec_visits = MisspecVisits::all;

    void validate() const {
        if (K < 1) throw ConfigError("DGP needs K >= 1");
        if (!(noise_sd > 0.0)) throw ConfigError("DGP noise_sd must be positive");
        if (!(p_treat > 0.0 && p_treat < 1.0)) throw ConfigError("DGP p_treat must lie in (0, 1)");
    }

    bool misspecifies(MisspecTarget t) const {
        return regime == DgpRegime::misspecified && (target == t || target == MisspecTarget::all);
    }

    // Whether model t carries the quadratic term at visit k (k = K + 1 for Y).
    bool misspecifies(MisspecTarget t, int k) const {
        if (!misspecifies(t)) return false;
        return t == MisspecTarget::outcome || misspec_visits == MisspecVisits::all || k == K;
    }

    auto key() const {
        return std::make_tuple(n, K, coef_l_on_past_l, coef_l_on_past_a, ice_intercept, coef_ice_on_l,
                               coef_ice_on_past_a, coef_y_on_l, coef_y_on_a0, coef_y_on_ice, noise_sd, p_treat,
                               static_cast<int>(regime), threshold, static_cast<int>(target), quad_treated, quad_control,
                               static_cast<int>(misspec_visits));
    }
};

/// Regime names used on the command line and in study configs.
inline std::string regime_name(const DgpParams& p) {
    switch (p.regime) {
        case DgpRegime::probabilistic: return "prob";
        case DgpRegime::deterministic: return "det";
        case DgpRegime::misspecified:
            switch (p.target) {
                case MisspecTarget::outcome: return "miss:outcome";
                case MisspecTarget::l_model: return "miss:l";
                case MisspecTarget::ice_model: return "miss:ice";
                case MisspecTarget::all: return "miss:all";
            }
    }
    return {};
}

inline void set_regime(DgpParams& p, const std::string& name) {
    if (name == "prob") {
        p.regime = DgpRegime::probabilistic;
    } else if (name == "det") {
        p.regime = DgpRegime::deterministic;
    } else if (name.rfind("miss:", 0) == 0) {
        p.regime = DgpRegime::misspecified;
        const auto t = name.substr(5);
        if (t == "outcome") p.target = MisspecTarget::outcome;
        else if (t == "l") p.target = MisspecTarget::l_model;
        else if (t == "ice") p.target = MisspecTarget::ice_model;
        else if (t == "all") p.target = MisspecTarget::all;
        else throw ConfigError("unknown misspecification target '" + t + "' (outcome, l, ice, all)");
    } else {
        throw ConfigError("unknown regime '" + name + "' (prob, det, miss:outcome, miss:l, miss:ice, miss:all)");
    }
}

inline const char* to_string(MisspecVisits v) { return v == MisspecVisits::all ? "all" : "last"; }

inline MisspecVisits parse_misspec_visits(const std::string& s) {
    if (s == "all") return MisspecVisits::all;
    if (s == "last") return MisspecVisits::last;
    throw ConfigError("misspec_visits must be 'all' or 'last', got '" + s + "'");
}

namespace sim_detail {

inline double quad_term(const DgpParams& p, double l0, int a0) {
    return l0 * l0 * (a0 == 1 ? p.quad_treated : p.quad_control);
}

inline double ice_linear_predictor(const DgpParams& p, std::span<const double> l, std::span<const double> a, int k) {
    double sum_l = 0.0;
    for (int j = 0; j <= k; ++j) sum_l += l[static_cast<std::size_t>(j)];
    double sum_a = 0.0;
    for (int j = 0; j < k; ++j) sum_a += a[static_cast<std::size_t>(j)];
    double eta = p.ice_intercept + p.coef_ice_on_l * sum_l + p.coef_ice_on_past_a * sum_a;
    if (p.misspecifies(MisspecTarget::ice_model, k)) eta += quad_term(p, l[0], static_cast<int>(a[0]));
    return eta;
}

// Draws one subject from its own stream. Draw order is fixed (A0, L0, then
// L_k and A_k per visit, then Y) and every draw is consumed even when a
// value is forced, so forced and natural runs share their noise.
inline double draw_subject(const DgpParams& p, CounterRng& rng, std::span<double> l, std::span<double> a,
                           std::optional<int> forced_a0, bool force_no_ice) {
    const double u0 = rng.uniform();
    const int a0 = forced_a0 ? *forced_a0 : (u0 < p.p_treat ? 1 : 0);
    a[0] = a0;
    l[0] = p.noise_sd * rng.normal();
    const double q = quad_term(p, l[0], a0);
    double sum_l = l[0];
    double sum_a = a0;
    for (int k = 1; k <= p.K; ++k) {
        const auto kk = static_cast<std::size_t>(k);
        double mean = p.coef_l_on_past_l * sum_l + p.coef_l_on_past_a * sum_a;
        if (p.misspecifies(MisspecTarget::l_model, k)) mean += q;
        l[kk] = mean + p.noise_sd * rng.normal();
        sum_l += l[kk];
        const double u = rng.uniform();
        if (force_no_ice) {
            a[kk] = 0.0;
        } else if (p.regime == DgpRegime::deterministic) {
            a[kk] = l[kk] >= p.threshold ? 1.0 : 0.0;
        } else {
            double eta = p.ice_intercept + p.coef_ice_on_l * sum_l + p.coef_ice_on_past_a * sum_a;
            if (p.misspecifies(MisspecTarget::ice_model, k)) eta += q;
            a[kk] = u < expit(eta) ? 1.0 : 0.0;
        }
        sum_a += a[kk];
    }
    double sum_ice = sum_a - a0;
    double mean_y = p.coef_y_on_l * sum_l + p.coef_y_on_a0 * a0 + p.coef_y_on_ice * sum_ice;
    if (p.misspecifies(MisspecTarget::outcome)) mean_y += q;
    return mean_y + p.noise_sd * rng.normal();
}

inline TrialDataset simulate_impl(const DgpParams& p, std::uint64_t seed, std::optional<int> forced_a0, bool no_ice) {
    p.validate();
    const auto K = static_cast<std::size_t>(p.K);
    std::vector<SubjectRecord> subjects(p.n);
    std::vector<double> l(K + 1), a(K + 1);
    for (std::size_t i = 0; i < p.n; ++i) {
        CounterRng rng(seed, i);
        const double y = draw_subject(p, rng, l, a, forced_a0, no_ice);
        auto& s = subjects[i];
        s.l.resize(K + 1);
        s.a.resize(K + 1);
        for (std::size_t k = 0; k <= K; ++k) {
            s.l[k] = std::vector<double>{l[k]};
            s.a[k] = static_cast<int>(a[k]);
        }
        s.y = y;
    }
    return TrialDataset(TrialSchema::scalar(p.K), std::move(subjects));
}

}  // namespace sim_detail

/// One simulated trial. Subject i uses stream i of `seed`, so any subset of
/// subjects can be regenerated independently of the others.
inline TrialDataset simulate(const DgpParams& params, std::uint64_t seed) {
    return sim_detail::simulate_impl(params, seed, std::nullopt, false);
}

/// Potential outcomes under a static regime (only regimes preventing every
/// ICE are supported): A0 is forced to regime.a0 and every A_k to 0.
inline TrialDataset simulate_under_regime(const DgpParams& params, const Regime& regime, std::uint64_t seed) {
    if (regime.ice.size() != static_cast<std::size_t>(params.K))
        throw DimensionError("regime length does not match K");
    if (!regime.prevents_all_ice()) throw ConfigError("only the no-ICE regime is supported");
    return sim_detail::simulate_impl(params, seed, regime.a0, true);
}

struct TrueMeans {
    double treated = 0.0;
    double control = 0.0;
    double contrast = 0.0;
    double se_contrast = 0.0;  // zero for analytic values
    double se_treated = 0.0;
    double se_control = 0.0;
};

/// E(Y^{a0, no ICE}) by propagating means through the linear recursions.
inline double true_mean(const DgpParams& p, int a0) {
    if (p.regime == DgpRegime::misspecified)
        throw ConfigError("no analytic truth for a misspecified regime; use the interventional oracle");
    // running sum of E(L_1..L_k); E(L_0) = 0
    double sum = 0.0;
    for (int k = 1; k <= p.K; ++k) sum += p.coef_l_on_past_l * sum + p.coef_l_on_past_a * a0;
    return p.coef_y_on_l * sum + p.coef_y_on_a0 * a0;
}

inline double true_contrast(const DgpParams& p) { return true_mean(p, 1) - true_mean(p, 0); }

inline TrueMeans analytic_truth(const DgpParams& p) {
    TrueMeans t;
    t.treated = true_mean(p, 1);
    t.control = true_mean(p, 0);
    t.contrast = t.treated - t.control;
    return t;
}

/// Monte-Carlo truth: `draws` subjects simulated under both no-ICE regimes
/// with shared noise. Sums are reduced in fixed-size chunks in order, so the
/// result does not depend on the thread count.
inline TrueMeans interventional_oracle(const DgpParams& params, std::size_t draws, std::uint64_t seed, int threads = 1) {
    params.validate();
    constexpr std::size_t kChunk = 1 << 16;
    const std::size_t chunks = (draws + kChunk - 1) / kChunk;
    struct Acc {
        double s1 = 0, s0 = 0, sd = 0, q1 = 0, q0 = 0, qd = 0;
    };
    std::vector<Acc> acc(chunks);
    const auto K = static_cast<std::size_t>(params.K);
    parallel_for(chunks, threads, [&](std::size_t c) {
        std::vector<double> l(K + 1), a(K + 1);
        Acc local;
        const std::size_t end = std::min(draws, (c + 1) * kChunk);
        for (std::size_t i = c * kChunk; i < end; ++i) {
            CounterRng r1(seed, i);
            const double y1 = sim_detail::draw_subject(params, r1, l, a, 1, true);
            CounterRng r0(seed, i);
            const double y0 = sim_detail::draw_subject(params, r0, l, a, 0, true);
            local.s1 += y1;
            local.s0 += y0;
            local.sd += y1 - y0;
            local.q1 += y1 * y1;
            local.q0 += y0 * y0;
            local.qd += (y1 - y0) * (y1 - y0);
        }
        acc[c] = local;
    });
    Acc total;
    for (const auto& a : acc) {
        total.s1 += a.s1;
        total.s0 += a.s0;
        total.sd += a.sd;
        total.q1 += a.q1;
        total.q0 += a.q0;
        total.qd += a.qd;
    }
    const auto n = static_cast<double>(draws);
    auto se = [n](double s, double q) {
        const double mean = s / n;
        return std::sqrt(std::max(0.0, (q / n - mean * mean) * n / (n - 1.0)) / n);
    };
    TrueMeans t;
    t.treated = total.s1 / n;
    t.control = total.s0 / n;
    t.contrast = t.treated - t.control;
    t.se_treated = se(total.s1, total.q1);
    t.se_control = se(total.s0, total.q0);
    t.se_contrast = se(total.sd, total.qd);
    return t;
}

inline constexpr std::uint64_t kOracleSeed = 0x5EED0F7A57ull;
inline constexpr std::size_t kOracleDraws = 10'000'000;

/// Process-wide cache of oracle evaluations keyed by DGP and draw count.
inline TrueMeans cached_oracle(const DgpParams& params, std::size_t draws = kOracleDraws, int threads = 1) {
    static std::mutex mutex;
    static std::map<std::tuple<decltype(params.key()), std::size_t>, TrueMeans> cache;
    DgpParams p = params;
    p.n = 0;  // the sample size does not affect the truth
    const auto key = std::make_tuple(p.key(), draws);
    {
        std::lock_guard lock(mutex);
        if (auto it = cache.find(key); it != cache.end()) return it->second;
    }
    const auto t = interventional_oracle(p, draws, kOracleSeed, threads);
    std::lock_guard lock(mutex);
    cache.emplace(key, t);
    return t;
}

/// P(A_k = 0 | observed history) under the true ICE mechanism, for
/// injecting known weights. Cells whose history is unobserved are NaN.
inline IceFreeProbabilities true_ice_free_probabilities(const DgpParams& p, const TrialDataset& data) {
    IceFreeProbabilities out;
    const auto K = static_cast<std::size_t>(data.K());
    std::vector<double> l(K + 1), a(K + 1);
    for (const auto& s : data) {
        std::vector<double> row(K, std::numeric_limits<double>::quiet_NaN());
        for (std::size_t k = 1; k <= K; ++k) {
            bool seen = true;
            for (std::size_t j = 0; j <= k; ++j) seen = seen && s.l[j].has_value();
            for (std::size_t j = 0; j < k; ++j) seen = seen && s.a[j].has_value();
            if (!seen) break;
            for (std::size_t j = 0; j <= k; ++j) l[j] = (*s.l[j])[0];
            for (std::size_t j = 0; j < k; ++j) a[j] = *s.a[j];
            if (p.regime == DgpRegime::deterministic) {
                row[k - 1] = l[k] >= p.threshold ? 0.0 : 1.0;
            } else {
                row[k - 1] = 1.0 - expit(sim_detail::ice_linear_predictor(p, l, a, static_cast<int>(k)));
            }
        }
        out.values.push_back(std::move(row));
    }
    return out;
}

}  // namespace hypothetica
