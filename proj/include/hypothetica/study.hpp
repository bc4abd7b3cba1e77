#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hypothetica/csv.hpp"
#include "hypothetica/error.hpp"
#include "hypothetica/ipw.hpp"
#include "hypothetica/parallel.hpp"
#include "hypothetica/random.hpp"
#include "hypothetica/registry.hpp"
#include "hypothetica/simulator.hpp"
#include "hypothetica/trial_data.hpp"

namespace hypothetica {

enum class TruthMode { analytic, monte_carlo_oracle };

struct StudyConfig {
    DgpParams dgp;
    std::size_t replicates = 500;
    std::vector<std::string> estimators = study_estimators();
    std::uint64_t seed = 1;
    // analytic falls back to the oracle when no closed form exists
    TruthMode truth_mode = TruthMode::analytic;
    int mi_m = 10;
    std::size_t oracle_draws = kOracleDraws;

    void validate() const {
        dgp.validate();
        if (replicates < 2) throw ConfigError("study needs at least 2 replicates");
        if (estimators.empty()) throw ConfigError("study needs at least one estimator");
        for (const auto& e : estimators) find_estimator(e);
        if (mi_m < 2) throw ConfigError("mi_m must be at least 2");
        if (oracle_draws < 2) throw ConfigError("oracle_draws must be at least 2");
    }
};

namespace study_detail {

template <class T>
void read_optional(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace study_detail

/// JSON layout:
///   {"dgp": {"n": 500, "K": 5, "regime": "prob", ...coefficients},
///    "replicates": 500, "estimators": ["naive", ...] or "all",
///    "seed": 1, "truth_mode": "analytic" | "monte_carlo_oracle",
///    "mi_m": 10, "oracle_draws": 10000000}
inline StudyConfig study_config_from_json(const nlohmann::json& j) {
    using study_detail::read_optional;
    static const std::vector<std::string> known{"dgp", "replicates", "estimators", "seed", "truth_mode", "mi_m", "oracle_draws"};
    static const std::vector<std::string> known_dgp{
        "n", "K", "regime", "coef_l_on_past_l", "coef_l_on_past_a", "ice_intercept", "coef_ice_on_l",
        "coef_ice_on_past_a", "coef_y_on_l", "coef_y_on_a0", "coef_y_on_ice", "noise_sd", "p_treat", "threshold",
        "quad_treated", "quad_control", "misspec_visits"};
    try {
        if (!j.is_object()) throw ConfigError("study config must be a JSON object");
        for (const auto& [key, value] : j.items())
            if (std::find(known.begin(), known.end(), key) == known.end())
                throw ConfigError("unknown study config field '" + key + "'");
        StudyConfig c;
        if (j.contains("dgp")) {
            const auto& d = j.at("dgp");
            for (const auto& [key, value] : d.items())
                if (std::find(known_dgp.begin(), known_dgp.end(), key) == known_dgp.end())
                    throw ConfigError("unknown dgp field '" + key + "'");
            auto& p = c.dgp;
            read_optional(d, "n", p.n);
            read_optional(d, "K", p.K);
            if (d.contains("regime")) set_regime(p, d.at("regime").get<std::string>());
            read_optional(d, "coef_l_on_past_l", p.coef_l_on_past_l);
            read_optional(d, "coef_l_on_past_a", p.coef_l_on_past_a);
            read_optional(d, "ice_intercept", p.ice_intercept);
            read_optional(d, "coef_ice_on_l", p.coef_ice_on_l);
            read_optional(d, "coef_ice_on_past_a", p.coef_ice_on_past_a);
            read_optional(d, "coef_y_on_l", p.coef_y_on_l);
            read_optional(d, "coef_y_on_a0", p.coef_y_on_a0);
            read_optional(d, "coef_y_on_ice", p.coef_y_on_ice);
            read_optional(d, "noise_sd", p.noise_sd);
            read_optional(d, "p_treat", p.p_treat);
            read_optional(d, "threshold", p.threshold);
            read_optional(d, "quad_treated", p.quad_treated);
            read_optional(d, "quad_control", p.quad_control);
            if (d.contains("misspec_visits")) p.misspec_visits = parse_misspec_visits(d.at("misspec_visits").get<std::string>());
        }
        read_optional(j, "replicates", c.replicates);
        read_optional(j, "seed", c.seed);
        read_optional(j, "mi_m", c.mi_m);
        read_optional(j, "oracle_draws", c.oracle_draws);
        if (j.contains("estimators")) {
            const auto& e = j.at("estimators");
            if (e.is_string() && e.get<std::string>() == "all") c.estimators = study_estimators();
            else c.estimators = e.get<std::vector<std::string>>();
        }
        if (j.contains("truth_mode")) {
            const auto mode = j.at("truth_mode").get<std::string>();
            if (mode == "analytic") c.truth_mode = TruthMode::analytic;
            else if (mode == "monte_carlo_oracle") c.truth_mode = TruthMode::monte_carlo_oracle;
            else throw ConfigError("truth_mode must be 'analytic' or 'monte_carlo_oracle'");
        }
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("study config: ") + e.what());
    }
}

inline StudyConfig read_study_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    try {
        return study_config_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("study config '" + path + "': " + e.what());
    }
}

inline nlohmann::json to_json(const StudyConfig& c) {
    const auto& p = c.dgp;
    return {{"dgp",
             {{"n", p.n},
              {"K", p.K},
              {"regime", regime_name(p)},
              {"coef_l_on_past_l", p.coef_l_on_past_l},
              {"coef_l_on_past_a", p.coef_l_on_past_a},
              {"ice_intercept", p.ice_intercept},
              {"coef_ice_on_l", p.coef_ice_on_l},
              {"coef_ice_on_past_a", p.coef_ice_on_past_a},
              {"coef_y_on_l", p.coef_y_on_l},
              {"coef_y_on_a0", p.coef_y_on_a0},
              {"coef_y_on_ice", p.coef_y_on_ice},
              {"noise_sd", p.noise_sd},
              {"p_treat", p.p_treat},
              {"threshold", p.threshold},
              {"quad_treated", p.quad_treated},
              {"quad_control", p.quad_control},
              {"misspec_visits", to_string(p.misspec_visits)}}},
            {"replicates", c.replicates},
            {"estimators", c.estimators},
            {"seed", c.seed},
            {"truth_mode", c.truth_mode == TruthMode::analytic ? "analytic" : "monte_carlo_oracle"},
            {"mi_m", c.mi_m},
            {"oracle_draws", c.oracle_draws}};
}

enum class ReplicateStatus { ok, failed, excluded };

inline const char* to_string(ReplicateStatus s) {
    switch (s) {
        case ReplicateStatus::ok: return "ok";
        case ReplicateStatus::failed: return "failed";
        case ReplicateStatus::excluded: return "excluded";
    }
    return "";
}

struct ReplicateRecord {
    std::size_t replicate = 0;
    std::string estimator;
    ReplicateStatus status = ReplicateStatus::ok;
    double mean_treated = std::numeric_limits<double>::quiet_NaN();
    double mean_control = std::numeric_limits<double>::quiet_NaN();
    double contrast = std::numeric_limits<double>::quiet_NaN();
    std::string message;
};

/// Box-and-whisker statistics with type-7 quartiles; whiskers sit at
/// Q1 - 1.5 IQR and Q3 + 1.5 IQR.
struct BoxStats {
    double q1 = std::numeric_limits<double>::quiet_NaN();
    double median = std::numeric_limits<double>::quiet_NaN();
    double q3 = std::numeric_limits<double>::quiet_NaN();
    double whisker_low = std::numeric_limits<double>::quiet_NaN();
    double whisker_high = std::numeric_limits<double>::quiet_NaN();
    std::size_t n_outside = 0;
};

inline BoxStats box_stats(std::vector<double> values) {
    BoxStats b;
    if (values.empty()) return b;
    std::sort(values.begin(), values.end());
    b.q1 = quantile_sorted(values, 0.25);
    b.median = quantile_sorted(values, 0.5);
    b.q3 = quantile_sorted(values, 0.75);
    const double iqr = b.q3 - b.q1;
    b.whisker_low = b.q1 - 1.5 * iqr;
    b.whisker_high = b.q3 + 1.5 * iqr;
    b.n_outside = static_cast<std::size_t>(
        std::count_if(values.begin(), values.end(), [&](double v) { return v < b.whisker_low || v > b.whisker_high; }));
    return b;
}

struct QuantitySummary {
    double truth = std::numeric_limits<double>::quiet_NaN();
    double mean = std::numeric_limits<double>::quiet_NaN();
    double bias = std::numeric_limits<double>::quiet_NaN();
    double mc_se = std::numeric_limits<double>::quiet_NaN();
    double sd = std::numeric_limits<double>::quiet_NaN();
    double mse = std::numeric_limits<double>::quiet_NaN();
    BoxStats box;
};

inline QuantitySummary summarize_values(const std::vector<double>& values, double truth) {
    QuantitySummary q;
    q.truth = truth;
    if (values.empty()) return q;
    const auto n = static_cast<double>(values.size());
    double sum = 0.0;
    for (double v : values) sum += v;
    q.mean = sum / n;
    q.bias = q.mean - truth;
    double ss = 0.0, se = 0.0;
    for (double v : values) {
        ss += (v - q.mean) * (v - q.mean);
        se += (v - truth) * (v - truth);
    }
    if (values.size() > 1) {
        q.sd = std::sqrt(ss / (n - 1.0));
        q.mc_se = q.sd / std::sqrt(n);
    }
    q.mse = se / n;
    q.box = box_stats(values);
    return q;
}

struct EstimatorSummary {
    std::string estimator;
    std::size_t n_ok = 0;
    std::size_t n_failed = 0;
    bool usable = false;
    std::string note;
    QuantitySummary treated, control, contrast;
};

struct StudyResult {
    StudyConfig config;
    TrueMeans truth;
    std::string truth_source;
    std::vector<ReplicateRecord> records;  // replicate-major, estimator order of the config
    std::vector<EstimatorSummary> summary;

    const EstimatorSummary& at(const std::string& estimator) const {
        const auto& canonical = find_estimator(estimator).name;
        for (const auto& s : summary)
            if (s.estimator == canonical) return s;
        throw ConfigError("estimator '" + estimator + "' not in study");
    }

    bool all_usable() const {
        return std::all_of(summary.begin(), summary.end(), [](const auto& s) { return s.usable; });
    }
};

inline std::vector<EstimatorSummary> summarize(const std::vector<ReplicateRecord>& records,
                                               const std::vector<std::string>& estimators, const TrueMeans& truth) {
    std::vector<EstimatorSummary> out;
    for (const auto& name : estimators) {
        EstimatorSummary s;
        s.estimator = name;
        std::vector<double> t, c, d;
        std::string first_failure, exclusion;
        for (const auto& r : records) {
            if (r.estimator != name) continue;
            switch (r.status) {
                case ReplicateStatus::ok:
                    ++s.n_ok;
                    t.push_back(r.mean_treated);
                    c.push_back(r.mean_control);
                    d.push_back(r.contrast);
                    break;
                case ReplicateStatus::failed:
                    ++s.n_failed;
                    if (first_failure.empty()) first_failure = r.message;
                    break;
                case ReplicateStatus::excluded:
                    ++s.n_failed;
                    exclusion = r.message;
                    break;
            }
        }
        s.usable = s.n_ok > 0;
        if (!exclusion.empty()) s.note = "excluded: " + exclusion;
        else if (!first_failure.empty()) s.note = (s.usable ? "first failure: " : "all replicates failed: ") + first_failure;
        s.treated = summarize_values(t, truth.treated);
        s.control = summarize_values(c, truth.control);
        s.contrast = summarize_values(d, truth.contrast);
        out.push_back(std::move(s));
    }
    return out;
}

/// Reason an estimator cannot be applied under a DGP regime, or empty.
inline std::string exclusion_reason(const DgpParams& dgp, const EstimatorInfo& e) {
    if (dgp.regime == DgpRegime::deterministic && e.family == EstimatorFamily::ipw)
        return "ICE is a deterministic function of the covariates, so the logistic ICE model is completely "
               "separated and its probabilities are 0 or 1; fitted-weight IPW is undefined";
    return {};
}

inline std::pair<TrueMeans, std::string> study_truth(const StudyConfig& config, int threads) {
    if (config.truth_mode == TruthMode::analytic && config.dgp.regime != DgpRegime::misspecified)
        return {analytic_truth(config.dgp), "analytic"};
    return {cached_oracle(config.dgp, config.oracle_draws, threads),
            "monte_carlo_oracle(" + std::to_string(config.oracle_draws) + ")"};
}

/// Replicate r simulates from derive_seed(seed, {r}); MI in replicate r
/// draws from derive_seed(seed, {r, 1}). Results do not depend on `threads`.
inline StudyResult run_study(const StudyConfig& config, int threads = 1) {
    config.validate();
    StudyResult result;
    result.config = config;
    std::vector<const EstimatorInfo*> estimators;
    for (const auto& name : config.estimators) estimators.push_back(&find_estimator(name));
    result.config.estimators.clear();
    for (const auto* e : estimators) result.config.estimators.push_back(e->name);
    std::tie(result.truth, result.truth_source) = study_truth(config, threads);

    const bool need_true_probs = std::any_of(estimators.begin(), estimators.end(),
                                             [](const auto* e) { return e->family == EstimatorFamily::ipw_true; });
    std::vector<std::vector<ReplicateRecord>> per_rep(config.replicates);
    parallel_for(config.replicates, threads, [&](std::size_t r) {
        const auto data = simulate(config.dgp, derive_seed(config.seed, {r}));
        IceFreeProbabilities probs;
        if (need_true_probs) probs = true_ice_free_probabilities(config.dgp, data);
        EstimatorContext ctx{derive_seed(config.seed, {r, 1}), config.mi_m, need_true_probs ? &probs : nullptr};
        auto& out = per_rep[r];
        for (const auto* e : estimators) {
            ReplicateRecord rec;
            rec.replicate = r;
            rec.estimator = e->name;
            if (auto why = exclusion_reason(config.dgp, *e); !why.empty()) {
                rec.status = ReplicateStatus::excluded;
                rec.message = std::move(why);
            } else {
                try {
                    const auto est = run_estimator(*e, data, ctx);
                    rec.mean_treated = est.mean_treated;
                    rec.mean_control = est.mean_control;
                    rec.contrast = est.contrast;
                } catch (const Error& err) {
                    rec.status = ReplicateStatus::failed;
                    rec.message = err.what();
                }
            }
            out.push_back(std::move(rec));
        }
    });
    for (auto& rep : per_rep)
        for (auto& rec : rep) result.records.push_back(std::move(rec));
    result.summary = summarize(result.records, result.config.estimators, result.truth);
    return result;
}

namespace study_detail {

inline std::string quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c == '\n' ? ' ' : c;
    }
    return out + "\"";
}

inline std::string num(double v) { return std::isnan(v) ? std::string() : csv_detail::format_double(v); }

}  // namespace study_detail

inline void write_long_csv(const StudyResult& r, std::ostream& out) {
    using study_detail::num;
    out << "replicate,estimator,status,mean_treated,mean_control,contrast,message\n";
    for (const auto& rec : r.records)
        out << rec.replicate + 1 << ',' << rec.estimator << ',' << to_string(rec.status) << ',' << num(rec.mean_treated)
            << ',' << num(rec.mean_control) << ',' << num(rec.contrast) << ',' << study_detail::quote(rec.message) << '\n';
}

inline void write_summary_csv(const StudyResult& r, std::ostream& out) {
    using study_detail::num;
    out << "estimator,quantity,truth,n_ok,n_failed,usable,mean,bias,mc_se,sd,mse,q1,median,q3,whisker_low,"
           "whisker_high,n_outside,note\n";
    for (const auto& s : r.summary) {
        for (const auto& [label, q] : {std::pair{"treated", &s.treated}, std::pair{"control", &s.control},
                                       std::pair{"contrast", &s.contrast}}) {
            out << s.estimator << ',' << label << ',' << num(q->truth) << ',' << s.n_ok << ',' << s.n_failed << ','
                << (s.usable ? "true" : "false") << ',' << num(q->mean) << ',' << num(q->bias) << ',' << num(q->mc_se)
                << ',' << num(q->sd) << ',' << num(q->mse) << ',' << num(q->box.q1) << ',' << num(q->box.median) << ','
                << num(q->box.q3) << ',' << num(q->box.whisker_low) << ',' << num(q->box.whisker_high) << ','
                << q->box.n_outside << ',' << study_detail::quote(s.note) << '\n';
        }
    }
}

inline void write_boxplot_csv(const StudyResult& r, std::ostream& out) {
    using study_detail::num;
    out << "estimator,quantity,truth,q1,median,q3,whisker_low,whisker_high,n_outside\n";
    for (const auto& s : r.summary)
        for (const auto& [label, q] : {std::pair{"treated", &s.treated}, std::pair{"control", &s.control},
                                       std::pair{"contrast", &s.contrast}})
            out << s.estimator << ',' << label << ',' << num(q->truth) << ',' << num(q->box.q1) << ','
                << num(q->box.median) << ',' << num(q->box.q3) << ',' << num(q->box.whisker_low) << ','
                << num(q->box.whisker_high) << ',' << q->box.n_outside << '\n';
}

/// Writes long.csv, summary.csv and boxplot.csv into `dir` (created if needed).
inline void write_study_outputs(const StudyResult& r, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
    auto open = [&](const char* name) {
        std::ofstream f(dir / name);
        if (!f) throw IoError("cannot open '" + (dir / name).string() + "' for writing");
        return f;
    };
    {
        auto f = open("long.csv");
        write_long_csv(r, f);
    }
    {
        auto f = open("summary.csv");
        write_summary_csv(r, f);
    }
    {
        auto f = open("boxplot.csv");
        write_boxplot_csv(r, f);
    }
}

struct BootstrapSpec {
    std::size_t resamples = 200;
    std::uint64_t seed = 0;
    int threads = 1;
    double max_failure_rate = 0.2;
};

/// Nonparametric bootstrap resampling subjects with replacement within arm:
/// each position keeps its arm and receives a random subject of that arm.
/// Attaches the SD of the bootstrap contrasts and their 2.5/97.5 percentiles.
inline EstimateResult bootstrap(const TrialDataset& data, const std::string& estimator, const BootstrapSpec& spec,
                                const EstimatorContext& ctx) {
    if (spec.resamples < 100) throw ConfigError("bootstrap needs at least 100 resamples");
    const auto& info = find_estimator(estimator);
    EstimateResult point = run_estimator(info, data, ctx);

    std::vector<std::size_t> by_arm[2];
    for (std::size_t i = 0; i < data.size(); ++i) by_arm[data[i].arm()].push_back(i);

    std::vector<double> contrasts(spec.resamples, std::numeric_limits<double>::quiet_NaN());
    parallel_for(spec.resamples, spec.threads, [&](std::size_t b) {
        CounterRng rng(derive_seed(spec.seed, {b}));
        std::vector<SubjectRecord> subjects;
        subjects.reserve(data.size());
        IceFreeProbabilities probs;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const auto& pool = by_arm[data[i].arm()];
            const auto pick = pool[std::min(pool.size() - 1, static_cast<std::size_t>(rng.uniform() * static_cast<double>(pool.size())))];
            subjects.push_back(data[pick]);
            if (ctx.true_probabilities) probs.values.push_back(ctx.true_probabilities->values.at(pick));
        }
        EstimatorContext local = ctx;
        local.seed = derive_seed(spec.seed, {b, 1});
        if (ctx.true_probabilities) local.true_probabilities = &probs;
        try {
            contrasts[b] = run_estimator(info, TrialDataset(data.schema(), std::move(subjects)), local).contrast;
        } catch (const Error&) {
        }
    });

    std::vector<double> ok;
    for (double c : contrasts)
        if (!std::isnan(c)) ok.push_back(c);
    const std::size_t failed = spec.resamples - ok.size();
    point.bootstrap_used = ok.size();
    point.bootstrap_failed = failed;
    if (static_cast<double>(failed) > spec.max_failure_rate * static_cast<double>(spec.resamples) || ok.size() < 2)
        throw EstimationError("unstable bootstrap: " + std::to_string(failed) + " of " + std::to_string(spec.resamples) +
                              " resamples failed");
    double mean = 0.0;
    for (double c : ok) mean += c;
    mean /= static_cast<double>(ok.size());
    double ss = 0.0;
    for (double c : ok) ss += (c - mean) * (c - mean);
    point.se = std::sqrt(ss / static_cast<double>(ok.size() - 1));
    std::sort(ok.begin(), ok.end());
    point.ci_lower = quantile_sorted(ok, 0.025);
    point.ci_upper = quantile_sorted(ok, 0.975);
    return point;
}

}  // namespace hypothetica
