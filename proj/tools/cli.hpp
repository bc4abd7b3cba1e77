#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <hypothetica.hpp>

namespace hypothetica::cli {

inline constexpr std::uint64_t kDefaultSeed = 20240101;

struct Globals {
    std::optional<std::uint64_t> seed;
    int threads = 1;
    bool quiet = false;
};

// Thrown for bad flag values detected after parsing; maps to exit status 2.
struct UsageError : Error {
    using Error::Error;
};

inline std::pair<std::uint64_t, std::string> resolve_seed(const Globals& g) {
    if (g.seed) return {*g.seed, "flag"};
    if (const char* env = std::getenv("HYPOTHETICA_SEED"); env && *env) {
        std::uint64_t v = 0;
        const std::string s(env);
        const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || ptr != s.data() + s.size())
            throw UsageError("HYPOTHETICA_SEED is not an unsigned integer: '" + s + "'");
        return {v, "HYPOTHETICA_SEED"};
    }
    return {kDefaultSeed, "default"};
}

inline void log_config(const Globals& g, std::ostream& err, const nlohmann::json& config) {
    if (!g.quiet) err << "hypothetica: " << config.dump() << '\n';
}

inline std::string fmt(double v, int precision = 6) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(precision) << v;
    return s.str();
}

inline void print_result_table(const std::string& name, const EstimateResult& r, std::ostream& out) {
    out << std::left << std::setw(24) << "estimator" << std::right << std::setw(14) << "mean_treated" << std::setw(14)
        << "mean_control" << std::setw(14) << "contrast" << std::setw(10) << "n_treated" << std::setw(10) << "n_control";
    if (r.se) out << std::setw(12) << "se" << std::setw(14) << "ci_lower" << std::setw(14) << "ci_upper";
    out << '\n';
    out << std::left << std::setw(24) << name << std::right << std::setw(14) << fmt(r.mean_treated) << std::setw(14)
        << fmt(r.mean_control) << std::setw(14) << fmt(r.contrast) << std::setw(10) << r.n_treated << std::setw(10)
        << r.n_control;
    if (r.se) out << std::setw(12) << fmt(*r.se) << std::setw(14) << fmt(*r.ci_lower) << std::setw(14) << fmt(*r.ci_upper);
    out << '\n';
}

inline void write_result_csv(const std::string& name, const EstimateResult& r, std::ostream& out) {
    using csv_detail::format_double;
    out << "estimator,mean_treated,mean_control,contrast,n_treated,n_control,se,ci_lower,ci_upper,bootstrap_used,"
           "bootstrap_failed\n";
    out << name << ',' << format_double(r.mean_treated) << ',' << format_double(r.mean_control) << ','
        << format_double(r.contrast) << ',' << r.n_treated << ',' << r.n_control << ','
        << (r.se ? format_double(*r.se) : "") << ',' << (r.ci_lower ? format_double(*r.ci_lower) : "") << ','
        << (r.ci_upper ? format_double(*r.ci_upper) : "") << ',' << r.bootstrap_used << ',' << r.bootstrap_failed
        << '\n';
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    return f;
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string item;
    while (std::getline(in, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

/// Runs the command line; returns the process exit status.
/// 0 success, 1 estimation/validation failure, 2 usage error.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Hypothetical-estimand estimators for trials with intercurrent events", "hypothetica"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    std::uint64_t seed_value = 0;
    auto* seed_opt = app.add_option("--seed", seed_value, "base seed (falls back to HYPOTHETICA_SEED)");
    app.add_option("--threads", g.threads, "worker threads (results do not depend on it)")->check(CLI::Range(1, 1024));
    app.add_flag("--quiet", g.quiet, "do not log the resolved configuration");

    // simulate
    auto* sim = app.add_subcommand("simulate", "simulate one trial dataset");
    std::string regime = "prob", sim_out, true_probs_out, misspec_visits = "all";
    std::size_t n = 500;
    int K = 5;
    sim->add_option("--regime", regime, "prob|det|miss:outcome|miss:l|miss:ice|miss:all")->capture_default_str();
    sim->add_option("--misspec-visits", misspec_visits, "visits whose L/ICE model gets the quadratic term")
        ->capture_default_str()
        ->check(CLI::IsMember({"all", "last"}));
    sim->add_option("--n", n, "subjects")->capture_default_str()->check(CLI::PositiveNumber);
    sim->add_option("--k", K, "post-baseline visits")->capture_default_str()->check(CLI::PositiveNumber);
    sim->add_option("--out", sim_out, "output CSV (default stdout)");
    sim->add_option("--true-probs-out", true_probs_out, "write true P(A_k = 0 | history) for ipw-true");

    // estimate
    auto* est = app.add_subcommand("estimate", "estimate the no-ICE arm means and contrast");
    std::string data_path, method, arms = "pooled", population = "all", true_probs_in, est_out;
    int m = 10;
    std::size_t boot = 0;
    std::optional<double> truncate;
    est->add_option("--data", data_path, "trial CSV")->required();
    est->add_option("--method", method, "registry name, or gformula|ipw|mi combined with --population/--arms")
        ->required();
    est->add_option("--population", population, "all|icefree (for --method gformula|ipw)")
        ->capture_default_str()
        ->check(CLI::IsMember({"all", "icefree"}));
    est->add_option("--m", m, "imputations for MI")->capture_default_str()->check(CLI::Range(2, 1000000));
    est->add_option("--arms", arms, "pooled|separate (for --method gformula|ipw|mi)")
        ->capture_default_str()
        ->check(CLI::IsMember({"pooled", "separate"}));
    est->add_option("--true-probs", true_probs_in, "probability CSV p1..pK for ipw-true");
    est->add_option("--truncate", truncate, "cap fitted IPW weights at this quantile");
    est->add_option("--bootstrap", boot, "bootstrap resamples (>= 100) for SE and percentile CI");
    est->add_option("--out", est_out, "write the result as CSV");

    // study
    auto* study = app.add_subcommand("study", "run a replicated simulation study");
    std::string config_path, out_dir;
    study->add_option("--config", config_path, "study JSON")->required();
    study->add_option("--out-dir", out_dir, "directory for long.csv, summary.csv, boxplot.csv")->required();

    // check-dag
    auto* dag = app.add_subcommand("check-dag", "check MAR / sequential exchangeability on a DAG");
    std::string graph_path, ice_list, outcome, history, mode = "mar";
    dag->add_option("--graph", graph_path, "graph file")->required();
    dag->add_option("--ice", ice_list, "ordered ICE (or treatment) nodes, comma separated")->required();
    dag->add_option("--outcome", outcome, "outcome node")->required();
    dag->add_option("--history", history, "measured history per node, e.g. \"A1:L0,L1;A2:L0,L1,L2\"");
    dag->add_option("--check", mode, "mar|exchangeability")->capture_default_str()->check(CLI::IsMember({"mar", "exchangeability"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }
    if (*seed_opt) g.seed = seed_value;

    try {
        const auto [seed, seed_source] = resolve_seed(g);
        nlohmann::json logged{{"seed", seed}, {"seed_source", seed_source}, {"threads", g.threads}};

        if (*sim) {
            DgpParams p;
            try {
                set_regime(p, regime);
            } catch (const ConfigError& e) {
                throw UsageError(e.what());
            }
            p.n = n;
            p.K = K;
            p.misspec_visits = parse_misspec_visits(misspec_visits);
            logged["command"] = "simulate";
            logged["regime"] = regime_name(p);
            if (p.regime == DgpRegime::misspecified) logged["misspec_visits"] = misspec_visits;
            logged["n"] = n;
            logged["K"] = K;
            logged["out"] = sim_out.empty() ? "-" : sim_out;
            log_config(g, err, logged);
            const auto data = simulate(p, seed);
            if (sim_out.empty()) {
                write_csv(data, out);
            } else {
                auto f = open_out(sim_out);
                write_csv(data, f);
            }
            if (!true_probs_out.empty()) {
                auto f = open_out(true_probs_out);
                write_probabilities_csv(true_ice_free_probabilities(p, data), K, f);
            }
            return 0;
        }

        if (*est) {
            std::string name = method;
            const std::string arm_suffix = arms == "pooled" ? "pooled" : "perarm";
            if (method == "mi") name = "mi-" + arm_suffix;
            else if (method == "ipw" && !true_probs_in.empty()) name = "ipw-true";
            else if (method == "gformula" || method == "ipw") name = method + "-" + population + "-" + arm_suffix;
            const EstimatorInfo* info = nullptr;
            try {
                info = &find_estimator(name);
            } catch (const ConfigError& e) {
                throw UsageError(std::string(e.what()) + " (or gformula|ipw|mi with --population/--arms)");
            }
            if (boot != 0 && boot < 100) throw UsageError("--bootstrap needs at least 100 resamples");
            if (truncate && info->family != EstimatorFamily::ipw) throw UsageError("--truncate applies to fitted IPW only");
            if (info->family == EstimatorFamily::ipw_true && true_probs_in.empty())
                throw UsageError("ipw-true needs --true-probs");
            logged["command"] = "estimate";
            logged["data"] = data_path;
            logged["method"] = info->name;
            if (info->family == EstimatorFamily::mi) logged["m"] = m;
            if (truncate) logged["truncate"] = *truncate;
            if (boot) logged["bootstrap"] = boot;
            log_config(g, err, logged);

            const auto data = read_csv(data_path);
            IceFreeProbabilities probs;
            EstimatorContext ctx{seed, m, nullptr};
            if (!true_probs_in.empty()) {
                probs = read_probabilities_csv(true_probs_in, data.K());
                ctx.true_probabilities = &probs;
            }
            EstimateResult r;
            if (truncate) {
                IpwSpec spec{info->population, info->pooling, WeightSource::fitted_logistic, truncate};
                r = ipw_estimate(data, spec);
            } else if (boot) {
                r = bootstrap(data, info->name, {boot, derive_seed(seed, {0xB007}), g.threads, 0.2}, ctx);
            } else {
                r = run_estimator(*info, data, ctx);
            }
            print_result_table(info->name, r, out);
            if (!est_out.empty()) {
                auto f = open_out(est_out);
                write_result_csv(info->name, r, f);
            }
            return 0;
        }

        if (*study) {
            auto config = read_study_config(config_path);
            if (g.seed || seed_source == "HYPOTHETICA_SEED") config.seed = seed;
            logged["command"] = "study";
            logged["config"] = to_json(config);
            logged["out_dir"] = out_dir;
            log_config(g, err, logged);
            const auto result = run_study(config, g.threads);
            write_study_outputs(result, out_dir);
            out << "truth (" << result.truth_source << "): treated " << fmt(result.truth.treated) << ", control "
                << fmt(result.truth.control) << ", contrast " << fmt(result.truth.contrast) << '\n';
            out << std::left << std::setw(24) << "estimator" << std::right << std::setw(12) << "mean" << std::setw(12)
                << "bias" << std::setw(12) << "mc_se" << std::setw(12) << "sd" << std::setw(8) << "failed" << "  note\n";
            for (const auto& s : result.summary) {
                out << std::left << std::setw(24) << s.estimator << std::right;
                if (s.usable)
                    out << std::setw(12) << fmt(s.contrast.mean, 4) << std::setw(12) << fmt(s.contrast.bias, 4)
                        << std::setw(12) << fmt(s.contrast.mc_se, 4) << std::setw(12) << fmt(s.contrast.sd, 4);
                else
                    out << std::setw(48) << "unusable";
                out << std::setw(8) << s.n_failed << "  " << s.note << '\n';
            }
            if (!result.all_usable()) {
                err << "hypothetica: at least one estimator is unusable\n";
                return 1;
            }
            return 0;
        }

        if (*dag) {
            logged["command"] = "check-dag";
            logged["graph"] = graph_path;
            logged["nodes"] = ice_list;
            logged["outcome"] = outcome;
            logged["history"] = history;
            logged["check"] = mode;
            log_config(g, err, logged);
            const auto graph = read_graph(graph_path);
            const auto nodes = split_list(ice_list);
            const auto hist = parse_history_spec(history);
            const auto report = mode == "mar" ? check_mar_hypothetical(graph, nodes, hist, outcome)
                                              : check_sequential_exchangeability(graph, nodes, hist, outcome);
            for (const auto& c : report.checks) {
                std::string targets, given;
                for (const auto& t : c.targets) targets += (targets.empty() ? "" : ",") + t;
                for (const auto& z : c.given) given += (given.empty() ? "" : ",") + z;
                out << (c.holds ? "PASS " : "FAIL ") << c.node << " _||_ {" << targets << "} | {" << given << "}";
                if (!c.holds) out << "  open path to " << c.failing_target << ": " << c.witness;
                out << '\n';
            }
            return report.holds() ? 0 : 1;
        }
    } catch (const UsageError& e) {
        err << "hypothetica: " << e.what() << '\n';
        return 2;
    } catch (const Error& e) {
        err << "hypothetica: error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

}  // namespace hypothetica::cli
